"""Forward diffusion, the reverse chain, and an exact Gaussian-mixture denoiser.

Every function here accepts a single tensor or a batch with a leading axis;
noise is drawn with the full input shape either way.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import RandomSource
from .schedule import NoiseSchedule, RespacedSchedule, as_schedule


class Denoiser(Protocol):
    def mean(self, xt: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        """Reverse-step mean mu(x^t, t); same shape as ``xt``."""
        ...


def diffuse_to(x0: np.ndarray, t: int, s: NoiseSchedule, rng: RandomSource,
               eps: np.ndarray | None = None) -> np.ndarray:
    """Sample x^t ~ q(x^t | x^0) in one shot."""
    s.check_t(t)
    if eps is None:
        eps = rng.normal(np.shape(x0))
    ab = s.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def stepwise_diffuse(x0: np.ndarray, t: int, s: NoiseSchedule, rng: RandomSource) -> np.ndarray:
    """Apply ``t`` single forward transitions x^k = sqrt(1-beta_k) x^{k-1} + sqrt(beta_k) eps_k."""
    s.check_t(t)
    x = np.asarray(x0, dtype=np.float64)
    for k in range(1, t + 1):
        x = np.sqrt(1.0 - s.beta[k]) * x + np.sqrt(s.beta[k]) * rng.normal(x.shape)
    return x


def denoiser_mean_from_x0hat(x0hat: np.ndarray, xt: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """Epsilon-parameterised reverse mean given a clean-image estimate."""
    ab, beta, alpha = s.alpha_bar[t], s.beta[t], s.alpha[t]
    eps_hat = (xt - np.sqrt(ab) * x0hat) / np.sqrt(1.0 - ab)
    return (xt - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)


def x0hat_from_mean(mu: np.ndarray, xt: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """Inverse of :func:`denoiser_mean_from_x0hat`."""
    ab, beta, alpha = s.alpha_bar[t], s.beta[t], s.alpha[t]
    eps_hat = (xt - np.sqrt(alpha) * mu) * np.sqrt(1.0 - ab) / beta
    return (xt - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


@dataclass(frozen=True, eq=False)
class GaussianMixtureModel:
    """Isotropic Gaussian mixture: component k is N(means[k], var_k * I)."""

    weights: np.ndarray
    means: np.ndarray  # (K, *shape)
    var: np.ndarray  # (K,)
    shape: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.broadcast_to(np.asarray(self.var, dtype=np.float64), w.shape).copy()
        if w.ndim != 1 or len(w) != len(m):
            raise ShapeError("weights and means must have the same number of components")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be positive and sum to 1")
        if np.any(v <= 0):
            raise ConfigError("component variances must be positive")
        for name, arr in (("weights", w), ("means", m), ("var", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "shape", tuple(m.shape[1:]))

    @property
    def K(self) -> int:
        return len(self.weights)

    def sample(self, n: int, rng: RandomSource) -> tuple[np.ndarray, np.ndarray]:
        cdf = np.cumsum(self.weights)
        labels = np.minimum(np.searchsorted(cdf, rng.uniform(n), side="right"), self.K - 1)
        noise = rng.normal((n,) + self.shape)
        std = np.sqrt(self.var[labels]).reshape((n,) + (1,) * len(self.shape))
        return self.means[labels] + std * noise, labels

    def _flatten(self, xt: np.ndarray) -> tuple[np.ndarray, bool]:
        xt = np.asarray(xt, dtype=np.float64)
        if xt.shape == self.shape:
            return xt.reshape(1, -1), True
        if xt.shape[1:] == self.shape:
            return xt.reshape(len(xt), -1), False
        raise ShapeError(f"input shape {xt.shape} incompatible with mixture shape {self.shape}")

    def log_responsibilities(self, xt: np.ndarray, alpha_bar: float) -> np.ndarray:
        """Normalised log posterior component probabilities given x^t, shape (B, K)."""
        x, _ = self._flatten(xt)
        mu = np.sqrt(alpha_bar) * self.means.reshape(self.K, -1)
        s2 = alpha_bar * self.var + (1.0 - alpha_bar)
        d = x.shape[1]
        sq = (x * x).sum(1)[:, None] - 2.0 * x @ mu.T + (mu * mu).sum(1)[None, :]
        logp = np.log(self.weights)[None, :] - 0.5 * np.maximum(sq, 0.0) / s2 - 0.5 * d * np.log(s2)
        logp = logp - logp.max(axis=1, keepdims=True)
        return logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))

    def posterior_mean_x0(self, xt: np.ndarray, alpha_bar: float,
                          info: dict | None = None) -> np.ndarray:
        """E[x^0 | x^t] where x^t = sqrt(abar) x^0 + sqrt(1 - abar) eps.

        Per component the posterior mean is
        m_k + sqrt(abar) v_k / (abar v_k + 1 - abar) * (x^t - sqrt(abar) m_k),
        mixed by responsibilities computed in log space. If the
        responsibilities of a row are not finite the nearest component (in
        scaled-mean distance) is used instead and ``info["fallback"]`` counts
        the affected rows.
        """
        x, single = self._flatten(xt)
        ab = float(alpha_bar)
        with np.errstate(over="ignore", invalid="ignore"):
            r = np.exp(self.log_responsibilities(xt, ab))
        means = self.means.reshape(self.K, -1)
        bad = ~np.all(np.isfinite(r), axis=1)
        if np.any(bad):
            diff = x[bad, None, :] - np.sqrt(ab) * means[None]
            scale = np.abs(diff).max(axis=(1, 2), keepdims=True)  # avoid overflow in the square
            dist = ((diff / np.where(scale > 0, scale, 1.0)) ** 2).sum(-1)
            r[bad] = np.eye(self.K)[np.argmin(dist, axis=1)]
        if info is not None:
            info["fallback"] = info.get("fallback", 0) + int(bad.sum())
        gain = np.sqrt(ab) * self.var / (ab * self.var + 1.0 - ab)  # (K,)
        # sum_k r_k [(1 - sqrt(abar) g_k) m_k + g_k x]
        out = (r * (1.0 - np.sqrt(ab) * gain)[None, :]) @ means + (r @ gain)[:, None] * x
        return out.reshape(self.shape) if single else out.reshape((len(x),) + self.shape)


class GMMDenoiser:
    """Exact-posterior denoiser for data drawn from a known Gaussian mixture."""

    def __init__(self, gmm: GaussianMixtureModel):
        self.gmm = gmm
        self.fallbacks = 0

    def x0hat(self, xt: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        info: dict = {}
        out = self.gmm.posterior_mean_x0(xt, s.alpha_bar[t], info)
        self.fallbacks += info["fallback"]
        return out

    def mean(self, xt: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        return denoiser_mean_from_x0hat(self.x0hat(xt, t, s), xt, t, s)


def reverse_step(xt: np.ndarray, t: int, d: Denoiser, s: NoiseSchedule, rng: RandomSource,
                 sigma2: float | None = None) -> np.ndarray:
    """Draw x^{t-1} ~ N(mu(x^t, t), sigma_t^2 I); ``sigma2`` overrides the schedule value."""
    s.check_t(t)
    mu = d.mean(xt, t, s)
    var = s.sigma2[t] if sigma2 is None else sigma2
    if var == 0.0:
        return mu
    return mu + np.sqrt(var) * rng.normal(mu.shape)


def sample(d: Denoiser, s: NoiseSchedule | RespacedSchedule, shape, rng: RandomSource) -> np.ndarray:
    """Run the reverse chain from x^T ~ N(0, I) down to x^0.

    With a respaced schedule only the kept steps are visited.
    """
    s = as_schedule(s)
    x = rng.normal(tuple(shape))
    for t in range(s.T, 0, -1):
        x = reverse_step(x, t, d, s, rng)
    return x
