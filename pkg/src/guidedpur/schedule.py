"""Noise schedules and step-skipping (respaced) schedules.

All arrays are indexed by timestep directly: index 0 is a sentinel for the
clean state (``beta[0] = 0``, ``alpha_bar[0] = 1``), indices ``1..T`` are the
diffusion steps.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SIGMA2_POLICIES = ("small", "large")


def _posterior_variance(beta: np.ndarray, alpha_bar: np.ndarray) -> np.ndarray:
    out = np.zeros_like(beta)
    out[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return out


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Diffusion constants for steps ``1..T`` (index 0 is the clean sentinel).

    ``timesteps[t]`` is the step of the *original* schedule that index ``t``
    stands for; it is ``t`` itself unless the schedule was respaced.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    timesteps: np.ndarray
    policy: str = "small"
    sigma2: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.policy not in SIGMA2_POLICIES:
            raise ConfigError(f"unknown sigma2 policy {self.policy!r}")
        object.__setattr__(self, "sigma2", sigma2_policy(self, self.policy))
        for arr in (self.beta, self.alpha, self.alpha_bar, self.sigma2, self.timesteps):
            arr.setflags(write=False)

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    @classmethod
    def from_betas(cls, betas, timesteps=None, policy: str = "small", alpha_bar=None):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ConfigError("betas must be a non-empty 1-D sequence")
        if not np.all((betas > 0) & (betas < 1)):
            raise ConfigError("every beta must lie in (0, 1)")
        beta = np.concatenate([[0.0], betas])
        alpha = 1.0 - beta
        if alpha_bar is None:
            alpha_bar = np.cumprod(alpha)
        else:
            alpha_bar = np.concatenate([[1.0], np.asarray(alpha_bar, dtype=np.float64)])
        if timesteps is None:
            timesteps = np.arange(len(beta))
        else:
            timesteps = np.concatenate([[0], np.asarray(timesteps, dtype=np.int64)])
        return cls(beta, alpha, alpha_bar, timesteps.astype(np.int64), policy)

    def with_policy(self, policy: str) -> "NoiseSchedule":
        return NoiseSchedule(self.beta.copy(), self.alpha.copy(), self.alpha_bar.copy(),
                             self.timesteps.copy(), policy)

    def check_t(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise IndexError(f"timestep {t} outside 1..{self.T}")
        return int(t)

    def index_at_or_below(self, step: int) -> int:
        """Largest index whose original timestep is <= ``step``."""
        idx = int(np.searchsorted(self.timesteps, step, side="right")) - 1
        if idx < 1:
            raise ConfigError(f"no kept step at or below original step {step}")
        return idx

    def to_csv(self) -> str:
        small = sigma2_policy(self, "small")
        large = sigma2_policy(self, "large")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "beta", "alpha", "alpha_bar", "sigma2_small", "sigma2_large"])
        for i in range(1, self.T + 1):
            w.writerow([int(self.timesteps[i]), repr(float(self.beta[i])), repr(float(self.alpha[i])),
                        repr(float(self.alpha_bar[i])), repr(float(small[i])), repr(float(large[i]))])
        return buf.getvalue()


def linear_schedule(T: int = 1000, beta1: float = 1e-4, betaT: float = 2e-2,
                    policy: str = "small") -> NoiseSchedule:
    """Linear betas: beta_t = beta1 + (t - 1) / (T - 1) * (betaT - beta1)."""
    if int(T) != T or T < 2:
        raise ConfigError(f"T must be an integer >= 2, got {T}")
    if not 0 < beta1 <= betaT < 1:
        raise ConfigError(f"need 0 < beta1 <= betaT < 1, got {beta1}, {betaT}")
    t = np.arange(1, T + 1, dtype=np.float64)
    betas = beta1 + (t - 1.0) / (T - 1.0) * (betaT - beta1)
    betas[0], betas[-1] = beta1, betaT
    return NoiseSchedule.from_betas(betas, policy=policy)


def sigma2_policy(s: NoiseSchedule, policy: str) -> np.ndarray:
    """Reverse-step variances indexed by t (entry 0 is 0).

    ``large``: sigma_t^2 = beta_t. ``small``: the forward-posterior variance
    (1 - abar_{t-1}) / (1 - abar_t) * beta_t, which is exactly 0 at t = 1.
    """
    if policy == "large":
        return s.beta.copy()
    if policy == "small":
        return _posterior_variance(s.beta, s.alpha_bar)
    raise ConfigError(f"unknown sigma2 policy {policy!r}")


def kept_steps(T: int, K: int) -> np.ndarray:
    """Uniform-stride subset of ``1..T`` with ``K`` entries, always containing T (and 1 when K > 1)."""
    if int(K) != K or not 1 <= K <= T:
        raise ConfigError(f"respace count K must be in 1..{T}, got {K}")
    if K == 1:
        return np.array([T], dtype=np.int64)
    steps = np.round(np.linspace(1, T, K)).astype(np.int64)
    assert len(np.unique(steps)) == K
    return steps


@dataclass(frozen=True, eq=False)
class RespacedSchedule:
    kept_steps: np.ndarray
    beta_prime: np.ndarray
    parent: NoiseSchedule
    schedule: NoiseSchedule

    @property
    def K(self) -> int:
        return len(self.kept_steps)


def respace(s: NoiseSchedule, K: int) -> RespacedSchedule:
    """Keep ``K`` of the ``T`` steps and recompute per-step betas so that
    the cumulative alpha_bar at each kept step equals the parent's."""
    idx = kept_steps(s.T, K)
    if K == s.T:
        beta_prime = s.beta[1:].copy()
    else:
        ab = s.alpha_bar[idx]
        prev = np.concatenate([[1.0], ab[:-1]])
        beta_prime = 1.0 - ab / prev
    sched = NoiseSchedule.from_betas(beta_prime, timesteps=s.timesteps[idx], policy=s.policy,
                                     alpha_bar=s.alpha_bar[idx])
    return RespacedSchedule(s.timesteps[idx].copy(), beta_prime, s, sched)


def as_schedule(s: NoiseSchedule | RespacedSchedule) -> NoiseSchedule:
    return s.schedule if isinstance(s, RespacedSchedule) else s
