"""Distance metrics with analytic gradients and the guided reverse step.

The guided step shifts the reverse mean by ``-s_t * sigma_t^2 * grad D(x^t, x^t_adv)``
where ``x^t_adv`` is the attacked image diffused to step ``t`` and

    s_t = 3 * sqrt(1 - abar_t) / (gamma * sqrt(abar_t)) * a.

The normaliser of the heuristic likelihood exp(-s D) drops out of the
gradient and is never computed.

Batched helpers (suffix ``_batch``) treat axis 0 as the batch axis and return
one value (or one gradient) per image.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .diffusion import Denoiser
from .errors import ConfigError, ShapeError
from .numerics import RandomSource
from .schedule import NoiseSchedule

METRICS = ("mse", "ssim")
DEFAULT_A = {"mse": 0.05, "ssim": 0.5}


@dataclass
class GuidanceConfig:
    metric: str = "mse"
    a: float | None = None  # None -> DEFAULT_A[metric]
    gamma: float = 8 / 255
    ssim_window: int = 7
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    adv_noise: str = "fresh"  # fresh | frozen (one eps per purification iteration)
    scale_override: float | None = None  # test hook: fixed s_t for every step

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.a is None:
            self.a = DEFAULT_A[self.metric]
        if self.a <= 0:
            raise ConfigError("guidance base scale a must be positive")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ConfigError("ssim_window must be a positive odd integer")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("SSIM constants must be positive")
        if self.adv_noise not in ("fresh", "frozen"):
            raise ConfigError("adv_noise must be 'fresh' or 'frozen'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GuidedStepDiagnostics:
    t: int
    s_t: float
    grad_norm: float
    shift_norm: float


def _same_shape(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return x, y


# ---------------------------------------------------------------- MSE

def mse_batch(x, y) -> np.ndarray:
    x, y = _same_shape(x, y)
    return ((x - y) ** 2).reshape(len(x), -1).mean(axis=1)


def mse_grad_batch(x, y) -> np.ndarray:
    x, y = _same_shape(x, y)
    return 2.0 * (x - y) / (x[0].size)


def mse(x, y) -> float:
    x, y = _same_shape(x, y)
    return float(mse_batch(x[None], y[None])[0])


# ---------------------------------------------------------------- SSIM

def _as_hwc_batch(x: np.ndarray, batched: bool) -> np.ndarray:
    """Reshape to (B, H, W, C)."""
    if not batched:
        x = x[None]
    if x.ndim == 3:
        x = x[..., None]
    if x.ndim != 4:
        raise ShapeError(f"SSIM needs (H, W) or (H, W, C) images, got {x.shape[1:]}")
    return x


def _box_sum(a: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Sums over every length-``k`` window along ``axis`` (valid positions only)."""
    c = np.cumsum(a, axis=axis)
    pad = [(0, 0)] * a.ndim
    pad[axis] = (1, 0)
    c = np.pad(c, pad)
    n = a.shape[axis]
    return np.take(c, np.arange(k, n + 1), axis=axis) - np.take(c, np.arange(0, n - k + 1), axis=axis)


def _box_sum_adjoint(g: np.ndarray, k: int, axis: int) -> np.ndarray:
    pad = [(0, 0)] * g.ndim
    pad[axis] = (k - 1, k - 1)
    return _box_sum(np.pad(g, pad), k, axis)


def _window_mean(a, k):
    return _box_sum(_box_sum(a, k, 1), k, 2) / (k * k)


def _ssim_terms(x, y, cfg: GuidanceConfig):
    k = cfg.ssim_window
    if k > min(x.shape[1], x.shape[2]):
        raise ConfigError(f"SSIM window {k} larger than image {x.shape[1:3]}")
    mx, my = _window_mean(x, k), _window_mean(y, k)
    vx = _window_mean(x * x, k) - mx * mx
    vy = _window_mean(y * y, k) - my * my
    cxy = _window_mean(x * y, k) - mx * my
    A1 = 2 * mx * my + cfg.c1
    A2 = 2 * cxy + cfg.c2
    B1 = mx * mx + my * my + cfg.c1
    B2 = vx + vy + cfg.c2
    return mx, my, A1, A2, B1, B2


def ssim_batch(x, y, cfg: GuidanceConfig) -> np.ndarray:
    """Mean SSIM over valid uniform windows and channels, one value per image."""
    x, y = _same_shape(x, y)
    x, y = _as_hwc_batch(x, True), _as_hwc_batch(y, True)
    _, _, A1, A2, B1, B2 = _ssim_terms(x, y, cfg)
    return (A1 * A2 / (B1 * B2)).reshape(len(x), -1).mean(axis=1)


def ssim_grad_batch(x, y, cfg: GuidanceConfig) -> np.ndarray:
    """Gradient of mean SSIM with respect to ``x``, per image."""
    x, y = _same_shape(x, y)
    shape = x.shape
    x, y = _as_hwc_batch(x, True), _as_hwc_batch(y, True)
    k = cfg.ssim_window
    mx, my, A1, A2, B1, B2 = _ssim_terms(x, y, cfg)
    S = A1 * A2 / (B1 * B2)
    # partials of S w.r.t. the window statistics, treated as independent
    d_mu = 2 * my * A2 / (B1 * B2) - S * 2 * mx / B1
    d_var = -S / B2
    d_cov = 2 * A1 / (B1 * B2)
    # chain rule through mu_x = mean(x), var_x = mean(x^2) - mu_x^2, cov = mean(xy) - mu_x mu_y
    a = d_mu - 2 * mx * d_var - my * d_cov
    b = 2 * d_var
    c = d_cov
    norm = k * k * S[0].size

    def spread(m):
        return _box_sum_adjoint(_box_sum_adjoint(m, k, 1), k, 2)

    g = (spread(a) + x * spread(b) + y * spread(c)) / norm
    return g.reshape(shape)


def ssim(x, y, cfg: GuidanceConfig | None = None) -> float:
    cfg = cfg or GuidanceConfig(metric="ssim")
    x, y = _same_shape(x, y)
    return float(ssim_batch(x[None], y[None], cfg)[0])


# ---------------------------------------------------------------- distance D

def distance_batch(metric: str, x, y, cfg: GuidanceConfig) -> np.ndarray:
    if metric == "mse":
        return mse_batch(x, y)
    if metric == "ssim":
        return -ssim_batch(x, y, cfg)
    raise ConfigError(f"unknown metric {metric!r}")


def distance_gradient_batch(metric: str, x, y, cfg: GuidanceConfig) -> np.ndarray:
    """Gradient of D(x, y) w.r.t. ``x``; D is MSE or negative SSIM."""
    if metric == "mse":
        return mse_grad_batch(x, y)
    if metric == "ssim":
        return -ssim_grad_batch(x, y, cfg)
    raise ConfigError(f"unknown metric {metric!r}")


def distance_gradient(metric: str, x, y, cfg: GuidanceConfig | None = None) -> np.ndarray:
    cfg = cfg or GuidanceConfig(metric=metric)
    x, y = _same_shape(x, y)
    return distance_gradient_batch(metric, x[None], y[None], cfg)[0]


# ---------------------------------------------------------------- guidance scale

def scale_from_alpha_bar(alpha_bar: float, gamma: float, a: float) -> float:
    """3 sqrt(1 - abar) / (gamma sqrt(abar)) * a."""
    return 3.0 * a * float(np.sqrt((1.0 - alpha_bar) / alpha_bar)) / gamma


def guidance_scale(t: int, s: NoiseSchedule, cfg: GuidanceConfig) -> float:
    s.check_t(t)
    if cfg.scale_override is not None:
        return float(cfg.scale_override)
    return scale_from_alpha_bar(s.alpha_bar[t], cfg.gamma, cfg.a)


def guided_reverse_step(xt: np.ndarray, t: int, d: Denoiser, s: NoiseSchedule, cfg: GuidanceConfig,
                        x_adv: np.ndarray, rng: RandomSource, adv_rng: RandomSource | None = None,
                        adv_eps: np.ndarray | None = None, on_diag: Callable[[GuidedStepDiagnostics], None] | None = None) -> np.ndarray:
    """One reverse step with the mean pulled toward the diffused guidance image.

    ``xt`` and ``x_adv`` are batches (B, *shape). ``adv_eps`` supplies the
    noise used to diffuse ``x_adv`` to step ``t``; when it is None a fresh
    draw is taken from ``adv_rng`` (or ``rng`` if that is None too). Keeping
    the two streams apart means a zero guidance scale reproduces the
    unguided step bit for bit.
    """
    s.check_t(t)
    if xt.shape != x_adv.shape:
        raise ShapeError(f"shape mismatch {xt.shape} vs {x_adv.shape}")
    ab = s.alpha_bar[t]
    if adv_eps is None:
        adv_eps = (adv_rng or rng).normal(x_adv.shape)
    xt_adv = np.sqrt(ab) * x_adv + np.sqrt(1.0 - ab) * adv_eps
    mu = d.mean(xt, t, s)
    var = s.sigma2[t]
    s_t = guidance_scale(t, s, cfg)
    grad = distance_gradient_batch(cfg.metric, xt, xt_adv, cfg)
    shift = s_t * var * grad
    if on_diag is not None:
        on_diag(GuidedStepDiagnostics(int(t), s_t, float(np.linalg.norm(grad)),
                                      float(np.linalg.norm(shift))))
    mu = mu - shift
    if var == 0.0:
        return mu
    return mu + np.sqrt(var) * rng.normal(mu.shape)
