"""l-infinity attacks: preprocessor-blind PGD, BPDA+EOT through a purifier,
and black-box SPSA.

All attacks run on a batch ``x`` of shape (B, *image_shape) with labels
``y`` of shape (B,), and keep every output inside both the gamma-ball
around ``x`` and the pixel range [0, 1].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import RandomSource, clamp01

ATTACK_KINDS = ("none", "pgd", "bpda_eot", "spsa")

Purifier = Callable[[np.ndarray, RandomSource], np.ndarray]


@dataclass
class AttackConfig:
    kind: str = "pgd"
    gamma: float = 8 / 255
    steps: int = 40
    step_size: float | None = None  # default gamma / 4
    targeted: bool = False
    random_start: bool = False
    eot_samples: int = 1
    spsa_queries: int = 1280
    spsa_perturb: float = 0.01

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.steps < 1 or self.eot_samples < 1 or self.spsa_queries < 2:
            raise ConfigError("steps, eot_samples must be >= 1 and spsa_queries >= 2")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.spsa_perturb <= 0:
            raise ConfigError("spsa_perturb must be positive")

    @property
    def alpha(self) -> float:
        return self.gamma / 4 if self.step_size is None else self.step_size

    def to_dict(self) -> dict:
        return asdict(self)


def project_linf(x_center: np.ndarray, x: np.ndarray, gamma: float) -> np.ndarray:
    if np.shape(x_center) != np.shape(x):
        raise ShapeError(f"shape mismatch {np.shape(x_center)} vs {np.shape(x)}")
    return np.clip(x, x_center - gamma, x_center + gamma)


def pick_targets(y: np.ndarray, num_classes: int, rng: RandomSource) -> np.ndarray:
    """Uniform random target per example, never the true label."""
    return (y + 1 + rng.integers(0, num_classes - 1, size=len(y))) % num_classes


def _check_inputs(model, x, y):
    if np.any(x < 0) or np.any(x > 1):
        raise ConfigError("attack inputs must lie in [0, 1]")
    y = np.asarray(y)
    if np.any((y < 0) | (y >= model.num_classes)):
        raise IndexError(f"labels must be in 0..{model.num_classes - 1}")


def _signed_loop(x, y, cfg: AttackConfig, num_classes: int, rng: RandomSource,
                 grad_fn: Callable[[np.ndarray, np.ndarray, int], np.ndarray]) -> np.ndarray:
    """Shared sign-gradient loop; ``grad_fn(x_adv, labels, step)`` gives the
    ascent direction for the loss w.r.t. ``labels``."""
    labels = pick_targets(y, num_classes, rng) if cfg.targeted else y
    direction = -1.0 if cfg.targeted else 1.0
    x_adv = x.copy()
    if cfg.random_start:
        x_adv = clamp01(x + cfg.gamma * (2.0 * rng.uniform(x.shape) - 1.0))
    for step in range(cfg.steps):
        g = grad_fn(x_adv, labels, step)
        x_adv = clamp01(project_linf(x, x_adv + direction * cfg.alpha * np.sign(g), cfg.gamma))
    return x_adv


def pgd(model, x: np.ndarray, y: np.ndarray, cfg: AttackConfig, rng: RandomSource) -> np.ndarray:
    """Projected sign-gradient ascent on the classifier's cross-entropy.

    Targeted mode descends the loss of a random non-true class instead.
    """
    _check_inputs(model, x, y)

    def grad(x_adv, labels, step):
        return model.loss_and_input_grad(x_adv, labels)[1]

    return _signed_loop(x, y, cfg, model.num_classes, rng, grad)


def eot_gradient(model, purifier: Purifier, x_adv: np.ndarray, labels: np.ndarray,
                 rngs: list[RandomSource]) -> np.ndarray:
    """BPDA gradient averaged over purifier randomness: the classifier's
    input gradient at ``purifier(x_adv)``, treating the purifier's Jacobian
    as identity, averaged over one purifier run per source in ``rngs``."""
    total = np.zeros_like(x_adv)
    for r in rngs:
        total += model.loss_and_input_grad(purifier(x_adv, r), labels)[1]
    return total / len(rngs)


def bpda_eot(model, purifier: Purifier, x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
             rng: RandomSource) -> np.ndarray:
    """Adaptive PGD through a stochastic purifier (BPDA + EOT).

    Purifier randomness for step ``i``, sample ``j`` comes from
    ``rng.spawn(i, j)`` so runs are reproducible.
    """
    _check_inputs(model, x, y)

    def grad(x_adv, labels, step):
        rngs = [rng.spawn(step, j) for j in range(cfg.eot_samples)]
        return eot_gradient(model, purifier, x_adv, labels, rngs)

    return _signed_loop(x, y, cfg, model.num_classes, rng, grad)


def spsa_gradient(loss_fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, n_pairs: int,
                  r: float, rng: RandomSource) -> np.ndarray:
    """SPSA estimate of the gradient of ``loss_fn`` (per-example losses) at ``x``.

    Averages ``(L(x + r u) - L(x - r u)) / (2 r) * u`` over ``n_pairs``
    Rademacher directions ``u`` per example.
    """
    B = len(x)
    u = rng.rademacher((n_pairs, B) + x.shape[1:])
    plus = loss_fn((x[None] + r * u).reshape((-1,) + x.shape[1:])).reshape(n_pairs, B)
    minus = loss_fn((x[None] - r * u).reshape((-1,) + x.shape[1:])).reshape(n_pairs, B)
    coef = (plus - minus) / (2.0 * r)
    coef = coef.reshape(coef.shape + (1,) * (x.ndim - 1))
    return (coef * u).mean(axis=0)


def spsa(loss_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], num_classes: int,
         x: np.ndarray, y: np.ndarray, cfg: AttackConfig, rng: RandomSource) -> np.ndarray:
    """Black-box sign attack driven by SPSA gradient estimates.

    ``loss_fn(images, labels)`` returns one loss per image and is the only
    access to the target; each step spends at most ``cfg.spsa_queries``
    queries per example (antithetic pairs).
    """
    if np.any(x < 0) or np.any(x > 1):
        raise ConfigError("attack inputs must lie in [0, 1]")
    n_pairs = cfg.spsa_queries // 2

    def grad(x_adv, labels, step):
        tiled = np.tile(labels, n_pairs)
        return spsa_gradient(lambda z: loss_fn(z, tiled), x_adv, n_pairs, cfg.spsa_perturb,
                             rng.spawn(10_000 + step))

    return _signed_loop(x, y, cfg, num_classes, rng, grad)


def check_ball(x: np.ndarray, x_adv: np.ndarray, gamma: float, tol: float = 1e-12) -> None:
    """Hard assertion of the threat-model constraints."""
    if x.shape != x_adv.shape:
        raise ShapeError("attack changed the input shape")
    excess = float(np.max(np.abs(x_adv - x))) if x.size else 0.0
    if excess > gamma + tol:
        raise AssertionError(f"l-inf perturbation {excess} exceeds gamma {gamma}")
    if np.any(x_adv < 0) or np.any(x_adv > 1):
        raise AssertionError("attacked image left the [0, 1] pixel range")
