"""Diffuse-then-denoise purification, unguided and guided.

Each of ``M`` iterations diffuses the current image to step ``Tc`` in one
shot and runs the reverse chain back to step 0. The guided variant pulls
every reverse mean toward the attacked input diffused to the same step.
With a respaced schedule the chain starts at the largest kept step not
exceeding ``Tc`` and visits only kept steps.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .diffusion import Denoiser, reverse_step
from .errors import ConfigError
from .guidance import GuidanceConfig, GuidedStepDiagnostics, guided_reverse_step, scale_from_alpha_bar
from .numerics import RandomSource, clamp01
from .schedule import NoiseSchedule, RespacedSchedule, as_schedule, respace

# sub-stream index for the noise that diffuses the guidance image
_ADV_STREAM = 0xAD


@dataclass
class PurifyConfig:
    Tc: int | None = None  # None -> suggest_tc(schedule, gamma, 10)
    M: int = 4
    guided: bool = False
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    respace_K: int | None = None
    clamp_output: bool = True
    anchor: str = "original"  # original | previous (ablation)
    submersion_threshold: float = 10.0

    def __post_init__(self):
        if isinstance(self.guidance, dict):
            self.guidance = GuidanceConfig(**self.guidance)
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.Tc is not None and self.Tc < 1:
            raise ConfigError("Tc must be >= 1")
        if self.anchor not in ("original", "previous"):
            raise ConfigError("anchor must be 'original' or 'previous'")

    def to_dict(self) -> dict:
        return asdict(self)


def submersion_ratio(t: int, s: NoiseSchedule, gamma: float) -> float:
    """Noise bound over perturbation bound at step t: 3 sqrt(1 - abar_t) / (gamma sqrt(abar_t))."""
    s.check_t(t)
    return scale_from_alpha_bar(s.alpha_bar[t], gamma, 1.0)


def suggest_tc(s: NoiseSchedule, gamma: float, threshold: float = 10.0) -> int:
    """Smallest step whose submersion ratio reaches ``threshold``."""
    ab = s.alpha_bar[1:]
    ratio = 3.0 * np.sqrt((1.0 - ab) / ab) / gamma
    hits = np.nonzero(ratio >= threshold)[0]
    if len(hits) == 0:
        raise ConfigError(f"no step reaches submersion ratio {threshold}")
    return int(s.timesteps[hits[0] + 1])


def resolve(cfg: PurifyConfig, s: NoiseSchedule | RespacedSchedule) -> tuple[NoiseSchedule, int]:
    """Return the schedule the chain runs on and the index to start from."""
    base = s.parent if isinstance(s, RespacedSchedule) else s
    tc = cfg.Tc if cfg.Tc is not None else suggest_tc(base, cfg.guidance.gamma, cfg.submersion_threshold)
    if tc > base.timesteps[-1]:
        raise ConfigError(f"Tc={tc} exceeds schedule length {int(base.timesteps[-1])}")
    run = as_schedule(s)
    if cfg.respace_K is not None and not isinstance(s, RespacedSchedule):
        run = respace(s, cfg.respace_K).schedule
    return run, run.index_at_or_below(tc)


def purify(x_in: np.ndarray, cfg: PurifyConfig, d: Denoiser, s: NoiseSchedule | RespacedSchedule,
           rng: RandomSource, on_diag: Callable[[GuidedStepDiagnostics], None] | None = None,
           guided: bool | None = None) -> np.ndarray:
    """Purify a batch (B, *shape) or a single image; the guidance anchor is ``x_in``."""
    guided = cfg.guided if guided is None else guided
    x_in = np.asarray(x_in, dtype=np.float64)
    single = x_in.shape == getattr(getattr(d, "gmm", None), "shape", None)
    x_adv = x_in[None] if single else x_in
    run, start = resolve(cfg, s)
    adv_rng = rng.spawn(_ADV_STREAM)
    ab = run.alpha_bar[start]
    x = x_adv
    for _ in range(cfg.M):
        anchor = x_adv if cfg.anchor == "original" else x
        x = np.sqrt(ab) * x + np.sqrt(1.0 - ab) * rng.normal(x.shape)
        frozen = adv_rng.normal(x.shape) if guided and cfg.guidance.adv_noise == "frozen" else None
        for t in range(start, 0, -1):
            if guided:
                x = guided_reverse_step(x, t, d, run, cfg.guidance, anchor, rng, adv_rng=adv_rng,
                                        adv_eps=frozen, on_diag=on_diag)
            else:
                x = reverse_step(x, t, d, run, rng)
    if cfg.clamp_output:
        x = clamp01(x)
    return x[0] if single else x


def purify_unguided(x_in, cfg: PurifyConfig, d, s, rng) -> np.ndarray:
    return purify(x_in, cfg, d, s, rng, guided=False)


def purify_guided(x_adv, cfg: PurifyConfig, d, s, rng, on_diag=None) -> np.ndarray:
    if not cfg.guided:
        raise ConfigError("purify_guided needs cfg.guided = True")
    return purify(x_adv, cfg, d, s, rng, on_diag=on_diag, guided=True)
