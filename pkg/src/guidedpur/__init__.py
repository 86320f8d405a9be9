"""Guided-diffusion adversarial purification at desk scale.

The diffusion prior is an exact Gaussian-mixture denoiser, the classifiers
are small numpy models with hand-written gradients, and every random draw
derives from an explicit seed.
"""
from .attacks import AttackConfig, bpda_eot, pgd, spsa
from .diffusion import GaussianMixtureModel, GMMDenoiser, diffuse_to, reverse_step, sample
from .errors import ConfigError, ShapeError, StageError
from .guidance import GuidanceConfig, guidance_scale, guided_reverse_step
from .harness import EvalReport, RunConfig, evaluate, sweep
from .numerics import RandomSource
from .purifier import PurifyConfig, purify, purify_guided, purify_unguided
from .schedule import NoiseSchedule, linear_schedule, respace

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "ConfigError", "EvalReport", "GMMDenoiser", "GaussianMixtureModel",
    "GuidanceConfig", "NoiseSchedule", "PurifyConfig", "RandomSource", "RunConfig", "ShapeError",
    "StageError", "bpda_eot", "diffuse_to", "evaluate", "guidance_scale", "guided_reverse_step",
    "linear_schedule", "pgd", "purify", "purify_guided", "purify_unguided", "respace",
    "reverse_step", "sample", "spsa", "sweep",
]
