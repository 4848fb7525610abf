"""Elucidated rolling diffusion for probabilistic forecasting of dynamical systems."""

__version__ = "0.1.0"

from .errors import (ConfigError, DivergenceError, ERDMError, FormatError, PreconditionError, StateError,
                     StructuralError)
from .schedule import NoiseSchedule
from .precondition import Preconditioner, apply_denoiser
from .weighting import LossWeighting
from .noise_prior import NoisePriorConfig
from .sampler import SamplerConfig

__all__ = [
    "ConfigError", "DivergenceError", "ERDMError", "FormatError", "PreconditionError", "StateError",
    "StructuralError", "NoiseSchedule", "Preconditioner", "apply_denoiser", "LossWeighting",
    "NoisePriorConfig", "SamplerConfig",
]
