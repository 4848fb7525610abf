"""Loss weighting: EDM's unit-variance weight times a lognormal emphasis on mid noise levels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError


def _positive(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise PreconditionError("noise level sigma must be strictly positive")
    return sigma


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class LossWeighting:
    """Per-slot weight ``lambda(sigma) * f(sigma; p_mean, p_std)``.

    With ``use_pdf=False`` the lognormal factor is dropped (the "no f" ablation).
    """

    p_mean: float = 0.5
    p_std: float = 1.2
    sigma_data: float = 1.0
    use_pdf: bool = True

    def __post_init__(self):
        if not self.p_std > 0:
            raise PreconditionError(f"p_std must be positive, got {self.p_std}")
        if not self.sigma_data > 0:
            raise PreconditionError(f"sigma_data must be positive, got {self.sigma_data}")

    def lambda_weight(self, sigma):
        s = _positive(sigma)
        return _scalar((s**2 + self.sigma_data**2) / (s * self.sigma_data) ** 2)

    def lognormal_pdf(self, sigma):
        s = _positive(sigma)
        z = (np.log(s) - self.p_mean) / self.p_std
        return _scalar(np.exp(-0.5 * z**2) / (s * self.p_std * math.sqrt(2.0 * math.pi)))

    def snapshot_weight(self, sigma):
        w = np.asarray(self.lambda_weight(sigma))
        if self.use_pdf:
            w = w * self.lognormal_pdf(sigma)
        return _scalar(w)

    def sample_sigma(self, rng, size):
        """Draw training noise levels with ``ln(sigma) ~ N(p_mean, p_std^2)``."""
        return np.exp(self.p_mean + self.p_std * rng.standard_normal(size))
