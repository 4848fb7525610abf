"""Per-slot EDM preconditioning of a raw network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, StructuralError


def _positive(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise PreconditionError("noise level sigma must be strictly positive")
    return sigma


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class Preconditioner:
    sigma_data: float = 1.0

    def __post_init__(self):
        if not self.sigma_data > 0:
            raise PreconditionError(f"sigma_data must be positive, got {self.sigma_data}")

    def c_in(self, sigma):
        s = _positive(sigma)
        return _scalar(1.0 / np.sqrt(s**2 + self.sigma_data**2))

    def c_skip(self, sigma):
        s = _positive(sigma)
        return _scalar(self.sigma_data**2 / (s**2 + self.sigma_data**2))

    def c_out(self, sigma):
        s = _positive(sigma)
        return _scalar(s * self.sigma_data / np.sqrt(s**2 + self.sigma_data**2))

    def c_noise(self, sigma):
        s = _positive(sigma)
        return _scalar(np.log(s) / 4.0)

    def scalings(self, sigma):
        """Return ``(c_in, c_skip, c_out, c_noise)`` as arrays shaped like ``sigma``."""
        s = _positive(sigma)
        var = s**2 + self.sigma_data**2
        return (
            1.0 / np.sqrt(var),
            self.sigma_data**2 / var,
            s * self.sigma_data / np.sqrt(var),
            np.log(s) / 4.0,
        )


def apply_denoiser(p: Preconditioner, raw_net, x, sigma, cond=None):
    """Wrap ``raw_net`` into a denoiser, slot by slot.

    ``x`` has shape (B, L, D) and ``sigma`` shape (B, L) or (L,). ``raw_net`` is called once
    with the scaled window ``c_in * x`` of shape (B, L, D), the per-slot noise embeddings
    of shape (B, L) and the optional conditioning, so it can mix information across slots.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise StructuralError(f"expected a (batch, slots, dim) window, got shape {x.shape}")
    try:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape[:2])
    except ValueError as exc:
        raise StructuralError(f"sigma of shape {np.shape(sigma)} does not match window {x.shape}") from exc
    c_in, c_skip, c_out, c_noise = p.scalings(sigma)
    f = raw_net(c_in[..., None] * x, c_noise, cond)
    if np.shape(f) != x.shape:
        raise StructuralError(f"raw network returned shape {np.shape(f)}, expected {x.shape}")
    return c_skip[..., None] * x + c_out[..., None] * f
