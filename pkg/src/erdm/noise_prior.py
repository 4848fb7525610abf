"""Temporally correlated ("progressive") noise for the window slots.

``eps_1 ~ N(0, I)`` and ``eps_k = a * eps_{k-1} + sqrt(1 - a^2) * xi_k`` with
``a = alpha / sqrt(1 + alpha^2)``, so every slot is marginally standard normal and the
lag-k correlation is ``a^k``. ``alpha = 0`` gives i.i.d. slots.

``rng`` may be a ``numpy.random.Generator`` or a :class:`erdm.rng.MemberRNG`; both provide
``standard_normal(size)``. Batched draws put the slot axis second to last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError


@dataclass(frozen=True)
class NoisePriorConfig:
    alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise PreconditionError(f"alpha must be a finite nonnegative number, got {self.alpha}")

    @property
    def carry(self) -> float:
        """Weight on the previous slot's noise, ``alpha / sqrt(1 + alpha^2)``."""
        return self.alpha / math.sqrt(1.0 + self.alpha**2)

    @property
    def fresh(self) -> float:
        """Standard deviation of the innovation, ``1 / sqrt(1 + alpha^2)``."""
        return 1.0 / math.sqrt(1.0 + self.alpha**2)


def sample_window_noise(cfg: NoisePriorConfig, n_slots: int, dim: int, rng, batch=()) -> np.ndarray:
    """Draw a ``(*batch, n_slots, dim)`` block of unit-variance slot noise."""
    if n_slots < 1 or dim < 1:
        raise PreconditionError("window noise needs at least one slot and one dimension")
    batch = tuple(batch)
    eps = rng.standard_normal(batch + (n_slots, dim))
    if cfg.alpha == 0:
        return eps
    out = np.empty_like(eps)
    out[..., 0, :] = eps[..., 0, :]
    for k in range(1, n_slots):
        out[..., k, :] = cfg.carry * out[..., k - 1, :] + cfg.fresh * eps[..., k, :]
    return out


def sample_appended_noise(cfg: NoisePriorConfig, previous, rng, n_slots: int = 1) -> np.ndarray:
    """Continue the chain from ``previous`` (raw noise of the last slot, shape (*batch, dim)).

    Returns ``(*batch, n_slots, dim)`` fresh slot noise for appending after a window shift.
    """
    previous = np.asarray(previous, dtype=float)
    eps = rng.standard_normal(previous.shape[:-1] + (n_slots, previous.shape[-1]))
    if cfg.alpha == 0:
        return eps
    out = np.empty_like(eps)
    prev = previous
    for k in range(n_slots):
        prev = cfg.carry * prev + cfg.fresh * eps[..., k, :]
        out[..., k, :] = prev
    return out
