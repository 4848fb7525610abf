"""Progressive per-slot noise schedule.

Slot ``w`` (1-based) of a window of size ``W`` sits at noise level

    sigma_bar_w(t) = (smax^(1/rho) + tau * (smin^(1/rho) - smax^(1/rho)))^rho,
    tau = 1 - (w - t) / W

so the first slot is the least noisy and ``sigma_bar_w(1) == sigma_bar_{w-1}(0)``,
which is what lets the window slide by one slot after each unit of diffusion time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError


def _root(x: float, rho: float) -> float:
    # x^(1/rho) for x > 0 and any sign of rho
    return float(np.exp(np.log(x) / rho))


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = 0.002
    sigma_max: float = 200.0
    rho: float = -10.0
    window: int = 6

    def __post_init__(self):
        if not (np.isfinite(self.sigma_min) and self.sigma_min > 0):
            raise PreconditionError(f"sigma_min must be positive, got {self.sigma_min}")
        if not (np.isfinite(self.sigma_max) and self.sigma_max > self.sigma_min):
            raise PreconditionError(
                f"sigma_max must exceed sigma_min, got {self.sigma_max} <= {self.sigma_min}"
            )
        if self.rho == 0 or not np.isfinite(self.rho):
            raise PreconditionError("rho must be finite and nonzero")
        if int(self.window) != self.window or self.window < 1:
            raise PreconditionError(f"window must be a positive integer, got {self.window}")

    @property
    def _ends(self) -> tuple[float, float]:
        return _root(self.sigma_max, self.rho), _root(self.sigma_min, self.rho)

    def level(self, tau):
        """Noise level at local diffusion time ``tau`` (0 -> sigma_max, 1 -> sigma_min)."""
        a, b = self._ends
        tau = np.asarray(tau, dtype=float)
        base = (1.0 - tau) * a + tau * b
        return np.exp(self.rho * np.log(base))

    def local_time(self, w, t):
        return 1.0 - (np.asarray(w, dtype=float) - np.asarray(t, dtype=float)) / self.window

    def _check(self, w, t):
        w = np.asarray(w)
        t = np.asarray(t, dtype=float)
        if np.any(w < 1) or np.any(w > self.window) or np.any(np.asarray(w) != np.round(w)):
            raise PreconditionError(f"slot index must lie in 1..{self.window}, got {w}")
        if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
            raise PreconditionError(f"diffusion time must lie in [0, 1], got {t}")

    def sigma_bar(self, w, t):
        """Noise level of slot ``w`` (1-based) at diffusion time ``t`` in [0, 1]."""
        self._check(w, t)
        out = self.level(self.local_time(w, t))
        return float(out) if np.ndim(out) == 0 else out

    def sigma_vec(self, t) -> np.ndarray:
        """All W slot levels at time ``t``; strictly increasing along the window."""
        self._check(1, t)
        w = np.arange(1, self.window + 1)
        return self.level(self.local_time(w, t))

    def sigma_dot(self, w, t):
        """Derivative of ``sigma_bar`` with respect to diffusion time (always negative)."""
        self._check(w, t)
        a, b = self._ends
        base = a + self.local_time(w, t) * (b - a)
        out = self.rho * np.exp((self.rho - 1.0) * np.log(base)) * (b - a) / self.window
        return float(out) if np.ndim(out) == 0 else out

    def slot_levels(self, t: float, n_slots: int) -> np.ndarray:
        """Levels of a padded array of ``n_slots`` slots at any global time ``t >= 0``.

        The schedule is shift invariant: slot ``j`` at time ``t`` has the same local time as
        slot ``j - 1`` at ``t - 1``. Local times are clipped to [0, 1], so slots already
        finished sit at ``sigma_min`` and slots not yet entered sit at ``sigma_max``.
        """
        if t < 0:
            raise PreconditionError(f"global diffusion time must be >= 0, got {t}")
        j = np.arange(1, n_slots + 1)
        tau = np.clip(self.local_time(j, t), 0.0, 1.0)
        return self.level(tau)

    def segments(self) -> np.ndarray:
        """(W, 2) array of ``[sigma_bar_w(1), sigma_bar_w(0)]`` per slot."""
        w = np.arange(1, self.window + 1)
        return np.stack([self.level(self.local_time(w, 1.0)), self.level(self.local_time(w, 0.0))], axis=1)
