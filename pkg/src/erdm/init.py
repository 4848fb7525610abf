"""First-window initialization of the rolling sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError, StructuralError
from .sampler import edm_rollout
from .schedule import NoiseSchedule

INIT_KINDS = ("external_forecaster", "persistence", "truth")


@dataclass(frozen=True)
class InitStrategy:
    """How the clean estimates of the first window are produced.

    ``forecaster`` is any callable ``f(y0 (M, D), n_steps, rng) -> (M, n_steps, D)``.
    ``allow_truth`` is set only by evaluation harnesses that hold the true future.
    """

    kind: str = "external_forecaster"
    forecaster: object = None
    allow_truth: bool = False

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigError("init.kind", f"must be one of {INIT_KINDS}, got {self.kind!r}")
        if self.kind == "truth" and not self.allow_truth:
            raise ConfigError("init.kind", "truth initialization is only available inside evaluation")
        if self.kind == "external_forecaster" and self.forecaster is None:
            raise ConfigError("init.forecaster", "external_forecaster init needs a forecaster")


class EDMForecaster:
    """Autoregressive next-step baseline used as the external first-window forecaster."""

    def __init__(self, denoiser, n_steps: int = 20, schedule: NoiseSchedule | None = None):
        self.denoiser = denoiser
        self.n_steps = int(n_steps)
        self.schedule = schedule or NoiseSchedule(sigma_min=0.002, sigma_max=80.0, rho=7.0, window=1)

    def __call__(self, y0, n_steps: int, rng):
        return edm_rollout(self.denoiser, y0, n_steps, self.n_steps, self.schedule, rng)


def build_init_window(strategy: InitStrategy, y0, window: int, rng=None, truth=None) -> np.ndarray:
    """Clean estimates (M, W, D) for the first window given initial states ``y0`` (M, D).

    ``truth`` holds the true next ``W`` snapshots, shape (W, D) or (M, W, D), and is only
    read by the truth strategy. Noise is added later by the sampler.
    """
    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    if not np.all(np.isfinite(y0)):
        raise PreconditionError("initial state contains non-finite values")
    m, d = y0.shape
    if strategy.kind == "persistence":
        return np.repeat(y0[:, None, :], window, axis=1)
    if strategy.kind == "truth":
        if truth is None:
            raise ConfigError("init.kind", "truth initialization needs the true future")
        truth = np.asarray(truth, dtype=float)
        if truth.ndim == 2:
            truth = np.broadcast_to(truth, (m,) + truth.shape)
        if truth.shape != (m, window, d):
            raise StructuralError(f"truth of shape {truth.shape} does not match ({m}, {window}, {d})")
        return np.array(truth)
    if rng is None:
        raise PreconditionError("the external forecaster needs a random generator")
    out = np.asarray(strategy.forecaster(y0, window, rng), dtype=float)
    if out.shape != (m, window, d):
        raise StructuralError(f"forecaster returned {out.shape}, expected ({m}, {window}, {d})")
    return out
