"""Rolling-window samplers and the next-step EDM baseline sampler.

The rolling samplers keep a window of ``W + n_pad`` noisy slots. Each iteration advances
the global diffusion time by ``dt = 1 / N``; whenever it crosses an integer the leading
slots are finished, their denoised estimates are emitted, and fresh ``sigma_max`` noise is
appended at the far end. Slot levels always equal ``schedule.slot_levels(t_cur, L)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .denoiser import padded_denoise
from .errors import ConfigError, DivergenceError, PreconditionError, StructuralError
from .noise_prior import NoisePriorConfig, sample_appended_noise, sample_window_noise
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

# Diffusion times are rounded to this many decimals so that e.g. three steps of 1/3
# land exactly on 1.0 before flooring.
_TIME_DECIMALS = 12


@dataclass(frozen=True)
class SamplerConfig:
    steps_per_snapshot: float = 1.25
    s_churn: float = 0.0
    s_noise: float = 1.0
    order: str = "heun"
    horizon: int = 64
    pad: str = "replicate"
    divergence_limit: float = 1e6

    def __post_init__(self):
        if not (self.steps_per_snapshot > 0 and math.isfinite(self.steps_per_snapshot)):
            raise ConfigError("steps_per_snapshot", f"must be positive, got {self.steps_per_snapshot}")
        if not 0 <= self.s_churn < 1:
            raise ConfigError("s_churn", f"must lie in [0, 1), got {self.s_churn}")
        if not self.s_noise > 0:
            raise ConfigError("s_noise", f"must be positive, got {self.s_noise}")
        if self.order not in ("euler", "heun"):
            raise ConfigError("order", f"must be 'euler' or 'heun', got {self.order!r}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("horizon", f"must be a positive integer, got {self.horizon}")
        if self.pad not in ("replicate", "identity"):
            raise ConfigError("pad", f"must be 'replicate' or 'identity', got {self.pad!r}")

    @property
    def dt(self) -> float:
        return 1.0 / self.steps_per_snapshot

    @property
    def dt_ode(self) -> float:
        """Length of the ODE step before churn backtracks it to ``dt``."""
        return self.dt / (1.0 - self.s_churn)

    @property
    def n_pad(self) -> int:
        return int(math.floor(self.dt_ode)) + 1


@dataclass
class RollingState:
    x: np.ndarray  # (M, W + n_pad, D) noisy slots
    t_cur: float
    levels: np.ndarray  # (W + n_pad,) noise level of every slot
    last_noise: np.ndarray  # (M, D) raw unit-variance noise of the futuremost slot
    emitted: list = field(default_factory=list)  # list of (M, D) snapshots
    iteration: int = 0

    @property
    def n_emitted(self) -> int:
        return len(self.emitted)


def _round_time(t: float) -> float:
    return round(t, _TIME_DECIMALS)


def ode_step(denoiser, schedule: NoiseSchedule, x, t_cur: float, t_next: float, order: str = "heun",
             pad: str = "replicate", cond=None):
    """One Euler or Heun step of the window ODE from ``t_cur`` to ``t_next``.

    Returns ``(x_next, y_hat)`` where ``y_hat`` is the padded denoiser output at ``t_cur``.
    """
    n_slots = x.shape[1]
    s_cur = schedule.slot_levels(t_cur, n_slots)[None, :, None]
    s_next = schedule.slot_levels(t_next, n_slots)[None, :, None]
    y_hat = padded_denoise(denoiser, x, t_cur, schedule, cond=cond, pad=pad)
    d = (x - y_hat) / s_cur
    x_next = x + (s_next - s_cur) * d
    if order == "heun":
        d2 = (x_next - padded_denoise(denoiser, x_next, t_next, schedule, cond=cond, pad=pad)) / s_next
        x_next = x + 0.5 * (s_next - s_cur) * (d + d2)
    return x_next, y_hat


def solve_window(denoiser, schedule: NoiseSchedule, x, dt: float, order: str = "heun", t0: float = 0.0,
                 t1: float = 1.0, pad: str = "replicate"):
    """Integrate a padded window from ``t0`` to ``t1`` in steps of ``dt`` without shifting."""
    t = t0
    while t < t1 - 1e-12:
        t_next = _round_time(min(t + dt, t1))
        x, _ = ode_step(denoiser, schedule, x, t, t_next, order=order, pad=pad)
        t = t_next
    return x


def init_state(schedule: NoiseSchedule, cfg: SamplerConfig, init_window, prior: NoisePriorConfig, rng) -> RollingState:
    """Corrupt clean estimates with ``sigma_vec(0)`` noise and append ``n_pad`` pure-noise slots."""
    init_window = np.asarray(init_window, dtype=float)
    if init_window.ndim != 3 or init_window.shape[1] != schedule.window:
        raise StructuralError(
            f"init window must have shape (members, {schedule.window}, dim), got {init_window.shape}"
        )
    if not np.all(np.isfinite(init_window)):
        raise PreconditionError("init window contains non-finite values")
    m, w, d = init_window.shape
    n_slots = w + cfg.n_pad
    levels = schedule.slot_levels(0.0, n_slots)
    eps = sample_window_noise(prior, n_slots, d, rng, batch=(m,))
    mean = np.concatenate([init_window, np.zeros((m, cfg.n_pad, d))], axis=1)
    x = mean + levels[None, :, None] * eps
    return RollingState(x=x, t_cur=0.0, levels=levels, last_noise=eps[:, -1].copy())


def shift_window(state: RollingState, n_clean: int, y_hat, schedule: NoiseSchedule, prior: NoisePriorConfig,
                 rng, levels_next=None) -> RollingState:
    """Emit ``n_clean`` finished slots of ``y_hat`` and slide the window.

    The leading ``n_clean`` noisy slots are dropped, ``n_clean`` fresh ``sigma_max`` slots
    are appended (continuing the noise-prior chain) and ``t_cur`` drops by ``n_clean``.
    ``levels_next`` are the slot levels of ``state.x`` before the shift (defaults to
    ``state.levels``).
    """
    if n_clean < 0:
        raise PreconditionError(f"n_clean must be nonnegative, got {n_clean}")
    if n_clean == 0:
        return state
    if n_clean > state.x.shape[1]:
        raise StructuralError(f"cannot shift {n_clean} slots out of a window of {state.x.shape[1]}")
    levels = state.levels if levels_next is None else levels_next
    for k in range(n_clean):
        state.emitted.append(np.array(y_hat[:, k]))
    eps = sample_appended_noise(prior, state.last_noise, rng, n_slots=n_clean)
    state.x = np.concatenate([state.x[:, n_clean:], schedule.sigma_max * eps], axis=1)
    state.levels = np.concatenate([levels[n_clean:], np.full(n_clean, schedule.sigma_max)])
    state.last_noise = eps[:, -1].copy()
    state.t_cur = _round_time(state.t_cur - n_clean)
    return state


def _check_levels(state: RollingState, schedule: NoiseSchedule):
    expected = schedule.slot_levels(state.t_cur, state.x.shape[1])
    if not np.allclose(state.levels, expected, rtol=1e-9, atol=0.0):
        raise StructuralError(
            f"slot levels drifted from the schedule at t={state.t_cur}: {state.levels} vs {expected}"
        )


def rolling_iteration(denoiser, schedule: NoiseSchedule, cfg: SamplerConfig, state: RollingState,
                      prior: NoisePriorConfig, rng, trace: list | None = None) -> RollingState:
    """One loop body of the rolling sampler: ODE step, optional churn, shift and emit."""
    _check_levels(state, schedule)
    t_cur = state.t_cur
    t_next_ode = _round_time(t_cur + cfg.dt_ode)
    t_next = _round_time(t_cur + cfg.dt)
    x_next, y_hat = ode_step(denoiser, schedule, state.x, t_cur, t_next_ode, order=cfg.order, pad=cfg.pad)
    n_slots = state.x.shape[1]
    levels_ode = schedule.slot_levels(t_next_ode, n_slots)
    levels_next = schedule.slot_levels(t_next, n_slots)
    if cfg.s_churn > 0:
        radicand = levels_next**2 - levels_ode**2
        if np.any(radicand < -1e-12 * levels_next**2):
            raise ConfigError("s_churn", "churn would need to remove noise; check the schedule direction")
        eps = rng.standard_normal(state.x.shape)
        x_next = x_next + np.sqrt(np.maximum(radicand, 0.0))[None, :, None] * cfg.s_noise * eps
    if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next)) > cfg.divergence_limit:
        raise DivergenceError("rolling sampler state diverged", step=state.iteration)
    n_clean = int(math.floor(t_next))
    if trace is not None:
        trace.append({"iteration": state.iteration, "t_cur": t_cur, "n_clean": n_clean,
                      "sigma": schedule.slot_levels(t_cur, n_slots)[: schedule.window].tolist()})
    state.x = x_next
    state.t_cur = t_next
    state.levels = levels_next
    state.iteration += 1
    return shift_window(state, n_clean, y_hat, schedule, prior, rng, levels_next=levels_next)


def rollout(denoiser, schedule: NoiseSchedule, cfg: SamplerConfig, init_window, prior: NoisePriorConfig, rng,
            trace: list | None = None) -> np.ndarray:
    """Run the rolling sampler until ``cfg.horizon`` snapshots are emitted.

    ``init_window`` holds clean estimates of shape (M, W, D). Returns (M, horizon, D).
    """
    if cfg.dt > schedule.window:
        raise ConfigError("steps_per_snapshot", "a step may not finish more snapshots than the window holds")
    state = init_state(schedule, cfg, init_window, prior, rng)
    while state.n_emitted < cfg.horizon:
        state = rolling_iteration(denoiser, schedule, cfg, state, prior, rng, trace)
    return np.stack(state.emitted[: cfg.horizon], axis=1)


def euler_rollout(denoiser, schedule, cfg: SamplerConfig, init_window, prior, rng, trace=None):
    if cfg.order != "euler":
        raise ConfigError("order", "euler_rollout requires order='euler'")
    return rollout(denoiser, schedule, cfg, init_window, prior, rng, trace)


def heun_rollout(denoiser, schedule, cfg: SamplerConfig, init_window, prior, rng, trace=None):
    if cfg.order != "heun":
        raise ConfigError("order", "heun_rollout requires order='heun'")
    return rollout(denoiser, schedule, cfg, init_window, prior, rng, trace)


# ---------------------------------------------------------------------------
# next-step EDM baseline


def baseline_sigmas(schedule: NoiseSchedule, n_steps: int) -> np.ndarray:
    """``n_steps + 1`` decreasing levels of a single-segment schedule at ``t = i / n_steps``."""
    if schedule.window != 1:
        raise PreconditionError("the baseline discretization uses a single-segment (W=1) schedule")
    if n_steps < 1:
        raise PreconditionError("n_steps must be at least 1")
    return schedule.sigma_bar(1, np.arange(n_steps + 1) / n_steps)


def edm_baseline_sample(denoiser, y0, n_steps: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Deterministic Heun sampling of ``y1 | y0`` from pure ``sigma_max`` noise.

    ``y0`` has shape (M, D); ``denoiser`` is called as ``denoiser(x, sigma, cond=y0)`` on
    (M, 1, D) arrays. Every step (including the last) uses two evaluations.
    """
    y0 = np.asarray(y0, dtype=float)
    sigmas = baseline_sigmas(schedule, n_steps)
    x = sigmas[0] * rng.standard_normal((y0.shape[0], 1, y0.shape[1]))
    for s_cur, s_next in zip(sigmas[:-1], sigmas[1:]):
        d = (x - denoiser(x, np.array([s_cur]), y0)) / s_cur
        x_e = x + (s_next - s_cur) * d
        d2 = (x_e - denoiser(x_e, np.array([s_next]), y0)) / s_next
        x = x + 0.5 * (s_next - s_cur) * (d + d2)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("baseline sampler produced non-finite values")
    return x[:, 0]


def edm_rollout(denoiser, y0, horizon: int, n_steps: int, schedule: NoiseSchedule, rng,
                divergence_limit: float = 1e6) -> np.ndarray:
    """Autoregressive rollout of the next-step baseline. Returns (M, horizon, D)."""
    out = []
    y = np.asarray(y0, dtype=float)
    for k in range(horizon):
        y = edm_baseline_sample(denoiser, y, n_steps, schedule, rng)
        if np.max(np.abs(y)) > divergence_limit:
            raise DivergenceError("baseline rollout diverged", step=k)
        out.append(y)
    return np.stack(out, axis=1)
