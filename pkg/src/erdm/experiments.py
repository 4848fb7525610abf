"""Scaled-down experiments: train, forecast from many initial conditions and score.

Forecasts for ``n_ic`` initial conditions and ``M`` members are run as one batch of
``n_ic * M`` rows, ordered initial condition major.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Dataset, SystemSpec, WindowSampler, simulate
from .init import InitStrategy, build_init_window
from .metrics import crps_members, lead_time_scores
from .noise_prior import NoisePriorConfig
from .sampler import SamplerConfig, edm_rollout, rollout
from .schedule import NoiseSchedule
from .training import TrainingConfig, build_network, make_denoiser, train
from .weighting import LossWeighting

log = logging.getLogger(__name__)

BASELINE_SCHEDULE = NoiseSchedule(sigma_min=0.002, sigma_max=80.0, rho=7.0, window=1)
BASELINE_WEIGHTING = LossWeighting(p_mean=-1.2, p_std=1.2, use_pdf=False)


@dataclass
class Experiment:
    system: SystemSpec = field(default_factory=SystemSpec)
    n_train_traj: int = 8
    train_length: int = 10000
    hidden: tuple = (128, 128)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seed: int = 0

    def dataset(self) -> Dataset:
        traj = simulate(self.system, self.train_length, seed=self.seed, n_traj=self.n_train_traj)
        return Dataset.from_trajectories(traj)

    def test_trajectories(self, dataset: Dataset, n_ic: int, horizon: int, seed: int = 12345):
        """Standardized independent trajectories of length ``horizon + 1``; row 0 is y0."""
        traj = simulate(self.system, horizon + 1, seed=seed, n_traj=n_ic)
        return dataset.standardize(traj)


def fit_erdm(exp: Experiment, dataset: Dataset, schedule: NoiseSchedule, weighting: LossWeighting,
             prior: NoisePriorConfig, training: TrainingConfig | None = None):
    training = training or exp.training
    net = build_network("erdm", schedule.window, dataset.trajectories.shape[-1], exp.hidden, seed=training.seed)
    t0 = time.time()
    state = train("erdm", net, WindowSampler(dataset.standardized, schedule.window), training, schedule,
                  weighting, prior)
    log.info("rolling model trained in %.1fs", time.time() - t0)
    return make_denoiser(state.ema_network(), weighting.sigma_data), state


def fit_baseline(exp: Experiment, dataset: Dataset, weighting: LossWeighting = BASELINE_WEIGHTING,
                 training: TrainingConfig | None = None):
    training = training or exp.training
    net = build_network("edm", 1, dataset.trajectories.shape[-1], exp.hidden, seed=training.seed)
    t0 = time.time()
    state = train("edm", net, WindowSampler(dataset.standardized, 1), training, weighting=weighting)
    log.info("baseline trained in %.1fs", time.time() - t0)
    return make_denoiser(state.ema_network(), weighting.sigma_data), state


def matched_hidden(window: int, dim: int, target_params: int, depth: int = 2) -> tuple:
    """Hidden width giving a rolling net about ``target_params`` parameters."""
    best = None
    for h in range(8, 1025):
        n_in, n_out = window * dim + window, window * dim
        n = n_in * h + h + (depth - 1) * (h * h + h) + h * n_out + n_out
        if best is None or abs(n - target_params) < abs(best[1] - target_params):
            best = (h, n)
    return (best[0],) * depth


def forecast_erdm(denoiser, schedule: NoiseSchedule, sampler: SamplerConfig, prior: NoisePriorConfig, y0, members: int,
                  init: InitStrategy, rng, truth=None):
    """Ensemble forecasts (n_ic, M, horizon, D) from initial states ``y0`` (n_ic, D)."""
    y0 = np.asarray(y0, dtype=float)
    n_ic, d = y0.shape
    rows = np.repeat(y0, members, axis=0)
    if truth is not None:
        truth = np.repeat(np.asarray(truth)[:, : schedule.window], members, axis=0)
    init_window = build_init_window(init, rows, schedule.window, rng=rng, truth=truth)
    out = rollout(denoiser, schedule, sampler, init_window, prior, rng)
    return out.reshape(n_ic, members, sampler.horizon, d)


def forecast_baseline(denoiser, y0, members: int, horizon: int, n_steps: int, rng,
                      schedule: NoiseSchedule = BASELINE_SCHEDULE):
    y0 = np.asarray(y0, dtype=float)
    n_ic, d = y0.shape
    out = edm_rollout(denoiser, np.repeat(y0, members, axis=0), horizon, n_steps, schedule, rng)
    return out.reshape(n_ic, members, horizon, d)


def per_ic_crps(forecast, truth):
    """Fair CRPS per initial condition and lead, averaged over dimensions: (n_ic, T)."""
    ens = np.moveaxis(np.asarray(forecast), 1, 0)  # (M, n_ic, T, D)
    return crps_members(ens, np.asarray(truth)).mean(axis=-1)


def paired_bootstrap(a, b, n_boot: int = 2000, level: float = 0.9, seed: int = 0):
    """Bootstrap interval for ``mean(a - b)`` over paired samples.

    Returns (mean difference, lower, upper) of the central ``level`` interval.
    """
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, diff.size, size=(n_boot, diff.size))
    means = diff[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    return float(diff.mean()), float(np.quantile(means, alpha)), float(np.quantile(means, 1.0 - alpha))


def score(forecast, truth) -> dict:
    return lead_time_scores(forecast, truth)

