import math

import numpy as np
import pytest

from erdm.denoiser import GaussianOracle, RawNetwork, ideal_raw_network
from erdm.dynamics import SystemSpec, WindowSampler, simulate
from erdm.errors import ConfigError, DivergenceError
from erdm.noise_prior import NoisePriorConfig
from erdm.precondition import Preconditioner
from erdm.schedule import NoiseSchedule
from erdm.training import (AdamW, TrainingConfig, TrainingState, clip_gradients, edm_loss, ema_update,
                           erdm_loss, train, train_step_erdm)
from erdm.weighting import LossWeighting

SCHED = NoiseSchedule()
P = Preconditioner()


class _OracleNet:
    """Raw-network stand-in returning the ideal output; backward is a no-op."""

    def __init__(self, oracle):
        self.raw = ideal_raw_network(oracle, P)

    def __call__(self, scaled, c_noise, cond=None):
        return self.raw(scaled, c_noise, cond)

    def backward(self, grad):
        return []


def test_oracle_loss_identity_per_draw():
    rng = np.random.default_rng(0)
    net = _OracleNet(GaussianOracle(np.zeros(3)))
    lw = LossWeighting(use_pdf=False)
    windows = rng.standard_normal((20000, 6, 3))
    for t in (0.0, 0.37, 0.99):
        loss, _ = erdm_loss(net, P, windows, SCHED, lw, NoisePriorConfig(0.0), rng, t=t)
        assert loss == pytest.approx(1.0, abs=4 * math.sqrt(2 / (20000 * 3)))


def test_conditional_oracle_loss_identity():
    rng = np.random.default_rng(1)
    coef = 0.6
    net = _OracleNet(GaussianOracle(np.zeros(2), variance=1.0, cond_coef=coef))
    y0 = rng.standard_normal((50000, 2))
    y1 = coef * y0 + rng.standard_normal((50000, 2))
    lw = LossWeighting(-1.2, 1.2, use_pdf=False)
    loss, _ = edm_loss(net, P, y0, y1, lw, rng, sigma=np.full(50000, 0.7))
    assert loss == pytest.approx(1.0, abs=4 * math.sqrt(2 / 100000))


def test_loss_gradient_finite_differences():
    rng = np.random.default_rng(3)
    net = RawNetwork(3, 2, hidden=(5,), rng=rng)
    s = NoiseSchedule(window=3)
    windows = rng.standard_normal((4, 3, 2))
    lw = LossWeighting()

    def loss_at():
        return erdm_loss(net, P, windows, s, lw, NoisePriorConfig(), np.random.default_rng(9), t=0.4)

    _, grads = loss_at()
    h = 1e-6
    for p, g in zip(net.params, grads):
        idx = tuple(rng.integers(0, n) for n in p.shape)
        old = p[idx]
        p[idx] = old + h
        lp, _ = loss_at()
        p[idx] = old - h
        lm, _ = loss_at()
        p[idx] = old
        fd = (lp - lm) / (2 * h)
        assert fd == pytest.approx(g[idx], rel=1e-4, abs=1e-10)


def test_ema_constant_parameters():
    p = [np.full((2, 2), 3.0)]
    e = [np.full((2, 2), 3.0)]
    for _ in range(50):
        ema_update(e, p, 0.995)
    np.testing.assert_array_equal(e[0], p[0])


def test_ema_update_rule():
    e = [np.zeros(3)]
    ema_update(e, [np.ones(3)], 0.9)
    np.testing.assert_allclose(e[0], 0.1)


def test_gradient_clip_bound():
    g = [np.full(4, 3.0), np.full((2, 2), 4.0)]
    norm = clip_gradients(g, 1.0)
    assert norm == pytest.approx(10.0)
    assert math.sqrt(sum(np.sum(x * x) for x in g)) <= 1.0 + 1e-12


def test_adamw_first_step_size():
    p = [np.array([[1.0, -1.0]])]
    opt = AdamW(p, weight_decay=0.0)
    opt.step([np.array([[0.5, -2.0]])], lr=0.1)
    np.testing.assert_allclose(p[0], [[0.9, -0.9]], rtol=1e-6)


def test_learning_rate_schedule():
    cfg = TrainingConfig(steps=100, warmup_steps=10, lr=1.0, min_lr_ratio=0.1)
    assert cfg.learning_rate(0) == pytest.approx(0.1)
    assert cfg.learning_rate(9) == pytest.approx(1.0)
    assert cfg.learning_rate(10) == pytest.approx(1.0)
    assert cfg.learning_rate(100) == pytest.approx(0.1)


@pytest.mark.parametrize("kwargs", [dict(ema_decay=1.0), dict(steps=0), dict(lr=0.0), dict(grad_clip=0.0)])
def test_invalid_training_config(kwargs):
    with pytest.raises(ConfigError):
        TrainingConfig(**kwargs)


def test_nonfinite_loss_aborts():
    net = RawNetwork(6, 1, hidden=(4,))
    cfg = TrainingConfig(steps=1)
    state = TrainingState.create(net, cfg)
    with pytest.raises(DivergenceError):
        train_step_erdm(state, cfg, np.full((2, 6, 1), np.nan), SCHED, LossWeighting(), NoisePriorConfig(),
                        np.random.default_rng(0))


def _ou_sampler():
    spec = SystemSpec(kind="ou", dim=2, dt=0.3, stride=1, burn_in=10)
    return WindowSampler(simulate(spec, 5000, seed=0, n_traj=2), 6)


def test_loss_decreases_on_ou():
    cfg = TrainingConfig(steps=1000, batch_size=64, warmup_steps=50, seed=0)
    net = RawNetwork(6, 2, hidden=(32, 32), rng=np.random.default_rng(0))
    state = train("erdm", net, _ou_sampler(), cfg, SCHED)
    losses = np.array([h[1] for h in state.history])
    avg = np.convolve(losses, np.ones(100) / 100, mode="valid")
    assert avg[-1] < 0.8 * avg[0]
    assert np.all(avg[::100][1:] <= avg[::100][:-1] * 1.05)


def test_deterministic_replay_and_log(tmp_path):
    cfg = TrainingConfig(steps=30, batch_size=16, warmup_steps=5, seed=4, log_every=10)
    runs = []
    for k in range(2):
        net = RawNetwork(1, 2, hidden=(8,), cond_dim=2, rng=np.random.default_rng(0))
        state = train("edm", net, WindowSampler(_ou_sampler().traj, 1), cfg,
                      weighting=LossWeighting(-1.2, 1.2, use_pdf=False), log_path=tmp_path / f"log{k}.csv")
        runs.append([h[1] for h in state.history])
    assert runs[0] == runs[1]
    lines = (tmp_path / "log0.csv").read_text().splitlines()
    assert lines[0] == "step,loss,lr,grad_norm" and len(lines) == 4


def test_randomized_schedule_flag_changes_levels():
    seen = []

    class Spy(_OracleNet):
        def __call__(self, scaled, c_noise, cond=None):
            seen.append(np.exp(4 * c_noise))
            return super().__call__(scaled, c_noise, cond)

    windows = np.zeros((256, 6, 1))
    erdm_loss(Spy(GaussianOracle(np.zeros(1))), P, windows, SCHED, LossWeighting(), NoisePriorConfig(),
              np.random.default_rng(0), randomize_schedule=True)
    sig = seen[0]
    assert np.mean(np.diff(sig, axis=1) < 0) > 0.2  # slots no longer ordered by noise level
    erdm_loss(Spy(GaussianOracle(np.zeros(1))), P, windows, SCHED, LossWeighting(), NoisePriorConfig(),
              np.random.default_rng(0))
    assert np.all(np.diff(seen[1], axis=1) > 0)


def test_bad_kind():
    with pytest.raises(ConfigError):
        train("vae", RawNetwork(6, 1), _ou_sampler(), TrainingConfig(steps=1), SCHED)
