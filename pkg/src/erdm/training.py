"""Training loops for the rolling model and the next-step baseline.

Both objectives are preconditioned denoising losses. The rolling loss noises every slot of
a clean window at its own level ``sigma_bar_w(t)`` and weights slot ``w`` by
``lambda(sigma_w) * f(sigma_w)``; the baseline noises a single next snapshot at a
lognormal level and weights it by ``lambda(sigma)`` alone. Squared errors are averaged
over the state dimension so loss values do not scale with ``D``.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoiser import PreconditionedDenoiser, RawNetwork
from .errors import ConfigError, DivergenceError, StructuralError
from .noise_prior import NoisePriorConfig, sample_window_noise
from .precondition import Preconditioner
from .schedule import NoiseSchedule
from .weighting import LossWeighting

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 256
    steps: int = 20000
    lr: float = 1e-3
    warmup_steps: int = 500
    min_lr_ratio: float = 0.05
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    ema_decay: float = 0.995
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0
    randomize_schedule: bool = False

    def __post_init__(self):
        for name in ("batch_size", "steps"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"training.{name}", f"must be a positive integer, got {v}")
        if not self.lr > 0:
            raise ConfigError("training.lr", f"must be positive, got {self.lr}")
        if self.warmup_steps < 0:
            raise ConfigError("training.warmup_steps", "must be nonnegative")
        if not 0 <= self.min_lr_ratio <= 1:
            raise ConfigError("training.min_lr_ratio", "must lie in [0, 1]")
        if self.weight_decay < 0:
            raise ConfigError("training.weight_decay", "must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("training.beta1", "Adam moment decays must lie in [0, 1)")
        if not self.grad_clip > 0:
            raise ConfigError("training.grad_clip", "must be positive")
        if not 0 <= self.ema_decay < 1:
            raise ConfigError("training.ema_decay", f"must lie in [0, 1), got {self.ema_decay}")

    def learning_rate(self, step: int) -> float:
        """Linear warmup to ``lr`` followed by cosine decay to ``min_lr_ratio * lr``."""
        if step < self.warmup_steps:
            return self.lr * (step + 1) / self.warmup_steps
        span = max(self.steps - self.warmup_steps, 1)
        frac = min((step - self.warmup_steps) / span, 1.0)
        floor = self.min_lr_ratio * self.lr
        return floor + 0.5 * (self.lr - floor) * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Adaptive moments with decoupled weight decay, applied in place to a parameter list.

    Biases (1-D arrays) are not decayed.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay and p.ndim > 1:
                p *= 1.0 - lr * self.weight_decay
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(grads, max_norm: float):
    """Scale gradients in place so their global norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def ema_update(ema, params, decay: float):
    for e, p in zip(ema, params):
        e *= decay
        e += (1.0 - decay) * p


@dataclass
class TrainingState:
    net: RawNetwork
    ema: list
    optimizer: AdamW
    step: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, net: RawNetwork, cfg: TrainingConfig) -> "TrainingState":
        opt = AdamW(net.params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
        return cls(net=net, ema=[p.copy() for p in net.params], optimizer=opt)

    def ema_network(self) -> RawNetwork:
        """A copy of the network carrying the EMA parameters."""
        net = copy.deepcopy(self.net)
        for p, e in zip(net.params, self.ema):
            p[...] = e
        return net


# ---------------------------------------------------------------------------
# losses


def _loss_and_grad(net: RawNetwork, precond: Preconditioner, x, y, sigma, weight, cond=None):
    """Weighted preconditioned loss ``mean_b sum_w weight * mean_d (D - y)^2 / W``.

    ``sigma`` and ``weight`` have shape (B, W). Returns (loss, parameter gradients).
    """
    b, w, d = y.shape
    c_in, c_skip, c_out, c_noise = precond.scalings(sigma)
    f_out = net(c_in[..., None] * x, c_noise, cond)
    resid = c_skip[..., None] * x + c_out[..., None] * f_out - y
    per_slot = np.mean(resid**2, axis=-1)
    loss = float(np.mean(np.sum(weight * per_slot, axis=1) / w))
    grad_f = (2.0 / (b * w * d)) * (weight * c_out)[..., None] * resid
    grads = net.backward(grad_f)
    return loss, grads


def erdm_loss(net, precond, windows, schedule: NoiseSchedule, weighting: LossWeighting, prior: NoisePriorConfig,
              rng, randomize_schedule: bool = False, t=None):
    """Rolling denoising loss on a batch of clean windows (B, W, D)."""
    y = np.asarray(windows, dtype=float)
    if y.ndim != 3 or y.shape[1] != schedule.window:
        raise StructuralError(f"expected windows of shape (batch, {schedule.window}, dim), got {y.shape}")
    b, w, d = y.shape
    if randomize_schedule:
        # Independent noise level per slot over the whole range.
        sigma = schedule.level(rng.random((b, w)))
    else:
        if t is None:
            t = rng.random(b)
        t = np.broadcast_to(np.asarray(t, dtype=float), (b,))
        if np.any((t < 0) | (t > 1)):
            raise StructuralError("diffusion times must lie in [0, 1]")
        slots = np.arange(1, w + 1)
        sigma = schedule.level(1.0 - (slots[None, :] - t[:, None]) / w)
    eps = sample_window_noise(prior, w, d, rng, batch=(b,))
    x = y + sigma[..., None] * eps
    weight = weighting.snapshot_weight(sigma)
    return _loss_and_grad(net, precond, x, y, sigma, weight)


def edm_loss(net, precond, y0, y1, weighting: LossWeighting, rng, sigma=None):
    """Conditional next-step denoising loss; ``y0`` is concatenated to the network input."""
    y1 = np.asarray(y1, dtype=float)[:, None, :]
    b = y1.shape[0]
    if sigma is None:
        sigma = weighting.sample_sigma(rng, b)
    sigma = np.asarray(sigma, dtype=float).reshape(b, 1)
    x = y1 + sigma[..., None] * rng.standard_normal(y1.shape)
    weight = weighting.lambda_weight(sigma)
    return _loss_and_grad(net, precond, x, y1, sigma, weight, cond=np.asarray(y0, dtype=float))


def _apply_update(state: TrainingState, cfg: TrainingConfig, loss, grads):
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite training loss at step {state.step}", step=state.step)
    norm = clip_gradients(grads, cfg.grad_clip)
    lr = cfg.learning_rate(state.step)
    state.optimizer.step(grads, lr)
    ema_update(state.ema, state.net.params, cfg.ema_decay)
    state.history.append((state.step, loss, lr, norm))
    state.step += 1
    return state, loss


def train_step_erdm(state: TrainingState, cfg: TrainingConfig, windows, schedule, weighting, prior, rng,
                    precond: Preconditioner | None = None):
    precond = precond or Preconditioner(weighting.sigma_data)
    loss, grads = erdm_loss(state.net, precond, windows, schedule, weighting, prior, rng,
                            randomize_schedule=cfg.randomize_schedule)
    return _apply_update(state, cfg, loss, grads)


def train_step_edm_baseline(state: TrainingState, cfg: TrainingConfig, y0, y1, weighting, rng,
                            precond: Preconditioner | None = None):
    precond = precond or Preconditioner(weighting.sigma_data)
    loss, grads = edm_loss(state.net, precond, y0, y1, weighting, rng)
    return _apply_update(state, cfg, loss, grads)


# ---------------------------------------------------------------------------
# loops


def train(kind: str, net: RawNetwork, window_sampler, cfg: TrainingConfig, schedule: NoiseSchedule | None = None,
          weighting: LossWeighting | None = None, prior: NoisePriorConfig | None = None, log_path=None,
          checkpoint=None) -> TrainingState:
    """Train ``net`` as a rolling model (``kind="erdm"``) or next-step baseline (``"edm"``).

    ``window_sampler.sample(rng, batch)`` must return ``(y0, windows)``; the baseline uses
    ``windows[:, 0]`` as its target. ``checkpoint(state)`` is called every
    ``cfg.checkpoint_every`` steps and at the end when given. The CSV log has columns
    step, loss, lr, grad_norm.
    """
    if kind not in ("erdm", "edm"):
        raise ConfigError("model.kind", f"must be 'erdm' or 'edm', got {kind!r}")
    if kind == "erdm" and schedule is None:
        raise ConfigError("schedule", "rolling training needs a noise schedule")
    weighting = weighting or LossWeighting()
    prior = prior or NoisePriorConfig()
    precond = Preconditioner(weighting.sigma_data)
    rng = np.random.default_rng(cfg.seed)
    state = TrainingState.create(net, cfg)
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "grad_norm"])
    try:
        running = None
        for _ in range(cfg.steps):
            y0, windows = window_sampler.sample(rng, cfg.batch_size)
            if kind == "erdm":
                state, loss = train_step_erdm(state, cfg, windows, schedule, weighting, prior, rng, precond)
            else:
                state, loss = train_step_edm_baseline(state, cfg, y0, windows[:, 0], weighting, rng, precond)
            running = loss if running is None else 0.99 * running + 0.01 * loss
            if writer is not None and (state.step % cfg.log_every == 0 or state.step == cfg.steps):
                writer.writerow([state.step, *(f"{v:.8g}" for v in state.history[-1][1:])])
            if state.step % max(cfg.log_every, 1) == 0:
                log.debug("step %d loss %.5f (avg %.5f)", state.step, loss, running)
            if checkpoint is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                checkpoint(state)
        if checkpoint is not None:
            checkpoint(state)
    finally:
        if fh is not None:
            fh.flush()
            os.fsync(fh.fileno())
            fh.close()
    return state


def build_network(kind: str, window: int, dim: int, hidden, seed: int = 0, out_scale: float = 1.0) -> RawNetwork:
    """Rolling nets see a W-slot window; baseline nets see one slot plus ``y0``."""
    rng = np.random.default_rng(seed)
    if kind == "erdm":
        return RawNetwork(window, dim, hidden, cond_dim=0, rng=rng, out_scale=out_scale)
    return RawNetwork(1, dim, hidden, cond_dim=dim, rng=rng, out_scale=out_scale)


def make_denoiser(net: RawNetwork, sigma_data: float = 1.0) -> PreconditionedDenoiser:
    return PreconditionedDenoiser(net, Preconditioner(sigma_data))


def config_dict(cfg: TrainingConfig) -> dict:
    return asdict(cfg)
