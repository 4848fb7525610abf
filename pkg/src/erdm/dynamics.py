"""Synthetic dynamical systems: Lorenz-63, Lorenz-96 and a multichannel OU process."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, StructuralError

SYSTEMS = ("lorenz63", "lorenz96", "ou")


@dataclass(frozen=True)
class SystemSpec:
    """Parameters of a synthetic system.

    For Lorenz systems ``dt`` is the RK4 step and ``stride`` the number of RK4 steps per
    stored snapshot. For OU each stored snapshot is one exact transition over
    ``dt * stride`` time units. ``ou_variance`` is the stationary variance ``v``, so the
    diffusion coefficient is ``sqrt(2 * ou_theta * v)``.
    """

    kind: str = "lorenz63"
    dim: int = 3
    dt: float = 0.01
    stride: int = 10
    burn_in: int = 1000
    l63_sigma: float = 10.0
    l63_rho: float = 28.0
    l63_beta: float = 8.0 / 3.0
    l96_forcing: float = 8.0
    ou_theta: float = 1.0
    ou_variance: float = 1.0

    def __post_init__(self):
        if self.kind not in SYSTEMS:
            raise ConfigError("system.kind", f"must be one of {SYSTEMS}, got {self.kind!r}")
        if not self.dt > 0:
            raise ConfigError("system.dt", f"must be positive, got {self.dt}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ConfigError("system.stride", f"must be a positive integer, got {self.stride}")
        if int(self.burn_in) != self.burn_in or self.burn_in < 0:
            raise ConfigError("system.burn_in", f"must be a nonnegative integer, got {self.burn_in}")
        if self.kind == "lorenz63" and self.dim != 3:
            raise ConfigError("system.dim", "lorenz63 has exactly 3 dimensions")
        if self.kind == "lorenz96" and self.dim < 4:
            raise ConfigError("system.dim", "lorenz96 needs at least 4 sites")
        if self.dim < 1:
            raise ConfigError("system.dim", "must be positive")
        if self.kind == "ou" and not (self.ou_theta > 0 and self.ou_variance >= 0):
            raise ConfigError("system.ou_theta", "OU needs theta > 0 and variance >= 0")

    @property
    def obs_interval(self) -> float:
        return self.dt * self.stride

    @property
    def periodic(self) -> bool:
        return self.kind == "lorenz96"

    def to_dict(self) -> dict:
        return asdict(self)


def lorenz63_rhs(x, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([sigma * (x2 - x1), x1 * (rho - x3) - x2, x1 * x2 - beta * x3], axis=-1)


def lorenz96_rhs(x, forcing=8.0):
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + forcing


def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rhs(spec: SystemSpec):
    if spec.kind == "lorenz63":
        return lambda x: lorenz63_rhs(x, spec.l63_sigma, spec.l63_rho, spec.l63_beta)
    return lambda x: lorenz96_rhs(x, spec.l96_forcing)


def _initial_state(spec: SystemSpec, rng, n_traj):
    if spec.kind == "lorenz63":
        return np.array([1.0, 1.0, 20.0]) + rng.standard_normal((n_traj, 3))
    if spec.kind == "lorenz96":
        x = np.full((n_traj, spec.dim), spec.l96_forcing)
        return x + 0.01 * rng.standard_normal((n_traj, spec.dim))
    return math.sqrt(spec.ou_variance) * rng.standard_normal((n_traj, spec.dim))


def ou_transition(spec: SystemSpec, x, rng, lead: int = 1):
    """Exact OU transition over ``lead`` observation intervals."""
    decay = math.exp(-spec.ou_theta * spec.obs_interval * lead)
    noise_sd = math.sqrt(spec.ou_variance * (1.0 - decay**2))
    return decay * x + noise_sd * rng.standard_normal(np.shape(x))


def simulate(spec: SystemSpec, n_steps: int, seed: int = 0, n_traj: int | None = None, x0=None):
    """Simulate ``n_steps`` stored snapshots after burn-in.

    Returns (n_steps, D), or (n_traj, n_steps, D) when ``n_traj`` is given. Trajectories in
    a batch are integrated together but are otherwise independent. Burn-in is counted in
    stored snapshots. Passing ``x0`` of shape (n_traj, D) skips the random start and the
    burn-in.
    """
    rng = np.random.default_rng(seed)
    batch = 1 if n_traj is None else int(n_traj)
    if x0 is None:
        x = _initial_state(spec, rng, batch)
        burn = spec.burn_in
    else:
        x = np.array(x0, dtype=float).reshape(batch, spec.dim)
        burn = 0
    out = np.empty((batch, n_steps, spec.dim))
    if spec.kind == "ou":
        for i in range(burn):
            x = ou_transition(spec, x, rng)
        for i in range(n_steps):
            x = ou_transition(spec, x, rng)
            out[:, i] = x
    else:
        f = _rhs(spec)
        for i in range(burn + n_steps):
            for _ in range(spec.stride):
                x = rk4_step(f, x, spec.dt)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e6:
                raise DivergenceError(f"{spec.kind} integration diverged; reduce dt", step=i)
            if i >= burn:
                out[:, i - burn] = x
    return out[0] if n_traj is None else out


def ou_predictive(spec: SystemSpec, y0, lead: int):
    """Exact Gaussian law of the OU state ``lead`` snapshots after ``y0``: (mean, variance)."""
    if spec.kind != "ou":
        raise ConfigError("system.kind", "ou_predictive requires an OU system")
    decay = math.exp(-spec.ou_theta * lead * spec.obs_interval)
    return np.asarray(y0) * decay, spec.ou_variance * (1.0 - decay**2)


class OUExactForecaster:
    """Perfect next-step sampler for an OU system, usable as a first-window initializer.

    Works in standardized units when given the dataset ``scale`` (the channel std).
    """

    def __init__(self, spec: SystemSpec, mean=0.0, scale=1.0):
        self.spec = spec
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)

    def __call__(self, y0, n_steps: int, rng):
        y = np.asarray(y0, dtype=float) * self.scale + self.mean
        decay = math.exp(-self.spec.ou_theta * self.spec.obs_interval)
        sd = math.sqrt(self.spec.ou_variance * (1.0 - decay**2))
        out = []
        for _ in range(n_steps):
            y = decay * y + sd * rng.standard_normal(y.shape)
            out.append((y - self.mean) / self.scale)
        return np.stack(out, axis=1)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """Raw trajectories (n_traj, T, D) with standardization statistics."""

    trajectories: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_trajectories(cls, trajectories, mean=None, std=None) -> "Dataset":
        traj = np.asarray(trajectories, dtype=float)
        if traj.ndim == 2:
            traj = traj[None]
        if traj.ndim != 3:
            raise StructuralError(f"trajectories must be (n_traj, T, D), got {traj.shape}")
        if mean is None:
            mean = traj.reshape(-1, traj.shape[-1]).mean(axis=0)
        if std is None:
            std = traj.reshape(-1, traj.shape[-1]).std(axis=0)
            std = np.where(std > 0, std, 1.0)
        return cls(traj, np.asarray(mean, dtype=float), np.asarray(std, dtype=float))

    def standardize(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def destandardize(self, z):
        return np.asarray(z) * self.std + self.mean

    @property
    def standardized(self) -> np.ndarray:
        return self.standardize(self.trajectories)


def make_windows(trajectories, window: int):
    """All contiguous windows of ``window`` snapshots and their preceding state.

    ``trajectories`` is (T, D) or (n_traj, T, D), already standardized. Returns
    ``(y0, windows)`` with shapes (N, D) and (N, window, D); window ``i`` of a trajectory
    is ``traj[i + 1 : i + 1 + window]`` and ``y0 = traj[i]``.
    """
    traj = np.asarray(trajectories)
    if traj.ndim == 2:
        traj = traj[None]
    n_traj, length, dim = traj.shape
    if length < window + 1:
        raise StructuralError(f"trajectory of length {length} is too short for window {window}")
    n = length - window
    idx = np.arange(n)[:, None] + 1 + np.arange(window)[None, :]
    windows = traj[:, idx].reshape(n_traj * n, window, dim)
    y0 = traj[:, :n].reshape(n_traj * n, dim)
    return y0, windows


class WindowSampler:
    """Random contiguous windows drawn on the fly from standardized trajectories."""

    def __init__(self, trajectories, window: int):
        traj = np.asarray(trajectories, dtype=float)
        if traj.ndim == 2:
            traj = traj[None]
        if traj.shape[1] < window + 1:
            raise StructuralError(f"trajectory of length {traj.shape[1]} is too short for window {window}")
        self.traj = traj
        self.window = int(window)
        self._offsets = np.arange(1, window + 1)

    def sample(self, rng, batch_size: int):
        """Return ``(y0, windows)`` of shapes (B, D) and (B, W, D)."""
        n_traj, length, _ = self.traj.shape
        k = rng.integers(0, n_traj, size=batch_size)
        i = rng.integers(0, length - self.window, size=batch_size)
        windows = self.traj[k[:, None], i[:, None] + self._offsets[None, :]]
        return self.traj[k, i], windows
