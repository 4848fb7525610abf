"""Denoisers: an analytic Gaussian oracle, a small MLP with hand-written backprop, and
the padded wrapper used by the rolling samplers.

Every denoiser is a callable ``d(x, sigma, cond=None) -> x_hat`` on arrays of shape
(B, L, D) with per-slot noise levels ``sigma`` of shape (L,) or (B, L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, StateError, StructuralError
from .precondition import Preconditioner, apply_denoiser
from .schedule import NoiseSchedule


# ---------------------------------------------------------------------------
# Gaussian oracle


@dataclass(frozen=True)
class GaussianOracle:
    """Data law ``y ~ N(mean + cond_coef * cond, variance * I)``.

    ``cond_coef`` is zero for unconditional data. A nonzero value turns the oracle into the
    exact next-step posterior of a linear-Gaussian (e.g. OU) transition given ``cond = y0``.
    """

    mean: np.ndarray
    variance: float = 1.0
    cond_coef: float = 0.0

    def __post_init__(self):
        if not self.variance > 0:
            raise PreconditionError(f"oracle variance must be positive, got {self.variance}")
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))

    def prior_mean(self, cond=None):
        if cond is None or self.cond_coef == 0:
            return self.mean
        return self.mean + self.cond_coef * np.asarray(cond)[:, None, :]

    def score(self, x, sigma, cond=None):
        """Exact score of the noised marginal, ``-(x - mu) / (variance + sigma^2)``."""
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), np.shape(x)[:2])
        return -(x - self.prior_mean(cond)) / (self.variance + sigma[..., None] ** 2)


def oracle_denoise(o: GaussianOracle, x, sigma, cond=None):
    """Posterior mean ``mu + var / (var + sigma^2) * (x - mu)`` per slot."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise StructuralError(f"expected a (batch, slots, dim) window, got shape {x.shape}")
    try:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape[:2])
    except ValueError as exc:
        raise StructuralError(f"sigma of shape {np.shape(sigma)} does not match window {x.shape}") from exc
    if np.any(~(sigma > 0)):
        raise PreconditionError("noise levels must be positive")
    mu = o.prior_mean(cond)
    shrink = o.variance / (o.variance + sigma**2)
    return mu + shrink[..., None] * (x - mu)


class OracleDenoiser:
    """Callable wrapper around :func:`oracle_denoise` that counts evaluations."""

    def __init__(self, oracle: GaussianOracle):
        self.oracle = oracle
        self.calls = 0

    def __call__(self, x, sigma, cond=None):
        self.calls += 1
        return oracle_denoise(self.oracle, x, sigma, cond)


def ideal_raw_network(oracle: GaussianOracle, p: Preconditioner):
    """Raw network whose preconditioned output is exactly the oracle posterior mean.

    It inverts the scalings: ``sigma = exp(4 c_noise)``, ``x = scaled / c_in`` and returns
    ``(oracle(x) - c_skip x) / c_out``.
    """

    def raw(scaled, c_noise, cond=None):
        sigma = np.exp(4.0 * np.asarray(c_noise))
        c_in, c_skip, c_out, _ = p.scalings(sigma)
        x = scaled / c_in[..., None]
        target = oracle_denoise(oracle, x, sigma, cond)
        return (target - c_skip[..., None] * x) / c_out[..., None]

    return raw


# ---------------------------------------------------------------------------
# Multilayer perceptron with manual reverse mode


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class MLP:
    """Fully connected network with SiLU hidden activations and a linear output layer.

    Parameters are stored as a flat list ``[W0, b0, W1, b1, ...]`` with ``W_i`` of shape
    (fan_in, fan_out), so the layer map is ``h @ W + b``.
    """

    def __init__(self, sizes, rng=None, dtype=np.float64, out_scale: float = 1.0):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise StructuralError(f"invalid layer sizes {sizes}")
        self.sizes = [int(s) for s in sizes]
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params: list[np.ndarray] = []
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            scale = 1.0 / math.sqrt(fan_in)
            if i == n_layers - 1:
                scale *= out_scale
            self.params.append((rng.standard_normal((fan_in, fan_out)) * scale).astype(self.dtype))
            self.params.append(np.zeros(fan_out, dtype=self.dtype))
        self._cache = None

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    def forward(self, h):
        h = np.asarray(h, dtype=self.dtype)
        if h.ndim != 2 or h.shape[1] != self.sizes[0]:
            raise StructuralError(f"expected input of shape (batch, {self.sizes[0]}), got {h.shape}")
        cache = []
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ w + b
            cache.append((h, z))
            h = z * _sigmoid(z) if i < n_layers - 1 else z
        self._cache = cache
        return h

    def backward(self, grad_out):
        """Gradients of ``sum(grad_out * forward(x))`` w.r.t. every parameter.

        Uses the activations stored by the most recent :meth:`forward`. The gradient with
        respect to the network input is left in ``self.grad_input``.
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        g = np.asarray(grad_out, dtype=self.dtype)
        n_layers = len(self.sizes) - 1
        if g.shape != (self._cache[-1][1].shape):
            raise StructuralError(f"upstream gradient shape {g.shape} does not match output")
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        for i in reversed(range(n_layers)):
            h, z = self._cache[i]
            if i < n_layers - 1:
                s = _sigmoid(z)
                g = g * (s * (1.0 + z * (1.0 - s)))
            grads[2 * i] = h.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        self.grad_input = g
        return grads

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat)
        if flat.size != self.n_params:
            raise StructuralError(f"expected {self.n_params} parameters, got {flat.size}")
        i = 0
        for p in self.params:
            p[...] = flat[i : i + p.size].reshape(p.shape)
            i += p.size

    def shapes(self) -> list[list[int]]:
        return [list(p.shape) for p in self.params]


class RawNetwork:
    """Window-level raw network ``F(c_in * x, c_noise[, cond])``.

    The flattened window, the per-slot noise embeddings and (optionally) a conditioning
    vector are concatenated and fed through one MLP, so every output slot sees every input
    slot and every noise level.
    """

    def __init__(self, window: int, dim: int, hidden=(256, 256), cond_dim: int = 0, rng=None,
                 dtype=np.float64, out_scale: float = 1.0):
        self.window, self.dim, self.cond_dim = int(window), int(dim), int(cond_dim)
        self.hidden = tuple(int(h) for h in hidden)
        n_in = self.window * self.dim + self.window + self.cond_dim
        self.mlp = MLP([n_in, *self.hidden, self.window * self.dim], rng=rng, dtype=dtype, out_scale=out_scale)

    @property
    def params(self):
        return self.mlp.params

    @property
    def n_params(self):
        return self.mlp.n_params

    def _inputs(self, scaled, c_noise, cond):
        scaled = np.asarray(scaled)
        if scaled.ndim != 3 or scaled.shape[1:] != (self.window, self.dim):
            raise StructuralError(
                f"expected window of shape (batch, {self.window}, {self.dim}), got {scaled.shape}"
            )
        b = scaled.shape[0]
        parts = [scaled.reshape(b, -1), np.broadcast_to(c_noise, (b, self.window))]
        if self.cond_dim:
            if cond is None:
                raise StructuralError("this network requires a conditioning input")
            parts.append(np.asarray(cond).reshape(b, self.cond_dim))
        return np.concatenate(parts, axis=1)

    def __call__(self, scaled, c_noise, cond=None):
        out = self.mlp.forward(self._inputs(scaled, c_noise, cond))
        return out.reshape(-1, self.window, self.dim)

    forward = __call__

    def backward(self, grad):
        return self.mlp.backward(np.asarray(grad).reshape(grad.shape[0], -1))


class PreconditionedDenoiser:
    """``D(x; sigma) = c_skip x + c_out F(c_in x, c_noise)`` applied slot by slot."""

    def __init__(self, net: RawNetwork, precond: Preconditioner | None = None):
        self.net = net
        self.precond = precond or Preconditioner()
        self.calls = 0

    def __call__(self, x, sigma, cond=None):
        self.calls += 1
        return apply_denoiser(self.precond, self.net, x, sigma, cond)


# ---------------------------------------------------------------------------
# Padded application


def padded_denoise(denoiser, x, t: float, schedule: NoiseSchedule, cond=None, pad: str = "replicate"):
    """Apply ``denoiser`` to the noisy sub-window of a padded array.

    ``x`` has shape (B, W + n_pad, D). The denoiser sees slots
    ``floor(t) .. floor(t) + W - 1`` (0-based) at levels ``sigma_vec(t - floor(t))``.
    Slots before that range are already clean and are returned verbatim. Slots after it
    are pure noise at ``sigma_max``: with ``pad="identity"`` they are returned verbatim,
    with ``pad="replicate"`` they receive the estimate of the last denoised slot, which
    keeps the padded slot on its ODE path when a fractional step carries it into the
    window (identity makes the step direction zero there).
    """
    if pad not in ("replicate", "identity"):
        raise PreconditionError(f"unknown pad mode {pad!r}")
    x = np.asarray(x)
    w = schedule.window
    k = int(math.floor(t))
    if x.ndim != 3 or k < 0 or k + w > x.shape[1]:
        raise StructuralError(
            f"sub-window {k}..{k + w - 1} does not fit a padded window of shape {x.shape}"
        )
    levels = schedule.slot_levels(t, x.shape[1])[k : k + w]
    out = x.copy()
    out[:, k : k + w] = denoiser(x[:, k : k + w], levels, cond)
    if pad == "replicate" and k + w < x.shape[1]:
        out[:, k + w :] = out[:, k + w - 1 : k + w]
    return out
