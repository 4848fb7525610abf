"""Ensemble verification metrics.

Ensembles put members on axis 0: ``members`` has shape (M, ...) and ``obs`` the trailing
shape. Grid averages use per-row weights ``w(i)`` that are normalized to mean 1 and
broadcast along the first grid axis; for unstructured state vectors the weights are 1.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, PreconditionError, StructuralError


def _check_members(members):
    members = np.asarray(members, dtype=float)
    if members.ndim < 1 or members.shape[0] < 2:
        raise PreconditionError("the fair CRPS and the spread need at least two members")
    return members


def crps_brute(members, obs):
    """Fair CRPS by the O(M^2) double sum; reference implementation."""
    members = _check_members(members)
    m = members.shape[0]
    skill = np.mean(np.abs(members - obs), axis=0)
    pair = np.abs(members[:, None] - members[None, :]).sum(axis=(0, 1))
    return skill - pair / (2.0 * m * (m - 1))


def crps_members(members, obs):
    """Fair CRPS at every grid point via sorting, O(M log M)."""
    members = _check_members(members)
    m = members.shape[0]
    skill = np.mean(np.abs(members - obs), axis=0)
    srt = np.sort(members, axis=0)
    rank = (2.0 * np.arange(1, m + 1) - m - 1).reshape((m,) + (1,) * (members.ndim - 1))
    # sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - M - 1) x_(i)
    pair = 2.0 * np.sum(rank * srt, axis=0)
    return skill - pair / (2.0 * m * (m - 1))


def crps(members, obs, weights=None):
    """Weighted grid mean of the fair CRPS (scalar for a scalar observation)."""
    return _weighted_mean(crps_members(members, obs), weights)


def area_weights(lat_upper, lat_lower):
    """Normalized cell-area weights from latitude bounds in degrees (mean exactly 1)."""
    up = np.sin(np.deg2rad(np.asarray(lat_upper, dtype=float)))
    lo = np.sin(np.deg2rad(np.asarray(lat_lower, dtype=float)))
    raw = up - lo
    if np.any(raw <= 0):
        raise PreconditionError("upper latitude bounds must exceed lower bounds")
    return raw / raw.mean()


def _weighted_mean(field, weights):
    field = np.asarray(field, dtype=float)
    if weights is None or field.ndim == 0:
        return float(np.mean(field))
    w = np.asarray(weights, dtype=float)
    if w.shape[0] != field.shape[0]:
        raise StructuralError(f"{w.shape[0]} row weights for a grid with {field.shape[0]} rows")
    w = w.reshape((-1,) + (1,) * (field.ndim - 1))
    return float(np.mean(w * field))


def rmse_ens(members, obs, weights=None):
    """RMSE of the ensemble mean."""
    members = np.asarray(members, dtype=float)
    return math.sqrt(_weighted_mean((members.mean(axis=0) - obs) ** 2, weights))


def spread(members, weights=None):
    """Square root of the weighted mean ensemble variance (unbiased, ddof=1)."""
    members = _check_members(members)
    return math.sqrt(_weighted_mean(members.var(axis=0, ddof=1), weights))


def ssr(members, obs, weights=None):
    """Spread-skill ratio with the finite-ensemble factor ``sqrt((M + 1) / M)``.

    Returns NaN (and warns) when the ensemble mean is exact everywhere.
    """
    members = _check_members(members)
    m = members.shape[0]
    err = rmse_ens(members, obs, weights)
    if err == 0:
        warnings.warn("SSR undefined: ensemble-mean RMSE is zero", RuntimeWarning, stacklevel=2)
        return float("nan")
    return math.sqrt((m + 1) / m) * spread(members, weights) / err


def crpss(model_crps, baseline_crps):
    if np.any(np.asarray(baseline_crps) == 0):
        raise PreconditionError("CRPSS is undefined for a zero baseline CRPS")
    return 1.0 - np.asarray(model_crps) / np.asarray(baseline_crps)


def ssr_deviation(ssr_series):
    """Mean squared deviation of the SSR from 1 over lead times."""
    s = np.asarray(ssr_series, dtype=float)
    return float(np.mean((1.0 - s) ** 2))


def gaussian_crps(mean, sd, obs):
    """Closed-form CRPS of ``N(mean, sd^2)``; reduces to ``|mean - obs|`` for ``sd == 0``."""
    mean, sd, obs = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mean, sd, obs)))
    out = np.array(np.abs(obs - mean), ndmin=1)
    pos = np.atleast_1d(sd > 0)
    m, s, o = (np.atleast_1d(a)[pos] for a in (mean, sd, obs))
    z = (o - m) / s
    out[pos] = s * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - 1 / math.sqrt(math.pi))
    return out.reshape(np.shape(mean)) if np.ndim(mean) else float(out[0])


def spectral_density(field, periodic: bool = True):
    """One-sided power spectrum of a field on a periodic 1D grid.

    Normalization: ``P_0 = |X_0|^2 / D``, interior modes ``P_k = 2 |X_k|^2 / D`` and, for
    even ``D``, the Nyquist mode ``|X_{D/2}|^2 / D``. With this choice ``sum(P) ==
    sum(field**2)``. Leading axes are treated as a batch.
    """
    if not periodic:
        raise ConfigError("system.kind", "spectral density is only defined for periodic grids")
    field = np.asarray(field, dtype=float)
    n = field.shape[-1]
    if n < 4:
        raise PreconditionError("spectral density needs at least 4 grid points")
    coef = np.fft.rfft(field, axis=-1)
    power = np.abs(coef) ** 2 / n
    if n % 2 == 0:
        power[..., 1:-1] *= 2
    else:
        power[..., 1:] *= 2
    return power


def lead_time_scores(forecast, truth, baseline_crps=None, weights=None):
    """Per-lead scores for forecasts (n_ic, M, T, D) against truth (n_ic, T, D).

    Returns a dict of arrays over lead time; scores are averaged over initial conditions.
    """
    forecast = np.asarray(forecast, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if forecast.ndim != 4 or truth.shape != forecast.shape[:1] + forecast.shape[2:]:
        raise StructuralError(f"forecast {forecast.shape} and truth {truth.shape} do not line up")
    n_ic, m, horizon, _ = forecast.shape
    rows = {"lead": np.arange(1, horizon + 1), "crps": [], "rmse": [], "spread": [], "ssr": []}
    for k in range(horizon):
        ens = np.moveaxis(forecast[:, :, k], 1, 0)  # (M, n_ic, D)
        obs = truth[:, k]
        rows["crps"].append(np.mean(crps_members(ens, obs)))
        mse = np.mean((ens.mean(axis=0) - obs) ** 2)
        var = np.mean(ens.var(axis=0, ddof=1))
        rows["rmse"].append(math.sqrt(mse))
        rows["spread"].append(math.sqrt(var))
        rows["ssr"].append(math.sqrt((m + 1) / m) * math.sqrt(var) / math.sqrt(mse) if mse > 0 else float("nan"))
    out = {k: np.asarray(v) for k, v in rows.items()}
    if baseline_crps is not None:
        out["crpss"] = crpss(out["crps"], baseline_crps)
    return out
