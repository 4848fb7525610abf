import math

import numpy as np
import pytest

from erdm.denoiser import GaussianOracle, ideal_raw_network, oracle_denoise
from erdm.errors import PreconditionError, StructuralError
from erdm.precondition import Preconditioner, apply_denoiser

P = Preconditioner(1.0)


def test_symmetric_point():
    p = Preconditioner(0.7)
    assert p.c_skip(0.7) == pytest.approx(0.5)
    assert p.c_out(0.7) == pytest.approx(0.7 / math.sqrt(2))


def test_c_noise_zero_at_one():
    assert P.c_noise(1.0) == 0.0


def test_values_at_sigma_two():
    assert P.c_in(2.0) == pytest.approx(1 / math.sqrt(5), rel=1e-15)
    assert P.c_skip(2.0) == pytest.approx(1 / 5, rel=1e-15)
    assert P.c_out(2.0) == pytest.approx(2 / math.sqrt(5), rel=1e-15)


@pytest.mark.parametrize("sigma", [0.0, -1.0, np.nan])
def test_nonpositive_sigma(sigma):
    with pytest.raises(PreconditionError):
        P.c_in(sigma)


def test_input_variance_normalization_exact():
    s = np.logspace(-3, 3, 50)
    np.testing.assert_allclose(P.c_in(s) ** 2 * (s**2 + 1.0), 1.0, rtol=1e-14)


def test_zero_network_keeps_skip_path():
    x = np.random.default_rng(0).standard_normal((2, 4, 3))
    sigma = np.array([0.1, 1.0, 3.0, 10.0])
    out = apply_denoiser(P, lambda a, c, cond=None: np.zeros_like(a), x, sigma)
    np.testing.assert_allclose(out, P.c_skip(sigma)[None, :, None] * x)


def test_small_sigma_passes_data_through():
    x = np.random.default_rng(1).standard_normal((1, 3, 2))
    out = apply_denoiser(P, lambda a, c, cond=None: np.ones_like(a), x, np.full(3, 1e-9))
    np.testing.assert_allclose(out, x, atol=1e-8)


def test_ideal_network_reproduces_posterior_mean():
    oracle = GaussianOracle(mean=np.array([0.3, -1.0]), variance=1.0)
    x = np.random.default_rng(2).standard_normal((5, 6, 2)) * 3
    sigma = np.array([0.01, 0.1, 1.0, 3.0, 30.0, 200.0])
    out = apply_denoiser(P, ideal_raw_network(oracle, P), x, sigma)
    np.testing.assert_allclose(out, oracle_denoise(oracle, x, sigma), rtol=1e-12, atol=1e-12)


def test_network_sees_all_slots_jointly():
    seen = {}

    def raw(a, c, cond=None):
        seen["shape"], seen["c"] = a.shape, c.copy()
        return np.zeros_like(a)

    apply_denoiser(P, raw, np.zeros((2, 6, 3)), np.linspace(0.1, 1, 6))
    assert seen["shape"] == (2, 6, 3)
    assert seen["c"].shape == (2, 6)


def test_shape_mismatch():
    with pytest.raises(StructuralError):
        apply_denoiser(P, lambda a, c, cond=None: a, np.zeros((2, 6, 3)), np.ones(5))
    with pytest.raises(StructuralError):
        apply_denoiser(P, lambda a, c, cond=None: a[:, :2], np.zeros((2, 6, 3)), np.ones(6))


def test_unit_variance_monte_carlo():
    rng = np.random.default_rng(3)
    n = 10**6
    for sigma in (0.1, 1.0, 10.0):
        y = rng.standard_normal(n)
        x = y + sigma * rng.standard_normal(n)
        scaled = P.c_in(sigma) * x
        target = (y - P.c_skip(sigma) * x) / P.c_out(sigma)
        se = math.sqrt(2.0 / n)  # standard error of a unit Gaussian sample variance
        assert abs(scaled.var() - 1.0) < 3 * se
        assert abs(target.var() - 1.0) < 3 * se
