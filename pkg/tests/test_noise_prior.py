import math

import numpy as np
import pytest

from erdm.errors import PreconditionError, StructuralError
from erdm.noise_prior import NoisePriorConfig, sample_appended_noise, sample_window_noise
from erdm.rng import MemberRNG, member_generator


def _lag_corr(a, b):
    # cross moment of unit-variance series; its standard error is sqrt(1 + rho^2) / sqrt(n)
    return float(np.mean(a * b))


def test_alpha_zero_is_iid_draw():
    cfg = NoisePriorConfig(alpha=0.0)
    a = sample_window_noise(cfg, 4, 3, np.random.default_rng(5), batch=(2,))
    b = np.random.default_rng(5).standard_normal((2, 4, 3))
    np.testing.assert_array_equal(a, b)


def test_coefficients_preserve_variance():
    for alpha in (0.0, 0.5, 1.0, 2.0, 10.0):
        cfg = NoisePriorConfig(alpha=alpha)
        assert cfg.carry**2 + cfg.fresh**2 == pytest.approx(1.0, rel=1e-15)


def test_large_alpha_copies_previous():
    cfg = NoisePriorConfig(alpha=1e8)
    prev = np.array([[0.3, -1.2]])
    out = sample_appended_noise(cfg, prev, np.random.default_rng(0))
    np.testing.assert_allclose(out[:, 0], prev, atol=1e-7)


def test_lag_one_correlation_alpha_one():
    n = 10**6
    eps = sample_window_noise(NoisePriorConfig(1.0), 2, 1, np.random.default_rng(1), batch=(n,))
    r = _lag_corr(eps[:, 0, 0], eps[:, 1, 0])
    assert abs(r - 0.7071067811865475244) < 3 * math.sqrt(1.5) / math.sqrt(n)


def test_chain_across_appends_lag_k():
    cfg = NoisePriorConfig(1.0)
    rng = np.random.default_rng(2)
    n = 200000
    first = sample_window_noise(cfg, 1, 1, rng, batch=(n,))[:, 0]
    chain = [first]
    for _ in range(4):
        chain.append(sample_appended_noise(cfg, chain[-1], rng)[:, 0])
    for k in range(1, 5):
        r = _lag_corr(chain[0][:, 0], chain[k][:, 0])
        target = (1 / math.sqrt(2)) ** k
        assert abs(r - target) < 3 * math.sqrt(1 + target**2) / math.sqrt(n)


def test_invalid_alpha():
    with pytest.raises(PreconditionError):
        NoisePriorConfig(alpha=-0.1)


def test_member_streams_independent_of_ensemble_size():
    small = MemberRNG(7, 3).standard_normal((3, 5))
    large = MemberRNG(7, 10).standard_normal((10, 5))
    np.testing.assert_array_equal(small, large[:3])
    np.testing.assert_array_equal(small[1], member_generator(7, 1).standard_normal(5))


def test_member_rng_shape_check():
    with pytest.raises(StructuralError):
        MemberRNG(0, 3).standard_normal((4, 2))


def test_alpha_zero_matches_iid_moments():
    n = 50000
    a = sample_window_noise(NoisePriorConfig(0.0), 3, 1, np.random.default_rng(3), batch=(n,))
    b = np.random.default_rng(4).standard_normal((n, 3, 1))
    for arr in (a, b):
        assert abs(arr.mean()) < 4 / math.sqrt(3 * n)
        assert abs(arr.var() - 1) < 4 * math.sqrt(2 / (3 * n))
    assert abs(_lag_corr(a[:, 0, 0], a[:, 1, 0])) < 4 / math.sqrt(n)
