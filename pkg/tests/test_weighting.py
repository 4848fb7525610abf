import math

import numpy as np
import pytest
from scipy.integrate import quad

from erdm.denoiser import GaussianOracle, oracle_denoise
from erdm.errors import PreconditionError
from erdm.weighting import LossWeighting

INV_SQRT_2PI = 0.39894228040143267794


def test_lambda_values():
    lw = LossWeighting()
    assert lw.lambda_weight(1.0) == pytest.approx(2.0)
    assert lw.lambda_weight(2.0) == pytest.approx(1.25)
    assert lw.lambda_weight(1e8) == pytest.approx(1.0)


def test_pdf_values():
    assert LossWeighting(0.0, 1.0).lognormal_pdf(1.0) == pytest.approx(INV_SQRT_2PI, rel=1e-14)
    lw = LossWeighting(0.5, 1.2)
    expect = 1.0 / (math.exp(0.5) * 1.2 * math.sqrt(2 * math.pi))
    assert lw.lognormal_pdf(math.exp(0.5)) == pytest.approx(expect, rel=1e-14)


def test_pdf_integrates_to_one():
    lw = LossWeighting(0.5, 1.2)
    total = sum(quad(lw.lognormal_pdf, a, b, epsabs=1e-13)[0]
                for a, b in [(1e-300, 1.0), (1.0, math.exp(0.5)), (math.exp(0.5), 50.0), (50.0, np.inf)])
    assert total == pytest.approx(1.0, abs=1e-6)


def test_snapshot_weight_product():
    lw = LossWeighting(0.0, 1.0)
    assert lw.snapshot_weight(1.0) == pytest.approx(2 * INV_SQRT_2PI, rel=1e-14)
    no_f = LossWeighting(0.0, 1.0, use_pdf=False)
    assert no_f.snapshot_weight(1.0) == pytest.approx(2.0)


def test_reference_defaults():
    lw = LossWeighting()
    assert (lw.p_mean, lw.p_std) == (0.5, 1.2)


def test_weight_positive_and_continuous():
    s = np.logspace(-4, 4, 2001)
    w = LossWeighting().snapshot_weight(s)
    assert np.all(w > 0)
    assert np.all(np.abs(np.diff(np.log(w))) < 0.1)


@pytest.mark.parametrize("bad", [0.0, -2.0])
def test_invalid_sigma(bad):
    with pytest.raises(PreconditionError):
        LossWeighting().lambda_weight(bad)
    with pytest.raises(PreconditionError):
        LossWeighting().lognormal_pdf(bad)


def test_invalid_p_std():
    with pytest.raises(PreconditionError):
        LossWeighting(p_std=0.0)


def test_posterior_variance_identity_exact():
    s = np.logspace(-3, 3, 40)
    np.testing.assert_allclose(LossWeighting().lambda_weight(s) * s**2 / (s**2 + 1.0), 1.0, rtol=1e-13)


def test_optimal_denoiser_loss_monte_carlo():
    rng = np.random.default_rng(0)
    o = GaussianOracle(mean=np.zeros(1))
    n = 10**5
    lw = LossWeighting()
    for sigma in (0.05, 1.0, 20.0):
        y = rng.standard_normal((n, 1, 1))
        x = y + sigma * rng.standard_normal((n, 1, 1))
        loss = lw.lambda_weight(sigma) * (oracle_denoise(o, x, [sigma]) - y) ** 2
        assert abs(loss.mean() - 1.0) < 3 * loss.std() / math.sqrt(n)


def test_sample_sigma_lognormal_moments():
    lw = LossWeighting(-1.2, 1.2)
    ln = np.log(lw.sample_sigma(np.random.default_rng(1), 10**5))
    se = 1.2 / math.sqrt(10**5)
    assert abs(ln.mean() + 1.2) < 3 * se
    assert abs(ln.std() - 1.2) < 3 * 1.2 / math.sqrt(2 * 10**5)
