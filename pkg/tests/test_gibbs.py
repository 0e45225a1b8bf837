import math

import numpy as np
import pytest

from sharpld import gibbs
from sharpld.gibbs import LimitCase, TooRare
from sharpld.model import Exponential, PortfolioModel
from sharpld.sharp import OutsideLargeDeviations

from conftest import load


def test_limit_law_cases(gauss_model, degenerate_model):
    un = gibbs.limit_law(gauss_model, 0.6)
    assert un.case is LimitCase.UNBOUNDED_TILT and un.p_default == 1.0
    bd = gibbs.limit_law(degenerate_model, 0.35)
    assert bd.case is LimitCase.BOUNDARY_ONE_STEP
    assert bd.p_kappa == pytest.approx(0.5)
    # the tilted default probability exceeds the untilted one
    assert bd.p_default > bd.p_kappa
    with pytest.raises(OutsideLargeDeviations):
        gibbs.limit_law(degenerate_model, 0.2)


@pytest.mark.parametrize("x", [0.3, 0.35, 0.45])
def test_limit_law_mean_loss_is_level(degenerate_model, x):
    assert gibbs.limit_law(degenerate_model, x).mean_loss == pytest.approx(x, rel=1e-10)


def test_bin_masses_sum_to_one(gauss_model, degenerate_model):
    for m, x in ((gauss_model, 0.6), (degenerate_model, 0.35)):
        law = gibbs.limit_law(m, x)
        for bins in (1, 7, 64):
            assert law.bin_masses(np.linspace(0, 1, bins + 1)).sum() == pytest.approx(1.0)
        assert law.bin_masses(np.linspace(0, 1, 5)).shape == (2, 4)


def test_unbounded_loss_bins_have_equal_tilted_mass():
    base = load("degenerate")
    m = PortfolioModel(Z=base.Z, eps=base.eps, U=Exponential(2.0), b=base.b)
    law = gibbs.limit_law(m, 0.4)
    edges = gibbs._edges(law, 8)
    assert np.isinf(edges[-1])
    assert np.allclose(law.bin_masses(edges)[1] / law.p_default, 1 / 8, atol=1e-9)


def test_single_bin_distance_is_default_frequency_gap(degenerate_model):
    x, n = 0.35, 200
    s = gibbs.conditional_sample(degenerate_model, x, n, 1, 50_000, method="tilted")
    law = gibbs.limit_law(degenerate_model, x)
    p_hat = float(np.sum(s.weights * s.xdef[:, 0]))
    assert gibbs.tv_distance(s, law, bins=1) == pytest.approx(abs(p_hat - law.p_default), abs=1e-12)


def test_tv_shrinks_with_n(degenerate_model):
    x = 0.35
    law = gibbs.limit_law(degenerate_model, x)
    tvs = [gibbs.tv_distance(gibbs.conditional_sample(degenerate_model, x, n, 1, 100_000), law, bins=16)
           for n in (25, 400)]
    assert tvs[1] < tvs[0]


def test_rejection_and_tilted_agree(degenerate_model):
    x, n = 0.3, 100
    a = gibbs.conditional_sample(degenerate_model, x, n, 1, 100_000, method="rejection")
    b = gibbs.conditional_sample(degenerate_model, x, n, 1, 100_000, method="tilted")
    assert a.method == "rejection" and b.method == "tilted"
    assert np.allclose(a.weights, 1.0 / a.accepted)
    pa = a.xdef[:, 0].mean()
    pb = float(np.sum(b.weights * b.xdef[:, 0]))
    se = math.sqrt(pa * (1 - pa) / a.accepted + pb * (1 - pb) / b.ess)
    assert abs(pa - pb) < 4 * se


def test_auto_method_switches_to_tilting_for_rare_events(degenerate_model):
    s = gibbs.conditional_sample(degenerate_model, 0.45, 200, 1, 20_000)
    assert s.method == "tilted"
    assert s.ess <= s.accepted


def test_pair_correlation_vanishes(degenerate_model):
    s = gibbs.conditional_sample(degenerate_model, 0.35, 400, 2, 100_000, method="tilted")
    assert abs(gibbs.pair_correlation(s)) < 0.05
    with pytest.raises(ValueError):
        gibbs.pair_correlation(gibbs.conditional_sample(degenerate_model, 0.35, 400, 1, 20_000))


def test_argument_validation(degenerate_model):
    with pytest.raises(ValueError):
        gibbs.conditional_sample(degenerate_model, 0.35, 10, 11, 1000)
    with pytest.raises(ValueError):
        gibbs.conditional_sample(degenerate_model, 0.35, 10, 1, 0)
    s = gibbs.conditional_sample(degenerate_model, 0.35, 50, 1, 20_000)
    with pytest.raises(ValueError):
        gibbs.tv_distance(s, gibbs.limit_law(degenerate_model, 0.35), bins=0)


def test_too_rare(degenerate_model):
    with pytest.raises(TooRare):
        gibbs.conditional_sample(degenerate_model, 0.95, 200, 1, 2000, method="rejection")


def test_reproducible(degenerate_model):
    a = gibbs.conditional_sample(degenerate_model, 0.35, 100, 1, 30_000, seed=4)
    b = gibbs.conditional_sample(degenerate_model, 0.35, 100, 1, 30_000, seed=4)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.weights, b.weights)
