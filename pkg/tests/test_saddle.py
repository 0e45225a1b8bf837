import math

import pytest

from sharpld import saddle


def test_gn_first_order_scale(gauss_model):
    res = saddle.gn_saddle(gauss_model, 0.6, 1000)
    assert res.M_n == pytest.approx(0.5 * math.sqrt(2.0 * math.log(1000)), rel=1e-12)


def test_gn_closed_and_direct_exponent_converge(gauss_model):
    gaps = []
    for n in (100, 1000, 10_000, 100_000):
        res = saddle.gn_saddle(gauss_model, 0.6, n)
        gaps.append(abs(res.closed_exponent / res.exponent - 1.0))
    assert gaps[2] < 0.05
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_gn_refined_saddle_matches_fixed_point(gauss_model):
    for n in (1000, 100_000):
        res = saddle.gn_saddle(gauss_model, 0.6, n)
        t0 = saddle.gn_t0(gauss_model, 0.6, n)
        assert res.M_tilde / res.M_n == pytest.approx(t0, rel=2e-2)
        assert abs(res.stationarity) < 1e-6 * abs(res.curvature)


def test_gn_closed_constant_matches_semi_closed(gauss_model):
    closed = saddle.gn_closed(gauss_model, 0.6, 10_000)
    assert closed["log_prefactor"] == pytest.approx(closed["semi_closed_log_prefactor"], abs=1e-10)


def test_curvature_analytic_vs_stencil(gauss_model):
    # both are expressed in the regime's own variable (t with z = -t M_n)
    res = saddle.gn_saddle(gauss_model, 0.6, 10_000)
    assert res.curvature == pytest.approx(res.curvature_stencil, rel=1e-5)
    assert res.curvature == pytest.approx(res.curvature_z * res.M_n**2, rel=1e-12)


def test_rv_saddle_matches_closed_forms(rv_model):
    for n in (1000, 10_000):
        res = saddle.rv_saddle(rv_model, 0.6, n)
        assert res.M_n == pytest.approx(n ** (1.0 / 3.0))
        assert res.exponent == pytest.approx(res.closed_exponent, rel=5e-3)
        assert res.curvature == pytest.approx(res.closed_curvature, rel=2e-2)


def test_mixed_saddle_scale(pareto_model):
    res = saddle.mixed_saddle(pareto_model, 0.6, 10_000)
    assert res.M_n == pytest.approx(0.5 * math.sqrt(2.0 * math.log(10_000)), rel=1e-12)
    ratios = [saddle.mixed_saddle(pareto_model, 0.6, n).M_tilde / saddle.mixed_saddle(pareto_model, 0.6, n).M_n
              for n in (10_000, 1_000_000, 100_000_000)]
    assert all(abs(b - 1) < abs(a - 1) for a, b in zip(ratios, ratios[1:]))


def test_mixed_constant_value():
    assert saddle.mixed_constant(2.0, 0.5, 1.0) == pytest.approx(
        2.0 * (2 * 0.25) ** (-1.5) * 0.5 / math.sqrt(3.0), rel=1e-12)


def test_logsmooth_agrees_with_gn(gauss_model):
    eps_tail, z_tail = saddle.gn_as_logsmooth(gauss_model)
    for n in (10_000, 100_000):
        ls = saddle.logsmooth_saddle(gauss_model, 0.6, n, eps_tail, z_tail)
        gn = saddle.gn_saddle(gauss_model, 0.6, n)
        assert ls.M_n == pytest.approx(gn.M_tilde, rel=0.01)
        assert ls.M_tilde == pytest.approx(gn.M_tilde, rel=1e-8)
        assert ls.exponent == pytest.approx(gn.exponent, rel=1e-8)


def test_logsmooth_refinement_gap_shrinks(gauss_model):
    eps_tail, z_tail = saddle.gn_as_logsmooth(gauss_model)
    prods = []
    for n in (1000, 100_000, 10_000_000):
        ls = saddle.logsmooth_saddle(gauss_model, 0.6, n, eps_tail, z_tail)
        prods.append(abs(ls.extra["hazard_at_M"] * (ls.M_tilde - ls.M_n)))
    assert prods[-1] < prods[0]


def test_flank_integrals_small(gauss_model):
    n = 100_000
    res = saddle.gn_saddle(gauss_model, 0.6, n)
    fl = saddle.flank_integrals(gauss_model, 0.6, n, res)
    assert (fl["J1"] + fl["J3"]) / fl["J2"] < 0.01


def test_family_mismatch(pareto_model, gauss_model):
    with pytest.raises(saddle.FamilyMismatch):
        saddle.gn_saddle(pareto_model, 0.6, 100)
    with pytest.raises(saddle.FamilyMismatch):
        saddle.rv_saddle(gauss_model, 0.6, 100)
