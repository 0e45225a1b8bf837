import math
import warnings

import pytest

from sharpld import risk, sharp
from sharpld.risk import NegativeDiscriminant

from conftest import load

ALPHAS = (0.95, 0.99, 0.999)
NS = (10, 50, 100, 500, 1000)


@pytest.fixture(scope="module")
def gauss_table():
    return {(c.alpha, c.n): c for c in risk.risk_table(load("table_e1"), ALPHAS, NS)}


@pytest.fixture(scope="module")
def pareto_table():
    return {(c.alpha, c.n): c for c in risk.risk_table(load("table_e2"), ALPHAS, NS)}


@pytest.mark.parametrize("alpha,n,var,es", [(0.99, 100, 0.534, 0.558), (0.95, 1000, 0.503, 0.528),
                                            (0.999, 10, 0.716, 0.750)])
def test_spot_cells_gaussian(gauss_table, alpha, n, var, es):
    c = gauss_table[(alpha, n)]
    assert c.var == pytest.approx(var, abs=0.01)
    assert c.es == pytest.approx(es, abs=0.01)


def test_spot_cell_heavy_tailed(pareto_table):
    c = pareto_table[(0.999, 500)]
    assert c.var == pytest.approx(0.535, abs=0.01)
    assert c.regime == "Mixed"


def test_cells_are_ordered(gauss_table, pareto_table):
    for table in (gauss_table, pareto_table):
        for (a, n), c in table.items():
            assert not c.fallback
            assert 0.5 < c.var < c.es < 1.0
            assert c.theta > 0
        for n in NS:
            assert table[(0.95, n)].var < table[(0.99, n)].var < table[(0.999, n)].var
        for a in ALPHAS:
            vs = [table[(a, n)].var for n in NS]
            assert all(b < v for v, b in zip(vs, vs[1:]))


def test_heavier_factor_tail_raises_var(gauss_table, pareto_table):
    for key in gauss_table:
        assert pareto_table[key].var > gauss_table[key].var


def test_var_solves_its_defining_equation(gauss_model):
    x = risk.var_approx(gauss_model, 0.99, 100)
    regime = sharp.classify_regime(gauss_model)
    B = risk.bracket_term(gauss_model, 0.99, 100, x, regime, "closed")
    assert x == pytest.approx(0.5 + math.sqrt(2 * gauss_model.U.var * B / 100), abs=1e-11)


@pytest.mark.parametrize("n", [100, 500, 1000])
@pytest.mark.parametrize("alpha", ALPHAS)
def test_direct_form_is_self_consistent(gauss_model, alpha, n):
    # the direct prefactor reuses the sharp tail, so the inverted level returns
    # approximately the target probability
    x = risk.var_approx(gauss_model, alpha, n, form="direct")
    assert abs(sharp.sharp_tail(gauss_model, x, n).log_prob - math.log1p(-alpha)) < 0.15


def test_es_formula(gauss_model):
    c = risk.risk_cell(gauss_model, 0.99, 100)
    assert risk.es_approx(gauss_model, 0.99, 100) == pytest.approx(c.es, rel=1e-12)
    assert c.es == pytest.approx(c.var + 1 / (100 * c.theta), rel=1e-12)


def test_alpha_validation(gauss_model):
    with pytest.raises(ValueError):
        risk.var_approx(gauss_model, 0.8, 100)
    with pytest.raises(ValueError):
        risk.var_approx(gauss_model, 1.0, 100)
    with pytest.warns(UserWarning):
        risk.var_approx(gauss_model, 0.92, 100)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        risk.var_approx(gauss_model, 0.95, 100)


def test_form_validation(gauss_model):
    with pytest.raises(ValueError):
        risk.log_prefactor(gauss_model, 0.6, 100, sharp.Regime.UNBOUNDED_GN, form="other")


def test_empty_table(gauss_model):
    assert risk.risk_table(gauss_model, [], NS) == []
    assert risk.table_rows([]) == []


def test_fallback_cells(boundary_model):
    with pytest.raises(NegativeDiscriminant):
        risk.var_approx(boundary_model, 0.95, 100)
    c = risk.risk_cell(boundary_model, 0.95, 100)
    assert c.fallback and math.isnan(c.var) and math.isnan(c.es)
    assert "CLT" in risk.format_table([c])


def test_degenerate_cell(degenerate_model):
    c = risk.risk_cell(degenerate_model, 0.99, 200)
    assert not c.fallback
    assert c.var > sharp.threshold_mean(degenerate_model)


def test_long_rows_and_text_layout(gauss_table):
    cells = list(gauss_table.values())
    rows = risk.table_rows(cells)
    assert len(rows) == 2 * len(cells)
    assert {r["measure"] for r in rows} == {"VaR", "ES"}
    text = risk.format_table(cells)
    lines = text.splitlines()
    assert len(lines) == 7 and lines[0].split() == [f"n={n}" for n in NS]
    assert lines[1].startswith("VaR  alpha=0.95")


def test_inputs_echo_is_stable(gauss_model):
    assert risk.model_digest(gauss_model) == risk.model_digest(gauss_model)
    assert len(risk.model_digest(gauss_model)) == 16


def test_monte_carlo_quantile_band(gauss_model):
    q = risk.mc_quantile(gauss_model, 0.99, 100, 200_000)
    assert q.var_low <= q.var <= q.var_high
    assert q.es >= q.var
    assert q.var_high - q.var_low < 0.01
    # the approximation lies near the simulated quantile
    assert abs(risk.var_approx(gauss_model, 0.99, 100) - q.var) < 0.02
