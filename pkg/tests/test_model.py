import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sharpld.dist import GeneralizedNormal, PointMass
from sharpld.model import (BoundedGrid, DomainError, Exponential, PortfolioModel, Uniform01, default_prob,
                           model_from_dict, simulate_batch, validate)

mp.mp.dps = 40


def uniform_log_mgf_oracle(theta: float) -> float:
    t = mp.mpf(theta)
    if t == 0:
        return 0.0
    return float(mp.log(mp.expm1(t) / t))


@given(st.floats(-60.0, 60.0))
@settings(max_examples=150, deadline=None)
def test_uniform_log_mgf_matches_high_precision(theta):
    U = Uniform01()
    assert float(U.log_mgf(theta)) == pytest.approx(uniform_log_mgf_oracle(theta), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("theta", [-1e-9, 1e-7, 1e-3, 0.3, 0.99, 1.01, 5.0])
def test_uniform_derivatives_near_and_away_from_zero(theta):
    U = Uniform01()
    d1 = float(mp.diff(lambda t: mp.log(mp.expm1(t) / t), mp.mpf(theta)))
    d2 = float(mp.diff(lambda t: mp.log(mp.expm1(t) / t), mp.mpf(theta), 2))
    assert float(U.dlog_mgf(theta)) == pytest.approx(d1, rel=1e-12)
    assert float(U.d2log_mgf(theta)) == pytest.approx(d2, rel=1e-10)


def test_uniform_moments():
    U = Uniform01()
    assert U.mean == pytest.approx(0.5)
    assert U.var == pytest.approx(1.0 / 12.0)


@given(st.floats(-8.0, 8.0), st.floats(0.01, 0.99))
@settings(max_examples=80, deadline=None)
def test_uniform_tilted_quantile_inverts_cdf(theta, w):
    U = Uniform01()
    u = float(U.tilted_quantile(theta, w))
    assert float(U.tilted_cdf(theta, u)) == pytest.approx(w, abs=1e-10)


def test_tilted_samplers_have_tilted_mean():
    rng = np.random.default_rng(3)
    for U, theta in ((Uniform01(), 2.0), (Uniform01(), -1.5), (Exponential(2.0), 1.0),
                     (BoundedGrid((0.2, 0.5, 1.0), (0.3, 0.5, 0.2)), 1.2)):
        draws = U.tilted_sample(rng, theta, 200_000)
        target = float(U.dlog_mgf(theta))
        assert abs(draws.mean() - target) < 5 * draws.std() / math.sqrt(draws.size)
        arr = U.tilted_sample_array(rng, np.full(200_000, theta))
        assert abs(arr.mean() - target) < 5 * arr.std() / math.sqrt(arr.size)


def test_exponential_closed_forms():
    U = Exponential(2.0)
    assert float(U.log_mgf(1.0)) == pytest.approx(math.log(2.0))
    assert float(U.dlog_mgf(1.0)) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        U.log_mgf(2.5)


def test_bounded_grid_matches_direct_sum():
    U = BoundedGrid((0.2, 0.5, 1.0), (0.3, 0.5, 0.2))
    for theta in (-2.0, 0.0, 0.7, 4.0):
        direct = math.log(sum(p * math.exp(theta * v) for v, p in zip(U.values, U.probs)))
        assert float(U.log_mgf(theta)) == pytest.approx(direct, abs=1e-14)
    assert U.upper == 1.0


def test_model_document_roundtrip_and_rejections():
    m = PortfolioModel(Z=GeneralizedNormal(2, 0.5), eps=GeneralizedNormal(2, 0.5), U=Uniform01(), b=0.5)
    assert model_from_dict(m.to_dict()) == m
    doc = m.to_dict()
    with pytest.raises(ValueError, match="schema"):
        model_from_dict({**doc, "schema": "other/2"})
    with pytest.raises(ValueError, match="unknown"):
        model_from_dict({**doc, "rho": 0.3})
    with pytest.raises(ValueError, match="'U'"):
        model_from_dict({**doc, "U": {"kind": "uniform01", "low": 0}})
    with pytest.raises(ValueError, match="required"):
        model_from_dict({k: v for k, v in doc.items() if k != "eps"})


def test_validate_normalization():
    base = dict(Z=GeneralizedNormal(2, 0.5), eps=GeneralizedNormal(2, 0.5), U=Uniform01(), b=0.6)
    assert validate(PortfolioModel(weights=(0.8,), **base)).ok
    near = validate(PortfolioModel(weights=(0.8 + 1e-7,), **base))
    assert near.ok and near.notes
    assert not validate(PortfolioModel(weights=(0.5,), **base)).ok
    assert not validate(PortfolioModel(Z=GeneralizedNormal(2, 0.5), eps=GeneralizedNormal(2, 0.5),
                                       U=Uniform01(), b=1.2)).ok


def test_default_probability_is_noise_cdf():
    m = PortfolioModel(Z=GeneralizedNormal(2, 0.5), eps=GeneralizedNormal(2, 0.5), U=Uniform01(), b=0.5, v=0.3)
    z = np.array([-1.0, 0.0, 2.0])
    assert np.allclose(default_prob(m, z), stats.norm.cdf((0.3 - z) / 0.5))


def test_simulated_loss_mean():
    m = PortfolioModel(Z=GeneralizedNormal(2, 0.5), eps=GeneralizedNormal(2, 0.5), U=Uniform01(), b=0.5)
    losses, z, d = simulate_batch(m, np.random.default_rng(11), 100_000, 50)
    # E[L/n] = mu_U P(Y <= v) = 0.5 * 0.5
    assert abs(losses.mean() / 50 - 0.25) < 5 * losses.std() / 50 / math.sqrt(losses.size)
    assert np.all(d <= 50) and np.all(losses <= d + 1e-12)


def test_point_mass_factor_gives_binomial_counts():
    m = PortfolioModel(Z=PointMass(0.0), eps=GeneralizedNormal(2, 0.5), U=Uniform01(), b=0.5)
    _, _, d = simulate_batch(m, np.random.default_rng(5), 50_000, 20)
    assert abs(d.mean() - 10.0) < 0.1
    assert abs(d.var() - 5.0) < 0.2
