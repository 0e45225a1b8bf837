import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sharpld import cgfcore
from sharpld.cgfcore import NoRoot
from sharpld.dist import GeneralizedNormal
from sharpld.model import PortfolioModel, Uniform01

mp.mp.dps = 40
MODEL = PortfolioModel(Z=GeneralizedNormal(2, 0.5), eps=GeneralizedNormal(2, 0.5), U=Uniform01(), b=0.5, v=0.1)


def cgf_oracle(theta, z):
    """log(p lambda_U + 1 - p) in 40-digit arithmetic."""
    p = mp.ncdf((mp.mpf(MODEL.v) - z) / MODEL.b)
    lam = mp.expm1(theta) / theta if theta != 0 else mp.mpf(1)
    return mp.log(p * lam + 1 - p)


@pytest.mark.parametrize("theta", [-2.0, -0.4, 0.6, 2.5])
@pytest.mark.parametrize("z", [-1.2, 0.0, 0.9])
def test_partials_match_high_precision_oracle(theta, z):
    P = cgfcore.cond_cgf_partials(MODEL, theta, z)
    th, zz = mp.mpf(theta), mp.mpf(z)
    assert cgfcore.cond_cgf(MODEL, theta, z) == pytest.approx(float(cgf_oracle(th, zz)), rel=1e-12)
    assert P.d_theta == pytest.approx(float(mp.diff(lambda t: cgf_oracle(t, zz), th)), rel=1e-10)
    assert P.d_z == pytest.approx(float(mp.diff(lambda s: cgf_oracle(th, s), zz)), rel=1e-10)
    assert P.d_thetatheta == pytest.approx(float(mp.diff(lambda t: cgf_oracle(t, zz), th, 2)), rel=1e-9)
    assert P.d_ztheta == pytest.approx(float(mp.diff(lambda t, s: cgf_oracle(t, s), (th, zz), (1, 1))), rel=1e-9)
    assert cgfcore.cond_cgf_dzz(MODEL, theta, z) == pytest.approx(
        float(mp.diff(lambda s: cgf_oracle(th, s), zz, 2)), rel=1e-9)


@given(st.floats(0.51, 0.98), st.floats(-3.0, 3.0))
@settings(max_examples=60, deadline=None)
def test_rate_is_supremum_of_affine_minorants(x, theta):
    U = Uniform01()
    rate = cgfcore.rate_fn(MODEL, x)
    assert rate >= theta * x - float(U.log_mgf(theta)) - 1e-12


@given(st.floats(0.52, 0.97))
@settings(max_examples=40, deadline=None)
def test_unconditional_tilt_solves_saddle_equation(x):
    sol = cgfcore.tilt_unconditional(Uniform01(), x)
    assert abs(sol.deriv1 - x) < 1e-12
    assert sol.residual < 1e-12
    assert sol.sigma == pytest.approx(math.sqrt(sol.deriv2))


@pytest.mark.parametrize("z", [-1.0, 0.0, 0.8])
def test_envelope_derivatives_of_rate(z):
    x = 0.62
    h = 1e-4
    fd1 = (cgfcore.rate_fn(MODEL, x, z + h) - cgfcore.rate_fn(MODEL, x, z - h)) / (2 * h)
    fd2 = (cgfcore.rate_fn(MODEL, x, z + h) - 2 * cgfcore.rate_fn(MODEL, x, z)
           + cgfcore.rate_fn(MODEL, x, z - h)) / h**2
    assert cgfcore.rate_dz(MODEL, x, z) == pytest.approx(fd1, rel=1e-7)
    assert cgfcore.rate_dzz(MODEL, x, z) == pytest.approx(fd2, rel=1e-4)


def test_conditional_rate_exceeds_unconditional():
    x = 0.6
    base = cgfcore.rate_fn(MODEL, x)
    for z in (-3.0, -1.0, 0.5):
        assert cgfcore.rate_fn(MODEL, x, z) > base


def test_no_root_above_supremum():
    with pytest.raises(NoRoot):
        cgfcore.tilt_unconditional(Uniform01(), 1.0)
    with pytest.raises(NoRoot):
        cgfcore.tilt_unconditional(Uniform01(), 0.3)


def test_phi_series_branch_is_continuous():
    # the small-mass series and the direct difference agree across the switch
    x = 0.6
    zs = np.linspace(-2.3, -1.7, 13)
    vals = []
    for z in zs:
        lq, rel = cgfcore._phi_relative(MODEL, x, z)
        direct = cgfcore.tilt_conditional(MODEL, x, z).rate - cgfcore.tilt_unconditional(MODEL.U, x).rate
        if direct > 1e-9:
            assert math.exp(lq + rel) == pytest.approx(direct, rel=1e-5)
        vals.append(lq + rel)
    assert np.all(np.diff(vals) > 0)


def test_phi_expansion_ratio_tends_to_one():
    gaps = [abs(cgfcore.phi_expansion_ratio(MODEL, 0.6, M) - 1.0) for M in (0.0, 0.5, 1.0, 2.0, 3.0)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-6


def test_psi_and_c_x():
    U = Uniform01()
    x = 0.7
    sol = cgfcore.tilt_unconditional(U, x)
    assert cgfcore.psi_infty(MODEL, x) == pytest.approx(1.0 / (sol.theta * sol.sigma))
    lam = math.expm1(sol.theta) / sol.theta
    assert cgfcore.c_x(U, x) == pytest.approx((lam - 1.0) / lam)
