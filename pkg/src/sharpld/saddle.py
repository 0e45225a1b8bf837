"""Saddle point of the factor integral and closed-form prefactor constants.

Conditionally on the factor value z the tail probability behaves like
exp(-n Lambda*(x; z)); integrating against the factor density gives a
Laplace integral whose exponent is

    n h(z) = -n phi_n(z) + log f_Z(z),    phi_n(z) = Lambda*(x; z) - Lambda*_U(x).

For factors unbounded to the left the maximizer sits at z = -M_tilde with
M_tilde -> infinity. This module locates it directly and through the
closed-form expansions for generalized-normal (GN), regularly varying (RV),
mixed (Gaussian noise, RV factor) and general log-smooth tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from . import cgfcore
from .dist import GeneralizedNormal, LogSmooth, SymmetricRV, TailFamily, gn_log_smooth
from .model import PortfolioModel

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
WINDOW = 0.5


class FamilyMismatch(ValueError):
    """The tails of the model do not belong to the requested regime."""


class BalanceUnsolvable(ValueError):
    """The balance equation has no sign change on the search interval."""


@dataclass
class SaddleResult:
    """Saddle quantities.

    ``exponent``, ``curvature`` and ``stationarity`` refer to the regime's own
    variable: t with z = -t M_n for GN, t with z = -M_n^t for RV, and z itself
    for the mixed and log-smooth regimes. ``log_jacobian`` is log |dz/dt| up to
    the factor e^{nh} already inside ``exponent``, so the Laplace prefactor
    e^{-n phi}/H reads exponent + log_jacobian - 1/2 log|curvature|.
    ``H_inv`` is always the factor-variable form f_Z(-M) (n |h''(-M)|)^{-1/2}.
    ``closed_*`` hold the closed-form expansions where the regime has them.
    """

    regime: str
    M_n: float
    t0: float
    M_tilde: float
    exponent: float
    curvature: float
    H_inv: float
    phi_at_saddle: float
    log_H_inv: float
    stationarity: float
    curvature_z: float
    curvature_stencil: float
    log_jacobian: float = 0.0
    closed_exponent: Optional[float] = None
    closed_curvature: Optional[float] = None
    closed_log_prefactor: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def direct_log_prefactor(self) -> float:
        """log of e^{-n phi(-M_tilde)} / H(-M_tilde) from the direct quantities."""
        return self.exponent + self.log_jacobian - 0.5 * math.log(abs(self.curvature))


# ---------------------------------------------------------------------------
# the Laplace exponent
# ---------------------------------------------------------------------------


def _dlogf(fam: TailFamily, z: float) -> float:
    if hasattr(fam, "dlogpdf"):
        return float(fam.dlogpdf(z))
    h = 1e-6 * max(abs(z), 1.0)
    return (float(fam.logpdf(z + h)) - float(fam.logpdf(z - h))) / (2 * h)


def _d2logf(fam: TailFamily, z: float) -> float:
    if isinstance(fam, GeneralizedNormal):
        g = fam.gamma
        return -g * (g - 1.0) * fam.xi * abs(z) ** (g - 2.0)
    if isinstance(fam, SymmetricRV) and abs(z) >= fam.x_m and fam.slow_vary.to_dict()["form"] == "constant":
        return (fam.alpha + 1.0) / z**2
    h = 1e-5 * max(abs(z), 1.0)
    return (_dlogf(fam, z + h) - _dlogf(fam, z - h)) / (2 * h)


def n_h(model: PortfolioModel, x: float, n: int, z: float) -> float:
    """n h(z) = -n phi_n(z) + log f_Z(z)."""
    lf = float(model.Z.logpdf(z))
    if lf == -math.inf:
        return -math.inf
    return -n * cgfcore.phi_n(model, x, z) + lf


def n_h_d1(model: PortfolioModel, x: float, n: int, z: float) -> float:
    return -n * cgfcore.dphi_n(model, x, z) + _dlogf(model.Z, z)


def n_h_d2(model: PortfolioModel, x: float, n: int, z: float) -> float:
    return -n * cgfcore.d2phi_n(model, x, z) + _d2logf(model.Z, z)


def stencil_d2(model: PortfolioModel, x: float, n: int, z: float, step: float) -> float:
    """Five-point central second difference of n h."""
    f = [n_h(model, x, n, z + k * step) for k in (-2, -1, 0, 1, 2)]
    return (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * step**2)


def _golden_max(f, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _finite_window(model: PortfolioModel, lo: float, hi: float) -> tuple[float, float]:
    """Shrink [lo, hi] so the factor density is positive at both ends."""
    if np.isfinite(float(model.Z.logpdf(hi))):
        return lo, hi
    a, b = lo, hi
    if not np.isfinite(float(model.Z.logpdf(a))):
        raise FamilyMismatch("factor density vanishes on the whole search window")
    for _ in range(200):
        m = 0.5 * (a + b)
        if np.isfinite(float(model.Z.logpdf(m))):
            a = m
        else:
            b = m
    return lo, a


def maximize_direct(model: PortfolioModel, x: float, n: int, M_seed: float, beta: float = WINDOW,
                    z_start: Optional[float] = None) -> float:
    """Maximizer z* of n h over [-(1+beta)M, -(1-beta)M]: golden section then Newton polish."""
    lo, hi = _finite_window(model, -(1.0 + beta) * M_seed, -(1.0 - beta) * M_seed)
    f = lambda z: n_h(model, x, n, z)
    z = z_start if z_start is not None and lo < z_start < hi else _golden_max(f, lo, hi, tol=1e-6)
    a, b = lo, hi
    for _ in range(60):
        g = n_h_d1(model, x, n, z)
        h2 = n_h_d2(model, x, n, z)
        if g > 0:
            a = z
        else:
            b = z
        if abs(g) <= 1e-12 * max(abs(h2), 1.0):
            break
        step = z - g / h2 if h2 < 0 else math.nan
        if not (a < step < b):
            step = 0.5 * (a + b)
        if step == z:
            break
        z = step
    return z


def _assemble(regime: str, model: PortfolioModel, x: float, n: int, M_n: float, z_star: float,
              variable: str = "z") -> SaddleResult:
    """Collect the saddle quantities; ``variable`` is 'z', 'linear' (z = -t M_n) or 'log' (z = -M_n^t)."""
    M_tilde = -z_star
    lf = float(model.Z.logpdf(z_star))
    phi = cgfcore.phi_n(model, x, z_star)
    exponent = -n * phi + lf
    grad = n_h_d1(model, x, n, z_star)
    curv_z = n_h_d2(model, x, n, z_star)
    stencil = stencil_d2(model, x, n, z_star, 1e-4 * M_n)
    log_H_inv = lf - 0.5 * math.log(abs(curv_z))
    if variable == "linear":
        t0, curv, stat, jac = M_tilde / M_n, curv_z * M_n**2, abs(grad) * M_n, math.log(M_n)
        stencil *= M_n**2
    elif variable == "log":
        L = math.log(M_n)
        w = M_tilde
        t0 = math.log(w) / L
        exponent += math.log(w)
        curv = L**2 * (w**2 * curv_z - w * grad)
        stat = L * abs(1.0 - w * grad)
        jac = math.log(L)
        stencil = L**2 * (w**2 * stencil - w * grad)
    else:
        t0, curv, stat, jac = M_tilde / M_n, curv_z, abs(grad), 0.0
    return SaddleResult(
        regime=regime,
        M_n=M_n,
        t0=t0,
        M_tilde=M_tilde,
        exponent=exponent,
        curvature=curv,
        H_inv=math.exp(log_H_inv),
        phi_at_saddle=phi,
        log_H_inv=log_H_inv,
        stationarity=stat,
        curvature_z=curv_z,
        curvature_stencil=stencil,
        log_jacobian=jac,
    )


# ---------------------------------------------------------------------------
# generalized-normal noise and factor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GNConstants:
    """Closed-form constants for GN noise and factor with a common exponent gamma."""

    gamma: float
    c_gamma: float
    Delta: float
    log_eta: float
    log_K: float


def gn_constants(model: PortfolioModel, x: float) -> GNConstants:
    eps, Z = model.eps, model.Z
    g, b = eps.gamma, model.b
    xe, xz, be, bz = eps.xi, Z.xi, eps.beta, Z.beta
    C = cgfcore.c_x(model.U, x)
    c = b**g * xz / xe
    Delta = c * math.log(C * be / (xz * g * b)) + c - math.log(bz)
    log_eta = -model.v**2 * xz if g == 2.0 else 0.0
    log_K = (
        (1.0 - g) * (1.0 - c) * (math.log(b) - math.log(xe) / g)
        - 0.5 * math.log(xe * xz)
        - math.log(g)
        + 0.5 * g * math.log(b)
    )
    return GNConstants(g, c, Delta, log_eta, log_K)


def _require_gn(model: PortfolioModel):
    if not (isinstance(model.eps, GeneralizedNormal) and isinstance(model.Z, GeneralizedNormal)):
        raise FamilyMismatch("noise and factor must both be generalized normal")
    if model.eps.gamma != model.Z.gamma:
        raise FamilyMismatch("generalized-normal exponents of noise and factor differ")


def gn_scale(model: PortfolioModel, n: int) -> float:
    return model.b * (math.log(n) / model.eps.xi) ** (1.0 / model.eps.gamma)


def gn_t0(model: PortfolioModel, x: float, n: int, tol: float = 1e-12, max_iter: int = 200) -> Optional[float]:
    """Fixed point of the t0 expansion; None when the iteration fails."""
    g, b, v = model.eps.gamma, model.b, model.v
    xe, xz, be = model.eps.xi, model.Z.xi, model.eps.beta
    M = gn_scale(model, n)
    C = cgfcore.c_x(model.U, x)
    A = (1.0 - g) * b**g / xe
    B = b**g / xe * math.log(C * be / (xz * g * b))
    t = 1.0
    for _ in range(max_iter):
        rhs = 1.0 + A * math.log(M) / M**g - v * g * t ** (g - 1.0) / M + (B + A * math.log(t)) / M**g
        if g == 2.0:
            rhs -= v**2 / M**2
        if not rhs > 0:
            return None
        t_new = rhs ** (1.0 / g)
        if abs(t_new - t) < tol:
            return t_new
        t = t_new
    return None


def gn_closed(model: PortfolioModel, x: float, n: int, t0: Optional[float] = None) -> dict:
    """Closed-form exponent, curvature (t variable) and log prefactor for GN/GN."""
    k = gn_constants(model, x)
    g, b, v = k.gamma, model.b, model.v
    xe, xz = model.eps.xi, model.Z.xi
    M = gn_scale(model, n)
    c = k.c_gamma
    exponent = -xz * M**g - (1.0 - g) * c * math.log(M) + v * g * xz * M ** (g - 1.0) - (k.Delta - k.log_eta)
    curvature = -xe * xz * (g * M) ** 2 * M ** (2.0 * (g - 1.0)) / b**g
    ln = math.log(n)
    log_prefactor = (
        k.log_K - k.Delta + k.log_eta
        - c * ln
        - (g - 1.0) / g * (1.0 - c) * math.log(ln)
        + v * g * c / b * xe ** (1.0 / g) * ln ** ((g - 1.0) / g)
    )
    # the same quantity assembled as M e^{n h(t0)} / sqrt(n |h''(t0)|)
    semi = math.log(M) + exponent - 0.5 * math.log(abs(curvature))
    return {"exponent": exponent, "curvature": curvature, "log_prefactor": log_prefactor,
            "semi_closed_log_prefactor": semi, "constants": k}


def gn_saddle(model: PortfolioModel, x: float, n: int) -> SaddleResult:
    _require_gn(model)
    if math.log(n) <= 1.0:
        raise ValueError("n must satisfy log n > 1")
    M = gn_scale(model, n)
    t0 = gn_t0(model, x, n)
    seed = M * t0 if t0 is not None else None
    z_star = maximize_direct(model, x, n, M, z_start=-seed if seed else None)
    res = _assemble("gn", model, x, n, M, z_star, "linear")
    closed = gn_closed(model, x, n)
    res.closed_exponent = closed["exponent"]
    res.closed_curvature = closed["curvature"]
    res.closed_log_prefactor = closed["log_prefactor"]
    res.extra = {"t0_closed": t0, "c_gamma": closed["constants"].c_gamma,
                 "Delta": closed["constants"].Delta, "log_K": closed["constants"].log_K,
                 "semi_closed_log_prefactor": closed["semi_closed_log_prefactor"]}
    return res


# ---------------------------------------------------------------------------
# regularly varying noise and factor
# ---------------------------------------------------------------------------


def _require_rv(model: PortfolioModel):
    if not (isinstance(model.eps, SymmetricRV) and isinstance(model.Z, SymmetricRV)):
        raise FamilyMismatch("noise and factor must both be symmetric regularly varying")


def rv_closed(model: PortfolioModel, x: float, n: int) -> dict:
    """Closed forms for RV noise and factor.

    Tails are written P(eps > t) = L_eps(t) t^{-a_eps} and
    P(Z <= -w) = L_Z(w) w^{-a_Z}. With k = C_x a_eps b^{a_eps} / a_Z the
    stationarity condition reads M_tilde^{a_eps} = n k L_eps, so

        n h(t0) = -(a_Z/a_eps)(log n + log k + log L_eps(M)) + log L_Z(M) + log a_Z - a_Z/a_eps,

    and the constant is Delta = -(a_Z/a_eps) log k + log a_Z - a_Z/a_eps.
    """
    ae, az, b = model.eps.alpha, model.Z.alpha, model.b
    Le = model.eps.left_tail_constant()  # symmetric: right tail equals left tail
    Lz = model.Z.left_tail_constant()
    M = n ** (1.0 / ae)
    logM = math.log(M)
    C = cgfcore.c_x(model.U, x)
    log_k = math.log(C * ae * b**ae / az)
    t = 1.0
    for _ in range(200):
        t_new = (math.log(n) + float(Le.log_value(M**t)) + log_k) / (ae * logM)
        if abs(t_new - t) < 1e-12:
            t = t_new
            break
        t = t_new
    Delta = -(az / ae) * log_k + math.log(az) - az / ae
    lLe = float(Le.log_value(M))
    lLz = float(Lz.log_value(M))
    exponent = -(az / ae) * math.log(n) + lLz - (az / ae) * lLe + Delta
    curvature = -(logM**2) * ae * az
    log_prefactor = exponent - 0.5 * math.log(ae * az)
    return {"M": M, "t0": t, "Delta": Delta, "exponent": exponent, "curvature": curvature,
            "log_prefactor": log_prefactor, "log_K": Delta - 0.5 * math.log(ae * az)}


def maximize_log_scale(model: PortfolioModel, x: float, n: int, w_seed: float, span: float = 3.0) -> float:
    """Maximizer z* = -e^u of n h(-e^u) + u, the exponent in the log-scale variable."""
    g = lambda u: n_h(model, x, n, -math.exp(u)) + u
    lo, hi = math.log(w_seed) - span, math.log(w_seed) + span
    u = _golden_max(g, lo, hi, tol=1e-8)
    a, b = lo, hi
    for _ in range(60):
        w = math.exp(u)
        d1 = n_h_d1(model, x, n, -w)
        g1 = 1.0 - w * d1
        g2 = w**2 * n_h_d2(model, x, n, -w) - w * d1
        if g1 > 0:
            a = u
        else:
            b = u
        if abs(g1) <= 1e-12 * max(abs(g2), 1.0):
            break
        step = u - g1 / g2 if g2 < 0 else math.nan
        if not (a < step < b):
            step = 0.5 * (a + b)
        if step == u:
            break
        u = step
    return -math.exp(u)


def rv_saddle(model: PortfolioModel, x: float, n: int) -> SaddleResult:
    _require_rv(model)
    closed = rv_closed(model, x, n)
    M = closed["M"]
    z_star = maximize_log_scale(model, x, n, M ** closed["t0"])
    res = _assemble("rv", model, x, n, M, z_star, "log")
    res.closed_exponent = closed["exponent"]
    res.closed_curvature = closed["curvature"]
    res.closed_log_prefactor = closed["log_prefactor"]
    res.extra = {"t0_closed": closed["t0"], "Delta": closed["Delta"], "log_K": closed["log_K"]}
    return res


# ---------------------------------------------------------------------------
# Gaussian noise, regularly varying factor
# ---------------------------------------------------------------------------


def mixed_constant(alpha_Z: float, b: float, sigma_eps: float) -> float:
    """K = a_Z (2 b^2 s^2)^{-(a_Z+1)/2} b s (a_Z+1)^{-1/2}."""
    return alpha_Z * (2.0 * b**2 * sigma_eps**2) ** (-(alpha_Z + 1.0) / 2.0) * b * sigma_eps / math.sqrt(alpha_Z + 1.0)


def _require_mixed(model: PortfolioModel):
    if not (isinstance(model.eps, GeneralizedNormal) and model.eps.gamma == 2.0 and isinstance(model.Z, SymmetricRV)):
        raise FamilyMismatch("mixed regime needs Gaussian noise and a symmetric RV factor")


def mixed_closed(model: PortfolioModel, x: float, n: int) -> dict:
    """e^{-n phi} / H ~ K (log n)^{-(a_Z+1)/2} L_Z(sqrt(log n)), with P(Z <= -w) = L_Z(w) w^{-a_Z}."""
    az = model.Z.alpha
    sigma = math.sqrt(1.0 / (2.0 * model.eps.xi))
    K = mixed_constant(az, model.b, sigma)
    ln = math.log(n)
    lLz = float(model.Z.left_tail_constant().log_value(math.sqrt(ln)))
    return {"M": model.b * math.sqrt(ln / model.eps.xi), "K": K,
            "log_prefactor": math.log(K) - (az + 1.0) / 2.0 * math.log(ln) + lLz}


def mixed_saddle(model: PortfolioModel, x: float, n: int) -> SaddleResult:
    _require_mixed(model)
    closed = mixed_closed(model, x, n)
    M = closed["M"]
    z_star = maximize_direct(model, x, n, M)
    res = _assemble("mixed", model, x, n, M, z_star)
    res.closed_log_prefactor = closed["log_prefactor"]
    res.extra = {"K": closed["K"]}
    return res


# ---------------------------------------------------------------------------
# general log-smooth tails
# ---------------------------------------------------------------------------


def _noise_log_density(model: PortfolioModel, eps_tail: Optional[LogSmooth], t: float) -> float:
    if eps_tail is not None:
        return eps_tail.tail_log_density(t)
    return float(model.eps.logpdf(t))


def _factor_hazard(model: PortfolioModel, z_tail: Optional[LogSmooth], w: float) -> float:
    """r_Z(w) = -d/dw log f_Z(-w)."""
    if z_tail is not None:
        return z_tail.exponent_slope(w)
    return _dlogf(model.Z, -w)


def balance_log_ratio(model: PortfolioModel, x: float, n: int, M: float,
                      eps_tail: Optional[LogSmooth] = None, z_tail: Optional[LogSmooth] = None) -> float:
    """log R_1n(M) = log[(n C_x / b) f_eps((v + M)/b) / r_Z(M)]."""
    C = cgfcore.c_x(model.U, x)
    r = _factor_hazard(model, z_tail, M)
    if not r > 0:
        return math.inf
    return math.log(n * C / model.b) + _noise_log_density(model, eps_tail, (model.v + M) / model.b) - math.log(r)


def logsmooth_saddle(model: PortfolioModel, x: float, n: int, eps_tail: Optional[LogSmooth] = None,
                     z_tail: Optional[LogSmooth] = None, lo: Optional[float] = None) -> SaddleResult:
    """Balance scale by bisection, then Newton refinement of the saddle.

    ``eps_tail`` (right side) and ``z_tail`` (left side) override the model's
    own noise density and factor hazard in the balance equation; the exponent
    and curvature always come from the model itself.
    """
    f = lambda M: balance_log_ratio(model, x, n, M, eps_tail, z_tail)
    if lo is None:
        lo = 1e-3
        if eps_tail is not None:
            lo = max(lo, model.b * eps_tail.onset - model.v)
        if z_tail is not None:
            lo = max(lo, z_tail.onset)
    if not f(lo) > 0:
        raise BalanceUnsolvable("balance ratio is below one at the lower end of the search interval")
    hi = max(2.0 * lo, 1.0)
    for _ in range(200):
        if f(hi) < 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise BalanceUnsolvable("balance ratio never drops below one")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    M = 0.5 * (lo + hi)
    # one Newton step from -M on (n h)' as the first refinement, then polish
    z = -M
    g1, g2 = n_h_d1(model, x, n, z), n_h_d2(model, x, n, z)
    z_first = z - g1 / g2 if g2 < 0 else z
    z_star = maximize_direct(model, x, n, M, z_start=z_first)
    res = _assemble("logsmooth", model, x, n, M, z_star)
    res.extra = {"first_newton": -z_first, "hazard_at_M": _factor_hazard(model, z_tail, M)}
    return res


def gn_as_logsmooth(model: PortfolioModel) -> tuple[LogSmooth, LogSmooth]:
    """GN noise and factor tails written in log-smooth form."""
    return gn_log_smooth(model.eps, "right"), gn_log_smooth(model.Z, "left")


# ---------------------------------------------------------------------------
# window dominance
# ---------------------------------------------------------------------------


def flank_integrals(model: PortfolioModel, x: float, n: int, res: SaddleResult, beta: float = WINDOW) -> dict:
    """Quadrature of e^{n h} over the left flank, window and right flank, scaled by e^{-n h(z*)}."""
    z_star = -res.M_tilde
    peak = res.exponent
    g = lambda z: math.exp(n_h(model, x, n, z) - peak) if np.isfinite(n_h(model, x, n, z)) else 0.0
    a = -(1.0 + beta) * res.M_n
    c = -(1.0 - beta) * res.M_n
    width = 1.0 / math.sqrt(abs(res.curvature))
    J2, _ = integrate.quad(g, a, c, points=[z_star], limit=200, epsabs=0.0, epsrel=1e-10)
    # left flank: the factor density decays; integrate until negligible
    left_end = a
    while g(left_end) > 1e-300 and left_end > a - 1e4 * max(1.0, res.M_n):
        left_end = a + 2.0 * (left_end - a) - width
    J1, _ = integrate.quad(g, left_end, a, limit=200, epsabs=0.0, epsrel=1e-10)
    right_end = c
    while g(right_end) > 1e-300 and right_end < 50.0 * max(1.0, res.M_n):
        right_end = c + 2.0 * (right_end - c) + width
    J3, _ = integrate.quad(g, c, right_end, limit=200, epsabs=0.0, epsrel=1e-10)
    return {"J1": J1, "J2": J2, "J3": J3}
