"""Conditional cumulant generating function, exponential tilts and rate functions.

Given the factor value z, a single summand U * X has cumulant generating
function

    Lambda(theta; z) = log(p(z) lambda_U(theta) + 1 - p(z)),   p(z) = F_eps((v - z)/b),

evaluated here entirely in log space so that both p(z) -> 0 and p(z) -> 1
stay accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .model import DomainError, LossLaw, PortfolioModel, log_default_probs

MAX_ITER = 100
NEAR_MEAN = 1e-9


class NoRoot(ValueError):
    """Target lies outside the range of the cumulant derivative."""


class NonConvergence(RuntimeError):
    """Tilt solver hit its iteration cap."""


class Cumulant(NamedTuple):
    """A cumulant generating function with its first two derivatives."""

    value: Callable[[float], float]
    d1: Callable[[float], float]
    d2: Callable[[float], float]
    mean: float
    sup: float  # limit of d1 as theta grows (essential supremum)
    theta_max: float = math.inf


@dataclass(frozen=True)
class TiltSolution:
    x: float
    theta: float
    cgf_value: float
    deriv1: float
    deriv2: float
    rate: float
    sigma: float
    residual: float


@dataclass(frozen=True)
class Partials:
    d_theta: float
    d_z: float
    d_thetatheta: float
    d_ztheta: float


# ---------------------------------------------------------------------------
# cumulants
# ---------------------------------------------------------------------------


def _log_abs_expm1(a: float) -> float:
    """log|e^a - 1| for a != 0."""
    if a > 0:
        return a + math.log(-math.expm1(-a))
    return math.log(-math.expm1(a))


def _logaddexp(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def unconditional_cumulant(U: LossLaw) -> Cumulant:
    return Cumulant(U.log_mgf, U.dlog_mgf, U.d2log_mgf, U.mean, U.upper, U.theta_max)


class _Conditional:
    """Log-space pieces of Lambda(theta; z) at a fixed z."""

    def __init__(self, model: PortfolioModel, z: float):
        self.model = model
        self.z = z
        self.U = model.U
        self.lp, self.lq = log_default_probs(model, z)

    def log_denominator(self, theta: float) -> float:
        # log(p lambda + 1 - p)
        ll = float(self.U.log_mgf(theta))
        if self.lp == -math.inf:
            return 0.0
        if self.lq == -math.inf:
            return ll
        return _logaddexp(self.lq, self.lp + ll)

    def weight(self, theta: float) -> float:
        """w = p lambda / (p lambda + 1 - p)."""
        if self.lp == -math.inf:
            return 0.0
        ll = float(self.U.log_mgf(theta))
        return math.exp(self.lp + ll - self.log_denominator(theta))

    def value(self, theta: float) -> float:
        return self.log_denominator(theta)

    def d1(self, theta: float) -> float:
        return self.weight(theta) * float(self.U.dlog_mgf(theta))

    def d2(self, theta: float) -> float:
        w = self.weight(theta)
        return w * float(self.U.d2log_mgf(theta)) + w * (1.0 - w) * float(self.U.dlog_mgf(theta)) ** 2


def conditional_cumulant(model: PortfolioModel, z: float) -> Cumulant:
    c = _Conditional(model, z)
    p = math.exp(c.lp)
    return Cumulant(c.value, c.d1, c.d2, p * model.U.mean, model.U.upper if p > 0 else 0.0, model.U.theta_max)


def cond_cgf(model: PortfolioModel, theta: float, z: float) -> float:
    """log(lambda_U(theta) p(z) + 1 - p(z))."""
    if theta >= model.U.theta_max:
        raise DomainError(f"theta must be below {model.U.theta_max}")
    return _Conditional(model, z).value(theta)


def _noise_log_density_scaled(model: PortfolioModel, z: float) -> float:
    """log(f_eps((v - z)/b) / b)."""
    return float(model.eps.logpdf((model.v - z) / model.b)) - math.log(model.b)


def _noise_dlog_density(model: PortfolioModel, t: float) -> float:
    fam = model.eps
    if hasattr(fam, "dlogpdf"):
        return float(fam.dlogpdf(t))
    h = 1e-6 * max(abs(t), 1.0)
    return (float(fam.logpdf(t + h)) - float(fam.logpdf(t - h))) / (2 * h)


def cond_cgf_partials(model: PortfolioModel, theta: float, z: float) -> Partials:
    """Closed-form first and mixed second partials of Lambda(theta; z)."""
    if theta >= model.U.theta_max:
        raise DomainError(f"theta must be below {model.U.theta_max}")
    c = _Conditional(model, z)
    U = model.U
    d1u = float(U.dlog_mgf(theta))
    w = c.weight(theta)
    d_theta = w * d1u
    d_tt = w * float(U.d2log_mgf(theta)) + w * (1.0 - w) * d1u**2
    lf = _noise_log_density_scaled(model, z)
    ld = c.log_denominator(theta)
    ll = float(U.log_mgf(theta))
    if ll == 0.0 or lf == -math.inf:
        d_z = 0.0
    else:
        # d/dz Lambda = -(f/b)(lambda - 1)/D
        d_z = -math.copysign(1.0, ll) * math.exp(lf + _log_abs_expm1(ll) - ld)
    # d2/dz dtheta Lambda = -(f/b) lambda'/D^2 with lambda' = lambda Lambda_U'
    d_zt = 0.0 if lf == -math.inf else -math.exp(lf + ll + math.log(d1u) - 2.0 * ld)
    return Partials(d_theta, d_z, d_tt, d_zt)


def cond_cgf_dzz(model: PortfolioModel, theta: float, z: float) -> float:
    """Second z-partial: (lambda - 1) p''/D - ((lambda - 1) p'/D)^2."""
    c = _Conditional(model, z)
    ll = float(model.U.log_mgf(theta))
    if ll == 0.0:
        return 0.0
    lf = _noise_log_density_scaled(model, z)
    if lf == -math.inf:
        return 0.0
    ld = c.log_denominator(theta)
    t = (model.v - z) / model.b
    sign = math.copysign(1.0, ll)
    # p'(z) = -f(t)/b,  p''(z) = f'(t)/b^2 = (f/b) * dlogf(t) / b
    first = sign * math.exp(lf + _log_abs_expm1(ll) - ld) * _noise_dlog_density(model, t) / model.b
    second = math.exp(2.0 * (lf + _log_abs_expm1(ll) - ld))
    return first - second


# ---------------------------------------------------------------------------
# tilt solving
# ---------------------------------------------------------------------------


def solve_tilt(cgf: Cumulant, x: float, bracket: Optional[tuple] = None) -> TiltSolution:
    """Solve cgf.d1(theta) = x by safeguarded Newton inside a bracket."""
    if abs(x - cgf.mean) < NEAR_MEAN:
        d2 = float(cgf.d2(0.0))
        return TiltSolution(x, 0.0, 0.0, float(cgf.d1(0.0)), d2, 0.0, math.sqrt(d2), abs(float(cgf.d1(0.0)) - x))
    if x < cgf.mean:
        raise NoRoot(f"target {x} is below the mean {cgf.mean}")
    if x >= cgf.sup:
        raise NoRoot(f"target {x} is not below the essential supremum {cgf.sup}")

    if bracket is None:
        lo = 0.0
        if math.isinf(cgf.theta_max):
            hi = 1.0
            for _ in range(2000):
                if cgf.d1(hi) > x:
                    break
                lo, hi = hi, 2.0 * hi
            else:
                raise NoRoot("could not bracket the tilt")
        else:
            k = 1
            hi = 0.999 * cgf.theta_max
            while cgf.d1(hi) <= x:
                lo = hi
                k += 1
                hi = cgf.theta_max * (1.0 - 0.001 * 0.5**k)
                if k > 60:
                    raise NoRoot("target beyond the attainable range")
    else:
        lo, hi = bracket
        if not (cgf.d1(lo) <= x <= cgf.d1(hi)):
            raise NoRoot("bracket does not contain the root")

    tol = 1e-14 * max(1.0, abs(x))
    theta = 0.5 * (lo + hi)
    for _ in range(MAX_ITER):
        g = float(cgf.d1(theta)) - x
        if abs(g) <= tol:
            break
        if g > 0:
            hi = theta
        else:
            lo = theta
        d2 = float(cgf.d2(theta))
        step = theta - g / d2 if d2 > 0 else math.nan
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        if step == theta or hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(theta)):
            theta = step
            break
        theta = step
    else:
        raise NonConvergence("tilt solver exceeded the iteration cap")
    d1 = float(cgf.d1(theta))
    d2 = float(cgf.d2(theta))
    val = float(cgf.value(theta))
    # rate is nonnegative; clamp cancellation noise right at the mean
    rate = max(theta * x - val, 0.0)
    return TiltSolution(x, theta, val, d1, d2, rate, math.sqrt(d2), abs(d1 - x))


def tilt_unconditional(U: LossLaw, x: float) -> TiltSolution:
    return solve_tilt(unconditional_cumulant(U), x)


def tilt_conditional(model: PortfolioModel, x: float, z: float) -> TiltSolution:
    return solve_tilt(conditional_cumulant(model, z), x)


def conditional_mean(model: PortfolioModel, z: float) -> float:
    return math.exp(log_default_probs(model, z)[0]) * model.U.mean


def rate_fn(model: PortfolioModel, x: float, z: Optional[float] = None) -> float:
    """Legendre transform sup_theta [theta x - Lambda(theta; z)]; z=None gives the unconditional rate."""
    if z is None:
        return tilt_unconditional(model.U, x).rate
    return tilt_conditional(model, x, z).rate


def tilt_slope(model: PortfolioModel, x: float, z: float) -> float:
    """d theta_x(z) / dz = -Lambda_ztheta / Lambda_thetatheta at the tilt."""
    sol = tilt_conditional(model, x, z)
    p = cond_cgf_partials(model, sol.theta, z)
    return -p.d_ztheta / p.d_thetatheta


def rate_dz(model: PortfolioModel, x: float, z: float) -> float:
    """d/dz of the conditional rate; by the envelope theorem -Lambda_z at the tilt."""
    sol = tilt_conditional(model, x, z)
    return -cond_cgf_partials(model, sol.theta, z).d_z


def rate_dzz(model: PortfolioModel, x: float, z: float) -> float:
    """Second z-derivative of the conditional rate."""
    sol = tilt_conditional(model, x, z)
    p = cond_cgf_partials(model, sol.theta, z)
    return -cond_cgf_dzz(model, sol.theta, z) + p.d_ztheta**2 / p.d_thetatheta


# ---------------------------------------------------------------------------
# correction function phi_n
# ---------------------------------------------------------------------------

SERIES_MASS = 1e-5


def c_factor(U: LossLaw, theta: float) -> float:
    """(lambda_U(theta) - 1) / lambda_U(theta)."""
    return -math.expm1(-float(U.log_mgf(theta)))


def c_x(U: LossLaw, x: float) -> float:
    return c_factor(U, tilt_unconditional(U, x).theta)


def _phi_relative(model: PortfolioModel, x: float, z: float) -> tuple[float, float]:
    """(log q, r) with phi_n = q e^r, where q = 1 - p(z) is the survival mass.

    With C(theta) = 1 - 1/lambda_U(theta),
    Lambda(theta; z) = Lambda_U(theta) + log(1 - q C(theta)). For small q the
    optimal tilt moves by delta = q C'(theta_x) / Lambda_U''(theta_x) + O(q^2)
    and phi = -log(1 - q C(theta_x + delta)) - Lambda_U''(theta_x) delta^2 / 2
    up to O(q^3); otherwise the two rates are differenced directly.
    """
    U = model.U
    lp, lq = log_default_probs(model, z)
    if lq == -math.inf:
        return lq, 0.0
    q = math.exp(lq)
    base = tilt_unconditional(U, x)
    if q > SERIES_MASS:
        diff = tilt_conditional(model, x, z).rate - base.rate
        return lq, (math.log(diff) - lq if diff > 0 else -math.inf)
    th = base.theta
    dc = math.exp(-float(U.log_mgf(th))) * float(U.dlog_mgf(th))
    delta = q * dc / base.deriv2
    c_shift = c_factor(U, th + delta)
    a = q * c_shift
    # -log1p(-a)/a = 1 + a/2 + ...
    rel = math.log(c_shift) + (math.log(-math.log1p(-a) / a) if a > 1e-300 else 0.0)
    quad = 0.5 * base.deriv2 * delta**2
    if quad > 0:
        rel += math.log1p(-math.exp(math.log(quad) - lq - rel))
    return lq, rel


def log_phi_n(model: PortfolioModel, x: float, z: float) -> float:
    """log of Lambda*(x; z) - Lambda*_U(x), accurate when 1 - p(z) is tiny."""
    lq, rel = _phi_relative(model, x, z)
    return lq + rel


def phi_n(model: PortfolioModel, x: float, z: float) -> float:
    return math.exp(log_phi_n(model, x, z))


def dphi_n(model: PortfolioModel, x: float, z: float) -> float:
    return rate_dz(model, x, z)


def d2phi_n(model: PortfolioModel, x: float, z: float) -> float:
    return rate_dzz(model, x, z)


def log_tail_mass(model: PortfolioModel, M: float) -> float:
    """log g(M) = log P(eps > (v + M)/b)."""
    return float(model.eps.logsf((model.v + M) / model.b))


def phi_expansion_ratio(model: PortfolioModel, x: float, M: float) -> float:
    """phi_n(-M) / (g(M) C_x); tends to one as M grows.

    g(M) is exactly the survival mass 1 - p(-M), so the ratio is e^r / C_x.
    """
    lq, rel = _phi_relative(model, x, -M)
    return math.exp(rel - math.log(c_x(model.U, x)))


# ---------------------------------------------------------------------------
# prefactor constants
# ---------------------------------------------------------------------------


def psi_infty(model: PortfolioModel, x: float) -> float:
    """1 / (theta_x sqrt(Lambda_U''(theta_x)))."""
    sol = tilt_unconditional(model.U, x)
    if sol.theta <= 0:
        return math.inf
    return 1.0 / (sol.theta * sol.sigma)


def psi_infty_at(model: PortfolioModel, x: float, z: float) -> float:
    """Boundary variant 1 / (theta_bar sqrt(Lambda''(theta_bar; z)))."""
    sol = tilt_conditional(model, x, z)
    if sol.theta <= 0:
        return math.inf
    return 1.0 / (sol.theta * sol.sigma)
