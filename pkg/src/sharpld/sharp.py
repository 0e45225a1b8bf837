"""Regime classification and sharp approximations to P(L_n >= n x).

Everything is assembled in log space. For factors unbounded to the left

    log P = -1/2 log n - n Lambda*_U(x) - n phi_n(-M) + log f_Z(-M)
            - 1/2 log(n |h''(-M)|) + log psi_inf,

with M the saddle of the factor integral. The 2 pi of the conditional
Bahadur-Rao factor cancels against the Gaussian integral over z, so no
1/sqrt(2 pi) remains. For factors bounded below the integral is
endpoint-dominated and the 1/sqrt(2 pi) survives.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from . import cgfcore, saddle
from .cgfcore import TiltSolution
from .dist import GeneralizedNormal, LogSmooth, LowerBoundedRV, PointMass, SymmetricRV
from .model import PortfolioModel

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class Regime(str, enum.Enum):
    UNBOUNDED_GN = "UnboundedGN"
    UNBOUNDED_RV = "UnboundedRV"
    MIXED = "Mixed"
    LOG_SMOOTH = "LogSmooth"
    BOUNDARY_NONDEGENERATE = "BoundaryNondegenerate"
    BOUNDARY_DEGENERATE = "BoundaryDegenerate"

    @property
    def unbounded(self) -> bool:
        return self in (Regime.UNBOUNDED_GN, Regime.UNBOUNDED_RV, Regime.MIXED, Regime.LOG_SMOOTH)


class RegimeUnsupported(ValueError):
    """No sharp asymptotic is available for this combination of tails."""


class OutsideLargeDeviations(ValueError):
    """The level x does not exceed the relevant mean."""


@dataclass(frozen=True)
class Decomposition:
    rate_term: float
    power_term: float
    polylog_term: float
    constant_term: float

    @property
    def total(self) -> float:
        return self.rate_term + self.power_term + self.polylog_term + self.constant_term


@dataclass
class SharpEstimate:
    regime: Regime
    log_prob: float
    decomposition: Decomposition
    saddle: Optional[saddle.SaddleResult]
    tilt: TiltSolution
    closed_log_prob: Optional[float] = None
    closed_decomposition: Optional[Decomposition] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def prob(self) -> float:
        return math.exp(self.log_prob)


def classify_regime(model: PortfolioModel) -> Regime:
    Z, eps = model.Z, model.eps
    if isinstance(Z, PointMass):
        return Regime.BOUNDARY_DEGENERATE
    if isinstance(Z, LowerBoundedRV):
        if not np.isfinite(float(Z.logpdf(Z.z0))):
            raise RegimeUnsupported("factor density vanishes at its left endpoint")
        return Regime.BOUNDARY_NONDEGENERATE
    if isinstance(Z, GeneralizedNormal) and isinstance(eps, GeneralizedNormal) and Z.gamma == eps.gamma:
        return Regime.UNBOUNDED_GN
    if isinstance(Z, SymmetricRV) and isinstance(eps, SymmetricRV):
        return Regime.UNBOUNDED_RV
    if isinstance(Z, SymmetricRV) and isinstance(eps, GeneralizedNormal) and eps.gamma == 2.0:
        return Regime.MIXED
    light_noise = isinstance(eps, GeneralizedNormal) or (isinstance(eps, LogSmooth) and eps.side == "right")
    light_factor = isinstance(Z, GeneralizedNormal) or (isinstance(Z, LogSmooth) and Z.side == "left")
    if light_noise and light_factor:
        return Regime.LOG_SMOOTH
    raise RegimeUnsupported(f"no sharp asymptotic for factor {Z.kind} with noise {eps.kind}")


def boundary_point(model: PortfolioModel, regime: Optional[Regime] = None) -> float:
    regime = regime or classify_regime(model)
    if regime is Regime.BOUNDARY_DEGENERATE:
        return model.Z.kappa
    if regime is Regime.BOUNDARY_NONDEGENERATE:
        return model.Z.z0
    return -math.inf


def threshold_mean(model: PortfolioModel, regime: Optional[Regime] = None) -> float:
    """Level above which the sharp asymptotic applies: mu_U, or q_kappa for a point-mass factor."""
    regime = regime or classify_regime(model)
    if regime is Regime.BOUNDARY_DEGENERATE:
        return cgfcore.conditional_mean(model, model.Z.kappa)
    return model.U.mean


def _check_level(model: PortfolioModel, x: float, regime: Regime):
    lo = threshold_mean(model, regime)
    if not x > lo:
        raise OutsideLargeDeviations(f"x={x} must exceed {lo}")
    if not x < model.U.upper:
        raise OutsideLargeDeviations(f"x={x} must lie below the loss supremum {model.U.upper}")


def log_psi(sol: TiltSolution) -> float:
    return -math.log(sol.theta) - math.log(sol.sigma)


def _saddle_for(model: PortfolioModel, x: float, n: int, regime: Regime) -> saddle.SaddleResult:
    if regime is Regime.UNBOUNDED_GN:
        return saddle.gn_saddle(model, x, n)
    if regime is Regime.UNBOUNDED_RV:
        return saddle.rv_saddle(model, x, n)
    if regime is Regime.MIXED:
        return saddle.mixed_saddle(model, x, n)
    return saddle.logsmooth_saddle(model, x, n)


def _closed_terms(model: PortfolioModel, x: float, n: int, regime: Regime) -> Optional[tuple[float, float, float]]:
    """(power, polylog, constant) of the closed-form prefactor e^{-n phi}/H, without psi."""
    ln = math.log(n)
    if regime is Regime.UNBOUNDED_GN:
        k = saddle.gn_constants(model, x)
        g, c = k.gamma, k.c_gamma
        polylog = (-(g - 1.0) / g * (1.0 - c) * math.log(ln)
                   + model.v * g * c / model.b * model.eps.xi ** (1.0 / g) * ln ** ((g - 1.0) / g))
        return -c * ln, polylog, k.log_K - k.Delta + k.log_eta
    if regime is Regime.UNBOUNDED_RV:
        r = saddle.rv_closed(model, x, n)
        a = model.Z.alpha / model.eps.alpha
        M = r["M"]
        polylog = (float(model.Z.left_tail_constant().log_value(M))
                   - a * float(model.eps.left_tail_constant().log_value(M)))
        return -a * ln, polylog, r["log_K"]
    if regime is Regime.MIXED:
        r = saddle.mixed_closed(model, x, n)
        az = model.Z.alpha
        polylog = -(az + 1.0) / 2.0 * math.log(ln) + float(model.Z.left_tail_constant().log_value(math.sqrt(ln)))
        return 0.0, polylog, math.log(r["K"])
    return None


def sharp_tail(model: PortfolioModel, x: float, n: int, regime: Optional[Regime] = None) -> SharpEstimate:
    """Sharp log-probability of L_n >= n x for the model's regime."""
    regime = regime or classify_regime(model)
    _check_level(model, x, regime)
    ln = math.log(n)

    if regime is Regime.BOUNDARY_DEGENERATE:
        kappa = model.Z.kappa
        sol = cgfcore.tilt_conditional(model, x, kappa)
        dec = Decomposition(-n * sol.rate, -0.5 * ln, 0.0, log_psi(sol) - HALF_LOG_2PI)
        return SharpEstimate(regime, dec.total, dec, None, sol, dec.total, dec, {"kappa": kappa})

    if regime is Regime.BOUNDARY_NONDEGENERATE:
        z0 = model.Z.z0
        sol = cgfcore.tilt_conditional(model, x, z0)
        slope = cgfcore.rate_dz(model, x, z0)
        h = 1e-5 * max(1.0, abs(z0))
        slope_fd = (cgfcore.rate_fn(model, x, z0 + h) - cgfcore.rate_fn(model, x, z0 - h)) / (2 * h)
        log_C = float(model.Z.logpdf(z0)) - math.log(slope)
        dec = Decomposition(-n * sol.rate, -1.5 * ln, 0.0, log_C + log_psi(sol) - HALF_LOG_2PI)
        diag = {"z0": z0, "C_z0": math.exp(log_C), "rate_slope": slope,
                "rate_slope_fd_rel": abs(slope_fd / slope - 1.0)}
        return SharpEstimate(regime, dec.total, dec, None, sol, dec.total, dec, diag)

    sol = cgfcore.tilt_unconditional(model.U, x)
    lpsi = log_psi(sol)
    res = _saddle_for(model, x, n, regime)
    rate = -n * sol.rate
    log_prob = -0.5 * ln + rate + res.direct_log_prefactor + lpsi
    terms = _closed_terms(model, x, n, regime)
    closed_dec = None
    if terms is not None:
        power, polylog, const = terms
        closed_dec = Decomposition(rate, -0.5 * ln + power, polylog, const + lpsi)
        dec = Decomposition(rate, closed_dec.power_term, polylog, log_prob - rate - closed_dec.power_term - polylog)
    else:
        dec = Decomposition(rate, -0.5 * ln, 0.0, log_prob - rate + 0.5 * ln)
    return SharpEstimate(
        regime, log_prob, dec, res, sol,
        closed_log_prob=closed_dec.total if closed_dec else None,
        closed_decomposition=closed_dec,
        diagnostics={"psi_infty": math.exp(lpsi)},
    )


def conditional_br(model: PortfolioModel, x: float, n: int, z: float) -> float:
    """Log of the conditional Bahadur-Rao estimate of P(L_n >= n x | Z = z)."""
    sol = cgfcore.tilt_conditional(model, x, z)
    if not sol.theta > 0:
        raise OutsideLargeDeviations("x must exceed the conditional mean")
    return -0.5 * math.log(n) - n * sol.rate - math.log(sol.theta * sol.sigma) - HALF_LOG_2PI


def integrated_br(model: PortfolioModel, x: float, n: int, lo: Optional[float] = None,
                  hi: Optional[float] = None, grid: int = 401) -> float:
    """log of the factor integral of the conditional Bahadur-Rao estimate, by quadrature.

    An independent route to the sharp tail: no saddle expansion is used, only
    the conditional estimate integrated against the factor density. The peak
    is located on a coarse grid and refined; the integral then runs over the
    window where the integrand is within e^-60 of its peak.
    """
    Z = model.Z
    if isinstance(Z, PointMass):
        return conditional_br(model, x, n, Z.kappa)

    def g(z):
        lf = float(Z.logpdf(z))
        if not np.isfinite(lf):
            return -math.inf
        try:
            return lf + conditional_br(model, x, n, z)
        except (cgfcore.NoRoot, OutsideLargeDeviations):
            return -math.inf

    bounded = np.isfinite(Z.lower_endpoint)
    left = (Z.lower_endpoint if bounded else -50.0) if lo is None else lo
    right = 20.0 if hi is None else hi
    zs = np.linspace(left, right, grid)
    vals = np.array([g(z) for z in zs])
    i = int(np.argmax(vals))
    if not np.isfinite(vals[i]):
        raise OutsideLargeDeviations("the conditional estimate vanishes on the whole factor range")
    a, b = zs[max(i - 1, 0)], zs[min(i + 1, grid - 1)]
    opt = optimize.minimize_scalar(lambda z: -g(z), bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-12 * max(1.0, abs(zs[i]))})
    z_peak, peak = (opt.x, -opt.fun) if -opt.fun > vals[i] else (zs[i], vals[i])
    # local width: shrink until the drop is about one unit, then walk outwards
    w = zs[1] - zs[0]
    for _ in range(60):
        drop = max(peak - g(min(z_peak + w, right)), peak - g(max(z_peak - w, left)))
        if drop < 1.0:
            break
        w *= 0.25
    ends = []
    for sign, stop in ((-1.0, left), (1.0, right)):
        e, step = z_peak, w
        while (e - stop) * sign < 0:
            e = min(max(e + sign * step, min(left, right)), max(left, right))
            if peak - g(e) > 60.0:
                break
            step *= 2.0
        ends.append(e)
    f = lambda z: math.exp(g(z) - peak)
    val, _ = integrate.quad(f, ends[0], ends[1], points=[z_peak] if ends[0] < z_peak < ends[1] else None,
                            limit=400, epsabs=0.0, epsrel=1e-10)
    return peak + math.log(val)
