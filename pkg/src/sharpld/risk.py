"""Second-order Value-at-Risk and Expected Shortfall of L_n / n.

Inverting the sharp tail P(L_n >= n x) = 1 - alpha with the quadratic
expansion Lambda*_U(x) ~ (x - mu_U)^2 / (2 sigma_U^2) gives

    x = mu_U + sqrt(2 sigma_U^2 B(x) / n),
    B(x) = -log(1 - alpha) + (power) log n + log C(x, n),

where log C collects the prefactor of the regime. ES adds 1/(n theta_x).
Since C depends on x, the display is solved as a bracketed root in x.

Two prefactor forms are offered. ``closed`` uses the closed-form regime
constants in the convention of the reference risk tables: for GN factor and noise
the prefactor carries 1/sqrt(2 pi), for the mixed regime it does not.
``direct`` uses the prefactor of :func:`sharp.sharp_tail`, so that plugging
the result back into the sharp tail returns 1 - alpha.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from . import cgfcore, mc, saddle
from .model import PortfolioModel, simulate_batch
from .sharp import HALF_LOG_2PI, Regime, classify_regime, log_psi, sharp_tail

FORMS = ("closed", "direct")


class NegativeDiscriminant(ValueError):
    """The bracketed term is not positive: the (alpha, n) pair is outside the large-deviation regime."""


@dataclass(frozen=True)
class RiskResult:
    alpha: float
    n: int
    var: float
    es: float
    regime: str
    inputs_echo: str
    fallback: bool = False
    form: str = "closed"
    theta: float = math.nan


def model_digest(model: PortfolioModel) -> str:
    try:
        doc = json.dumps(model.to_dict(), sort_keys=True)
    except Exception:
        doc = repr(model)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def log_prefactor(model: PortfolioModel, x: float, n: int, regime: Regime, form: str = "closed") -> tuple[float, float]:
    """(power p, log C) with B = -log(1 - alpha) + p log n + log C."""
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if regime is Regime.BOUNDARY_DEGENERATE:
        sol = cgfcore.tilt_conditional(model, x, model.Z.kappa)
        return -0.5, log_psi(sol) - HALF_LOG_2PI
    if regime is Regime.BOUNDARY_NONDEGENERATE:
        est = sharp_tail(model, x, n, regime)
        return -1.5, est.decomposition.constant_term
    lpsi = log_psi(cgfcore.tilt_unconditional(model.U, x))
    if form == "direct" or regime is Regime.LOG_SMOOTH:
        est = sharp_tail(model, x, n, regime)
        return -0.5, est.log_prob + 0.5 * math.log(n) - est.decomposition.rate_term
    if regime is Regime.UNBOUNDED_GN:
        return -0.5, saddle.gn_closed(model, x, n)["log_prefactor"] + lpsi - HALF_LOG_2PI
    if regime is Regime.UNBOUNDED_RV:
        return -0.5, saddle.rv_closed(model, x, n)["log_prefactor"] + lpsi
    return -0.5, saddle.mixed_closed(model, x, n)["log_prefactor"] + lpsi


def bracket_term(model: PortfolioModel, alpha: float, n: int, x: float, regime: Regime, form: str) -> float:
    power, logC = log_prefactor(model, x, n, regime, form)
    return -math.log1p(-alpha) + power * math.log(n) + logC


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if alpha < 0.9:
        raise ValueError("alpha must be at least 0.9")
    if alpha < 0.95:
        warnings.warn("alpha below 0.95: the large-deviation inversion is unreliable", stacklevel=3)


def var_approx(model: PortfolioModel, alpha: float, n: int, form: str = "closed", grid: int = 120) -> float:
    """Root of x = mu_U + sqrt(2 sigma_U^2 B(x) / n) above mu_U.

    Solved as g(x) = n (x - mu_U)^2 / (2 sigma_U^2) - B(x) = 0, whose root
    automatically has B > 0. The bracket is grown geometrically from the
    CLT-like start; a geometric grid in x - mu_U is the fallback.
    """
    _check_alpha(alpha)
    regime = classify_regime(model)
    mu, var = model.U.mean, model.U.var
    lo = mu
    if regime is Regime.BOUNDARY_DEGENERATE:
        lo = max(mu, cgfcore.conditional_mean(model, model.Z.kappa))
    hi = min(model.U.upper, mu + 12.0 * math.sqrt(var))

    def g(x):
        try:
            b = bracket_term(model, alpha, n, x, regime, form)
        except (cgfcore.NoRoot, ValueError):
            return math.nan
        return n * (x - mu) ** 2 / (2.0 * var) - b

    def solve(a, b):
        return optimize.brentq(g, a, b, xtol=1e-13, rtol=1e-13)

    x0 = max(mu + math.sqrt(-2.0 * var * math.log1p(-alpha) / n), lo + 1e-9 * (hi - lo))
    if lo < x0 < hi:
        g0 = g(x0)
        if np.isfinite(g0):
            step = 1.5 if g0 < 0 else 1.0 / 1.5
            a, ga = x0, g0
            for _ in range(60):
                b = lo + (a - lo) * step
                if not lo < b < hi:
                    break
                gb = g(b)
                if not np.isfinite(gb):
                    break
                if (ga < 0) != (gb < 0):
                    return solve(min(a, b), max(a, b))
                a, ga = b, gb

    xs = lo + (hi - lo) * np.geomspace(1e-9, 1.0 - 1e-9, grid)
    vals = np.array([g(x) for x in xs])
    for i in range(grid - 1):
        a, b = vals[i], vals[i + 1]
        if np.isfinite(a) and np.isfinite(b) and a < 0 <= b:
            return solve(xs[i], xs[i + 1])
    raise NegativeDiscriminant(f"no positive bracketed term with a root for alpha={alpha}, n={n}")


def es_approx(model: PortfolioModel, alpha: float, n: int, form: str = "closed",
              var: Optional[float] = None) -> float:
    x = var_approx(model, alpha, n, form) if var is None else var
    theta = cgfcore.tilt_unconditional(model.U, x).theta
    return x + 1.0 / (n * theta)


def risk_cell(model: PortfolioModel, alpha: float, n: int, form: str = "closed") -> RiskResult:
    regime = classify_regime(model)
    digest = model_digest(model)
    try:
        x = var_approx(model, alpha, n, form)
    except NegativeDiscriminant:
        return RiskResult(alpha, n, math.nan, math.nan, regime.value, digest, True, form)
    theta = cgfcore.tilt_unconditional(model.U, x).theta
    return RiskResult(alpha, n, x, x + 1.0 / (n * theta), regime.value, digest, False, form, theta)


def risk_table(model: PortfolioModel, alphas: Sequence[float], ns: Sequence[int], form: str = "closed") -> list:
    return [risk_cell(model, a, n, form) for a in alphas for n in ns]


def table_rows(cells: list) -> list[dict]:
    """Long format: one row per (measure, alpha, n)."""
    rows = []
    for measure in ("VaR", "ES"):
        for c in cells:
            rows.append({"measure": measure, "alpha": c.alpha, "n": c.n,
                         "value": c.var if measure == "VaR" else c.es,
                         "regime": c.regime, "fallback_flag": int(c.fallback)})
    return rows


def format_table(cells: list, digits: int = 3) -> str:
    """Plain text in the layout of the reference risk tables: measures by alpha rows, n columns."""
    alphas = sorted({c.alpha for c in cells})
    ns = sorted({c.n for c in cells})
    look = {(c.alpha, c.n): c for c in cells}
    head = f"{'':<5}{'':<12}" + "".join(f"{'n=' + str(n):>9}" for n in ns)
    lines = [head]
    for measure in ("VaR", "ES"):
        for a in alphas:
            cells_txt = []
            for n in ns:
                c = look[(a, n)]
                v = c.var if measure == "VaR" else c.es
                cells_txt.append(f"{'CLT':>9}" if c.fallback else f"{v:>9.{digits}f}")
            lines.append(f"{measure:<5}{'alpha=' + repr(a):<12}" + "".join(cells_txt))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class QuantileCheck:
    alpha: float
    n: int
    var: float
    var_low: float
    var_high: float
    es: float
    replicates: int
    seed: int


def mc_quantile(model: PortfolioModel, alpha: float, n: int, replicates: int, seed: int = mc.DEFAULT_SEED) -> QuantileCheck:
    """Monte Carlo VaR and ES of L_n / n with a distribution-free 99% band for the quantile."""
    parts = []
    for b in range(-(-replicates // mc.BLOCK)):
        count = min(mc.BLOCK, replicates - b * mc.BLOCK)
        losses, _, _ = simulate_batch(model, mc.block_rng(seed, b), count, n)
        parts.append(losses / n)
    y = np.sort(np.concatenate(parts))
    m = y.size
    k = int(math.ceil(alpha * m)) - 1
    half = 2.576 * math.sqrt(m * alpha * (1 - alpha))
    lo_i, hi_i = max(int(math.floor(k - half)), 0), min(int(math.ceil(k + half)), m - 1)
    var = float(y[k])
    es = float(np.mean(y[k:]))
    return QuantileCheck(alpha, n, var, float(y[lo_i]), float(y[hi_i]), es, m, int(seed))
