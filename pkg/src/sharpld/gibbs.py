"""Conditional (Gibbs) limit laws of a few coordinates given a large loss.

Given L_n >= n x, a fixed block of coordinates (U_i, X_i) becomes i.i.d.
with the law of one summand Y = U X tilted at the large-deviation tilt:

* factor unbounded below: every obligor defaults and U follows the tilt of
  its law at theta_x;
* factor bounded below at kappa: the summand law at z = kappa is tilted at
  theta_bar, the root of d/dtheta Lambda(theta; kappa) = x. Defaults occur
  with probability p lambda_U(theta_bar) / (p lambda_U(theta_bar) + 1 - p),
  losses of defaulters follow the tilt of U, and U is untouched when X = 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import cgfcore, mc
from .model import PortfolioModel
from .sharp import boundary_point, classify_regime, threshold_mean, OutsideLargeDeviations

REJECTION_FLOOR = 1e-3
PILOT = 20_000


class TooRare(RuntimeError):
    """Too few accepted conditional samples within the budget."""


class LimitCase(str, enum.Enum):
    UNBOUNDED_TILT = "UnboundedTilt"
    BOUNDARY_ONE_STEP = "BoundaryOneStep"


@dataclass(frozen=True)
class GibbsLimitLaw:
    case: LimitCase
    theta: float
    p_kappa: float  # untilted default probability at the endpoint (1 when unbounded)
    p_default: float  # P(X = 1) under the limit law
    U: object
    x: float

    @property
    def mean_loss(self) -> float:
        """E[U X] under the limit law; equals x by construction."""
        return self.p_default * float(self.U.dlog_mgf(self.theta))

    def bin_masses(self, edges: np.ndarray) -> np.ndarray:
        """Masses of {X = 0} x bins and {X = 1} x bins; rows indexed by X."""
        base = np.diff(np.asarray(self.U.cdf(edges), float))
        tilt = np.diff(np.asarray(self.U.tilted_cdf(self.theta, edges), float))
        return np.vstack([(1.0 - self.p_default) * base, self.p_default * tilt])

    def sample(self, rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
        xdef = rng.random(count) < self.p_default
        u = np.where(xdef, self.U.tilted_sample(rng, self.theta, count), self.U.sample(rng, count))
        return u, xdef


def limit_law(model: PortfolioModel, x: float) -> GibbsLimitLaw:
    regime = classify_regime(model)
    if not x > threshold_mean(model, regime):
        raise OutsideLargeDeviations(f"x={x} must exceed {threshold_mean(model, regime)}")
    if regime.unbounded:
        sol = cgfcore.tilt_unconditional(model.U, x)
        return GibbsLimitLaw(LimitCase.UNBOUNDED_TILT, sol.theta, 1.0, 1.0, model.U, x)
    kappa = boundary_point(model, regime)
    sol = cgfcore.tilt_conditional(model, x, kappa)
    lp, lq = (float(v) for v in (model.eps.logcdf((model.v - kappa) / model.b),
                                 model.eps.logsf((model.v - kappa) / model.b)))
    la = lp + float(model.U.log_mgf(sol.theta))
    p_def = 1.0 / (1.0 + math.exp(lq - la))
    return GibbsLimitLaw(LimitCase.BOUNDARY_ONE_STEP, sol.theta, math.exp(lp), p_def, model.U, x)


@dataclass
class ConditionalSample:
    """Weighted draws of the first k coordinates given L_n >= n x."""

    u: np.ndarray  # shape (m, k)
    xdef: np.ndarray  # shape (m, k), bool
    weights: np.ndarray  # shape (m,), sums to 1
    accepted: int
    ess: float
    method: str
    n: int
    k: int
    seed: int
    extra: dict = field(default_factory=dict)


def _block(model: PortfolioModel, x: float, n: int, k: int, count: int, rng: np.random.Generator,
           tilted: bool):
    z = model.Z.sample(rng, count)
    if tilted:
        theta = np.array([_safe_tilt(model, x, zz) for zz in z]) if np.ptp(z) > 0 else np.full(
            count, _safe_tilt(model, x, float(z[0])))
    else:
        theta = np.zeros(count)
    lam = mc.conditional_log_mgf(model, theta, z)
    log_p = np.asarray(model.eps.logcdf((model.v - z) / model.b), float)
    p_t = np.clip(np.exp(log_p + np.asarray(model.U.log_mgf(theta), float) - lam), 0.0, 1.0)
    # first k coordinates individually
    xdef = rng.random((count, k)) < p_t[:, None]
    th_k = np.repeat(theta, k).reshape(count, k)
    u_tilt = model.U.tilted_sample_array(rng, th_k.ravel()).reshape(count, k)
    u_base = model.U.sample(rng, count * k).reshape(count, k)
    u = np.where(xdef, u_tilt, u_base)
    # remaining n - k coordinates through the default count
    d = rng.binomial(n - k, p_t)
    s = np.sum(np.where(xdef, u, 0.0), axis=1)
    if int(d.sum()):
        owner = np.repeat(np.arange(count), d)
        s = s + np.bincount(owner, weights=model.U.tilted_sample_array(rng, theta[owner]), minlength=count)
    hit = s >= n * x
    logw = np.where(hit, -theta * s + n * lam, -np.inf)
    return u, xdef, logw, hit


def _safe_tilt(model: PortfolioModel, x: float, z: float) -> float:
    try:
        return max(cgfcore.tilt_conditional(model, x, z).theta, 0.0)
    except cgfcore.NoRoot:
        return 0.0


def conditional_sample(model: PortfolioModel, x: float, n: int, k: int, replicates: int,
                       seed: int = mc.DEFAULT_SEED, method: str = "auto", min_accepted: int = 500) -> ConditionalSample:
    """Draws of (U_{1:k}, X_{1:k}) given L_n >= n x.

    ``method='auto'`` runs a pilot of plain draws: when the event frequency
    exceeds 1e-3 and the budget is expected to yield comfortably more than
    ``min_accepted`` hits, draws are accepted by rejection; otherwise the summands
    are drawn under the conditional exponential tilt and self-normalized
    importance weights are attached.
    """
    if not 1 <= k <= n:
        raise ValueError("k must satisfy 1 <= k <= n")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    if method == "auto":
        pilot = mc.plain_tail(model, x, n, PILOT, seed=seed ^ 0x5EED)
        enough = pilot.value * replicates >= 4 * min_accepted
        method = "rejection" if pilot.value > REJECTION_FLOOR and enough else "tilted"
    tilted = method == "tilted"
    us, xs, lws = [], [], []
    for b in range(-(-replicates // mc.BLOCK)):
        count = min(mc.BLOCK, replicates - b * mc.BLOCK)
        u, xd, lw, hit = _block(model, x, n, k, count, mc.block_rng(seed, b), tilted)
        us.append(u[hit])
        xs.append(xd[hit])
        lws.append(lw[hit] if tilted else np.zeros(int(hit.sum())))
    u, xd, lw = np.concatenate(us), np.concatenate(xs), np.concatenate(lws)
    accepted = u.shape[0]
    if accepted < min_accepted:
        raise TooRare(f"only {accepted} accepted samples (need {min_accepted})")
    w = np.exp(lw - lw.max())
    w /= w.sum()
    ess = 1.0 / float(np.sum(w**2))
    return ConditionalSample(u, xd, w, accepted, ess, method, n, k, int(seed))


def _edges(limit: GibbsLimitLaw, bins: int) -> np.ndarray:
    upper = limit.U.upper
    if np.isfinite(upper):
        return np.linspace(0.0, upper, bins + 1)
    # unbounded losses: equal-mass bins of the tilted law, open last bin
    from scipy import optimize

    qs = []
    for j in range(1, bins):
        target = j / bins
        f = lambda t: float(limit.U.tilted_cdf(limit.theta, t)) - target
        hi = 1.0
        while f(hi) < 0:
            hi *= 2.0
        qs.append(optimize.brentq(f, 0.0, hi))
    return np.array([0.0, *qs, np.inf])


def tv_distance(sample: ConditionalSample, limit: GibbsLimitLaw, bins: int = 64, coord: int = 0) -> float:
    """Binned total variation between the weighted sample of (U, X) and the limit law.

    Cells are {X = 0, 1} x U-bins; the binned value is a lower bound of the
    true distance.
    """
    if bins < 1:
        raise ValueError("bins must be positive")
    edges = _edges(limit, bins)
    u = sample.u[:, coord]
    xd = sample.xdef[:, coord]
    idx = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, bins - 1)
    emp = np.zeros((2, bins))
    np.add.at(emp, (xd.astype(int), idx), sample.weights)
    return 0.5 * float(np.sum(np.abs(emp - limit.bin_masses(edges))))


def pair_correlation(sample: ConditionalSample) -> float:
    """Weighted correlation of U_1 X_1 and U_2 X_2 in a k >= 2 sample."""
    if sample.k < 2:
        raise ValueError("need k >= 2")
    y1 = sample.u[:, 0] * sample.xdef[:, 0]
    y2 = sample.u[:, 1] * sample.xdef[:, 1]
    w = sample.weights
    m1, m2 = np.sum(w * y1), np.sum(w * y2)
    c = np.sum(w * (y1 - m1) * (y2 - m2))
    v1, v2 = np.sum(w * (y1 - m1) ** 2), np.sum(w * (y2 - m2) ** 2)
    return float(c / math.sqrt(v1 * v2))
