"""Threshold factor portfolio model.

Obligor i defaults when Z + b * eps_i <= v, where Z is the aggregate common
factor and eps_i is idiosyncratic noise; the portfolio loss is the sum of the
losses U_i over defaulted obligors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import dist
from .dist import TailFamily

SCHEMA = "sharpld.model/1"


class DomainError(ValueError):
    """Tilt parameter outside the domain of the moment generating function."""


# ---------------------------------------------------------------------------
# loss-given-default laws
# ---------------------------------------------------------------------------


class LossLaw:
    """Nonnegative loss law with closed-form cumulant generating function.

    ``log_mgf``, ``dlog_mgf`` and ``d2log_mgf`` are the cumulant generating
    function and its first two derivatives; the raw moment generating function
    and its derivatives are derived from them.
    """

    kind: str = ""
    theta_max: float = math.inf  # supremum of the mgf domain
    upper: float = math.inf  # essential supremum
    bounded: bool = False

    @property
    def mean(self) -> float:
        return float(self.dlog_mgf(0.0))

    @property
    def var(self) -> float:
        return float(self.d2log_mgf(0.0))

    def _check(self, theta):
        if np.any(np.asarray(theta) >= self.theta_max):
            raise DomainError(f"theta must be below {self.theta_max}")

    def mgf(self, theta):
        return np.exp(self.log_mgf(theta))

    def dmgf(self, theta):
        return self.mgf(theta) * self.dlog_mgf(theta)

    def d2mgf(self, theta):
        return self.mgf(theta) * (self.d2log_mgf(theta) + self.dlog_mgf(theta) ** 2)

    def log_mgf(self, theta):
        raise NotImplementedError

    def dlog_mgf(self, theta):
        raise NotImplementedError

    def d2log_mgf(self, theta):
        raise NotImplementedError

    def cdf(self, u):
        return self.tilted_cdf(0.0, u)

    def tilted_cdf(self, theta: float, u):
        raise NotImplementedError

    def tilted_sample(self, rng: np.random.Generator, theta: float, count: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.tilted_sample(rng, 0.0, count)

    def tilted_sample_array(self, rng: np.random.Generator, thetas: np.ndarray) -> np.ndarray:
        """One draw per entry of ``thetas``, each from the tilt at that theta."""
        thetas = np.asarray(thetas, dtype=float)
        out = np.empty(thetas.shape)
        values, inverse = np.unique(thetas, return_inverse=True)
        for k, th in enumerate(values):
            idx = np.flatnonzero(inverse == k)
            out[idx] = self.tilted_sample(rng, float(th), idx.size)
        return out

    def to_dict(self) -> dict:
        raise NotImplementedError


def _bernoulli(m: int) -> Fraction:
    """Exact Bernoulli number B_m by the Akiyama-Tanigawa recursion."""
    a = [Fraction(0)] * (m + 1)
    for i in range(m + 1):
        a[i] = Fraction(1, i + 1)
        for j in range(i, 0, -1):
            a[j - 1] = j * (a[j - 1] - a[j])
    return a[0]


# log((e^t - 1)/t) - t/2 = sum_k B_2k t^2k / (2k (2k)!), convergent for |t| < 2 pi
_K2 = np.arange(1, 16) * 2.0
_COEF = np.array([float(_bernoulli(int(k)) / (int(k) * math.factorial(int(k)))) for k in _K2])


def _even_series(t, order: int):
    """order-th derivative of the even part of the uniform cumulant series."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for c, k in zip(_COEF[::-1], _K2[::-1]):
        fall = np.prod(k - np.arange(order)) if order else 1.0
        out = out + c * fall * t ** (k - order)
    return out


@dataclass(frozen=True)
class Uniform01(LossLaw):
    kind: str = field(default="uniform01", init=False)
    upper: float = field(default=1.0, init=False)
    bounded: bool = field(default=True, init=False)

    def log_mgf(self, theta):
        t = np.asarray(theta, dtype=float)
        small = np.abs(t) < 1.0
        ts = np.where(small, 1.0, t)
        a = np.abs(ts)
        # log((e^t - 1)/t) = max(t, 0) + log((1 - e^-|t|)/|t|)
        general = np.maximum(ts, 0.0) + np.log(-np.expm1(-a)) - np.log(a)
        series = t / 2 + _even_series(t, 0)
        out = np.where(small, series, general)
        return float(out) if np.ndim(theta) == 0 else out

    def dlog_mgf(self, theta):
        t = np.asarray(theta, dtype=float)
        small = np.abs(t) < 1.0
        ts = np.where(small, 1.0, t)
        general = -1.0 / np.expm1(-ts) - 1.0 / ts
        series = 0.5 + _even_series(t, 1)
        out = np.where(small, series, general)
        return float(out) if np.ndim(theta) == 0 else out

    def d2log_mgf(self, theta):
        t = np.asarray(theta, dtype=float)
        small = np.abs(t) < 1.0
        ts = np.abs(np.where(small, 1.0, t))
        e = np.exp(-ts)
        general = 1.0 / ts**2 - e / (-np.expm1(-ts)) ** 2
        series = _even_series(t, 2)
        out = np.where(small, series, general)
        return float(out) if np.ndim(theta) == 0 else out

    def mgf(self, theta):
        t = np.asarray(theta, dtype=float)
        small = np.abs(t) < 1e-4
        out = np.where(small, 1 + t / 2 + t**2 / 6 + t**3 / 24, np.exp(self.log_mgf(np.where(small, 1.0, t))))
        return float(out) if np.ndim(theta) == 0 else out

    def tilted_cdf(self, theta, u):
        ua = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        if abs(theta) < 1e-12:
            out = ua
        elif theta > 0:
            out = np.exp(theta * (ua - 1.0)) * np.expm1(-theta * ua) / np.expm1(-theta)
        else:
            out = np.expm1(theta * ua) / np.expm1(theta)
        return float(out) if np.ndim(u) == 0 else out

    def tilted_quantile(self, theta, w):
        wa = np.asarray(w, dtype=float)
        if abs(theta) < 1e-12:
            return wa
        if theta > 0:
            return 1.0 + np.log(wa + (1.0 - wa) * math.exp(-theta)) / theta
        return np.log1p(wa * math.expm1(theta)) / theta

    def tilted_sample(self, rng, theta, count):
        return self.tilted_quantile(theta, rng.random(count))

    def tilted_sample_array(self, rng, thetas):
        th = np.asarray(thetas, dtype=float)
        w = rng.random(th.shape)
        out = w.copy()
        pos = th > 1e-12
        neg = th < -1e-12
        if np.all(pos):
            return 1.0 + np.log(w + (1.0 - w) * np.exp(-th)) / th
        tp, tn = th[pos], th[neg]
        out[pos] = 1.0 + np.log(w[pos] + (1.0 - w[pos]) * np.exp(-tp)) / tp
        out[neg] = np.log1p(w[neg] * np.expm1(tn)) / tn
        return out

    def to_dict(self):
        return {"kind": "uniform01"}


@dataclass(frozen=True)
class BoundedGrid(LossLaw):
    values: tuple = (1.0,)
    probs: tuple = (1.0,)
    kind: str = field(default="grid", init=False)
    bounded: bool = field(default=True, init=False)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        p = np.asarray(self.probs, float)
        if v.shape != p.shape or v.ndim != 1 or v.size == 0:
            raise ValueError("grid values and probabilities must be matching vectors")
        if np.any(v < 0) or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("grid law needs nonnegative values and positive probabilities summing to 1")
        object.__setattr__(self, "upper", float(v.max()))

    @property
    def _v(self):
        return np.asarray(self.values, float)

    @property
    def _lp(self):
        return np.log(np.asarray(self.probs, float))

    def _weights(self, theta):
        a = self._lp + theta * self._v
        return np.exp(a - special.logsumexp(a))

    def log_mgf(self, theta):
        if np.ndim(theta):
            return np.array([self.log_mgf(float(t)) for t in np.ravel(theta)]).reshape(np.shape(theta))
        return float(special.logsumexp(self._lp + theta * self._v))

    def dlog_mgf(self, theta):
        if np.ndim(theta):
            return np.array([self.dlog_mgf(float(t)) for t in np.ravel(theta)]).reshape(np.shape(theta))
        return float(self._weights(theta) @ self._v)

    def d2log_mgf(self, theta):
        if np.ndim(theta):
            return np.array([self.d2log_mgf(float(t)) for t in np.ravel(theta)]).reshape(np.shape(theta))
        w = self._weights(theta)
        m = w @ self._v
        return float(w @ (self._v - m) ** 2)

    def tilted_cdf(self, theta, u):
        ua = np.asarray(u, dtype=float)
        w = self._weights(theta)
        order = np.argsort(self._v)
        cum = np.cumsum(w[order])
        idx = np.searchsorted(self._v[order], ua, side="right")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(u) == 0 else out

    def tilted_sample(self, rng, theta, count):
        return rng.choice(self._v, size=count, p=self._weights(theta))

    def to_dict(self):
        return {"kind": "grid", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class Exponential(LossLaw):
    rate: float = 1.0
    kind: str = field(default="exponential", init=False)

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be positive")
        object.__setattr__(self, "theta_max", float(self.rate))

    def log_mgf(self, theta):
        self._check(theta)
        return math.log(self.rate) - np.log(self.rate - np.asarray(theta, float)) + 0.0

    def dlog_mgf(self, theta):
        self._check(theta)
        return 1.0 / (self.rate - np.asarray(theta, float)) + 0.0

    def d2log_mgf(self, theta):
        self._check(theta)
        return 1.0 / (self.rate - np.asarray(theta, float)) ** 2 + 0.0

    def tilted_cdf(self, theta, u):
        ua = np.maximum(np.asarray(u, dtype=float), 0.0)
        out = -np.expm1(-(self.rate - theta) * ua)
        return float(out) if np.ndim(u) == 0 else out

    def tilted_sample(self, rng, theta, count):
        self._check(theta)
        return rng.exponential(1.0 / (self.rate - theta), size=count)

    def tilted_sample_array(self, rng, thetas):
        self._check(thetas)
        return rng.exponential(1.0, size=np.shape(thetas)) / (self.rate - np.asarray(thetas, float))

    def to_dict(self):
        return {"kind": "exponential", "rate": self.rate}


def loss_from_dict(d: dict) -> LossLaw:
    d = dict(d)
    kind = d.pop("kind", None)
    allowed = {"uniform01": set(), "grid": {"values", "probs"}, "exponential": {"rate"}}
    if kind not in allowed:
        raise ValueError(f"unknown loss law kind {kind!r}")
    extra = set(d) - allowed[kind]
    if extra:
        raise ValueError(f"unknown fields for {kind}: {sorted(extra)}")
    if kind == "uniform01":
        return Uniform01()
    if kind == "grid":
        return BoundedGrid(tuple(float(v) for v in d["values"]), tuple(float(p) for p in d["probs"]))
    return Exponential(float(d["rate"]))


# ---------------------------------------------------------------------------
# portfolio model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PortfolioModel:
    """Factor model parameters.

    ``Z`` is the law of the aggregate factor sum_j a_j Z_j itself; ``weights``
    are kept for the normalization check and the multi-factor RV constant.
    When ``weights`` is empty the factor loading is implied by 1 - b^2.
    The idiosyncratic weight is held at its limit ``b`` for every n.
    """

    Z: TailFamily
    eps: TailFamily
    U: LossLaw
    b: float = 0.5
    v: float = 0.0
    n: int = 100
    weights: tuple = ()

    @property
    def b_limit(self) -> float:
        return self.b

    def b_at(self, n: int) -> float:
        return self.b

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "n": self.n,
            "v": self.v,
            "b": self.b,
            "weights": list(self.weights),
            "Z": self.Z.to_dict(),
            "eps": self.eps.to_dict(),
            "U": self.U.to_dict(),
        }


MODEL_FIELDS = {"schema", "n", "v", "b", "weights", "Z", "eps", "U", "risk"}


def model_from_dict(d: dict) -> PortfolioModel:
    """Parse a model document; the schema tag is required and unknown fields are rejected."""
    if not isinstance(d, dict):
        raise ValueError("model document must be an object")
    if d.get("schema") != SCHEMA:
        raise ValueError(f"field 'schema': expected {SCHEMA!r}, got {d.get('schema')!r}")
    extra = set(d) - MODEL_FIELDS
    if extra:
        raise ValueError(f"unknown model fields: {sorted(extra)}")
    for key in ("Z", "eps", "U", "b"):
        if key not in d:
            raise ValueError(f"field {key!r} is required")
    try:
        Z = dist.from_dict(d["Z"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"field 'Z': {exc}") from exc
    try:
        eps = dist.from_dict(d["eps"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"field 'eps': {exc}") from exc
    try:
        U = loss_from_dict(d["U"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"field 'U': {exc}") from exc
    try:
        b = float(d["b"])
        v = float(d.get("v", 0.0))
        n = int(d.get("n", 100))
        weights = tuple(float(a) for a in d.get("weights", ()))
    except (TypeError, ValueError) as exc:
        raise ValueError(f"numeric field malformed: {exc}") from exc
    return PortfolioModel(Z=Z, eps=eps, U=U, b=b, v=v, n=n, weights=weights)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(model: PortfolioModel, tol: float = 1e-5) -> ValidationReport:
    """Check the normalization and parameter ranges.

    The weights must satisfy sum a_j^2 + b^2 = 1; deviations up to ``tol``
    are accepted with a note that the weights can be renormalized.
    """
    rep = ValidationReport()
    if not (0.0 < model.b < 1.0):
        rep.violations.append(f"b={model.b} must lie in (0, 1)")
    if model.n < 1:
        rep.violations.append("n must be at least 1")
    if model.weights:
        w = np.asarray(model.weights, float)
        if np.any(w < 0) or np.any(w >= 1):
            rep.violations.append("weights must lie in [0, 1)")
        total = float(w @ w) + model.b**2
        gap = abs(total - 1.0)
        if gap > tol:
            rep.violations.append(f"normalization: sum a^2 + b^2 = {total!r} != 1")
        elif gap > 1e-12:
            rep.notes.append(f"normalization off by {gap:.3g}; weights renormalizable")
    if isinstance(model.eps, (dist.PointMass, dist.LogSmooth)):
        rep.violations.append("noise law needs a density and a distribution function")
    if isinstance(model.Z, dist.LowerBoundedRV) and not np.isfinite(model.Z.logpdf(model.Z.z0)):
        rep.violations.append("factor density vanishes at its left endpoint")
    return rep


def effective_rv_constant(weights: Sequence[float], alpha_Z: float, c_Z: float) -> float:
    """Tail constant of sum_j a_j Z_j for i.i.d. symmetric RV factors."""
    if not alpha_Z > 0:
        raise ValueError("alpha_Z must be positive")
    return float(c_Z * np.sum(np.abs(np.asarray(weights, float)) ** alpha_Z))


def default_prob(model: PortfolioModel, z):
    """Conditional default probability F_eps((v - z)/b)."""
    return model.eps.cdf((model.v - np.asarray(z, float)) / model.b) if np.ndim(z) else float(
        model.eps.cdf((model.v - z) / model.b))


def log_default_probs(model: PortfolioModel, z: float) -> tuple[float, float]:
    """(log p(z), log(1 - p(z))) without cancellation."""
    t = (model.v - z) / model.b
    return float(model.eps.logcdf(t)), float(model.eps.logsf(t))


def simulate_loss(model: PortfolioModel, rng: np.random.Generator, n: Optional[int] = None):
    """One exact draw of (L_n, Z, number of defaults) obligor by obligor."""
    n = model.n if n is None else n
    z = float(model.Z.sample(rng, 1)[0])
    eps = model.eps.sample(rng, n)
    x = (z + model.b * eps) <= model.v
    u = model.U.sample(rng, n)
    return float(np.sum(u[x])), z, int(np.sum(x))


def simulate_batch(model: PortfolioModel, rng: np.random.Generator, count: int, n: Optional[int] = None):
    """``count`` independent draws of (L_n, Z, defaults).

    Given Z the default count is Binomial(n, p(Z)) and the loss is the sum of
    that many independent copies of U, which has the same law as the
    obligor-level construction.
    """
    n = model.n if n is None else n
    z = model.Z.sample(rng, count)
    p = np.clip(default_prob(model, z), 0.0, 1.0)
    d = rng.binomial(n, p)
    losses = np.zeros(count)
    total = int(d.sum())
    if total:
        u = model.U.sample(rng, total)
        owner = np.repeat(np.arange(count), d)
        losses = np.bincount(owner, weights=u, minlength=count)
    return losses, z, d
