"""Univariate laws with analytically known tails.

Every family exposes ``pdf``, ``logpdf``, ``cdf``, ``sf``, ``logcdf``, ``logsf``,
``quantile`` and ``sample``; the saddle machinery additionally reads the tail
parameters (``gamma``/``xi`` for generalized normals, ``alpha`` and the slowly
varying factor for regularly varying laws).

Arrays are accepted wherever a scalar is, and the return type follows numpy
broadcasting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import special

ArrayLike = Union[float, np.ndarray]


class UnsupportedForFamily(ValueError):
    """Requested quantity does not exist for this family (e.g. a point-mass density)."""


# ---------------------------------------------------------------------------
# slowly varying factors
# ---------------------------------------------------------------------------


class SlowVary:
    """A slowly varying function L with its log-derivative x L'(x) / L(x)."""

    def value(self, x: ArrayLike) -> ArrayLike:
        return np.exp(self.log_value(x))

    def log_value(self, x: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def log_slope(self, x: ArrayLike) -> ArrayLike:
        """Elasticity x L'(x) / L(x)."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(SlowVary):
    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("slowly varying constant must be positive")

    def log_value(self, x):
        return np.log(self.c) + 0.0 * np.asarray(x, dtype=float)

    def log_slope(self, x):
        return 0.0 * np.asarray(x, dtype=float)

    def to_dict(self):
        return {"form": "constant", "c": self.c}


@dataclass(frozen=True)
class LogPower(SlowVary):
    """c (log x)^p, meaningful for x > 1 (the tail onset must exceed 1)."""

    c: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("LogPower constant must be positive")

    def log_value(self, x):
        return np.log(self.c) + self.p * np.log(np.log(np.asarray(x, dtype=float)))

    def log_slope(self, x):
        return self.p / np.log(np.asarray(x, dtype=float))

    def to_dict(self):
        return {"form": "logpower", "c": self.c, "p": self.p}


@dataclass(frozen=True)
class Tabulated(SlowVary):
    """Piecewise log-log linear interpolation of user-supplied (x, L(x)) pairs.

    Beyond the last node the function is held constant, which keeps it
    slowly varying. The elasticity is the slope of the interpolant.
    """

    xs: tuple
    values: tuple

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        vs = np.asarray(self.values, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.size != vs.size:
            raise ValueError("tabulated slowly varying function needs >= 2 matching nodes")
        if np.any(np.diff(xs) <= 0) or np.any(xs <= 0) or np.any(vs <= 0):
            raise ValueError("tabulated nodes must be positive and strictly increasing")

    def _logs(self):
        return np.log(np.asarray(self.xs, float)), np.log(np.asarray(self.values, float))

    def log_value(self, x):
        lx, lv = self._logs()
        return np.interp(np.log(np.asarray(x, dtype=float)), lx, lv)

    def log_slope(self, x):
        lx, lv = self._logs()
        slopes = np.diff(lv) / np.diff(lx)
        idx = np.searchsorted(lx, np.log(np.asarray(x, dtype=float)), side="right") - 1
        inside = (idx >= 0) & (idx < slopes.size)
        return np.where(inside, slopes[np.clip(idx, 0, slopes.size - 1)], 0.0)

    def to_dict(self):
        return {"form": "tabulated", "xs": list(self.xs), "values": list(self.values)}


def slow_vary_from_dict(d: dict) -> SlowVary:
    form = d.get("form")
    if form == "constant":
        return Constant(float(d.get("c", 1.0)))
    if form == "logpower":
        return LogPower(float(d.get("c", 1.0)), float(d.get("p", 1.0)))
    if form == "tabulated":
        return Tabulated(tuple(d["xs"]), tuple(d["values"]))
    raise ValueError(f"unknown slowly varying form {form!r}")


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------


class TailFamily:
    """Base class; subclasses fill in the closed forms."""

    kind: str = ""

    def pdf(self, x: ArrayLike) -> ArrayLike:
        return np.exp(self.logpdf(x))

    def logpdf(self, x: ArrayLike) -> ArrayLike:
        raise UnsupportedForFamily(f"{self.kind} has no density")

    def cdf(self, x: ArrayLike) -> ArrayLike:
        raise UnsupportedForFamily(f"{self.kind} has no distribution function")

    def sf(self, x: ArrayLike) -> ArrayLike:
        return 1.0 - self.cdf(x)

    def logcdf(self, x: ArrayLike) -> ArrayLike:
        with np.errstate(divide="ignore"):
            return np.log(self.cdf(x))

    def logsf(self, x: ArrayLike) -> ArrayLike:
        with np.errstate(divide="ignore"):
            return np.log(self.sf(x))

    def quantile(self, u: ArrayLike) -> ArrayLike:
        raise UnsupportedForFamily(f"{self.kind} has no quantile function")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be non-negative")
        return np.asarray(self.quantile(rng.random(count)), dtype=float)

    @property
    def lower_endpoint(self) -> float:
        """Essential infimum of the support."""
        return -math.inf

    def to_dict(self) -> dict:
        raise NotImplementedError


def _as_float(x):
    arr = np.asarray(x, dtype=float)
    return arr


def _finish(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _log_upper_gamma(a: float, y: np.ndarray) -> np.ndarray:
    """log of the regularized upper incomplete gamma Q(a, y), stable for large y."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        direct = np.log(special.gammaincc(a, y))
    # asymptotic expansion once Q underflows or loses relative precision
    far = y > 600.0
    if np.any(far):
        yf = np.where(far, y, 700.0)
        series = 1.0 + (a - 1.0) / yf + (a - 1.0) * (a - 2.0) / yf**2 + (a - 1.0) * (a - 2.0) * (a - 3.0) / yf**3
        asym = (a - 1.0) * np.log(yf) - yf - special.gammaln(a) + np.log(series)
        direct = np.where(far, asym, direct)
    return direct


@dataclass(frozen=True)
class GeneralizedNormal(TailFamily):
    """Density beta exp(-xi |x|^gamma), gamma in (0, 2]."""

    gamma: float = 2.0
    xi: float = 0.5
    kind: str = field(default="gn", init=False)

    def __post_init__(self):
        if not (0.0 < self.gamma <= 2.0):
            raise ValueError("GN tail exponent gamma must lie in (0, 2]")
        if not self.xi > 0:
            raise ValueError("GN tail rate xi must be positive")

    @classmethod
    def standard_normal(cls) -> "GeneralizedNormal":
        return cls(2.0, 0.5)

    @property
    def beta(self) -> float:
        g = self.gamma
        return g * self.xi ** (1.0 / g) / (2.0 * math.gamma(1.0 / g))

    @property
    def variance(self) -> float:
        g = self.gamma
        return math.gamma(3.0 / g) / (math.gamma(1.0 / g) * self.xi ** (2.0 / g))

    def logpdf(self, x):
        xa = _as_float(x)
        return _finish(math.log(self.beta) - self.xi * np.abs(xa) ** self.gamma, x)

    def dlogpdf(self, x):
        xa = _as_float(x)
        return _finish(-self.gamma * self.xi * np.sign(xa) * np.abs(xa) ** (self.gamma - 1.0), x)

    def _half_upper(self, t):
        # P(W > t) for t >= 0
        return 0.5 * special.gammaincc(1.0 / self.gamma, self.xi * t**self.gamma)

    def cdf(self, x):
        xa = _as_float(x)
        upper = self._half_upper(np.abs(xa))
        return _finish(np.where(xa >= 0, 1.0 - upper, upper), x)

    def sf(self, x):
        return self.cdf(-_as_float(x)) if np.ndim(x) else float(self.cdf(-float(x)))

    def logsf(self, x):
        xa = _as_float(x)
        y = self.xi * np.abs(xa) ** self.gamma
        right = math.log(0.5) + _log_upper_gamma(1.0 / self.gamma, y)
        left = np.log1p(-np.exp(right))
        return _finish(np.where(xa >= 0, right, left), x)

    def logcdf(self, x):
        return self.logsf(-_as_float(x)) if np.ndim(x) else float(self.logsf(-float(x)))

    def quantile(self, u):
        ua = _as_float(u)
        a = 1.0 / self.gamma
        tail = np.minimum(ua, 1.0 - ua)
        mag = (special.gammainccinv(a, 2.0 * tail) / self.xi) ** a
        return _finish(np.where(ua >= 0.5, mag, -mag), u)

    def sample(self, rng, count):
        if count < 0:
            raise ValueError("count must be non-negative")
        g = rng.gamma(1.0 / self.gamma, 1.0, size=count)
        sign = np.where(rng.random(count) < 0.5, -1.0, 1.0)
        return sign * (g / self.xi) ** (1.0 / self.gamma)

    def to_dict(self):
        return {"kind": "gn", "gamma": self.gamma, "xi": self.xi}


class _RegularTail:
    """Shared helpers for tails of the form T(x) = L(x) x^{-alpha}."""

    alpha: float
    slow_vary: SlowVary

    def _log_tail(self, x):
        return self.slow_vary.log_value(x) - self.alpha * np.log(x)

    def _tail_hazard(self, x):
        # -d/dx log T(x)
        return (self.alpha - self.slow_vary.log_slope(x)) / x

    def _invert_tail(self, log_target, lo):
        """Solve log T(x) = log_target for x >= lo, vectorized bisection in log x."""
        log_target = np.asarray(log_target, dtype=float)
        if isinstance(self.slow_vary, Constant):
            return np.exp((math.log(self.slow_vary.c) - log_target) / self.alpha)
        a = np.full(log_target.shape, math.log(lo))
        b = a + 1.0
        for _ in range(200):
            grow = self._log_tail(np.exp(b)) > log_target
            if not np.any(grow):
                break
            b = np.where(grow, b + 2.0 * (b - a), b)
        for _ in range(200):
            m = 0.5 * (a + b)
            above = self._log_tail(np.exp(m)) > log_target
            a = np.where(above, m, a)
            b = np.where(above, b, m)
        return np.exp(0.5 * (a + b))


@dataclass(frozen=True)
class SymmetricRV(TailFamily, _RegularTail):
    """Random sign times a regularly varying magnitude.

    P(|W| > x) = L(x) x^{-alpha} for x >= x_m; the remaining mass sits
    uniformly on (-x_m, x_m) so pdf and cdf stay closed-form.
    """

    alpha: float = 2.0
    slow_vary: SlowVary = Constant(1.0)
    x_m: float = 1.0
    kind: str = field(default="srv", init=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("tail index alpha must be positive")
        if not self.x_m > 0:
            raise ValueError("tail onset x_m must be positive")
        if isinstance(self.slow_vary, LogPower) and self.x_m <= 1.0:
            raise ValueError("LogPower slowly varying factor needs x_m > 1")
        if self.onset_mass > 1.0 + 1e-12:
            raise ValueError("tail mass at x_m exceeds one")
        if float(self.alpha - self.slow_vary.log_slope(self.x_m)) <= 0:
            raise ValueError("tail is not decreasing at x_m")

    @property
    def onset_mass(self) -> float:
        """P(|W| >= x_m)."""
        return float(np.exp(self._log_tail(self.x_m)))

    def logpdf(self, x):
        xa = np.abs(_as_float(x))
        q = min(self.onset_mass, 1.0)
        xt = np.maximum(xa, self.x_m)
        tail = math.log(0.5) + self._log_tail(xt) + np.log(self._tail_hazard(xt))
        with np.errstate(divide="ignore"):
            core = np.log((1.0 - q) / (2.0 * self.x_m)) if q < 1.0 else -np.inf
        return _finish(np.where(xa >= self.x_m, tail, core), x)

    def dlogpdf(self, x):
        """d/dx log f; exact for Constant, numeric otherwise."""
        xa = _as_float(x)
        if isinstance(self.slow_vary, Constant):
            val = np.where(np.abs(xa) >= self.x_m, -(self.alpha + 1.0) / xa, 0.0)
            return _finish(val, x)
        h = 1e-6 * np.maximum(np.abs(xa), 1.0)
        return _finish((self.logpdf(xa + h) - self.logpdf(xa - h)) / (2 * h), x)

    def cdf(self, x):
        xa = _as_float(x)
        q = min(self.onset_mass, 1.0)
        xt = np.maximum(np.abs(xa), self.x_m)
        half_tail = 0.5 * np.exp(self._log_tail(xt))
        core = 0.5 + (1.0 - q) * xa / (2.0 * self.x_m)
        out = np.where(xa <= -self.x_m, half_tail, np.where(xa >= self.x_m, 1.0 - half_tail, core))
        return _finish(out, x)

    def sf(self, x):
        return self.cdf(-_as_float(x)) if np.ndim(x) else float(self.cdf(-float(x)))

    def logcdf(self, x):
        xa = _as_float(x)
        xt = np.maximum(-xa, self.x_m)
        with np.errstate(divide="ignore"):
            body = np.log(self.cdf(xa))
        return _finish(np.where(xa <= -self.x_m, math.log(0.5) + self._log_tail(xt), body), x)

    def logsf(self, x):
        return self.logcdf(-_as_float(x)) if np.ndim(x) else float(self.logcdf(-float(x)))

    def quantile(self, u):
        ua = _as_float(u)
        q = min(self.onset_mass, 1.0)
        tail = np.minimum(ua, 1.0 - ua)
        with np.errstate(divide="ignore"):
            mag = self._invert_tail(np.log(2.0 * np.maximum(tail, 1e-300)), self.x_m)
        mag = np.where(2.0 * tail <= q, np.maximum(mag, self.x_m), 0.0)
        core = (ua - 0.5) * 2.0 * self.x_m / (1.0 - q) if q < 1.0 else 0.0 * ua
        out = np.where(ua < q / 2, -mag, np.where(ua > 1.0 - q / 2, mag, core))
        return _finish(out, u)

    def left_tail_constant(self) -> SlowVary:
        """Slowly varying factor of P(W <= -w) = L_left(w) w^{-alpha}."""
        sv = self.slow_vary
        if isinstance(sv, Constant):
            return Constant(0.5 * sv.c)
        if isinstance(sv, LogPower):
            return LogPower(0.5 * sv.c, sv.p)
        return Tabulated(sv.xs, tuple(0.5 * np.asarray(sv.values)))

    def to_dict(self):
        return {"kind": "srv", "alpha": self.alpha, "x_m": self.x_m, "slow_vary": self.slow_vary.to_dict()}


@dataclass(frozen=True)
class LowerBoundedRV(TailFamily, _RegularTail):
    """Regularly varying law on [z0, inf): P(Z > x) = (L(x)/L(z0)) (x/z0)^{-alpha}."""

    alpha: float = 2.0
    slow_vary: SlowVary = Constant(1.0)
    z0: float = 1.0
    kind: str = field(default="lbrv", init=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("tail index alpha must be positive")
        if not self.z0 > 0:
            raise ValueError("left endpoint z0 must be positive")
        if isinstance(self.slow_vary, LogPower) and self.z0 <= 1.0:
            raise ValueError("LogPower slowly varying factor needs z0 > 1")
        if float(self.alpha - self.slow_vary.log_slope(self.z0)) <= 0:
            raise ValueError("tail is not decreasing at z0")

    @property
    def lower_endpoint(self) -> float:
        return self.z0

    def _log_sf_tail(self, x):
        return self._log_tail(x) - self._log_tail(self.z0)

    def logpdf(self, x):
        xa = _as_float(x)
        xt = np.maximum(xa, self.z0)
        val = self._log_sf_tail(xt) + np.log(self._tail_hazard(xt))
        return _finish(np.where(xa >= self.z0, val, -np.inf), x)

    def cdf(self, x):
        xa = _as_float(x)
        xt = np.maximum(xa, self.z0)
        return _finish(np.where(xa >= self.z0, -np.expm1(self._log_sf_tail(xt)), 0.0), x)

    def sf(self, x):
        xa = _as_float(x)
        xt = np.maximum(xa, self.z0)
        return _finish(np.where(xa >= self.z0, np.exp(self._log_sf_tail(xt)), 1.0), x)

    def quantile(self, u):
        ua = _as_float(u)
        with np.errstate(divide="ignore"):
            target = np.log1p(-np.minimum(ua, 1.0 - 1e-300)) + self._log_tail(self.z0)
        return _finish(np.maximum(self._invert_tail(target, self.z0), self.z0), u)

    def to_dict(self):
        return {"kind": "lbrv", "alpha": self.alpha, "z0": self.z0, "slow_vary": self.slow_vary.to_dict()}


@dataclass(frozen=True)
class PointMass(TailFamily):
    kappa: float = 0.0
    kind: str = field(default="point", init=False)

    @property
    def lower_endpoint(self) -> float:
        return self.kappa

    def cdf(self, x):
        xa = _as_float(x)
        return _finish(np.where(xa >= self.kappa, 1.0, 0.0), x)

    def quantile(self, u):
        ua = _as_float(u)
        return _finish(np.full(ua.shape, float(self.kappa)), u)

    def sample(self, rng, count):
        if count < 0:
            raise ValueError("count must be non-negative")
        return np.full(count, float(self.kappa))

    def to_dict(self):
        return {"kind": "point", "kappa": self.kappa}


@dataclass(frozen=True)
class LogSmooth(TailFamily):
    """Tail-only description c(t) exp(-Q(t)) beyond an onset.

    ``side='right'`` describes a survival function P(W > t) = c(t) e^{-Q(t)};
    ``side='left'`` describes a left-tail density f(-w) = c(w) e^{-Q(w)}.
    Quantities outside the described tail raise ``UnsupportedForFamily``.
    When ``c`` is omitted on the right side it defaults to 1/Q'.
    """

    Q: Callable[[float], float] = None
    c: Optional[Callable[[float], float]] = None
    side: str = "right"
    onset: float = 1.0
    dQ: Optional[Callable[[float], float]] = None
    spec: Optional[dict] = None
    kind: str = field(default="logsmooth", init=False)

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if self.Q is None:
            raise ValueError("log-smooth tail needs an exponent function Q")

    def exponent_slope(self, t: float) -> float:
        if self.dQ is not None:
            return float(self.dQ(t))
        h = 1e-5 * max(abs(t), 1.0)
        return (self.Q(t + h) - self.Q(t - h)) / (2 * h)

    def exponent_curvature(self, t: float) -> float:
        h = 1e-4 * max(abs(t), 1.0)
        return (self.exponent_slope(t + h) - self.exponent_slope(t - h)) / (2 * h)

    def log_prefactor(self, t: float) -> float:
        if self.c is not None:
            return math.log(self.c(t))
        return -math.log(self.exponent_slope(t))

    def tail_log_density(self, t: float) -> float:
        """log f at the tail coordinate t (t -> +inf on the described side)."""
        if t < self.onset:
            raise UnsupportedForFamily("point lies outside the described tail")
        if self.side == "left":
            return self.log_prefactor(t) - self.Q(t)
        # f = -d/dt [c e^{-Q}] with c = 1/Q' gives e^{-Q} (1 + Q''/Q'^2)
        if self.c is None:
            q1 = self.exponent_slope(t)
            return -self.Q(t) + math.log1p(self.exponent_curvature(t) / q1**2)
        h = 1e-5 * max(abs(t), 1.0)
        lc = (math.log(self.c(t + h)) - math.log(self.c(t - h))) / (2 * h)
        return self.log_prefactor(t) - self.Q(t) + math.log(self.exponent_slope(t) - lc)

    def logpdf(self, x):
        if np.ndim(x):
            return np.array([self.logpdf(float(v)) for v in np.ravel(x)]).reshape(np.shape(x))
        t = -float(x) if self.side == "left" else float(x)
        return self.tail_log_density(t)

    def logsf(self, x):
        if self.side != "right":
            raise UnsupportedForFamily("left log-smooth tail only specifies a density")
        t = float(x)
        if t < self.onset:
            raise UnsupportedForFamily("point lies outside the described tail")
        return self.log_prefactor(t) - self.Q(t)

    def sample(self, rng, count):
        raise UnsupportedForFamily("tail-only log-smooth law cannot be sampled")

    def to_dict(self):
        if self.spec is None:
            raise UnsupportedForFamily("log-smooth tail built from callables is not serializable")
        return dict(self.spec)


def weibull_tail(xi: float, m: float, side: str = "right", c: float = 1.0, onset: float = 1.0) -> LogSmooth:
    """Weibull-type exponent Q(t) = xi t^m, with constant prefactor on the left."""
    spec = {"kind": "logsmooth", "form": "weibull", "xi": xi, "m": m, "side": side, "c": c, "onset": onset}
    Q = lambda t: xi * t**m
    dQ = lambda t: xi * m * t ** (m - 1.0)
    if side == "left":
        return LogSmooth(Q=Q, c=lambda t: c, side=side, onset=onset, dQ=dQ, spec=spec)
    return LogSmooth(Q=Q, c=None, side=side, onset=onset, dQ=dQ, spec=spec)


def gn_log_smooth(fam: GeneralizedNormal, side: str) -> LogSmooth:
    """Express a generalized-normal tail in log-smooth form.

    Right side (noise survival): Q(t) = xi t^gamma - log beta with c = 1/Q'.
    Left side (factor density): Q(w) = xi w^gamma with constant c = beta.
    """
    g, xi, beta = fam.gamma, fam.xi, fam.beta
    dQ = lambda t: g * xi * t ** (g - 1.0)
    if side == "right":
        return LogSmooth(Q=lambda t: xi * t**g - math.log(beta), c=None, side="right", onset=1.0, dQ=dQ)
    return LogSmooth(Q=lambda w: xi * w**g, c=lambda w: beta, side="left", onset=1e-8, dQ=dQ)


def from_dict(d: dict) -> TailFamily:
    """Build a family from its structured-text form, rejecting unknown fields."""
    d = dict(d)
    kind = d.pop("kind", None)
    allowed = {
        "gn": {"gamma", "xi"},
        "srv": {"alpha", "x_m", "slow_vary"},
        "lbrv": {"alpha", "z0", "slow_vary"},
        "point": {"kappa"},
        "logsmooth": {"form", "xi", "m", "side", "c", "onset"},
    }
    if kind not in allowed:
        raise ValueError(f"unknown distribution kind {kind!r}")
    extra = set(d) - allowed[kind]
    if extra:
        raise ValueError(f"unknown fields for {kind}: {sorted(extra)}")
    if kind == "gn":
        return GeneralizedNormal(float(d.get("gamma", 2.0)), float(d.get("xi", 0.5)))
    if kind == "point":
        return PointMass(float(d.get("kappa", 0.0)))
    if kind == "logsmooth":
        if d.get("form", "weibull") != "weibull":
            raise ValueError("only the 'weibull' log-smooth form is serializable")
        return weibull_tail(float(d["xi"]), float(d["m"]), d.get("side", "right"),
                            float(d.get("c", 1.0)), float(d.get("onset", 1.0)))
    sv = slow_vary_from_dict(d.get("slow_vary", {"form": "constant", "c": 1.0}))
    if kind == "srv":
        return SymmetricRV(float(d["alpha"]), sv, float(d.get("x_m", 1.0)))
    return LowerBoundedRV(float(d["alpha"]), sv, float(d.get("z0", 1.0)))


def pdf(fam: TailFamily, x: ArrayLike) -> ArrayLike:
    return fam.pdf(x)


def cdf(fam: TailFamily, x: ArrayLike) -> ArrayLike:
    return fam.cdf(x)


def sample(fam: TailFamily, rng: np.random.Generator, count: int) -> np.ndarray:
    return fam.sample(rng, count)
