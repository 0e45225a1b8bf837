"""Monte Carlo and exact oracles for the portfolio tail.

Randomness is counter based: replicates are cut into fixed blocks and block
``k`` draws from a Philox stream keyed by (seed, k). Block summaries are
merged by a pairwise tree in block order, so the result does not depend on
how many workers evaluated the blocks.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import cgfcore
from .dist import PointMass
from .model import BoundedGrid, LossLaw, PortfolioModel, default_prob, simulate_batch

BLOCK = 4096
DEFAULT_SEED = 20240917


class Method(str, enum.Enum):
    PLAIN = "Plain"
    TILTED_IS = "TiltedIS"
    CONVOLUTION = "Convolution"


class Unsupported(ValueError):
    """The oracle does not apply to this loss law."""


@dataclass(frozen=True)
class MCEstimate:
    value: float
    std_error: float
    replicates: int
    seed: int
    method: Method
    hits: int = 0

    @property
    def band(self) -> tuple[float, float]:
        return self.value - 3.0 * self.std_error, self.value + 3.0 * self.std_error

    def row(self, n: int, x: float) -> dict:
        return {"method": self.method.value, "n": n, "x": x, "value": self.value,
                "std_error": self.std_error, "replicates": self.replicates, "seed": self.seed}


# ---------------------------------------------------------------------------
# counter-based blocks and deterministic reduction
# ---------------------------------------------------------------------------


def block_rng(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class _Moments:
    count: int
    mean: float
    m2: float
    hits: int


def _merge(a: _Moments, b: _Moments) -> _Moments:
    n = a.count + b.count
    if n == 0:
        return a
    d = b.mean - a.mean
    mean = a.mean + d * b.count / n
    m2 = a.m2 + b.m2 + d * d * a.count * b.count / n
    return _Moments(n, mean, m2, a.hits + b.hits)


def _tree_reduce(parts: list) -> _Moments:
    while len(parts) > 1:
        parts = [_merge(parts[i], parts[i + 1]) if i + 1 < len(parts) else parts[i]
                 for i in range(0, len(parts), 2)]
    return parts[0]


def _summarize(y: np.ndarray) -> _Moments:
    if y.size == 0:
        return _Moments(0, 0.0, 0.0, 0)
    mean = float(np.mean(y))
    return _Moments(int(y.size), mean, float(np.sum((y - mean) ** 2)), int(np.count_nonzero(y)))


def _factor_draws(model: PortfolioModel, rng: np.random.Generator, start: int, stop: int,
                  total: int, strata: int) -> np.ndarray:
    count = stop - start
    if isinstance(model.Z, PointMass):
        return np.full(count, float(model.Z.kappa))
    if strata > 1:
        idx = np.arange(start, stop)
        j = idx * strata // total
        u = (j + rng.random(count)) / strata
        return np.asarray(model.Z.quantile(u), dtype=float)
    return model.Z.sample(rng, count)


def _plain_block(model, x, n, seed, block, start, stop, total, strata):
    rng = block_rng(seed, block)
    losses, _, _ = simulate_batch(model, rng, stop - start, n)
    return _summarize((losses >= n * x).astype(float))


def conditional_log_mgf(model: PortfolioModel, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorized Lambda(theta; z) = log(p lambda_U(theta) + 1 - p)."""
    t = (model.v - np.asarray(z, float)) / model.b
    lp = np.asarray(model.eps.logcdf(t), float)
    lq = np.asarray(model.eps.logsf(t), float)
    return np.logaddexp(lp + np.asarray(model.U.log_mgf(theta), float), lq)


def _tilt_table(model: PortfolioModel, x: float, z: np.ndarray) -> np.ndarray:
    """Tilt parameter per replicate: exact at grid nodes, linear in between.

    Any theta gives an unbiased estimator because the weight uses the theta
    actually applied; the grid only trades optimality for speed.
    """

    def solve(zz):
        try:
            sol = cgfcore.tilt_conditional(model, x, float(zz))
        except cgfcore.NoRoot:
            return 0.0
        return max(sol.theta, 0.0)

    lo, hi = float(np.min(z)), float(np.max(z))
    if hi - lo < 1e-12:
        return np.full(z.shape, solve(lo))
    nodes = np.linspace(lo, hi, 129)
    th = np.array([solve(zz) for zz in nodes])
    # beyond the loss supremum no tilt exists; cap at the largest solved value
    return np.interp(z, nodes, th)


def _tilted_block(model, x, n, seed, block, start, stop, total, strata):
    rng = block_rng(seed, block)
    count = stop - start
    z = _factor_draws(model, rng, start, stop, total, strata)
    theta = _tilt_table(model, x, z)
    lam = conditional_log_mgf(model, theta, z)
    t = (model.v - z) / model.b
    log_p = np.asarray(model.eps.logcdf(t), float)
    p_tilt = np.clip(np.exp(log_p + np.asarray(model.U.log_mgf(theta), float) - lam), 0.0, 1.0)
    d = rng.binomial(n, p_tilt)
    s = np.zeros(count)
    total_d = int(d.sum())
    if total_d:
        owner = np.repeat(np.arange(count), d)
        u = model.U.tilted_sample_array(rng, theta[owner])
        s = np.bincount(owner, weights=u, minlength=count)
    hit = s >= n * x
    y = np.where(hit, np.exp(-theta * s + n * lam), 0.0)
    return _summarize(y)


def _run(kind, model, x, n, replicates, seed, workers, strata) -> _Moments:
    blocks = [(b, b * BLOCK, min((b + 1) * BLOCK, replicates)) for b in range(-(-replicates // BLOCK))]
    fn = _plain_block if kind == "plain" else _tilted_block
    args = [(model, x, n, seed, b, a, c, replicates, strata) for b, a, c in blocks]
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, *zip(*args)))
    else:
        parts = [fn(*a) for a in args]
    return _tree_reduce(parts)


def _finish(m: _Moments, seed: int, method: Method) -> MCEstimate:
    var = m.m2 / (m.count - 1) if m.count > 1 else 0.0
    return MCEstimate(m.mean, math.sqrt(var / m.count), m.count, int(seed), method, m.hits)


def _check_reps(replicates: int):
    if not isinstance(replicates, (int, np.integer)) or replicates < 1:
        raise ValueError("replicates must be a positive integer")


def plain_tail(model: PortfolioModel, x: float, n: int, replicates: int, seed: int = DEFAULT_SEED,
               workers: int = 1) -> MCEstimate:
    """Fraction of simulated portfolios with L_n >= n x."""
    _check_reps(replicates)
    return _finish(_run("plain", model, x, n, replicates, seed, workers, 0), seed, Method.PLAIN)


def tilted_is_tail(model: PortfolioModel, x: float, n: int, replicates: int, seed: int = DEFAULT_SEED,
                   workers: int = 1, strata: int = 0) -> MCEstimate:
    """Conditional exponential-tilt importance sampling.

    The factor is drawn from its own law (optionally stratified); given z the
    summands are drawn from the tilt of the conditional law of U X at the
    conditional large-deviation tilt, and the indicator is weighted by
    exp(-theta S + n Lambda(theta; z)).
    """
    _check_reps(replicates)
    if not x > model.U.mean * 0.0:
        raise ValueError("x must be positive")
    return _finish(_run("tilted", model, x, n, replicates, seed, workers, strata), seed, Method.TILTED_IS)


# ---------------------------------------------------------------------------
# exact conditional oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvolutionTail:
    """Conditional tail of the n-fold convolution on a lattice of step h.

    ``lower`` and ``upper`` put each cell's mass at its left and right end and
    bracket the exact tail; ``value`` uses cell midpoints.
    """

    value: float
    lower: float
    upper: float
    step: float
    n: int
    p: float

    def as_estimate(self) -> MCEstimate:
        return MCEstimate(self.value, 0.0, 0, 0, Method.CONVOLUTION)


def _lattice(U: LossLaw, p: float, h: float, where: str) -> np.ndarray:
    """pmf of U X on the lattice h Z_{>=0}; the zero atom is exact."""
    if isinstance(U, BoundedGrid):
        pos = np.asarray(U.values, float) / h
        if where == "lower":
            k = np.floor(pos + 1e-9)
        elif where == "upper":
            k = np.ceil(pos - 1e-9)
        else:
            k = np.rint(pos)
        k = k.astype(int)
        pmf = np.zeros(int(k.max()) + 1)
        np.add.at(pmf, k, p * np.asarray(U.probs, float) / np.sum(U.probs))
        pmf[0] += 1.0 - p
        return pmf
    if not U.bounded:
        raise Unsupported("convolution oracle needs a bounded loss law")
    m = int(round(U.upper / h))
    edges = np.linspace(0.0, U.upper, m + 1)
    cell = np.diff(np.asarray(U.cdf(edges), float))
    pmf = np.zeros(m + 2)
    if where == "lower":
        pmf[:m] += p * cell
    elif where == "upper":
        pmf[1:m + 1] += p * cell
    else:
        # midpoint mass split between the two neighbouring half-step nodes
        pmf = np.zeros(2 * m + 1)
        pmf[1:2 * m:2] += p * cell
    pmf[0] += 1.0 - p
    return pmf


def _tail_of_power(pmf: np.ndarray, n: int, threshold_index: float, theta: float, step: float,
                   half_at_threshold: bool = False) -> float:
    """P(sum of n lattice draws >= threshold) by tilted FFT convolution.

    With ``half_at_threshold`` a lattice point lying exactly on the threshold
    counts with weight 1/2, which removes the O(h) bias of the midpoint rule.

    The pmf is tilted by e^{a k} (a = theta step) before the FFT so that the
    relevant tail sits near the bulk of the convolved sequence; the tilt is
    undone index by index afterwards.
    """
    a = theta * step
    k = np.arange(pmf.size)
    c = a * (pmf.size - 1) if a > 0 else 0.0
    tilted = pmf * np.exp(a * k - c)
    norm = tilted.sum()
    tilted /= norm
    size = n * (pmf.size - 1) + 1
    fft_len = 1 << int(math.ceil(math.log2(size)))
    conv = np.fft.irfft(np.fft.rfft(tilted, fft_len) ** n, fft_len)[:size]
    start = int(math.ceil(threshold_index - 1e-9))
    if start >= size:
        return 0.0
    tail = conv[start:]
    keep = tail > 0
    if not np.any(keep):
        return 0.0
    j = np.arange(start, size)[keep]
    logs = np.log(tail[keep]) + n * (math.log(norm) + c) - a * j
    if half_at_threshold and abs(threshold_index - start) < 1e-9:
        logs = np.where(j == start, logs - math.log(2.0), logs)
    top = logs.max()
    return float(math.exp(top) * np.sum(np.exp(logs - top)))


def exact_tail_convolution(model: PortfolioModel, z: float, x: float, n: int, h: float = 1e-4) -> ConvolutionTail:
    """P(L_n >= n x | Z = z) from the lattice convolution, with a bracket."""
    if n > 64:
        raise ValueError("convolution oracle is limited to n <= 64")
    if not (model.U.bounded or isinstance(model.U, BoundedGrid)):
        raise Unsupported("convolution oracle needs a bounded loss law")
    p = float(default_prob(model, z))
    try:
        theta = max(cgfcore.tilt_conditional(model, x, z).theta, 0.0)
    except cgfcore.NoRoot:
        theta = 0.0
    theta = min(theta, 700.0 / max(model.U.upper, 1.0))
    thr = n * x / h
    lo = _tail_of_power(_lattice(model.U, p, h, "lower"), n, thr, theta, h)
    hi = _tail_of_power(_lattice(model.U, p, h, "upper"), n, thr, theta, h)
    if isinstance(model.U, BoundedGrid):
        mid = _tail_of_power(_lattice(model.U, p, h, "mid"), n, thr, theta, h)
    else:
        mid = _tail_of_power(_lattice(model.U, p, h, "mid"), n, 2.0 * thr, theta, h / 2.0, half_at_threshold=True)
    return ConvolutionTail(mid, min(lo, hi), max(lo, hi), h, n, p)


# ---------------------------------------------------------------------------
# conditional central limit check
# ---------------------------------------------------------------------------


@dataclass
class CLTReport:
    ks: float
    critical: float
    passed: bool
    n: int
    replicates: int
    seed: int
    extra: dict = field(default_factory=dict)


def conditional_sd(model: PortfolioModel, F) -> np.ndarray:
    """sqrt(sigma_U^2 F + mu_U^2 F (1 - F)), the per-obligor conditional standard deviation."""
    F = np.asarray(F, dtype=float)
    mu, var = model.U.mean, model.U.var
    return np.sqrt(var * F + mu**2 * F * (1.0 - F))


def conditional_clt_check(model: PortfolioModel, n: int, replicates: int, seed: int = DEFAULT_SEED,
                          factor_nodes: int = 2000) -> CLTReport:
    """KS distance between centred conditional sums and their normal-mixture limit.

    The statistic is (L_n - n mu_U F(Z)) / sqrt(n); its limit law is the
    mixture of N(0, sigma(Z)^2) over the factor law.
    """
    if replicates < 10_000:
        raise ValueError("replicates must be at least 10^4")
    parts_t = []
    for b in range(-(-replicates // BLOCK)):
        count = min(BLOCK, replicates - b * BLOCK)
        losses, z, _ = simulate_batch(model, block_rng(seed, b), count, n)
        F = np.asarray(default_prob(model, z), float)
        parts_t.append((losses - n * model.U.mean * F) / math.sqrt(n))
    t = np.concatenate(parts_t)
    if isinstance(model.Z, PointMass):
        sd = float(conditional_sd(model, default_prob(model, model.Z.kappa)))
        cdf = lambda s: stats.norm.cdf(s / sd)
    else:
        u = (np.arange(factor_nodes) + 0.5) / factor_nodes
        sds = conditional_sd(model, default_prob(model, np.asarray(model.Z.quantile(u), float)))
        sds = np.maximum(sds, 1e-300)
        cdf = lambda s: np.mean(stats.norm.cdf(np.asarray(s)[..., None] / sds), axis=-1)
    ks = float(stats.kstest(t, cdf).statistic)
    crit = 2.0 * 1.63 / math.sqrt(replicates)
    return CLTReport(ks, crit, ks < crit, n, replicates, int(seed), {"mean": float(t.mean()), "sd": float(t.std())})
