"""Statistical distances and goodness-of-fit checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

DKW_ALPHA = 0.01
CHI_SQUARE_LEVEL = 1e-3


# --- target distributions ----------------------------------------------------------------

@dataclass(frozen=True)
class Exponential:
    mean: float = 1.0

    def cdf(self, x):
        return -np.expm1(-np.maximum(np.asarray(x, dtype=float), 0.0) / self.mean)

    def tail_integral(self, x):
        """``int_x^inf (1 - F)``."""
        return self.mean * np.exp(-np.maximum(np.asarray(x, dtype=float), 0.0) / self.mean)

    def quantile(self, q):
        return -self.mean * np.log1p(-np.asarray(q, dtype=float))


@dataclass(frozen=True)
class Geometric:
    """Geometric law on ``{0, 1, 2, ...}`` with ``P(k) = p (1-p)^k``."""

    p: float

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        k = np.floor(x)
        return np.where(x < 0, 0.0, 1.0 - (1.0 - self.p) ** (k + 1))

    def tail_integral(self, x):
        q = 1.0 - self.p
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        k = np.floor(x)
        # partial unit step at k, then whole steps beyond
        return (k + 1 - x) * q ** (k + 1) + q ** (k + 2) / self.p

    def quantile(self, level):
        """Smallest integer ``k`` with ``F(k) >= level``."""
        level = np.asarray(level, dtype=float)
        q = 1.0 - self.p
        k = np.maximum(np.ceil(np.log1p(-level) / math.log(q)) - 1, 0)
        # guard the ceiling against rounding in the logarithm
        k = np.where(self.cdf(k - 1) >= level, np.maximum(k - 1, 0), k)
        return np.where(self.cdf(k) < level, k + 1, k)


@dataclass(frozen=True)
class PointMass:
    at: float = 0.0

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.at).astype(float)

    def tail_integral(self, x):
        return np.maximum(self.at - np.asarray(x, dtype=float), 0.0)

    def quantile(self, level):
        return np.full(np.shape(level), self.at, dtype=float)


@dataclass(frozen=True)
class Uniform:
    a: float = 0.0
    b: float = 1.0

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def tail_integral(self, x):
        x = np.asarray(x, dtype=float)
        below = np.maximum(self.a - x, 0.0)
        x = np.clip(x, self.a, self.b)
        return below + 0.5 * (self.b - x) ** 2 / (self.b - self.a)

    def quantile(self, level):
        return self.a + np.asarray(level, dtype=float) * (self.b - self.a)


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def cdf(self, x):
        return sps.beta(self.a, self.b).cdf(x)


def target_from_name(name: str):
    """``exp``/``exp:<mean>``, ``geom:<p>``, ``delta0``, ``uniform:<a>:<b>``."""
    head, *args = name.split(":")
    values = [float(a) for a in args]
    if head in ("exp", "Exp"):
        return Exponential(*values)
    if head in ("geom", "Geom"):
        return Geometric(*values)
    if head in ("delta0", "delta"):
        return PointMass(*values)
    if head == "uniform":
        return Uniform(*values)
    raise ValueError(f"unknown target distribution {name!r}")


# --- distances ----------------------------------------------------------------------------

def dkw_threshold(n: int, alpha: float = DKW_ALPHA) -> float:
    """Radius of the DKW confidence band: ``sqrt(ln(2/alpha) / (2n))``."""
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


def ks_statistic(samples, target_cdf) -> float:
    """Two-sided KS distance between the empirical CDF and a continuous target."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("need at least one sample")
    F = target_cdf(x)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


def ks_statistic_discrete(samples, target_cdf, support=None) -> float:
    """KS distance for an integer-valued target, evaluated at the support points.

    Both CDFs are right-continuous step functions jumping on the integers, so
    the supremum is attained at integer points.
    """
    x = np.asarray(samples)
    if x.size == 0:
        raise ValueError("need at least one sample")
    if np.any(x != np.round(x)):
        raise ValueError("discrete KS needs integer-valued samples")
    x = np.round(x).astype(np.int64)
    if support is None:
        support = np.arange(0, int(x.max()) + 2)
    counts = np.bincount(x - support[0], minlength=support.size)[:support.size]
    empirical = np.cumsum(counts) / x.size
    return float(np.max(np.abs(empirical - target_cdf(support))))


def wasserstein1(samples, target) -> float:
    """``int_0^inf |F_emp - F_target| dx`` for nonnegative samples.

    ``F_emp`` is constant between consecutive samples and the target's CDF is
    integrated in closed form through its tail integral; a crossing inside a
    piece is located with the target's quantile function.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ValueError("need at least one sample")
    if x[0] < 0:
        raise ValueError("samples must be nonnegative")
    weights = np.full(x.size, 1.0 / x.size)
    return wasserstein1_weighted(x, weights, target)


def wasserstein1_weighted(points, weights, target) -> float:
    """W1 between a weighted atomic measure on the half-line and ``target``."""
    order = np.argsort(points)
    x = np.asarray(points, dtype=float)[order]
    w = np.asarray(weights, dtype=float)[order]
    levels = np.concatenate([[0.0], np.cumsum(w) / w.sum()])[:-1]
    a = np.concatenate([[0.0], x[:-1]])
    b = x
    T = target.tail_integral

    def cdf_integral(lo, hi):
        # int_lo^hi F = (hi - lo) - (T(lo) - T(hi))
        return (hi - lo) - (T(lo) - T(hi))

    Fa, Fb = target.cdf(a), target.cdf(b)
    below = Fb <= levels
    above = Fa >= levels
    c = np.clip(target.quantile(np.minimum(levels, 1.0 - 1e-16)), a, b)
    pieces = np.where(
        below, levels * (b - a) - cdf_integral(a, b),
        np.where(above, cdf_integral(a, b) - levels * (b - a),
                 (levels * (c - a) - cdf_integral(a, c)) + (cdf_integral(c, b) - levels * (b - c))))
    return float(np.sum(pieces) + T(x[-1]))


def wasserstein1_cdfs(edges, cdf_a, cdf_b) -> float:
    """W1 between two distributions whose CDFs are linear between shared edges."""
    d = np.asarray(cdf_a, dtype=float) - np.asarray(cdf_b, dtype=float)
    widths = np.diff(edges)
    left, right = d[:-1], d[1:]
    same = left * right >= 0
    # a linear segment crossing zero integrates to (l^2 + r^2) / (2 (|l| + |r|)) * width
    denom = np.abs(left) + np.abs(right)
    crossing = np.divide(left ** 2 + right ** 2, 2.0 * denom, out=np.zeros_like(denom), where=denom > 0)
    area = np.where(same, 0.5 * np.abs(left + right), crossing) * widths
    return float(area.sum())


def wasserstein1_samples(a, b) -> float:
    """W1 between two empirical measures (equal or unequal sizes)."""
    return float(sps.wasserstein_distance(np.asarray(a, dtype=float), np.asarray(b, dtype=float)))


# --- chi-square ---------------------------------------------------------------------------

@dataclass
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    passed: bool

    def as_dict(self):
        return {"statistic": self.statistic, "dof": self.dof, "p_value": self.p_value,
                "pass": self.passed}


def merge_small_cells(observed, expected_counts, minimum: float = 5.0):
    """Pool cells (smallest expected first) until every expected count reaches ``minimum``."""
    obs = list(np.asarray(observed, dtype=float))
    exp = list(np.asarray(expected_counts, dtype=float))
    while len(exp) > 1 and min(exp) < minimum:
        k = int(np.argmin(exp))
        # merge into the smaller neighbour in the list
        j = k + 1 if k == 0 else (k - 1 if k == len(exp) - 1 or exp[k - 1] <= exp[k + 1] else k + 1)
        obs[j] += obs[k]
        exp[j] += exp[k]
        del obs[k], exp[k]
    return np.array(obs), np.array(exp)


def chi_square_validate(observed, expected, level: float = CHI_SQUARE_LEVEL) -> ChiSquareResult:
    """Pearson goodness of fit of ``observed`` counts to ``expected`` probabilities."""
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if observed.shape != expected.shape:
        raise ValueError("observed and expected must have the same shape")
    if expected.sum() <= 0:
        raise ValueError("expected probabilities are all zero")
    if np.any(observed[expected == 0] > 0):
        return ChiSquareResult(math.inf, max(int(np.count_nonzero(expected)) - 1, 0), 0.0, False)
    keep = expected > 0
    n = observed.sum()
    obs, exp = merge_small_cells(observed[keep], expected[keep] / expected.sum() * n)
    dof = exp.size - 1
    if dof == 0:
        return ChiSquareResult(0.0, 0, 1.0, True)
    statistic = float(np.sum((obs - exp) ** 2 / exp))
    p_value = float(sps.chi2.sf(statistic, dof))
    return ChiSquareResult(statistic, dof, p_value, p_value > level)


def wasserstein1_to_grid(samples, edges, cdf_nodes) -> float:
    """W1 between an empirical measure and a law whose CDF is linear between ``edges``.

    Breakpoints are the union of samples and edges; on each piece the empirical
    CDF is constant and the other CDF linear, so the integral is exact.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    edges = np.asarray(edges, dtype=float)
    cdf_nodes = np.asarray(cdf_nodes, dtype=float)
    points = np.union1d(np.concatenate([[0.0], x]), edges)
    empirical = np.searchsorted(x, points[:-1], side="right") / x.size
    grid = np.interp(points, edges, cdf_nodes, left=0.0, right=1.0)
    left = empirical - grid[:-1]
    right = empirical - grid[1:]
    widths = np.diff(points)
    same = left * right >= 0
    denom = np.abs(left) + np.abs(right)
    crossing = np.divide(left ** 2 + right ** 2, 2.0 * denom, out=np.zeros_like(denom), where=denom > 0)
    return float((np.where(same, 0.5 * np.abs(left + right), crossing) * widths).sum())
