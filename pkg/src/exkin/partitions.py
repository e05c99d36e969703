"""Random compositions and simplex samplers, with single-draw limit checks.

Geometric variables here live on ``{0, 1, 2, ...}`` with ``P(G = k) = p (1-p)^k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator
from .state import ContinuousWealthState, DiscreteWealthState, checked_int64, composition_count
from .stats import (
    Exponential,
    Geometric,
    PointMass,
    dkw_threshold,
    ks_statistic,
    ks_statistic_discrete,
    wasserstein1,
)

SAMPLER_KINDS = ("uniform_composition", "scaled_geometric", "fixed_p_geometric", "uniform_simplex")
VALID_TARGETS = {
    "scaled_geometric": ("exp",),
    "fixed_p_geometric": ("geom",),
    "uniform_simplex": ("exp", "delta0"),
}
DELTA_EPSILON = 0.01


class ConfigurationError(ValueError):
    pass


def geometric(rng, p: float, size=None):
    """Geometric draws on ``{0, 1, ...}`` (numpy's version counts trials, starting at 1)."""
    return rng.geometric(p, size=size) - 1


# --- compositions ------------------------------------------------------------------------------

def first_part_law(n: int, N: int) -> np.ndarray:
    """``P(x_1 = k) = C(n-k+N-2, N-2) / C(n+N-1, N-1)`` for ``k = 0..n`` under the uniform law."""
    total = composition_count(n, N)
    return np.array([math.comb(n - k + N - 2, N - 2) / total for k in range(n + 1)])


def sample_uniform_composition(n: int, N: int, rng) -> DiscreteWealthState:
    """Exactly uniform composition of ``n`` into ``N`` parts via sequential marginals."""
    return DiscreteWealthState(tuple(sample_uniform_compositions(n, N, rng, 1)[0].tolist()), n)


def sample_uniform_compositions(n: int, N: int, rng, size: int) -> np.ndarray:
    """``size`` independent uniform compositions, one per row."""
    if n < 0 or N < 2:
        raise ValueError("need n >= 0 and N >= 2")
    checked_int64(n)
    rng = as_generator(rng)
    out = np.zeros((size, N), dtype=np.int64)
    remaining = np.full(size, n, dtype=np.int64)
    for agent in range(N - 1):
        u = rng.random(size)
        for r in np.unique(remaining):
            rows = np.flatnonzero(remaining == r)
            cdf = np.cumsum(first_part_law(int(r), N - agent))
            pick = np.minimum(np.searchsorted(cdf, u[rows] * cdf[-1], side="right"), r)
            out[rows, agent] = pick
        remaining -= out[:, agent]
    out[:, N - 1] = remaining
    return out


def sample_composition_rejection(n: int, N: int, rng, p: float | None = None,
                                 max_tries: int = 10**7) -> np.ndarray:
    """Conditioned-geometric sampler: draw i.i.d. geometrics until they sum to ``n``.

    Any ``p`` in (0, 1) gives the uniform law; ``N/(N+n)`` maximises the
    acceptance probability.
    """
    rng = as_generator(rng)
    p = N / (N + n) if p is None else p
    batch = 256
    tries = 0
    while tries < max_tries:
        draws = geometric(rng, p, size=(batch, N))
        hit = np.flatnonzero(draws.sum(axis=1) == n)
        if hit.size:
            return draws[hit[0]].astype(np.int64)
        tries += batch
    raise RuntimeError("rejection sampler exceeded its try budget")


# --- simplex samplers ---------------------------------------------------------------------------

def sample_scaled_geometric(N: int, W_N: float, rng) -> ContinuousWealthState:
    """Normalised geometrics with ``p = N/W_N``, rescaled to total ``N``; all-ones if they all vanish."""
    if W_N < N:
        raise ValueError("need W_N >= N so that p = N/W_N <= 1")
    rng = as_generator(rng)
    G = geometric(rng, N / W_N, size=N).astype(float)
    return ContinuousWealthState(_normalise(G, float(N)), float(N))


def sample_fixed_p_geometric(N: int, p: float, rng) -> ContinuousWealthState:
    """Normalised Geom(p) variables rescaled to total ``(1-p)/p * N``.

    An all-zero draw is replaced by the constant state, the same fallback as
    for the scaled-geometric sampler.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    rng = as_generator(rng)
    total = (1.0 - p) / p * N
    V = geometric(rng, p, size=N).astype(float)
    return ContinuousWealthState(_normalise(V, total), total)


def sample_uniform_simplex(N: int, rng, total: float | None = None) -> ContinuousWealthState:
    """Uniform point of ``total * simplex`` from normalised Exp(1) draws (default total ``N``)."""
    if N < 2:
        raise ValueError("need N >= 2")
    rng = as_generator(rng)
    total = float(N) if total is None else float(total)
    return ContinuousWealthState(_normalise(rng.exponential(size=N), total), total)


def _normalise(values: np.ndarray, total: float) -> np.ndarray:
    s = values.sum()
    if s == 0:
        return np.full(values.size, total / values.size)
    out = total * values / s
    # push the rounding residue onto the largest entry so the sum is exact to 1 ulp-ish
    out[np.argmax(out)] += total - out.sum()
    return out


def sum_concentration(N: int, W_N: float, beta: float, samples: int, rng) -> float:
    """Empirical ``P(|sum G / W_N - 1| > N^-beta)`` for ``N`` geometrics with ``p = N/W_N``.

    A sum of ``N`` such geometrics is negative binomial, drawn directly.
    """
    rng = as_generator(rng)
    sums = rng.negative_binomial(N, N / W_N, size=samples)
    return float(np.mean(np.abs(sums / W_N - 1.0) > N ** (-beta)))


# --- specs and limit checks ---------------------------------------------------------------------

@dataclass
class SamplerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigurationError(f"unknown sampler {self.kind!r}")
        p = self.params.get("p")
        if p is not None and not 0 < p < 1:
            raise ConfigurationError("p must lie in (0, 1)")
        for key in ("n", "N", "W_N"):
            value = self.params.get(key)
            if value is not None and value <= 0 and not (key == "n" and value == 0):
                raise ConfigurationError(f"{key} must be positive")

    def draw(self, N: int, rng) -> np.ndarray:
        params = self.params
        if self.kind == "uniform_composition":
            return sample_uniform_compositions(int(params["n"]), N, rng, 1)[0]
        if self.kind == "scaled_geometric":
            return sample_scaled_geometric(N, params.get("W_N", float(N) ** 2), rng).wealth
        if self.kind == "fixed_p_geometric":
            return sample_fixed_p_geometric(N, params["p"], rng).wealth
        return sample_uniform_simplex(N, rng).wealth


@dataclass
class LimitReport:
    sampler: str
    target: str
    N: int
    ks: float
    w1: float
    threshold: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        out = {"sampler": self.sampler, "target": self.target, "N": self.N, "ks": self.ks,
               "w1": self.w1, "threshold": self.threshold, "pass": self.passed}
        out.update(self.extra)
        return out


def limit_check(spec: SamplerSpec, target: str, N: int, rng, alpha: float = 0.01,
                epsilon: float = DELTA_EPSILON) -> LimitReport:
    """Compare the empirical measure of one draw of ``N`` coordinates with its limit law.

    ``exp`` and ``geom`` pass when the KS distance is within the DKW band at
    level ``alpha``. For ``delta0`` the draw is rescaled to total 1 and the
    check is the deterministic bound: at most ``1/(N epsilon)`` of the agents
    hold more than ``epsilon``.
    """
    allowed = VALID_TARGETS.get(spec.kind, ())
    if target not in allowed:
        raise ConfigurationError(f"sampler {spec.kind!r} cannot be checked against {target!r}")
    x = spec.draw(N, rng)
    threshold = dkw_threshold(N, alpha)
    if target == "exp":
        law = Exponential(1.0)
        ks = ks_statistic(x, law.cdf)
        return LimitReport(spec.kind, target, N, ks, wasserstein1(x, law), threshold, ks <= threshold)
    if target == "geom":
        law = Geometric(spec.params["p"])
        ks = lattice_ks(x, law)
        return LimitReport(spec.kind, target, N, ks, wasserstein1(x, law), threshold, ks <= threshold)
    scaled = x / x.sum()
    fraction = float(np.mean(scaled > epsilon))
    bound = 1.0 / (N * epsilon)
    ks = ks_statistic(scaled, PointMass(0.0).cdf)
    return LimitReport(spec.kind, target, N, ks, wasserstein1(scaled, PointMass(0.0)), bound,
                       fraction <= bound, {"epsilon": epsilon, "fraction_above": fraction})


def lattice_ks(samples, law: Geometric) -> float:
    """Discrete KS against an integer-valued law for near-integer samples.

    Samples are assigned to the nearest integer before comparing the CDFs at
    the support points; the normalised geometric coordinates sit within a
    relative ``O(N^-1/2)`` of the integers, and evaluating an empirical CDF
    exactly at an atom would otherwise hinge on that jitter.
    """
    return ks_statistic_discrete(np.rint(np.asarray(samples, dtype=float)), law.cdf)
