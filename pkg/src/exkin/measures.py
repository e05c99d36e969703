"""Empirical measures, brackets and the martingale residual of the particle system."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chains import TrajectoryRecord, poisson_simulate
from .rng import RngStream

DEFAULT_RAMP_WIDTH = 0.01
QN_PAIR_CAP = 5000


class TestFunction:
    """Bounded observable ``g`` carried together with ``G(s) = int_0^s g``.

    The antiderivative gives the uniform-split average in closed form:
    ``int_0^1 g(r s) dr = G(s) / s``.
    """

    __test__ = False  # not a pytest class

    def __init__(self, name: str, func: Callable, antiderivative: Callable, sup_bound: float,
                 average: Callable | None = None, conserved: bool = False):
        self.name = name
        self._func = func
        self._antiderivative = antiderivative
        self._average = average
        self.sup_bound = float(sup_bound)
        # g = const or g = x: every exchange leaves <g, mu> unchanged
        self.conserved = conserved

    def __repr__(self):
        return f"TestFunction({self.name!r})"

    def __reduce__(self):
        # closures do not pickle; functions built from a name are rebuilt from it
        spec = getattr(self, "spec", None)
        if spec is None:
            raise TypeError(f"{self!r} was not built by test_function_from_name and cannot be pickled")
        return test_function_from_name, (spec,)

    def __call__(self, x):
        return self._func(np.asarray(x, dtype=float))

    def antiderivative(self, s):
        return self._antiderivative(np.asarray(s, dtype=float))

    def split_average(self, s):
        """``G(s)/s``, with the limit ``g(0)`` at ``s = 0``."""
        s = np.asarray(s, dtype=float)
        if self._average is not None:
            return self._average(s)
        safe = np.where(s > 0, s, 1.0)
        return np.where(s > 0, self.antiderivative(safe) / safe, self(np.zeros_like(s)))

    def reflected_average(self, s):
        """``int_0^1 g((1-r) s) dr``; equal to :meth:`split_average` by symmetry."""
        s = np.asarray(s, dtype=float)
        safe = np.where(s > 0, s, 1.0)
        reflected = (self.antiderivative(safe) - self.antiderivative(np.zeros_like(safe))) / safe
        return np.where(s > 0, reflected, self(np.zeros_like(s)))


def constant(c: float = 1.0) -> TestFunction:
    return TestFunction(f"const({c:g})", lambda x: np.full_like(x, c), lambda s: c * s, abs(c),
                        average=lambda s: np.full_like(s, c), conserved=True)


def identity() -> TestFunction:
    """``g(x) = x``; unbounded, used only for conservation checks."""
    return TestFunction("x", lambda x: x, lambda s: 0.5 * s * s, math.inf,
                        average=lambda s: 0.5 * s, conserved=True)


def truncated_identity(cap: float) -> TestFunction:
    """``g(x) = x * 1{x <= cap}``."""
    def g(x):
        return np.where(x <= cap, x, 0.0)

    def G(s):
        return 0.5 * np.minimum(s, cap) ** 2

    return TestFunction(f"x*1[x<={cap:g}]", g, G, cap)


def exponential(rate: float = 1.0) -> TestFunction:
    if rate <= 0:
        raise ValueError("rate must be positive")

    def average(s):
        z = rate * s
        out = np.ones_like(z)
        np.divide(-np.expm1(-z), z, out=out, where=z > 0)
        return out

    return TestFunction(f"exp(-{rate:g}x)", lambda x: np.exp(-rate * x),
                        lambda s: -np.expm1(-rate * s) / rate, 1.0, average=average)


def capped_monomial(power: int, cap: float) -> TestFunction:
    """``g(x) = min(x, cap) ** power``."""
    k = int(power)

    def G(s):
        inner = np.minimum(s, cap)
        return inner ** (k + 1) / (k + 1) + cap**k * np.maximum(s - cap, 0.0)

    return TestFunction(f"min(x,{cap:g})^{k}", lambda x: np.minimum(x, cap) ** k, G, cap**k)


def cosine(freq: float) -> TestFunction:
    def average(s):
        z = freq * s
        return np.sinc(z / np.pi)  # sin(z)/z

    return TestFunction(f"cos({freq:g}x)", lambda x: np.cos(freq * x),
                        lambda s: np.sin(freq * s) / freq, 1.0, average=average)


def piecewise_linear(knots, values, name: str = "piecewise-linear") -> TestFunction:
    """Continuous piecewise-linear ``g``; constant beyond the outer knots."""
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    if knots[0] < 0 or np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be nonnegative and strictly increasing")
    if knots[0] > 0:
        knots = np.insert(knots, 0, 0.0)
        values = np.insert(values, 0, values[0])
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(knots))])

    def g(x):
        return np.interp(x, knots, values)

    def G(s):
        s = np.asarray(s, dtype=float)
        k = np.clip(np.searchsorted(knots, s, side="right") - 1, 0, knots.size - 1)
        base = cumulative[k]
        x0 = knots[k]
        y0 = values[k]
        y1 = g(s)
        inside = k < knots.size - 1
        # trapezoid on the partial segment; flat extension after the last knot
        return base + np.where(inside, 0.5 * (y0 + y1) * (s - x0), values[-1] * (s - x0))

    return TestFunction(name, g, G, float(np.max(np.abs(values))))


def smoothed_indicator(a: float, b: float, ramp: float = DEFAULT_RAMP_WIDTH) -> TestFunction:
    """Continuous stand-in for ``1[a, b]`` with linear ramps of width ``ramp`` outside."""
    if b <= a or ramp <= 0:
        raise ValueError("need a < b and a positive ramp width")
    knots, vals = [a, b, b + ramp], [1.0, 1.0, 0.0]
    if a > 0:
        lo = max(a - ramp, 0.0)
        start = 0.0 if a - ramp >= 0 else (lo - (a - ramp)) / ramp
        knots, vals = [lo] + knots, [start] + vals
    return piecewise_linear(knots, vals, name=f"1~[{a:g},{b:g}]")


BUILTIN_TEST_FUNCTIONS = {
    "one": constant,
    "x": identity,
    "exp": exponential,
    "capped": capped_monomial,
    "cos": cosine,
    "indicator": smoothed_indicator,
}


def test_function_from_name(name: str) -> TestFunction:
    """Parse ``exp``, ``exp:2``, ``cos:1.5``, ``capped:2:3``, ``indicator:0.5:1.5``, ``one``."""
    head, *args = name.split(":")
    if head not in BUILTIN_TEST_FUNCTIONS:
        raise ValueError(f"unknown test function {name!r}")
    parsed = [int(a) if a.isdigit() and head == "capped" and i == 0 else float(a)
              for i, a in enumerate(args)]
    g = BUILTIN_TEST_FUNCTIONS[head](*parsed)
    g.spec = name
    return g


test_function_from_name.__test__ = False  # keep pytest from collecting it on import


# --- empirical measures ----------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalMeasure:
    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        atoms.setflags(write=False)
        if atoms.ndim != 1 or atoms.size == 0:
            raise ValueError("an empirical measure needs at least one atom")
        if np.any(atoms < 0):
            raise ValueError("atoms must be nonnegative")
        object.__setattr__(self, "atoms", atoms)

    @property
    def size(self) -> int:
        return self.atoms.size

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)

    def mass(self) -> float:
        return 1.0


def bracket(g, mu: EmpiricalMeasure) -> float:
    return float(np.mean(g(mu.atoms)))


def pair_bracket(h, mu: EmpiricalMeasure, method: str = "offdiagonal") -> float:
    """``(1/N^2) sum_{i != j} h(x_i, x_j)``.

    ``method="product"`` evaluates the same quantity as
    ``<h, mu x mu> - (1/N) <h(x, x), mu>``.
    """
    a = mu.atoms
    N = a.size
    if method == "offdiagonal":
        i, j = np.nonzero(~np.eye(N, dtype=bool))
        return float(np.sum(h(a[i], a[j])) / N**2)
    if method == "product":
        full = np.sum(h(a[:, None], a[None, :])) / N**2
        diagonal = np.mean(h(a, a)) / N
        return float(full - diagonal)
    raise ValueError(f"unknown method {method!r}")


def collision_kernel(g: TestFunction, x, y, cap: float = math.inf):
    """``int_0^1 [g(r s) + g((1-r) s)] dr - g(x) - g(y)`` on pairs with ``s <= cap``."""
    s = x + y
    value = 2.0 * g.split_average(s) - g(x) - g(y)
    return np.where(s <= cap, value, 0.0)


def _offdiagonal_sum(g: TestFunction, a: np.ndarray, cap: float, chunk: int = 512) -> float:
    total = 0.0
    N = a.size
    for start in range(0, N, chunk):
        rows = a[start:start + chunk]
        block = collision_kernel(g, rows[:, None], a[None, :], cap)
        idx = np.arange(rows.size)
        block[idx, start + idx] = 0.0
        total += float(block.sum())
    return total


def qn_bracket(g: TestFunction, mu: EmpiricalMeasure, W_N: float, cap: int = QN_PAIR_CAP) -> float:
    """``<g, Q^(N)(mu)>``: the drift of ``<g, mu>`` under the particle dynamics."""
    if g.conserved:
        # the kernel vanishes identically for g = const and g = x
        return 0.0
    N = mu.size
    if N > cap:
        raise ValueError(f"quadratic drift evaluation capped at N={cap}, got N={N}")
    return _offdiagonal_sum(g, mu.atoms, W_N) / N**2


# --- martingale residual -----------------------------------------------------------------

@dataclass
class MartingalePath:
    """``M_t`` at time 0, after every jump, and at the horizon.

    ``left_values[k]`` is the left limit at ``times[k]``; the path is linear
    between consecutive times, so its running supremum is attained on these
    values.
    """

    times: np.ndarray
    values: np.ndarray
    left_values: np.ndarray

    def __post_init__(self):
        if self.values.size and self.values[0] != 0.0:
            raise ValueError("a martingale residual starts at zero")

    def sup_abs(self) -> float:
        if self.values.size == 0:
            return 0.0
        return float(max(np.abs(self.values).max(), np.abs(self.left_values).max()))


class _DriftTracker:
    """Maintains ``D = sum_{i != j} kernel(x_i, x_j)`` under two-agent updates in O(N).

    Assumes every pair sum is below the cap, which holds when the cap is at
    least the total wealth.
    """

    def __init__(self, g: TestFunction, state: np.ndarray, refresh: int | None = None):
        self.g = g
        self.x = state.copy()
        self.gx = g(self.x)
        # a full recount costs O(N^2), i.e. about N incremental updates
        self.refresh = refresh or max(256, 4 * state.size)
        self._since = 0
        self.total = _offdiagonal_sum(g, self.x, math.inf)

    def update(self, i: int, j: int, new_i: float, new_j: float):
        x, gx, g = self.x, self.gx, self.g
        vals = np.array([x[i], x[j], new_i, new_j])
        gvals = g(vals)
        rows = 2.0 * g.split_average(vals[:, None] + x[None, :]) - gvals[:, None] - gx[None, :]
        rows[:, [i, j]] = 0.0
        sums = rows.sum(axis=1)
        pair_old = 2.0 * g.split_average(vals[0] + vals[1]) - gvals[0] - gvals[1]
        pair_new = 2.0 * g.split_average(vals[2] + vals[3]) - gvals[2] - gvals[3]
        delta = (sums[2] + sums[3] + pair_new) - (sums[0] + sums[1] + pair_old)
        x[i], x[j] = new_i, new_j
        gx[i], gx[j] = gvals[2], gvals[3]
        self._since += 1
        if self._since >= self.refresh:
            self.total = _offdiagonal_sum(g, x, math.inf)
            self._since = 0
        else:
            self.total += 2.0 * float(delta)


def martingale_residual(traj: TrajectoryRecord, g: TestFunction, W_N: float | None = None) -> MartingalePath:
    """``M_t = <g, mu_t> - <g, mu_0> - int_0^t <g, Q^(N)(mu_s)> ds`` along a recorded run.

    ``mu_s`` is piecewise constant between jumps, so the time integral is an
    exact sum over inter-jump intervals.
    """
    if W_N is None:
        W_N = traj.total
    if W_N < traj.total * (1 - 1e-12):
        # recorded runs never suppress a jump, which matches the capped generator
        # only when no pair can exceed the cap
        raise ValueError("W_N below the total wealth is not supported for recorded runs")
    x = traj.initial.copy()
    N = x.size
    gx = g(x)
    gsum = float(gx.sum())
    observable0 = observable = gsum / N
    tracker = None if g.conserved else _DriftTracker(g, x)
    drift = 0.0 if tracker is None else tracker.total / N**2

    K = len(traj)
    times = np.empty(K + 2)
    values = np.empty(K + 2)
    left = np.empty(K + 2)
    times[0] = values[0] = left[0] = 0.0
    integral = 0.0
    last = 0.0
    for k, (t, i, j, r) in enumerate(zip(traj.times.tolist(), traj.first.tolist(),
                                         traj.second.tolist(), traj.fractions.tolist()), 1):
        integral += drift * (t - last)
        last = t
        left[k] = observable - observable0 - integral
        s = x[i] + x[j]
        new_i = r * s
        new_j = s - r * s
        if tracker is not None:
            old_gi, old_gj = tracker.gx[i], tracker.gx[j]
            tracker.update(i, j, new_i, new_j)
            gsum += tracker.gx[i] + tracker.gx[j] - old_gi - old_gj
            drift = tracker.total / N**2
        else:
            gi, gj = g(np.array([new_i, new_j]))
            gsum += gi + gj - gx[i] - gx[j]
            gx[i], gx[j] = gi, gj
        x[i], x[j] = new_i, new_j
        observable = gsum / N
        times[k] = t
        values[k] = observable - observable0 - integral
    integral += drift * (traj.horizon - last)
    end = observable - observable0 - integral
    times[K + 1], values[K + 1], left[K + 1] = traj.horizon, end, end
    return MartingalePath(times, values, left)


def exponential_start(N: int, rng, mean: float = 1.0) -> np.ndarray:
    return rng.exponential(mean, size=N)


def martingale_sup_squared(N: int, horizon: float, g: TestFunction, stream: RngStream,
                           initial: Callable = exponential_start) -> float:
    rng = stream.generator()
    x0 = initial(N, rng)
    traj = poisson_simulate(x0, horizon, rng)
    return martingale_residual(traj, g).sup_abs() ** 2


@dataclass
class BoundCheck:
    g: str
    N: int
    T: float
    replicas: int
    empirical: float
    bound: float
    passed: bool

    def as_dict(self) -> dict:
        return {"g": self.g, "N": self.N, "T": self.T, "replicas": self.replicas,
                "empirical": self.empirical, "bound": self.bound, "pass": self.passed}


def martingale_bound(g: TestFunction, N: int, T: float) -> float:
    return 64.0 * g.sup_bound**2 * T / N


def martingale_bound_check(g: TestFunction, N: int, T: float, replicas: int, seed: int,
                           initial: Callable = exponential_start, mapper=map) -> BoundCheck:
    """Compare the ensemble mean of ``sup_{s<=T} M_s^2`` with ``64 |g|^2 T / N``.

    ``mapper`` lets a caller swap in a parallel map; replica ``k`` always uses
    stream ``(seed, k)`` and results are reduced in replica order.
    """
    if replicas < 100:
        raise ValueError("the bound check needs at least 100 replicas")
    bound = martingale_bound(g, N, T)
    if T == 0:
        return BoundCheck(g.name, N, 0.0, replicas, 0.0, 0.0, True)
    jobs = [(N, T, g, RngStream(seed, k), initial) for k in range(replicas)]
    sups = list(mapper(_sup_job, jobs))
    empirical = float(np.mean(sups))
    return BoundCheck(g.name, N, T, replicas, empirical, bound, empirical <= bound)


def _sup_job(args) -> float:
    return martingale_sup_squared(*args)


def increment_sup_squared(traj: TrajectoryRecord, g: TestFunction, s: float, t: float) -> float:
    """``sup_{r in [s, t)} <g, mu_r - mu_s>^2`` along a recorded run."""
    x = traj.initial.copy()
    N = x.size
    gx = g(x)
    gsum = float(gx.sum())
    base = None
    best = 0.0
    for time, i, j, r in zip(traj.times.tolist(), traj.first.tolist(),
                             traj.second.tolist(), traj.fractions.tolist()):
        if time >= t:
            break
        if base is None and time >= s:
            base = gsum
        sm = x[i] + x[j]
        x[i] = r * sm
        x[j] = sm - r * sm
        gi, gj = g(np.array([x[i], x[j]]))
        gsum += gi + gj - gx[i] - gx[j]
        gx[i], gx[j] = gi, gj
        if base is not None:
            best = max(best, ((gsum - base) / N) ** 2)
    return best


def increment_bound(g: TestFunction, N: int, s: float, t: float, constant_factor: float = 80.0) -> float:
    return constant_factor * g.sup_bound**2 * ((t - s) ** 2 + (t - s) / N)
