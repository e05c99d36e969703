"""Mean-field kinetic equation for the uniform-reshuffling exchange.

Densities live on a uniform grid of ``M`` cells over ``[0, x_max]`` and are
stored as cell averages. The collision operator in density form is

    Qbar(f)(x) = gain(x) - loss(x)
    gain(x)    = 2 * int_x^{w0} (f*f)(s) / s ds
    loss(x)    = 2 f(x) * int_0^{(w0 - x)+} f(y) dy

and the gain is discretised by spreading the mass of every pair of cells
uniformly over ``[0, s]``. That discrete operator conserves mass and first
moment exactly and keeps cell-averaged exponentials as exact fixed points.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .measures import EmpiricalMeasure, TestFunction

MASS_TOLERANCE = 1e-6
MAX_CLIPPED_PER_STEP = 1e-4
MAX_DT = 0.25
TAIL_TOLERANCE = 1e-10
DIRECT_MAX_CELLS = 400


class KineticInstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class GriddedDensity:
    """Piecewise-constant density with ``values[k]`` on ``[k dx, (k+1) dx)``."""

    x_max: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.x_max <= 0 or values.ndim != 1 or values.size == 0:
            raise ValueError("need a positive x_max and at least one cell")
        if np.any(values < 0):
            raise ValueError("density values must be nonnegative")

    @property
    def cells(self) -> int:
        return self.values.size

    @property
    def dx(self) -> float:
        return self.x_max / self.cells

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.cells + 1) * self.dx

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.dx

    def mass(self) -> float:
        return float(self.masses.sum())

    def mean(self) -> float:
        return float(np.dot(self.centers, self.masses))

    def normalized(self) -> "GriddedDensity":
        return GriddedDensity(self.x_max, self.values / self.mass())

    def cdf_nodes(self) -> np.ndarray:
        """CDF at the cell edges."""
        return np.concatenate([[0.0], np.cumsum(self.masses)])

    def as_measure(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms at the cell centres with the cell masses as weights."""
        return self.centers, self.masses

    @classmethod
    def from_cdf(cls, cdf, x_max: float, cells: int, normalize: bool = True) -> "GriddedDensity":
        """Exact cell averages of a distribution given by its CDF."""
        edges = np.linspace(0.0, x_max, cells + 1)
        values = np.diff(cdf(edges)) / (x_max / cells)
        values = np.maximum(values, 0.0)
        density = cls(x_max, values)
        return density.normalized() if normalize else density

    @classmethod
    def from_pdf(cls, pdf, x_max: float, cells: int, normalize: bool = True) -> "GriddedDensity":
        dx = x_max / cells
        density = cls(x_max, np.maximum(pdf((np.arange(cells) + 0.5) * dx), 0.0))
        return density.normalized() if normalize else density


@dataclass(frozen=True)
class GriddedFunction:
    points: np.ndarray
    values: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0])

    def integral(self) -> float:
        """Midpoint-rule integral; each point carries one spacing."""
        return float(self.values.sum() * self.spacing)


# --- named densities ------------------------------------------------------------------

def exponential_cdf(m: float):
    return lambda x: -np.expm1(-np.asarray(x) / m)


def equilibrium_pdf(x, m: float, w0: float = math.inf):
    """Exponential equilibrium of mean ``m``, truncated to ``[0, w0]`` when ``w0`` is finite."""
    if m <= 0:
        raise ValueError("m must be positive")
    x = np.asarray(x, dtype=float)
    if math.isinf(w0):
        return np.exp(-x / m) / m
    return np.where(x <= w0, np.exp(-x / m) / (m * -np.expm1(-w0 / m)), 0.0)


def equilibrium_density(m: float, w0: float = math.inf, x_max: float | None = None,
                        cells: int = 3000) -> GriddedDensity:
    if m <= 0:
        raise ValueError("m must be positive")
    if x_max is None:
        if math.isinf(w0):
            raise ValueError("x_max is required when w0 is infinite")
        x_max = w0
    if math.isinf(w0):
        if math.exp(-x_max / m) > TAIL_TOLERANCE:
            warnings.warn(f"exponential tail beyond x_max={x_max} is {math.exp(-x_max / m):.2e}, "
                          f"above {TAIL_TOLERANCE:g}", RuntimeWarning, stacklevel=2)
        cdf = exponential_cdf(m)
    else:
        if x_max < w0:
            raise ValueError("x_max must cover [0, w0]")
        scale = -math.expm1(-w0 / m)

        def cdf(x):
            return -np.expm1(-np.minimum(x, w0) / m) / scale

    return GriddedDensity.from_cdf(cdf, x_max, cells)


def uniform_density(a: float, b: float, x_max: float, cells: int) -> GriddedDensity:
    return GriddedDensity.from_cdf(lambda x: np.clip((x - a) / (b - a), 0.0, 1.0), x_max, cells)


def spike_density(x_max: float, cells: int) -> GriddedDensity:
    """All mass in the first cell: the grid image of ``delta_0``."""
    values = np.zeros(cells)
    values[0] = cells / x_max
    return GriddedDensity(x_max, values)


def geometric_density(p: float, x_max: float, cells: int) -> GriddedDensity:
    """Geometric law smeared uniformly over unit cells: ``p (1-p)^floor(x)``."""
    def cdf(x):
        x = np.asarray(x, dtype=float)
        k = np.floor(x)
        return 1.0 - (1 - p) ** k + (x - k) * p * (1 - p) ** k

    return GriddedDensity.from_cdf(cdf, x_max, cells)


def gamma_density(shape: float, scale: float, x_max: float, cells: int) -> GriddedDensity:
    from scipy.stats import gamma
    return GriddedDensity.from_cdf(gamma(shape, scale=scale).cdf, x_max, cells)


def named_density(name: str, x_max: float, cells: int, w0: float = math.inf, **params) -> GriddedDensity:
    if name in ("exponential", "equilibrium"):
        return equilibrium_density(params.get("m", 1.0), w0, x_max, cells)
    if name == "uniform":
        return uniform_density(params.get("a", 0.0), params.get("b", 2.0), x_max, cells)
    if name == "spike":
        return spike_density(x_max, cells)
    if name == "geometric":
        return geometric_density(params.get("p", 0.5), x_max, cells)
    if name == "gamma":
        return gamma_density(params.get("shape", 2.0), params.get("scale", 0.5), x_max, cells)
    raise ValueError(f"unknown initial density {name!r}")


# --- operators --------------------------------------------------------------------------

def self_convolve(f: GriddedDensity) -> GriddedFunction:
    """``(f*f)(s)`` at the nodes ``s_n = (n+1) dx``, ``n = 0 .. 2M-2``.

    At a node the two cell grids align, so the midpoint rule reads
    ``(f*f)(s_n) = dx * sum_{i+j=n} f_i f_j``.
    """
    conv = fftconvolve(f.values, f.values) * f.dx
    conv = np.maximum(conv, 0.0)  # FFT round-off can leave tiny negatives
    nodes = (np.arange(conv.size) + 1) * f.dx
    return GriddedFunction(nodes, conv)


def _pair_limit(f: GriddedDensity, w0: float) -> int:
    """Largest pair index ``n`` with ``(n+1) dx <= w0``, capped at ``2M - 2``."""
    top = 2 * f.cells - 2
    if math.isinf(w0):
        return top
    return min(top, int(math.floor(w0 / f.dx * (1 + 1e-12))) - 1)


def _check_support(f: GriddedDensity, w0: float):
    if math.isinf(w0):
        return
    outside = f.edges[:-1] >= w0 * (1 - 1e-12)
    if np.any(f.values[outside] > 0):
        raise ValueError(f"density has mass beyond w0={w0}")


def gain_loss(f: GriddedDensity, w0: float = math.inf) -> tuple[np.ndarray, np.ndarray]:
    _check_support(f, w0)
    M = f.cells
    dx = f.dx
    masses = f.masses
    pairs = fftconvolve(masses, masses)
    pairs = np.maximum(pairs, 0.0)
    # on a truncated domain pairs whose sum leaves the grid do not interact,
    # which keeps mass and wealth exactly conserved
    n_max = _pair_limit(f, min(w0, f.x_max))
    pairs[n_max + 1:] = 0.0
    share = pairs / (np.arange(pairs.size) + 1)
    # cell c receives share_n from every pair node n >= c
    gain = 2.0 / dx * np.cumsum(share[::-1])[::-1][:M]
    cumulative = np.concatenate([[0.0], np.cumsum(masses)])
    # partner j pairs with cell k while k + j <= n_max
    upto = np.clip(n_max - np.arange(M) + 1, 0, M)
    partner_mass = cumulative[upto]
    loss = 2.0 * f.values * partner_mass
    return gain, loss


def qbar_apply(f: GriddedDensity, w0: float = math.inf) -> np.ndarray:
    """Discrete ``Qbar_{w0}(f)`` at the cell centres.

    For ``w0 = inf`` pair sums are capped at ``x_max``; the difference from
    the untruncated operator is bounded by the mass within reach of the edge.
    """
    gain, loss = gain_loss(f, w0)
    return gain - loss


def relative_l1(a: np.ndarray, b: np.ndarray, f: GriddedDensity, w0: float = math.inf) -> float:
    """``||a - b||_1`` relative to the loss term of ``f``.

    The loss term sets the natural scale of the operator; ``||Qbar f||_1`` itself
    is near zero at equilibria and cannot serve as a denominator.
    """
    _, loss = gain_loss(f, w0)
    return float(np.abs(a - b).sum() / np.abs(loss).sum())


def _gauss_panels(lo: float, hi: float, panels: int, order: int = 3):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    points = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return points, w


def _linear_interpolant(f: GriddedDensity):
    knots = np.concatenate([[0.0], f.centers, [f.x_max]])
    vals = np.concatenate([[f.values[0]], f.values, [f.values[-1]]])

    def interp(x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= 0) & (x <= f.x_max), np.interp(x, knots, vals), 0.0)

    return interp, knots, vals


def qbar_apply_direct(f: GriddedDensity, w0: float = math.inf, x=None, order: int = 3,
                      refine: int = 4) -> np.ndarray:
    """Literal double integral ``2 int_{x/w0}^1 int_0^x f(y/r) f((x-y)/r) dy dr/r^2`` minus loss.

    ``f`` is read as the piecewise-linear interpolant of its cell values.
    Substituting ``r = x/s`` and ``y = v x`` removes the ``1/r^2`` endpoint,
    leaving ``2 int_x^{w0} int_0^1 f(v s) f((1-v) s) dv ds``; both integrals
    use composite Gauss-Legendre rules at a resolution of ``dx/refine``.
    Independent of :func:`qbar_apply`; meant for coarse grids only.
    """
    if f.cells > DIRECT_MAX_CELLS:
        raise ValueError(f"direct evaluation is limited to {DIRECT_MAX_CELLS} cells")
    _check_support(f, w0)
    interp, knots, vals = _linear_interpolant(f)
    dx = f.dx
    x = f.centers if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    top = 2.0 * f.x_max if math.isinf(w0) else min(w0, 2.0 * f.x_max)

    def inner(s):
        panels = max(1, int(math.ceil(refine * s / dx)))
        v, w = _gauss_panels(0.0, 1.0, panels, order)
        return float(np.dot(w, interp(v * s) * interp((1.0 - v) * s)))

    # outer panels of width dx/refine starting at 0
    width = dx / refine
    n_panels = int(math.ceil(top / width - 1e-9))
    edges = np.minimum(np.arange(n_panels + 1) * width, top)
    gl_nodes, gl_weights = np.polynomial.legendre.leggauss(order)
    panel_integrals = np.empty(n_panels)
    for p in range(n_panels):
        a, b = edges[p], edges[p + 1]
        pts = 0.5 * (a + b) + 0.5 * (b - a) * gl_nodes
        panel_integrals[p] = 0.5 * (b - a) * sum(wk * inner(sk) for sk, wk in zip(pts, gl_weights))
    tail_from = np.concatenate([np.cumsum(panel_integrals[::-1])[::-1], [0.0]])

    gain = np.empty(x.size)
    for k, xk in enumerate(x):
        if xk >= top:
            gain[k] = 0.0
            continue
        p = int(xk // width)
        b = edges[p + 1]
        pts = 0.5 * (xk + b) + 0.5 * (b - xk) * gl_nodes
        partial = 0.5 * (b - xk) * sum(wk * inner(sk) for sk, wk in zip(pts, gl_weights))
        gain[k] = 2.0 * (partial + tail_from[p + 1])

    # loss: exact integral of the piecewise-linear interpolant
    segment = 0.5 * (vals[1:] + vals[:-1]) * np.diff(knots)
    cumulative = np.concatenate([[0.0], np.cumsum(segment)])

    def integral_to(z):
        z = np.clip(z, 0.0, f.x_max)
        k = np.clip(np.searchsorted(knots, z, side="right") - 1, 0, knots.size - 2)
        return cumulative[k] + 0.5 * (vals[k] + interp(z)) * (z - knots[k])

    if math.isinf(w0):
        partner = np.full(x.size, cumulative[-1])
    else:
        partner = integral_to(np.maximum(w0 - x, 0.0))
    loss = 2.0 * interp(x) * partner
    return gain - loss


def q_bracket(g: TestFunction, mu, w0: float = math.inf, symmetrized: bool = True) -> float:
    """``<g, Q(mu)>`` for an atomic or gridded measure, full double sum including ``i = j``.

    With ``symmetrized=False`` the two halves ``g(r s)`` and ``g((1-r) s)`` are
    integrated separately instead of as ``2 g(r s)``.
    """
    if isinstance(mu, GriddedDensity):
        atoms, weights = mu.as_measure()
    elif isinstance(mu, EmpiricalMeasure):
        atoms, weights = mu.atoms, mu.weights
    else:
        atoms, weights = (np.asarray(a, dtype=float) for a in mu)
    gvals = g(atoms)
    total = 0.0
    chunk = max(1, 2_000_000 // max(1, atoms.size))
    for start in range(0, atoms.size, chunk):
        rows = atoms[start:start + chunk]
        s = rows[:, None] + atoms[None, :]
        if symmetrized:
            split = 2.0 * g.split_average(s)
        else:
            split = g.split_average(s) + g.reflected_average(s)
        kernel = split - gvals[start:start + chunk, None] - gvals[None, :]
        kernel = np.where(s <= w0, kernel, 0.0)
        total += float(weights[start:start + chunk] @ kernel @ weights)
    return total


def pair_with_grid(g: TestFunction, f: GriddedDensity, values: np.ndarray) -> float:
    """``<g, h>`` for a gridded function ``h`` (midpoint rule)."""
    return float(np.dot(g(f.centers), values) * f.dx)


# --- time stepping ------------------------------------------------------------------------

@dataclass
class KineticRunConfig:
    w0: float = math.inf
    horizon: float = 10.0
    dt: float = 0.05
    x_max: float = 30.0
    cells: int = 3000
    initial: str = "uniform"
    initial_params: dict = field(default_factory=dict)
    method: str = "rk4"
    snapshot_every: float = 1.0

    def __post_init__(self):
        self.w0 = float(self.w0)
        if not 0 < self.dt <= MAX_DT:
            raise ValueError(f"dt must lie in (0, {MAX_DT}]")
        if not math.isinf(self.w0) and self.x_max < self.w0:
            raise ValueError("x_max must be at least w0")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"unknown time integrator {self.method!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> "KineticRunConfig":
        known = {"w0", "horizon", "dt", "x_max", "cells", "initial", "method", "snapshot_every"}
        kwargs, params = {}, {}
        for key, value in values.items():
            if key in known:
                kwargs[key] = value
            elif key.startswith("init_"):
                params[key[5:]] = float(value)
            else:
                raise ValueError(f"unknown kinetic config key {key!r}")
        for key in ("w0", "horizon", "dt", "x_max", "snapshot_every"):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        if "cells" in kwargs:
            kwargs["cells"] = int(kwargs["cells"])
        return cls(initial_params=params, **kwargs)

    def initial_density(self) -> GriddedDensity:
        return named_density(self.initial, self.x_max, self.cells, self.w0, **self.initial_params)


@dataclass
class KineticSolution:
    times: list
    densities: list
    clipped_mass: float = 0.0
    steps: int = 0

    def at(self, t: float) -> GriddedDensity:
        k = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[k] - t) > 1e-9:
            raise KeyError(f"no snapshot at t={t}")
        return self.densities[k]

    @property
    def final(self) -> GriddedDensity:
        return self.densities[-1]


def _rk4(values, dt, rhs):
    k1 = rhs(values)
    k2 = rhs(values + 0.5 * dt * k1)
    k3 = rhs(values + 0.5 * dt * k2)
    k4 = rhs(values + dt * k3)
    return values + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def kinetic_solve(config: KineticRunConfig, initial: GriddedDensity | None = None) -> KineticSolution:
    """Explicit time stepping of ``df/dt = Qbar_{w0}(f)``.

    After each step negative values are clipped and the density renormalised
    to unit mass; the clipped mass is accumulated in the result.
    """
    f = initial if initial is not None else config.initial_density()
    x_max, dx = f.x_max, f.dx
    w0 = config.w0

    def rhs(values):
        return qbar_apply(GriddedDensity(x_max, np.maximum(values, 0.0)), w0)

    steps = int(math.ceil(config.horizon / config.dt - 1e-9))
    dt = config.horizon / steps if steps else 0.0
    stride = max(1, int(round(config.snapshot_every / dt))) if steps else 1
    times, densities = [0.0], [f]
    clipped_total = 0.0
    values = f.values.copy()
    for k in range(1, steps + 1):
        if config.method == "rk4":
            values = _rk4(values, dt, rhs)
        else:
            values = values + dt * rhs(values)
        negative = values < 0
        clipped = float(-values[negative].sum() * dx)
        if clipped > MAX_CLIPPED_PER_STEP:
            raise KineticInstabilityError(
                f"step {k} clipped mass {clipped:.3e}; use a smaller dt or a finer grid")
        clipped_total += clipped
        values[negative] = 0.0
        values /= values.sum() * dx
        if k % stride == 0 or k == steps:
            times.append(k * dt)
            densities.append(GriddedDensity(x_max, values.copy()))
    return KineticSolution(times, densities, clipped_total, steps)


# --- Laplace-transform probe -----------------------------------------------------------------

@dataclass
class LaplaceReport:
    t: np.ndarray
    transform: np.ndarray
    m: float
    max_deviation: float


def laplace_transform(f: GriddedDensity, t) -> np.ndarray:
    """``int e^{-t x} f(x) dx`` of the piecewise-constant density, exact per cell."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    edges = f.edges
    out = np.empty(t.size)
    for k, tk in enumerate(t):
        if tk == 0:
            out[k] = f.mass()
        else:
            # int_a^b e^{-t x} dx = e^{-t a} (1 - e^{-t dx}) / t
            out[k] = float(np.dot(f.values, np.exp(-tk * edges[:-1])) * -np.expm1(-tk * f.dx) / tk)
    return out


def laplace_check(f: GriddedDensity, t_grid) -> LaplaceReport:
    """Fit ``1/(1 + m t)`` at ``t = 1`` and report the worst deviation over ``t_grid``."""
    t_grid = np.asarray(t_grid, dtype=float)
    m = 1.0 / laplace_transform(f, 1.0)[0] - 1.0
    values = laplace_transform(f, t_grid)
    model = 1.0 / (1.0 + m * t_grid)
    return LaplaceReport(t_grid, values, float(m), float(np.max(np.abs(values - model))))


# --- export ----------------------------------------------------------------------------------

def write_density_csv(path, f: GriddedDensity) -> None:
    lines = ["x,f(x)"] + [f"{x!r},{v!r}" for x, v in zip(f.centers.tolist(), f.values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")
