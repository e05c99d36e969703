"""Wealth states for the discrete and continuous exchange chains.

Discrete states are compositions of an integer total ``n`` into ``N``
nonnegative parts; continuous states are points of the scaled simplex.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

INT64_MAX = np.iinfo(np.int64).max
DEFAULT_ENUMERATION_CAP = 10**6


def _conservation_tolerance(total: float) -> float:
    return 1e-9 * max(1.0, abs(total))


@dataclass(frozen=True)
class DiscreteWealthState:
    counts: tuple[int, ...]
    total: int

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) < 2:
            raise ValueError("a wealth state needs at least two agents")
        if any(c < 0 for c in counts):
            raise ValueError("wealth counts must be nonnegative")
        if sum(counts) != self.total:
            raise ValueError(f"counts sum to {sum(counts)}, expected total {self.total}")

    @classmethod
    def from_counts(cls, counts) -> "DiscreteWealthState":
        counts = tuple(int(c) for c in counts)
        return cls(counts, sum(counts))

    @property
    def agents(self) -> int:
        return len(self.counts)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    def scaled(self) -> "ContinuousWealthState":
        """Wealth proportions ``counts / n`` on the meshed unit simplex."""
        if self.total == 0:
            raise ValueError("cannot normalise the zero composition")
        return ContinuousWealthState(self.as_array() / self.total, 1.0)


@dataclass(frozen=True)
class ContinuousWealthState:
    wealth: np.ndarray
    total: float

    def __post_init__(self):
        wealth = np.array(self.wealth, dtype=float)
        wealth.setflags(write=False)
        object.__setattr__(self, "wealth", wealth)
        object.__setattr__(self, "total", float(self.total))
        if wealth.ndim != 1 or wealth.size < 2:
            raise ValueError("a wealth state needs at least two agents")
        if np.any(wealth < 0):
            raise ValueError("wealth entries must be nonnegative")
        drift = abs(wealth.sum() - self.total)
        if drift > _conservation_tolerance(self.total):
            raise ValueError(f"wealth sums to {wealth.sum()!r}, expected {self.total!r}")

    @classmethod
    def from_wealth(cls, wealth) -> "ContinuousWealthState":
        wealth = np.asarray(wealth, dtype=float)
        return cls(wealth, float(wealth.sum()))

    @property
    def agents(self) -> int:
        return self.wealth.size


@dataclass(frozen=True)
class MeshSpec:
    denominator: int

    def __post_init__(self):
        if int(self.denominator) != self.denominator or self.denominator < 1:
            raise ValueError("mesh denominator must be a positive integer")

    @property
    def width(self) -> float:
        return 1.0 / self.denominator


def _denominator(mesh) -> int:
    return mesh.denominator if isinstance(mesh, MeshSpec) else MeshSpec(mesh).denominator


def mesh_floor(x: float, mesh) -> float:
    """Largest multiple ``a/n`` of the mesh width not exceeding ``x``.

    The integer ``a`` is computed exactly from the binary value of ``x``, so
    ``a/n <= x < (a+1)/n`` holds as a statement about real numbers.
    """
    n = _denominator(mesh)
    if x < 0 or math.isnan(x):
        raise ValueError(f"mesh_floor needs a nonnegative argument, got {x!r}")
    a = math.floor(Fraction(x) * n)
    return a / n


def mesh_floor_index(x: float, mesh) -> int:
    """The integer ``a`` such that ``mesh_floor(x) == a/n``."""
    n = _denominator(mesh)
    if x < 0 or math.isnan(x):
        raise ValueError(f"mesh_floor needs a nonnegative argument, got {x!r}")
    return math.floor(Fraction(x) * n)


def composition_count(n: int, N: int) -> int:
    """Number of compositions of ``n`` into ``N`` nonnegative parts.

    Returns an exact Python integer; see :func:`checked_int64` for the
    boundary where a fixed-width count is needed.
    """
    if n < 0 or N < 1:
        raise ValueError("composition_count needs n >= 0 and N >= 1")
    return math.comb(n + N - 1, N - 1)


def checked_int64(value: int) -> int:
    if not -INT64_MAX - 1 <= value <= INT64_MAX:
        raise OverflowError(f"{value} does not fit in a signed 64-bit integer")
    return int(value)


def enumerate_states(n: int, N: int, cap: int = DEFAULT_ENUMERATION_CAP) -> list[DiscreteWealthState]:
    """All compositions of ``n`` into ``N >= 2`` parts in lexicographic order."""
    if N < 2:
        raise ValueError("states need at least two agents")
    size = composition_count(n, N)
    if size > cap:
        raise MemoryError(f"{size} states exceed the enumeration cap of {cap}")
    states = []
    # bars positions in increasing order give compositions in decreasing
    # lexicographic order of the first part, hence the reversal below
    for bars in itertools.combinations(range(n + N - 1), N - 1):
        prev = -1
        parts = []
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(n + N - 2 - prev)
        states.append(tuple(parts))
    states.sort()
    return [DiscreteWealthState(s, n) for s in states]


def project_to_mesh(wealth, mesh) -> np.ndarray:
    """Integer mesh coordinates of a total-one state.

    Each agent but the last is floored onto the mesh; the last agent takes
    the remainder so the coordinates sum to ``n`` exactly.
    """
    n = _denominator(mesh)
    wealth = np.asarray(wealth, dtype=float)
    if np.any(wealth < 0):
        raise ValueError("wealth entries must be nonnegative")
    total = wealth.sum()
    if abs(total - 1.0) > _conservation_tolerance(1.0):
        raise ValueError("mesh projection needs a state of total wealth 1")
    head = [mesh_floor_index(float(w), n) for w in wealth[:-1]]
    last = n - sum(head)
    if last < 0:
        raise ValueError("state cannot be projected onto the mesh")
    return np.asarray(head + [last], dtype=np.int64)


def mesh_coordinates(wealth, mesh, atol: float = 1e-9) -> np.ndarray:
    """Integer coordinates of a state that already lies on the mesh."""
    n = _denominator(mesh)
    scaled = np.asarray(wealth, dtype=float) * n
    coords = np.rint(scaled)
    if np.any(np.abs(scaled - coords) > atol * max(1.0, n)) or np.any(coords < 0):
        raise ValueError(f"state is not on the mesh of width 1/{n}")
    return coords.astype(np.int64)


def write_state(path, wealth, total=None) -> None:
    """Write a state file: ``# N=<N> total=<W>`` header, then ``agent_index,wealth`` rows."""
    wealth = np.asarray(wealth)
    if total is None:
        total = wealth.sum()
    lines = [f"# N={wealth.size} total={_format_number(total)}", "agent_index,wealth"]
    lines += [f"{k},{_format_number(w)}" for k, w in enumerate(wealth.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_state(path) -> ContinuousWealthState:
    N = total = None
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                key, _, value = token.partition("=")
                if key == "N":
                    N = int(value)
                elif key == "total":
                    total = float(value)
            continue
        if line.startswith("agent_index"):
            continue
        index, value = line.split(",")
        rows.append((int(index), float(value)))
    rows.sort()
    wealth = np.array([v for _, v in rows])
    if N is not None and wealth.size != N:
        raise ValueError(f"header announces N={N} but file has {wealth.size} rows")
    if total is None:
        total = wealth.sum()
    return ContinuousWealthState(wealth, total)


def _format_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))
