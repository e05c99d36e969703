"""Simulators for the random-exchange chains.

Three dynamics share one interaction rule: an ordered pair ``(i, j)`` of
distinct agents is drawn uniformly, and agent ``i`` receives a uniform share
of the pair's joint wealth while ``j`` keeps the rest.

* DS-DT: integer wealth, agent ``i`` gets ``floor(U * s)`` units.
* CS-DT: real wealth, agent ``i`` gets ``r * s``.
* Poissonised CS-DT: CS-DT jumps at the events of a Poisson clock of total
  rate ``N - 1`` (each ordered pair at rate ``1/N``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator
from .state import (
    ContinuousWealthState,
    DiscreteWealthState,
    mesh_coordinates,
    project_to_mesh,
)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    first_agent: int
    second_agent: int
    fraction: float

    def __post_init__(self):
        if self.first_agent == self.second_agent:
            raise ValueError("an interaction needs two distinct agents")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("the exchanged fraction must lie in [0, 1]")


@dataclass
class TrajectoryRecord:
    """Event log and snapshots of one Poissonised run.

    The event log is stored column-wise; ``initial`` plus the log is enough to
    replay the path exactly (see :func:`replay`).
    """

    initial: np.ndarray
    horizon: float
    times: np.ndarray
    first: np.ndarray
    second: np.ndarray
    fractions: np.ndarray
    snapshots: list = field(default_factory=list)

    def __post_init__(self):
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("event times must be strictly increasing")

    @property
    def total(self) -> float:
        return float(self.initial.sum())

    @property
    def agents(self) -> int:
        return self.initial.size

    def __len__(self):
        return self.times.size

    def events(self):
        for t, i, j, r in zip(self.times, self.first, self.second, self.fractions):
            yield JumpEvent(float(t), int(i), int(j), float(r))

    def final_state(self) -> np.ndarray:
        state = self.initial.copy()
        for i, j, r in zip(self.first.tolist(), self.second.tolist(), self.fractions.tolist()):
            s = state[i] + state[j]
            state[i] = r * s
            state[j] = s - r * s
        return state


def pair_from_index(k, N):
    """Map ``k`` in ``[0, N(N-1))`` to an ordered pair of distinct agents."""
    i = k // (N - 1)
    j = k % (N - 1)
    return i, j + (j >= i)


def draw_pairs(rng, N: int, size=None):
    k = rng.integers(0, N * (N - 1), size=size)
    i, j = pair_from_index(k, N)
    if size is None:
        return int(i), int(j)
    return i.astype(np.int64), j.astype(np.int64)


# --- discrete space, discrete time -------------------------------------------------

def dsdt_update(counts: np.ndarray, i: int, j: int, u: float) -> np.ndarray:
    """Deterministic DS-DT move for the pair ``(i, j)`` and uniform ``u``."""
    out = np.array(counts, dtype=np.int64)
    s = int(out[i] + out[j])
    if s == 0:
        return out
    first = min(int(u * s), s - 1)
    out[i] = first
    out[j] = s - first
    return out


def dsdt_step(state: DiscreteWealthState, rng) -> DiscreteWealthState:
    rng = as_generator(rng)
    i, j = draw_pairs(rng, state.agents)
    u = rng.random()
    return DiscreteWealthState(tuple(dsdt_update(state.as_array(), i, j, u).tolist()), state.total)


def dsdt_run_batch(counts: np.ndarray, steps: int, rng) -> np.ndarray:
    """Advance a batch of independent DS-DT chains, one per row."""
    rng = as_generator(rng)
    x = np.array(counts, dtype=np.int64, copy=True)
    if x.ndim == 1:
        x = x[None, :]
    R, N = x.shape
    rows = np.arange(R)
    for _ in range(steps):
        i, j = draw_pairs(rng, N, size=R)
        u = rng.random(R)
        s = x[rows, i] + x[rows, j]
        first = np.minimum((u * s).astype(np.int64), np.maximum(s - 1, 0))
        x[rows, i] = first
        x[rows, j] = s - first
    return x


def floor_update(y: np.ndarray, i: int, j: int, u: float, n: int) -> np.ndarray:
    """DS-DT move written on the meshed simplex: ``y_i' = [u (y_i + y_j)]_n``."""
    coords = mesh_coordinates(y, n)
    return dsdt_update(coords, i, j, u) / n


def dsdt_step_via_floor(state: ContinuousWealthState, n: int, rng) -> ContinuousWealthState:
    if abs(state.total - 1.0) > 1e-9:
        raise ValueError("the meshed chain lives on the unit simplex")
    mesh_coordinates(state.wealth, n)
    rng = as_generator(rng)
    i, j = draw_pairs(rng, state.agents)
    u = rng.random()
    return ContinuousWealthState(floor_update(state.wealth, i, j, u, n), 1.0)


# --- continuous space ---------------------------------------------------------------

def exchange(wealth: np.ndarray, i: int, j: int, r: float) -> np.ndarray:
    """CS-DT move: ``(x_i, x_j) -> (r s, s - r s)`` with ``s = x_i + x_j``."""
    out = np.array(wealth, dtype=float)
    s = out[i] + out[j]
    out[i] = r * s
    out[j] = s - r * s
    return out


def csdt_step(state: ContinuousWealthState, rng) -> ContinuousWealthState:
    rng = as_generator(rng)
    i, j = draw_pairs(rng, state.agents)
    r = rng.random()
    return ContinuousWealthState(exchange(state.wealth, i, j, r), state.total)


def csdt_run(wealth, steps: int, rng) -> TrajectoryRecord:
    """CS-DT chain for ``steps`` steps; event times are the step indices 1..steps."""
    rng = as_generator(rng)
    x = np.array(wealth, dtype=float)
    N = x.size
    first, second = draw_pairs(rng, N, size=steps)
    fractions = rng.random(steps)
    record = TrajectoryRecord(x.copy(), float(steps), np.arange(1, steps + 1, dtype=float),
                              first, second, fractions)
    return record


# --- Poissonised dynamics -----------------------------------------------------------

def poisson_event_times(rng, rate: float, horizon: float) -> np.ndarray:
    """Jump times of a homogeneous Poisson process on ``[0, horizon]``."""
    if rate <= 0 or horizon <= 0:
        return np.empty(0)
    chunks = []
    t = 0.0
    block = int(rate * horizon + 4 * np.sqrt(rate * horizon) + 16)
    while True:
        gaps = rng.exponential(1.0 / rate, size=block)
        times = t + np.cumsum(gaps)
        chunks.append(times[times <= horizon])
        if times[-1] > horizon:
            break
        t = times[-1]
    return np.concatenate(chunks)


def poisson_simulate(initial, horizon: float, rng, snapshot_every: float | None = None) -> TrajectoryRecord:
    """Poissonised CS-DT run on ``[0, horizon]``.

    Jumps happen at total rate ``N - 1``. Snapshots of the full wealth vector
    are taken at ``0, snapshot_every, 2*snapshot_every, ...`` and at the horizon.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = as_generator(rng)
    if isinstance(initial, ContinuousWealthState):
        x = initial.wealth.copy()
    else:
        x = np.array(initial, dtype=float)
    N = x.size
    if N < 2:
        raise ValueError("need at least two agents")
    times = poisson_event_times(rng, N - 1.0, horizon)
    K = times.size
    first, second = draw_pairs(rng, N, size=K)
    fractions = rng.random(K)
    record = TrajectoryRecord(x.copy(), float(horizon), times, first, second, fractions)
    if snapshot_every:
        grid = np.arange(0.0, horizon, snapshot_every)
        grid = np.append(grid, horizon)
        record.snapshots = snapshots_at(record, grid)
    return record


def replay(record: TrajectoryRecord):
    """Yield ``(time, i, j, new_i, new_j)`` for every jump, reproducing the run bit-for-bit."""
    state = record.initial.copy()
    for t, i, j, r in zip(record.times.tolist(), record.first.tolist(),
                          record.second.tolist(), record.fractions.tolist()):
        s = state[i] + state[j]
        state[i] = r * s
        state[j] = s - r * s
        yield t, i, j, state[i], state[j]


def snapshots_at(record: TrajectoryRecord, times) -> list:
    """States of a recorded run at the requested (sorted) times."""
    times = np.asarray(times, dtype=float)
    state = record.initial.copy()
    out = []
    k = 0
    events = record.times
    for t in times:
        while k < events.size and events[k] <= t:
            i, j, r = record.first[k], record.second[k], record.fractions[k]
            s = state[i] + state[j]
            state[i] = r * s
            state[j] = s - r * s
            k += 1
        out.append((float(t), state.copy()))
    return out


def max_count_above(record: TrajectoryRecord, threshold: float) -> int:
    """Largest number of agents holding more than ``threshold`` at any time of the run."""
    state = record.initial.copy()
    above = state > threshold
    count = best = int(above.sum())
    for i, j, r in zip(record.first.tolist(), record.second.tolist(), record.fractions.tolist()):
        s = state[i] + state[j]
        state[i] = r * s
        state[j] = s - r * s
        new_i, new_j = state[i] > threshold, state[j] > threshold
        count += int(new_i) + int(new_j) - int(above[i]) - int(above[j])
        above[i], above[j] = new_i, new_j
        if count > best:
            best = count
    return best


# --- coupled DS/CS run --------------------------------------------------------------

@dataclass
class CoupledRun:
    discrete: np.ndarray    # (k+1, N) integer mesh coordinates
    continuous: np.ndarray  # (k+1, N) real proportions
    mesh: int

    @property
    def distances(self) -> np.ndarray:
        return np.max(np.abs(self.discrete / self.mesh - self.continuous), axis=1)

    @property
    def sup_distance(self) -> float:
        return float(self.distances.max())


def coupled_from_draws(initial, n: int, first, second, uniforms) -> CoupledRun:
    """Run the meshed DS-DT and the CS-DT chains on common pairs and uniforms."""
    coords = project_to_mesh(initial, n)
    y = coords.copy()
    x = coords / n
    first = np.asarray(first, dtype=np.int64)
    second = np.asarray(second, dtype=np.int64)
    uniforms = np.asarray(uniforms, dtype=float)
    k = uniforms.size
    ys = np.empty((k + 1, y.size), dtype=np.int64)
    xs = np.empty((k + 1, y.size))
    ys[0], xs[0] = y, x
    for step, (i, j, u) in enumerate(zip(first.tolist(), second.tolist(), uniforms.tolist()), 1):
        s = y[i] + y[j]
        if s > 0:
            a = min(int(u * s), s - 1)
            y[i], y[j] = a, s - a
        c = x[i] + x[j]
        x[i] = u * c
        x[j] = c - u * c
        ys[step], xs[step] = y, x
    return CoupledRun(ys, xs, n)


def coupled_paths(initial, n: int, steps: int, rng) -> CoupledRun:
    """Coupled DS-DT/CS-DT paths; ``sup_distance <= 2 * steps / n`` always holds."""
    rng = as_generator(rng)
    N = np.asarray(initial).size
    first, second = draw_pairs(rng, N, size=steps)
    uniforms = rng.random(steps)
    return coupled_from_draws(initial, n, first, second, uniforms)
