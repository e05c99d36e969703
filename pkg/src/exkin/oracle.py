"""Exact transition matrices of the DS-DT chain on small state spaces."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .state import DiscreteWealthState, composition_count, enumerate_states

MATRIX_STATE_CAP = 10**4
POWER_TOLERANCE = 1e-13
POWER_ITERATION_CAP = 10**6


class ConvergenceError(RuntimeError):
    pass


@dataclass
class TransitionMatrix:
    matrix: np.ndarray
    states: list[DiscreteWealthState]

    @property
    def size(self) -> int:
        return len(self.states)

    def index(self, counts) -> int:
        return self._lookup()[tuple(int(c) for c in counts)]

    def _lookup(self):
        if not hasattr(self, "_index"):
            self._index = {s.counts: k for k, s in enumerate(self.states)}
        return self._index

    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def column_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def k_step_law(self, start, k: int) -> np.ndarray:
        """Row of ``P^k`` for the given start state."""
        law = np.zeros(self.size)
        law[self.index(start)] = 1.0
        for _ in range(k):
            law = law @ self.matrix
        return law


KERNELS = ("dsdt", "symmetric")


def transition_row(counts, exact: bool = False, kernel: str = "dsdt") -> dict:
    """Law of the next DS-DT state from ``counts`` as ``{next_counts: probability}``.

    Every ordered pair ``(i, j)`` has weight ``1/(N(N-1))``; given the pair, the
    new value of agent ``i`` is uniform on ``{0, ..., s-1}`` with ``s = x_i + x_j``,
    and a pair with ``s = 0`` leaves the state in place.

    ``kernel="symmetric"`` draws agent ``i``'s share from ``{0, ..., s}`` instead.
    That kernel is symmetric, hence doubly stochastic; the DS-DT kernel is not
    (its column sums deviate from 1 once some pair can leave ``x_j' = 0``).
    It exists only as a diagnostic comparison.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    extra = 1 if kernel == "symmetric" else 0
    counts = tuple(int(c) for c in counts)
    N = len(counts)
    one = Fraction(1) if exact else 1.0
    pair_weight = one / (N * (N - 1))
    row: dict = {}
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            s = counts[i] + counts[j]
            if s == 0:
                row[counts] = row.get(counts, 0) + pair_weight
                continue
            for a in range(s + extra):
                nxt = list(counts)
                nxt[i] = a
                nxt[j] = s - a
                key = tuple(nxt)
                row[key] = row.get(key, 0) + pair_weight / (s + extra)
    return row


def build_transition_matrix(n: int, N: int, cap: int = MATRIX_STATE_CAP,
                            kernel: str = "dsdt") -> TransitionMatrix:
    size = composition_count(n, N)
    if size > cap:
        raise MemoryError(f"{size} states exceed the transition-matrix cap of {cap}")
    states = enumerate_states(n, N)
    index = {s.counts: k for k, s in enumerate(states)}
    P = np.zeros((size, size))
    for k, state in enumerate(states):
        for nxt, prob in transition_row(state.counts, kernel=kernel).items():
            P[k, index[nxt]] += prob
    out = TransitionMatrix(P, states)
    out._index = index
    return out


def stationary_distribution(P, tol: float = POWER_TOLERANCE, max_iter: int = POWER_ITERATION_CAP,
                            start=None) -> np.ndarray:
    """Fixed point of ``pi -> pi P`` by power iteration, stopped when the L1 change is below ``tol``.

    The lazy kernel ``(I + P)/2`` is iterated; it has the same stationary law
    and cannot oscillate on a periodic chain.
    """
    matrix = P.matrix if isinstance(P, TransitionMatrix) else np.asarray(P, dtype=float)
    S = matrix.shape[0]
    pi = np.full(S, 1.0 / S) if start is None else np.asarray(start, dtype=float)
    if start is None and S > 1:
        # a non-uniform start so doubly stochastic matrices are not trivially converged
        pi = np.arange(1, S + 1, dtype=float)
        pi /= pi.sum()
    for _ in range(max_iter):
        nxt = 0.5 * (pi + pi @ matrix)
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def random_doubly_stochastic(size: int, rng, terms: int = 8) -> np.ndarray:
    """Convex combination of random permutation matrices."""
    weights = rng.dirichlet(np.ones(terms))
    P = np.zeros((size, size))
    for w in weights:
        P[np.arange(size), rng.permutation(size)] += w
    return P


def write_matrix(path, legend_path, T: TransitionMatrix) -> None:
    rows = [",".join(repr(float(v)) for v in row) for row in T.matrix]
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    with open(legend_path, "w") as fh:
        fh.write("index,state\n")
        for k, s in enumerate(T.states):
            fh.write(f"{k},{' '.join(map(str, s.counts))}\n")
