import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exkin.chains import (
    JumpEvent,
    TrajectoryRecord,
    coupled_from_draws,
    coupled_paths,
    csdt_run,
    csdt_step,
    draw_pairs,
    dsdt_run_batch,
    dsdt_step,
    dsdt_step_via_floor,
    dsdt_update,
    exchange,
    floor_update,
    max_count_above,
    pair_from_index,
    poisson_simulate,
    replay,
    snapshots_at,
)
from exkin.rng import RngStream, as_generator
from exkin.state import ContinuousWealthState, DiscreteWealthState
from exkin.stats import Exponential, Uniform, chi_square_validate, dkw_threshold, ks_statistic


def law_counts(rows, states):
    index = {s: k for k, s in enumerate(states)}
    counts = np.zeros(len(states))
    for row in map(tuple, rows.tolist()):
        counts[index[row]] += 1
    return counts


# --- pair selection -----------------------------------------------------------------------------

def test_pair_index_is_a_bijection():
    N = 6
    pairs = {pair_from_index(k, N) for k in range(N * (N - 1))}
    expected = {(i, j) for i in range(N) for j in range(N) if i != j}
    assert {(int(i), int(j)) for i, j in pairs} == expected


def test_draw_pairs_uniform():
    rng = RngStream(11).generator()
    i, j = draw_pairs(rng, 4, size=120_000)
    assert np.all(i != j)
    counts = np.bincount(i * 4 + j, minlength=16).reshape(4, 4)
    off = counts[~np.eye(4, dtype=bool)]
    assert chi_square_validate(off, np.ones(12)).passed


def test_jump_event_validation():
    with pytest.raises(ValueError):
        JumpEvent(0.0, 1, 1, 0.5)
    with pytest.raises(ValueError):
        JumpEvent(0.0, 0, 1, 1.5)


# --- DS-DT ----------------------------------------------------------------------------------------

def test_dsdt_one_step_law_from_two_zero():
    rows = dsdt_run_batch(np.tile([2, 0], (100_000, 1)), 1, RngStream(5))
    counts = law_counts(rows, [(0, 2), (1, 1), (2, 0)])
    result = chi_square_validate(counts, [0.25, 0.5, 0.25])
    assert result.passed, result


def test_dsdt_zero_state_is_absorbing():
    state = DiscreteWealthState((0, 0, 0, 0), 0)
    rng = RngStream(3).generator()
    for _ in range(50):
        state = dsdt_step(state, rng)
    assert state.counts == (0, 0, 0, 0)


@given(st.lists(st.integers(0, 50), min_size=2, max_size=6), st.data())
def test_dsdt_update_conserves_and_keeps_j_positive(counts, data):
    N = len(counts)
    i = data.draw(st.integers(0, N - 1))
    j = data.draw(st.integers(0, N - 1).filter(lambda v: v != i))
    u = data.draw(st.floats(0.0, 1.0, exclude_max=True))
    out = dsdt_update(np.array(counts), i, j, u)
    assert out.sum() == sum(counts)
    s = counts[i] + counts[j]
    if s > 0:
        assert 0 <= out[i] <= s - 1 and out[j] >= 1
    others = [k for k in range(N) if k not in (i, j)]
    assert list(out[others]) == [counts[k] for k in others]


def test_dsdt_batch_conserves_exactly():
    x0 = np.tile([7, 0, 3, 1, 0], (500, 1))
    out = dsdt_run_batch(x0, 200, RngStream(2))
    assert np.all(out.sum(axis=1) == 11)
    assert np.all(out >= 0)


def test_floor_construction_examples():
    np.testing.assert_allclose(floor_update(np.array([0.5, 0.5]), 0, 1, 0.7, 2), [0.5, 0.5])
    np.testing.assert_allclose(floor_update(np.array([0.5, 0.5]), 0, 1, 0.3, 2), [0.0, 1.0])


def test_floor_construction_rejects_off_mesh():
    with pytest.raises(ValueError):
        dsdt_step_via_floor(ContinuousWealthState([0.3, 0.7], 1.0), 2, RngStream(0))


def test_floor_construction_matches_dsdt_law():
    rng = RngStream(8).generator()
    start = ContinuousWealthState([1.0, 0.0], 1.0)
    rows = np.array([dsdt_step_via_floor(start, 2, rng).wealth * 2 for _ in range(100_000)])
    rows = np.rint(rows).astype(int)
    counts = law_counts(rows, [(0, 2), (1, 1), (2, 0)])
    assert chi_square_validate(counts, [0.25, 0.5, 0.25]).passed
    assert np.all(rows.sum(axis=1) == 2)


# --- CS-DT ----------------------------------------------------------------------------------------

def test_exchange_example():
    np.testing.assert_allclose(exchange(np.array([1.0, 0.0]), 0, 1, 0.25), [0.25, 0.75])


def test_csdt_zero_state_unchanged():
    state = ContinuousWealthState(np.zeros(3), 0.0)
    out = csdt_step(state, RngStream(1))
    np.testing.assert_array_equal(out.wealth, np.zeros(3))


def test_csdt_share_is_uniform_given_pair_sum():
    rng = RngStream(21).generator()
    start = np.array([0.2, 0.5, 0.3])
    ratios = np.empty(100_000)
    for k in range(ratios.size):
        i, j = draw_pairs(rng, 3)
        r = rng.random()
        out = exchange(start, i, j, r)
        ratios[k] = out[i] / (start[i] + start[j])
    assert ks_statistic(ratios, Uniform(0, 1).cdf) <= dkw_threshold(ratios.size)


def test_csdt_step_conserves_within_budget():
    rng = RngStream(4).generator()
    state = ContinuousWealthState.from_wealth(rng.exponential(size=50) * 1e3)
    total = state.total
    for _ in range(2000):
        state = csdt_step(state, rng)
    assert abs(state.wealth.sum() - total) <= 1e-9 * max(1.0, total)


def test_csdt_run_times_are_step_indices():
    record = csdt_run([0.5, 0.5, 0.0], 10, RngStream(1))
    np.testing.assert_array_equal(record.times, np.arange(1, 11))


# --- Poissonised chain ----------------------------------------------------------------------------

def test_poisson_jump_count_mean_and_variance():
    N, T, runs = 100, 5.0, 1000
    counts = np.array([len(poisson_simulate(np.ones(N), T, RngStream(9, k))) for k in range(runs)])
    mean = (N - 1) * T
    se = np.sqrt(mean / runs)
    assert abs(counts.mean() - mean) <= 3 * se
    # variance of a Poisson count equals its mean; sampling sd of s^2 is about mean*sqrt(2/runs)
    assert abs(counts.var(ddof=1) - mean) <= 4 * mean * np.sqrt(2.0 / runs)


def test_poisson_two_agents_have_unit_rate_gaps():
    record = poisson_simulate(np.array([0.4, 0.6]), 20_000.0, RngStream(12))
    gaps = np.diff(np.concatenate([[0.0], record.times]))
    assert ks_statistic(gaps, Exponential(1.0).cdf) <= dkw_threshold(gaps.size)


def test_poisson_snapshots_conserve_total():
    rng = RngStream(13).generator()
    x0 = rng.exponential(size=40)
    record = poisson_simulate(x0, 5.0, rng, snapshot_every=0.5)
    assert [t for t, _ in record.snapshots][-1] == 5.0
    for _, state in record.snapshots:
        assert abs(state.sum() - x0.sum()) <= 1e-9 * x0.sum()


def test_poisson_is_reproducible_per_stream():
    a = poisson_simulate(np.ones(10), 3.0, RngStream(1, 4))
    b = poisson_simulate(np.ones(10), 3.0, RngStream(1, 4))
    c = poisson_simulate(np.ones(10), 3.0, RngStream(1, 5))
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.fractions, b.fractions)
    assert a.times.size != c.times.size or not np.array_equal(a.times, c.times)


def test_replay_and_snapshots_agree_with_final_state():
    record = poisson_simulate(np.arange(1.0, 9.0), 4.0, RngStream(3))
    state = record.initial.copy()
    for t, i, j, new_i, new_j in replay(record):
        state[i], state[j] = new_i, new_j
    np.testing.assert_array_equal(state, record.final_state())
    (_, last), = snapshots_at(record, [4.0])
    np.testing.assert_array_equal(last, state)


def test_record_rejects_unsorted_times():
    with pytest.raises(ValueError):
        TrajectoryRecord(np.ones(2), 1.0, np.array([0.5, 0.2]), np.array([0, 1]),
                         np.array([1, 0]), np.array([0.1, 0.2]))


def test_max_count_above_matches_brute_force():
    rng = RngStream(17).generator()
    record = poisson_simulate(rng.exponential(size=30) / 30, 3.0, rng)
    state = record.initial.copy()
    best = int((state > 0.05).sum())
    for _, i, j, new_i, new_j in replay(record):
        state[i], state[j] = new_i, new_j
        best = max(best, int((state > 0.05).sum()))
    assert max_count_above(record, 0.05) == best


def test_exchangeability_under_relabeling():
    rng = RngStream(31).generator()
    N, K = 6, 300
    x0 = rng.exponential(size=N)
    first, second = draw_pairs(rng, N, size=K)
    fractions = rng.random(K)
    perm = rng.permutation(N)
    times = np.arange(1.0, K + 1)
    base = TrajectoryRecord(x0, float(K), times, first, second, fractions)
    y0 = np.empty(N)
    y0[perm] = x0
    relabeled = TrajectoryRecord(y0, float(K), times, perm[first], perm[second], fractions)
    expected = np.empty(N)
    expected[perm] = base.final_state()
    np.testing.assert_array_equal(relabeled.final_state(), expected)

    counts = rng.integers(0, 5, size=N)
    permuted = np.empty(N, dtype=np.int64)
    permuted[perm] = counts
    for i, j, u in zip(first.tolist(), second.tolist(), fractions.tolist()):
        counts = dsdt_update(counts, i, j, u)
        permuted = dsdt_update(permuted, perm[i], perm[j], u)
    np.testing.assert_array_equal(permuted[perm], counts)


# --- coupling -------------------------------------------------------------------------------------

def test_coupling_single_step_examples():
    run = coupled_from_draws([0.5, 0.5], 10, [0], [1], [0.7])
    assert run.sup_distance == pytest.approx(0.0, abs=1e-12)
    run = coupled_from_draws([0.5, 0.5], 10, [0], [1], [0.73])
    assert run.sup_distance == pytest.approx(0.03, abs=1e-12)
    assert run.sup_distance <= 2 / 10


def test_coupling_zero_steps():
    assert coupled_paths([0.2, 0.3, 0.5], 100, 0, RngStream(1)).sup_distance == 0.0


def test_coupling_large_mesh():
    start = np.full(5, 0.2)
    assert coupled_paths(start, 10**4, 100, RngStream(2)).sup_distance <= 0.02


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10**5), st.integers(0, 300), st.integers(2, 8), st.integers(0, 2**32))
def test_coupling_bound_is_deterministic(n, k, N, seed):
    rng = np.random.default_rng(seed)
    start = rng.dirichlet(np.ones(N))
    start /= start.sum()
    run = coupled_paths(start, n, k, rng)
    assert run.sup_distance <= 2 * k / n + 1e-12
    assert np.all(run.discrete.sum(axis=1) == n)


def test_as_generator_rejects_garbage():
    with pytest.raises(TypeError):
        as_generator("seed")
    with pytest.raises(ValueError):
        RngStream(-1)
