"""Command-line entry point: ``exkin <subcommand> [options]``.

Every subcommand writes its artifacts under ``--out`` together with a
``run.json`` manifest. Exit codes: 0 success, 1 a check failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .chains import (
    coupled_paths,
    csdt_run,
    draw_pairs,
    dsdt_update,
    poisson_simulate,
    snapshots_at,
)
from .kinetic import (
    KineticInstabilityError,
    KineticRunConfig,
    equilibrium_density,
    kinetic_solve,
    laplace_check,
    laplace_transform,
    named_density,
    qbar_apply,
    write_density_csv,
)
from .measures import martingale_bound_check, martingale_residual, test_function_from_name
from .oracle import build_transition_matrix, stationary_distribution, write_matrix
from .partitions import (
    ConfigurationError,
    SamplerSpec,
    limit_check,
    sample_fixed_p_geometric,
    sample_scaled_geometric,
    sample_uniform_compositions,
    sample_uniform_simplex,
)
from .rng import RngStream
from .state import read_state, write_state

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "EXKIN_SEED"
EQUILIBRIUM_TOLERANCE = 5e-3
LAPLACE_TOLERANCE = 1e-3
STATIONARY_TOLERANCE = 1e-10


class UsageError(Exception):
    pass


# --- config and output helpers -----------------------------------------------------------------

def read_config(path) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment, dashes in keys become underscores."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_rows(path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def parse_w0(text) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("w0 must be positive")
    return value


# --- initial states ------------------------------------------------------------------------------

def continuous_initial(args, rng) -> np.ndarray:
    if args.initial_file:
        return read_state(args.initial_file).wealth.copy()
    N = args.N
    W = float(args.W if args.W is not None else N)
    if args.initial == "equal":
        return np.full(N, W / N)
    if args.initial == "uniform-simplex":
        return sample_uniform_simplex(N, rng, total=W).wealth.copy()
    if args.initial == "uniform-iid":
        x = rng.uniform(0.0, 2.0, size=N)
        return x * (W / x.sum())
    if args.initial == "exponential-iid":
        x = rng.exponential(size=N)
        return x * (W / x.sum())
    raise UsageError(f"unknown initial state {args.initial!r}")


def discrete_initial(args, rng) -> np.ndarray:
    if args.initial_file:
        wealth = read_state(args.initial_file).wealth
        if np.any(wealth != np.round(wealth)):
            raise UsageError("a DS-DT state file needs integer wealth")
        return wealth.astype(np.int64)
    if args.initial == "concentrated":
        x = np.zeros(args.N, dtype=np.int64)
        x[0] = args.n
        return x
    if args.initial == "uniform":
        return sample_uniform_compositions(args.n, args.N, rng, 1)[0]
    raise UsageError(f"unknown initial state {args.initial!r}")


def _trajectory_outputs(out: Path, record, snapshot_times) -> None:
    events = zip(record.times.tolist(), range(len(record)), record.first.tolist(),
                 record.second.tolist(), record.fractions.tolist())
    write_rows(out / "events.csv", "time,event_index,i,j,r", events)
    rows = []
    for t, state in snapshots_at(record, snapshot_times):
        rows.extend((t, k, w) for k, w in enumerate(state.tolist()))
    write_rows(out / "snapshots.csv", "time,agent_index,wealth", rows)
    write_state(out / "final_state.csv", record.final_state(), record.total)


def _snapshot_grid(horizon: float, every: float | None) -> np.ndarray:
    if not every:
        return np.array([0.0, horizon])
    grid = np.arange(0.0, horizon, every)
    return np.append(grid, horizon)


# --- subcommands ---------------------------------------------------------------------------------

def cmd_simulate_dsdt(args, out: Path, seed) -> tuple[int, dict]:
    rng = RngStream(seed).generator()
    x = discrete_initial(args, rng)
    N = x.size
    total = int(x.sum())
    first, second = draw_pairs(rng, N, size=args.steps)
    uniforms = rng.random(args.steps)
    every = max(1, args.snapshot_every)
    snap_rows = [(0, k, int(v)) for k, v in enumerate(x.tolist())]
    for step in range(1, args.steps + 1):
        x = dsdt_update(x, int(first[step - 1]), int(second[step - 1]), float(uniforms[step - 1]))
        if step % every == 0 or step == args.steps:
            snap_rows.extend((step, k, int(v)) for k, v in enumerate(x.tolist()))
    events = zip(range(1, args.steps + 1), range(args.steps), first.tolist(), second.tolist(),
                 uniforms.tolist())
    write_rows(out / "events.csv", "time,event_index,i,j,r", events)
    write_rows(out / "snapshots.csv", "time,agent_index,wealth", snap_rows)
    write_state(out / "final_state.csv", x, total)
    if int(x.sum()) != total:
        print(f"wealth not conserved: {int(x.sum())} != {total}")
        return EXIT_FAIL, {}
    print(f"simulate-dsdt: N={N} n={total} steps={args.steps} final total={int(x.sum())}")
    return EXIT_OK, {}


def cmd_simulate_csdt(args, out: Path, seed) -> tuple[int, dict]:
    rng = RngStream(seed).generator()
    x = continuous_initial(args, rng)
    record = csdt_run(x, args.steps, rng)
    every = max(1, args.snapshot_every)
    _trajectory_outputs(out, record, _snapshot_grid(float(args.steps), float(every)))
    drift = abs(record.final_state().sum() - record.total)
    print(f"simulate-csdt: N={x.size} steps={args.steps} total drift={drift:.3e}")
    return EXIT_OK, {}


def cmd_simulate_poisson(args, out: Path, seed) -> tuple[int, dict]:
    rng = RngStream(seed).generator()
    x = continuous_initial(args, rng)
    record = poisson_simulate(x, args.T, rng)
    _trajectory_outputs(out, record, _snapshot_grid(args.T, args.snapshot_every))
    print(f"simulate-poisson: N={x.size} T={args.T} jumps={len(record)} "
          f"expected={(x.size - 1) * args.T:g}")
    return EXIT_OK, {}


def cmd_couple(args, out: Path, seed) -> tuple[int, dict]:
    rng = RngStream(seed).generator()
    start = sample_uniform_simplex(args.N, rng, total=1.0).wealth
    run = coupled_paths(start, args.n, args.k, rng)
    bound = 2.0 * args.k / args.n
    sup = run.sup_distance
    passed = sup <= bound
    write_rows(out / "distances.csv", "step,distance", enumerate(run.distances.tolist()))
    write_json(out / "couple.json", {"n": args.n, "k": args.k, "N": args.N, "sup_distance": sup,
                                     "bound": bound, "pass": passed})
    print(f"couple: sup_distance={sup:.6g} bound={bound:.6g} {'pass' if passed else 'FAIL'}")
    return (EXIT_OK if passed else EXIT_FAIL), {}


def cmd_martingale_test(args, out: Path, seed) -> tuple[int, dict]:
    g = test_function_from_name(args.g)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            report = martingale_bound_check(g, args.N, args.T, args.replicas, seed,
                                            mapper=lambda f, jobs: pool.map(f, jobs, chunksize=4))
    else:
        report = martingale_bound_check(g, args.N, args.T, args.replicas, seed)
    data = report.as_dict()
    write_json(out / "martingale.json", data)
    if args.T > 0:
        stream = RngStream(seed, 0).generator()
        x0 = stream.exponential(1.0, size=args.N)
        path = martingale_residual(poisson_simulate(x0, args.T, stream), g)
        write_rows(out / "martingale_path.csv", "time,M_value", zip(path.times.tolist(), path.values.tolist()))
    print(f"martingale-test: E[sup M^2]={report.empirical:.6g} bound={report.bound:.6g} "
          f"{'pass' if report.passed else 'FAIL'}")
    return (EXIT_OK if report.passed else EXIT_FAIL), {}


def _kinetic_config(args) -> KineticRunConfig:
    params = {k: getattr(args, k) for k in ("m", "a", "b", "p", "shape", "scale")
              if getattr(args, k) is not None}
    x_max = args.x_max
    if x_max is None:
        x_max = 30.0 if math.isinf(args.w0) else args.w0
    return KineticRunConfig(w0=args.w0, horizon=args.T, dt=args.dt, x_max=x_max, cells=args.cells,
                            initial=args.initial, initial_params=params, method=args.method,
                            snapshot_every=args.snapshot_every)


def cmd_kinetic_solve(args, out: Path, seed) -> tuple[int, dict]:
    config = _kinetic_config(args)
    try:
        solution = kinetic_solve(config)
    except KineticInstabilityError as exc:
        print(f"kinetic-solve: {exc}")
        return EXIT_FAIL, {}
    folder = out / "densities"
    folder.mkdir(exist_ok=True)
    files = []
    for t, f in zip(solution.times, solution.densities):
        name = f"density_t{t:09.4f}.csv"
        write_density_csv(folder / name, f)
        files.append(f"densities/{name}")
    write_json(out / "manifest.json", {
        "times": solution.times,
        "files": files,
        "mass": [f.mass() for f in solution.densities],
        "mean": [f.mean() for f in solution.densities],
        "clipped_mass": solution.clipped_mass,
        "steps": solution.steps,
    })
    means = [f.mean() for f in solution.densities]
    print(f"kinetic-solve: {len(files)} snapshots, mean drift={max(means) - min(means):.3e}, "
          f"clipped mass={solution.clipped_mass:.3e}")
    return EXIT_OK, {}


def cmd_equilibria_check(args, out: Path, seed) -> tuple[int, dict]:
    x_max = args.x_max if args.x_max is not None else (30.0 if math.isinf(args.w0) else args.w0)
    f = equilibrium_density(args.m, args.w0, x_max, args.cells)
    result = qbar_apply(f, args.w0)
    residual = float(np.abs(result).max())
    passed = residual <= args.tol
    write_json(out / "equilibria.json", {
        "m": args.m, "w0": _jsonable(args.w0), "x_max": x_max, "cells": args.cells,
        "residual": residual, "threshold": args.tol, "pass": passed,
        "mass_integral": float(result.sum() * f.dx),
        "moment_integral": float(np.dot(f.centers, result) * f.dx),
    })
    print(f"equilibria-check: residual={residual:.3e} threshold={args.tol:g} "
          f"{'pass' if passed else 'FAIL'}")
    return (EXIT_OK if passed else EXIT_FAIL), {}


def cmd_laplace_check(args, out: Path, seed) -> tuple[int, dict]:
    params = {k: getattr(args, k) for k in ("m", "a", "b", "p", "shape", "scale")
              if getattr(args, k) is not None}
    f = named_density(args.initial, args.x_max, args.cells, **params)
    t_grid = np.linspace(args.t_min, args.t_max, args.t_points)
    report = laplace_check(f, t_grid)
    exponential = report.max_deviation <= LAPLACE_TOLERANCE
    model = 1.0 / (1.0 + report.m * t_grid)
    write_rows(out / "transform.csv", "t,transform,model",
               zip(t_grid.tolist(), laplace_transform(f, t_grid).tolist(), model.tolist()))
    write_json(out / "laplace.json", {"initial": args.initial, "m_fit": report.m,
                                      "max_deviation": report.max_deviation,
                                      "threshold": LAPLACE_TOLERANCE, "exponential": exponential})
    print(f"laplace-check: m={report.m:.6g} max_deviation={report.max_deviation:.3e} "
          f"threshold={LAPLACE_TOLERANCE:g} exponential={exponential}")
    if args.expect == "exponential" and not exponential:
        return EXIT_FAIL, {}
    if args.expect == "non-exponential" and exponential:
        return EXIT_FAIL, {}
    return EXIT_OK, {}


def cmd_partition_sample(args, out: Path, seed) -> tuple[int, dict]:
    rng = RngStream(seed).generator()
    if args.kind == "uniform_composition":
        if args.n is None:
            raise UsageError("uniform_composition needs --n")
        values = sample_uniform_compositions(args.n, args.N, rng, 1)[0]
    elif args.kind == "scaled_geometric":
        values = sample_scaled_geometric(args.N, args.W if args.W is not None else float(args.N) ** 2, rng).wealth
    elif args.kind == "fixed_p_geometric":
        if args.p is None:
            raise UsageError("fixed_p_geometric needs --p")
        values = sample_fixed_p_geometric(args.N, args.p, rng).wealth
    else:
        values = sample_uniform_simplex(args.N, rng).wealth
    write_rows(out / "samples.csv", "index,value", enumerate(values.tolist()))
    print(f"partition-sample: {args.kind} N={args.N} total={float(np.sum(values)):.12g}")
    return EXIT_OK, {}


def cmd_limit_check(args, out: Path, seed) -> tuple[int, dict]:
    params = {}
    if args.p is not None:
        params["p"] = args.p
    if args.W is not None:
        params["W_N"] = args.W
    try:
        spec = SamplerSpec(args.kind, params)
        report = limit_check(spec, args.target, args.N, RngStream(seed).generator(), alpha=args.alpha,
                             epsilon=args.epsilon)
    except (ConfigurationError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    write_json(out / "limit.json", report.as_dict())
    print(f"limit-check: ks={report.ks:.5g} w1={report.w1:.5g} threshold={report.threshold:.5g} "
          f"{'pass' if report.passed else 'FAIL'}")
    return (EXIT_OK if report.passed else EXIT_FAIL), {}


def cmd_oracle(args, out: Path, seed) -> tuple[int, dict]:
    try:
        T = build_transition_matrix(args.n, args.N, kernel=args.kernel)
    except MemoryError as exc:
        raise UsageError(str(exc)) from exc
    pi = stationary_distribution(T)
    max_dev = float(np.abs(pi - 1.0 / T.size).max())
    row_dev = float(np.abs(T.row_sums() - 1).max())
    col_dev = float(np.abs(T.column_sums() - 1).max())
    uniform = max_dev <= STATIONARY_TOLERANCE
    passed = uniform and row_dev <= 1e-12 and col_dev <= 1e-12
    data = {"n": args.n, "N": args.N, "kernel": args.kernel, "states": T.size, "max_row_dev": row_dev,
            "max_col_dev": col_dev, "stationary": "uniform" if uniform else "non-uniform",
            "max_dev": max_dev, "pass": passed}
    if args.k is not None:
        start = [args.n] + [0] * (args.N - 1)
        law = T.k_step_law(start, args.k)
        write_rows(out / "k_step_law.csv", "index,probability", enumerate(law.tolist()))
        data["k"] = args.k
    write_matrix(out / "matrix.csv", out / "states.csv", T)
    write_json(out / "oracle.json", data)
    print(f"oracle: states={T.size} max_row_dev={row_dev:.2e} max_col_dev={col_dev:.2e} "
          f"max_dev={max_dev:.2e} threshold={STATIONARY_TOLERANCE:g}")
    return (EXIT_OK if passed else EXIT_FAIL), {}


# --- parser --------------------------------------------------------------------------------------

RANDOMIZED = {"simulate-dsdt", "simulate-csdt", "simulate-poisson", "couple", "martingale-test",
              "partition-sample", "limit-check"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override its values")
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (or set {SEED_ENV})")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for replica ensembles")


def _initial_flags(p, choices, default):
    p.add_argument("--initial", choices=choices, default=default)
    p.add_argument("--initial-file", default=None, help="state file with '# N=.. total=..' header")


def _density_flags(p):
    p.add_argument("--m", type=float, default=None, help="mean of an exponential density")
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--shape", type=float, default=None)
    p.add_argument("--scale", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exkin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"exkin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-dsdt", help="integer-wealth chain in discrete time")
    p.add_argument("--n", type=int, default=10, help="total wealth units")
    p.add_argument("--N", type=int, default=5, help="number of agents")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--snapshot-every", type=int, default=1, help="steps between snapshots")
    _initial_flags(p, ["concentrated", "uniform"], "concentrated")
    p.set_defaults(func=cmd_simulate_dsdt)

    cont_choices = ["equal", "uniform-simplex", "uniform-iid", "exponential-iid"]
    p = sub.add_parser("simulate-csdt", help="real-wealth chain in discrete time")
    p.add_argument("--N", type=int, default=5)
    p.add_argument("--W", type=float, default=None, help="total wealth (default N)")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--snapshot-every", type=int, default=1, help="steps between snapshots")
    _initial_flags(p, cont_choices, "uniform-simplex")
    p.set_defaults(func=cmd_simulate_csdt)

    p = sub.add_parser("simulate-poisson", help="real-wealth chain driven by a Poisson clock")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--W", type=float, default=None, help="total wealth (default N)")
    p.add_argument("--T", type=float, default=5.0)
    p.add_argument("--snapshot-every", type=float, default=1.0, help="time between snapshots")
    _initial_flags(p, cont_choices, "uniform-simplex")
    p.set_defaults(func=cmd_simulate_poisson)

    p = sub.add_parser("couple", help="coupled DS-DT / CS-DT run and its sup distance")
    p.add_argument("--n", type=int, default=10**4, help="mesh denominator")
    p.add_argument("--k", type=int, default=100, help="steps")
    p.add_argument("--N", type=int, default=5)
    p.set_defaults(func=cmd_couple)

    p = sub.add_parser("martingale-test", help="ensemble check of E[sup M^2] <= 64|g|^2 T/N")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--T", type=float, default=5.0)
    p.add_argument("--replicas", type=int, default=200)
    p.add_argument("--g", default="exp", help="test function, e.g. exp, exp:2, cos:1, capped:2:3")
    p.set_defaults(func=cmd_martingale_test)

    p = sub.add_parser("kinetic-solve", help="time-step the kinetic equation on a grid")
    p.add_argument("--w0", type=parse_w0, default=math.inf)
    p.add_argument("--T", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--x-max", type=float, default=None)
    p.add_argument("--cells", type=int, default=3000)
    p.add_argument("--initial", default="uniform",
                   choices=["uniform", "exponential", "equilibrium", "spike", "geometric", "gamma"])
    p.add_argument("--method", choices=["rk4", "euler"], default="rk4")
    p.add_argument("--snapshot-every", type=float, default=1.0)
    _density_flags(p)
    p.set_defaults(func=cmd_kinetic_solve)

    p = sub.add_parser("equilibria-check", help="residual of the collision operator at an equilibrium")
    p.add_argument("--m", type=float, default=1.0)
    p.add_argument("--w0", type=parse_w0, default=math.inf)
    p.add_argument("--x-max", type=float, default=None)
    p.add_argument("--cells", type=int, default=3000)
    p.add_argument("--tol", type=float, default=EQUILIBRIUM_TOLERANCE)
    p.set_defaults(func=cmd_equilibria_check)

    p = sub.add_parser("laplace-check", help="fit 1/(1 + m t) to a density's Laplace transform")
    p.add_argument("--initial", default="exponential",
                   choices=["uniform", "exponential", "geometric", "gamma"])
    p.add_argument("--x-max", type=float, default=40.0)
    p.add_argument("--cells", type=int, default=8000)
    p.add_argument("--t-min", type=float, default=0.1)
    p.add_argument("--t-max", type=float, default=5.0)
    p.add_argument("--t-points", type=int, default=50)
    p.add_argument("--expect", choices=["exponential", "non-exponential", "none"], default="none")
    _density_flags(p)
    p.set_defaults(func=cmd_laplace_check)

    kinds = ["uniform_composition", "scaled_geometric", "fixed_p_geometric", "uniform_simplex"]
    p = sub.add_parser("partition-sample", help="one draw of a composition or simplex sampler")
    p.add_argument("--kind", choices=kinds, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--W", type=float, default=None, help="W_N for scaled_geometric (default N^2)")
    p.add_argument("--p", type=float, default=None)
    p.set_defaults(func=cmd_partition_sample)

    p = sub.add_parser("limit-check", help="KS/W1 of a sampler's empirical measure against its limit")
    p.add_argument("--kind", choices=kinds[1:], required=True)
    p.add_argument("--target", choices=["exp", "geom", "delta0"], required=True)
    p.add_argument("--N", type=int, default=10**4)
    p.add_argument("--W", type=float, default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.set_defaults(func=cmd_limit_check)

    p = sub.add_parser("oracle", help="exact transition matrix and stationary law")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--k", type=int, default=None, help="also export the k-step law from (n,0,..,0)")
    p.add_argument("--kernel", choices=["dsdt", "symmetric"], default="dsdt",
                   help="symmetric: share uniform on {0..s}, a doubly stochastic comparison kernel")
    p.set_defaults(func=cmd_oracle)

    for action in sub.choices.values():
        _common(action)
    return parser


def _apply_config(parser, args, argv):
    """Re-parse with the config file's values as defaults so flags still win."""
    if not args.config:
        return args
    values = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    values.pop("config", None)
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _resolve_seed(flag_seed, args) -> int | None:
    """``--seed`` beats ``EXKIN_SEED`` beats a ``seed=`` line in the config file."""
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return args.seed


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    flag_seed = args.seed
    try:
        args = _apply_config(parser, args, argv)
        seed = _resolve_seed(flag_seed, args)
        if args.command in RANDOMIZED:
            if seed is None:
                raise UsageError(f"{args.command} needs --seed (or {SEED_ENV})")
            RngStream(seed)  # validates the range
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        code, extra = args.func(args, out, seed)
        elapsed = time.perf_counter() - started
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    except (UsageError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"exkin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
    config["seed"] = seed
    write_json(out / "run.json", {
        "command": args.command,
        "config": config,
        "seed": seed,
        "exit_code": code,
        "versions": {"exkin": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time_seconds": elapsed,
        **extra,
    })
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
