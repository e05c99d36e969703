import json
import subprocess
import sys

import numpy as np
import pytest

from exkin.cli import run


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = run([*argv, "--out", str(out)])
    return code, out


def _manifest(out):
    return json.loads((out / "run.json").read_text())


def test_unknown_subcommand_is_usage_error(tmp_path):
    assert run(["frobnicate"]) == 2


def test_unknown_flag_is_usage_error(tmp_path):
    assert run(["oracle", "--bogus", "1", "--out", str(tmp_path)]) == 2


def test_randomized_command_needs_a_seed(tmp_path, monkeypatch):
    monkeypatch.delenv("EXKIN_SEED", raising=False)
    code, out = _run(tmp_path, "simulate-dsdt", "--steps", "5")
    assert code == 2
    assert not (out / "run.json").exists()


def test_invalid_value_is_usage_error(tmp_path):
    code, _ = _run(tmp_path, "limit-check", "--kind", "uniform_simplex", "--target", "geom",
                   "--seed", "1")
    assert code == 2


def test_simulate_dsdt_outputs(tmp_path):
    code, out = _run(tmp_path, "simulate-dsdt", "--n", "12", "--N", "4", "--steps", "30", "--seed", "3")
    assert code == 0
    for name in ("events.csv", "snapshots.csv", "final_state.csv", "run.json"):
        assert (out / name).exists()
    manifest = _manifest(out)
    assert manifest["command"] == "simulate-dsdt"
    assert manifest["seed"] == 3 and manifest["exit_code"] == 0
    assert set(manifest["versions"]) >= {"exkin", "numpy", "scipy", "python"}
    snaps = np.loadtxt(out / "snapshots.csv", delimiter=",", skiprows=1)
    for t in np.unique(snaps[:, 0]):
        assert snaps[snaps[:, 0] == t, 2].sum() == 12


@pytest.mark.parametrize("argv", [
    ["simulate-dsdt", "--steps", "20"],
    ["simulate-csdt", "--steps", "20"],
    ["simulate-poisson", "--N", "20", "--T", "2"],
    ["partition-sample", "--kind", "scaled_geometric", "--N", "50"],
])
def test_reruns_are_byte_identical(tmp_path, argv):
    code_a, a = _run(tmp_path, *argv, "--seed", "11", name="a")
    code_b, b = _run(tmp_path, *argv, "--seed", "11", name="b")
    assert code_a == code_b == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        if name == "run.json":
            ja, jb = _manifest(a), _manifest(b)
            for j in (ja, jb):
                j.pop("wall_time_seconds")
                j["config"].pop("out")
            assert ja == jb
        else:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_different_seeds_differ(tmp_path):
    _, a = _run(tmp_path, "simulate-poisson", "--N", "10", "--T", "1", "--seed", "1", name="a")
    _, b = _run(tmp_path, "simulate-poisson", "--N", "10", "--T", "1", "--seed", "2", name="b")
    assert (a / "events.csv").read_bytes() != (b / "events.csv").read_bytes()


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# test config\nseed = 5\nsteps = 7\n")
    monkeypatch.delenv("EXKIN_SEED", raising=False)
    _, out = _run(tmp_path, "simulate-dsdt", "--config", str(cfg), name="c")
    manifest = _manifest(out)
    assert manifest["seed"] == 5 and manifest["config"]["steps"] == 7

    monkeypatch.setenv("EXKIN_SEED", "6")
    _, out = _run(tmp_path, "simulate-dsdt", "--config", str(cfg), name="e")
    assert _manifest(out)["seed"] == 6

    _, out = _run(tmp_path, "simulate-dsdt", "--config", str(cfg), "--seed", "9", "--steps", "3", name="f")
    manifest = _manifest(out)
    assert manifest["seed"] == 9 and manifest["config"]["steps"] == 3


def test_bad_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("EXKIN_SEED", "abc")
    code, _ = _run(tmp_path, "simulate-dsdt")
    assert code == 2


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("warp_factor = 9\n")
    code, _ = _run(tmp_path, "oracle", "--config", str(cfg))
    assert code == 2


def test_oracle_exit_codes(tmp_path):
    code, out = _run(tmp_path, "oracle", "--n", "3", "--N", "3", name="dsdt")
    assert code == 1
    assert (out / "matrix.csv").exists() and (out / "states.csv").exists()
    report = json.loads((out / "oracle.json").read_text())
    assert report["pass"] is False
    code, _ = _run(tmp_path, "oracle", "--n", "3", "--N", "3", "--kernel", "symmetric", name="sym")
    assert code == 0


def test_couple_passes(tmp_path):
    code, out = _run(tmp_path, "couple", "--n", "1000", "--k", "50", "--seed", "1")
    assert code == 0
    assert json.loads((out / "couple.json").read_text())["pass"] is True


def test_kinetic_solve_layout(tmp_path):
    code, out = _run(tmp_path, "kinetic-solve", "--T", "1", "--dt", "0.1", "--cells", "300",
                     "--x-max", "15", "--snapshot-every", "0.5")
    assert code == 0
    files = sorted(p.name for p in (out / "densities").iterdir())
    assert files == ["density_t0000.0000.csv", "density_t0000.5000.csv", "density_t0001.0000.csv"]
    data = np.loadtxt(out / "densities" / files[-1], delimiter=",", skiprows=1)
    assert np.sum(data[:, 1]) * (15 / 300) == pytest.approx(1.0, abs=1e-9)


def test_equilibria_and_laplace(tmp_path):
    assert _run(tmp_path, "equilibria-check", "--m", "1", "--x-max", "30", name="eq")[0] == 0
    assert _run(tmp_path, "laplace-check", "--expect", "exponential", name="l1")[0] == 0
    assert _run(tmp_path, "laplace-check", "--initial", "uniform", "--expect", "non-exponential",
                "--x-max", "10", "--cells", "1000", name="l2")[0] == 0
    assert _run(tmp_path, "laplace-check", "--initial", "uniform", "--expect", "exponential",
                "--x-max", "10", "--cells", "1000", name="l3")[0] == 1


def test_limit_check_writes_report(tmp_path):
    code, out = _run(tmp_path, "limit-check", "--kind", "fixed_p_geometric", "--target", "geom",
                     "--p", "0.5", "--seed", "4")
    assert code == 0
    assert json.loads((out / "limit.json").read_text())["pass"] is True


def test_martingale_small_ensemble(tmp_path):
    code, out = _run(tmp_path, "martingale-test", "--N", "20", "--T", "1", "--replicas", "100",
                     "--seed", "2")
    assert code == 0
    report = json.loads((out / "martingale.json").read_text())
    assert {"g", "N", "T", "replicas", "empirical", "bound", "pass"} <= set(report)
    assert _run(tmp_path, "martingale-test", "--replicas", "10", "--seed", "2", name="few")[0] == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "exkin.cli", "oracle", "--n", "2", "--N", "2",
                           "--kernel", "symmetric", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
