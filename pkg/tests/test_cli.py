"""End-to-end command-line checks: every subcommand, exit codes, file artifacts."""

import json

import numpy as np
import pytest

from kinest.cli import main
from kinest.kernels import kernel_to_descriptor, make_order_kernel
from kinest.rates import RegimeKey, rate_exponent, upsilon


def test_rates_json(capsys):
    rc = main(
        "rates --beta1 2 --beta2 2 --d 1 --eps 0.5 --T 10000 --target density".split()
    )
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    key = RegimeKey(2.0, 2.0, 1, 0.5)
    assert out["upsilon"] == pytest.approx(upsilon(key))
    assert out["exponent"] == pytest.approx(rate_exponent(key))
    assert out["chi_B"] is False
    assert 0 < out["h1"] == out["h2"] < 1
    assert out["r_T"] > 0


def test_kernel_check_roundtrip(tmp_path, capsys):
    desc = kernel_to_descriptor(make_order_kernel(3))
    good = tmp_path / "k.json"
    good.write_text(json.dumps(desc))
    assert main(["kernel", "check", str(good)]) == 0
    assert "ok" in capsys.readouterr().out
    desc["coefficients"][0] += 0.01
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(desc))
    assert main(["kernel", "check", str(bad)]) == 1


@pytest.fixture(scope="module")
def traj_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "traj.bin"
    rc = main(
        f"simulate --model harmonic --T 200 --dt 0.002 --seed 11 --out {path}".split()
    )
    assert rc == 0
    return path


def test_density_subcommand(traj_file, tmp_path):
    out = tmp_path / "dens.csv"
    rc = main(
        [
            "density", "--traj", str(traj_file), "--h1", "0.4", "--h2", "0.4",
            "--kernel", "1,1", "--domain", "x:[-1,1],y:[-1,1]", "--mesh", "0.1",
            "--out", str(out),
        ]
    )
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "x1,y1,value"
    assert len(lines) == 1 + 21 * 21


def test_drift_fixed_subcommand(traj_file, tmp_path):
    out = tmp_path / "drift.csv"
    rc = main(
        [
            "drift", "--traj", str(traj_file), "--mode", "fixed", "--h1", "0.4",
            "--h2", "0.4", "--domain", "x:[-0.8,0.8],y:[-0.8,0.8]", "--mesh", "0.1",
            "--stabilizer", "rhostar:0.05", "--out", str(out),
        ]
    )
    assert rc == 0
    vals = np.loadtxt(out, delimiter=",", skiprows=1)
    assert vals.shape == (17 * 17, 3)
    assert np.all(np.isfinite(vals))


def test_drift_rT_stabilizer(traj_file, tmp_path):
    out = tmp_path / "drift_rt.csv"
    rc = main(
        [
            "drift", "--traj", str(traj_file), "--mode", "fixed", "--h1", "0.4",
            "--h2", "0.4", "--domain", "x:[-0.8,0.8],y:[-0.8,0.8]", "--mesh", "0.1",
            "--stabilizer", "rT:2,2", "--out", str(out),
        ]
    )
    assert rc == 0


def test_drift_adaptive_subcommand(traj_file, tmp_path):
    out = tmp_path / "adrift.csv"
    diag = tmp_path / "diag.json"
    rc = main(
        [
            "drift", "--traj", str(traj_file), "--mode", "adaptive", "--q", "1",
            "--grid-base", "2", "--domain", "x:[-0.6,0.6],y:[-0.6,0.6]", "--mesh",
            "0.05", "--stabilizer", "rhostar:0.05", "--out", str(out), "--diag",
            str(diag),
        ]
    )
    assert rc == 0
    d = json.loads(diag.read_text())
    assert set(d) == {"chosen", "delta_values", "thresholds", "constants"}
    assert len(d["delta_values"]) == len(d["thresholds"])
    assert d["constants"]["C1_tilde"] > 0


def test_experiment_run_and_report(tmp_path):
    cfg = {
        "kind": "density",
        "model": "harmonic",
        "T_ladder": [30.0, 60.0, 120.0, 240.0],
        "replications": 1,
        "mesh": 0.05,
        "seed_root": 3,
        "out_dir": str(tmp_path / "exp"),
        "slope_tol": 5.0,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["experiment", "run", str(cfg_path)]) == 0
    assert main(["experiment", "report", str(tmp_path / "exp"), "--format", "svg"]) == 0
    assert (tmp_path / "exp" / "report.svg").exists()
    # a failing acceptance verdict flips the exit code to 1
    cfg["slope_tol"] = 1e-9
    cfg["out_dir"] = str(tmp_path / "exp2")
    cfg_path.write_text(json.dumps(cfg))
    assert main(["experiment", "run", str(cfg_path)]) == 1


def test_varprobe_subcommand(tmp_path):
    cfg = {
        "kind": "varprobe",
        "model": "free",
        "vp_centers": [[0.0, 1.0]],
        "vp_s1_ladder": [0.25, 0.125, 0.0625],
        "vp_s2": 1.5,
        "vp_T": 32.0,
        "vp_reps": 50,
        "seed_root": 5,
        "out_dir": str(tmp_path / "vp"),
    }
    cfg_path = tmp_path / "vp.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["varprobe", "--config", str(cfg_path)])
    assert rc in (0, 1)  # verdicts printed either way
    assert (tmp_path / "vp" / "report.json").exists()


def test_runtime_error_exit_code(tmp_path, capsys):
    rc = main(
        [
            "density", "--traj", str(tmp_path / "missing.bin"), "--h1", "0.3",
            "--h2", "0.3", "--domain", "x:[-1,1],y:[-1,1]", "--mesh", "0.1",
            "--out", str(tmp_path / "o.csv"),
        ]
    )
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_simulate_rejects_bad_model(tmp_path):
    rc = main(
        f"simulate --model pendulum --T 10 --dt 0.01 --seed 1 --out {tmp_path/'t.bin'}".split()
    )
    assert rc == 2
