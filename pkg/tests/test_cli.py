"""Exit-code and file contracts of the command line front end.

Everything runs in process through cli.main(argv); no subprocesses.  The
exit convention under test: 0 when the requested checks pass, 2 when a
declared numerical contract is violated (with a witness on stderr), 1 for
usage and configuration mistakes.
"""

import json
import os

import numpy as np
import pytest

from hessq.cli import main
from hessq.grid import GridFunction


def quad_problem(num=17, f_value=4.0 / 3.0):
    return {
        "n": 2,
        "k": 1,
        "lo": [-1.0, -1.0],
        "hi": [1.0, 1.0],
        "num": [num, num],
        "f": {"kind": "constant", "value": f_value},
        "g": {
            "kind": "quadratic",
            "constant": 0.0,
            "linear": [0.0, 0.0],
            "diag": [2.0, 4.0],
        },
    }


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


# ---------------------------------------------------------------------------
# usage errors
# ---------------------------------------------------------------------------


def test_no_subcommand_is_usage_error():
    assert main([]) == 1


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == 1


def test_unknown_flag_is_usage_error(capsys):
    assert main(["identities", "--n", "3", "--k", "1", "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_help_exits_zero():
    assert main(["--help"]) == 0


# ---------------------------------------------------------------------------
# identities and scans
# ---------------------------------------------------------------------------


def test_identities_pass(capsys):
    rc = main(["identities", "--n", "4", "--k", "2", "--count", "300", "--seed", "3"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "PASS" in out


def test_identities_quiet_suppresses_stdout(capsys):
    rc = main(
        [
            "identities",
            "--n",
            "3",
            "--k",
            "1",
            "--count",
            "100",
            "--seed",
            "3",
            "--quiet",
        ]
    )
    captured = capsys.readouterr()
    assert rc == 0
    assert captured.out == ""


def test_scan_guan_sroka_passes(capsys):
    rc = main(
        ["scan", "--which", "guan-sroka-c", "--n", "4", "--k", "2", "--count", "500"]
    )
    out = capsys.readouterr().out
    assert rc == 0
    assert "empirical" in out


def test_scan_rejects_bad_mode():
    assert main(["scan", "--which", "bogus", "--n", "4", "--k", "2"]) == 1


def test_solve_radial_pass(capsys):
    rc = main(["solve-radial", "--n", "3", "--k", "1", "--f", "2.0", "--r-max", "1.0"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "residual" in out


# ---------------------------------------------------------------------------
# grid solves
# ---------------------------------------------------------------------------


def test_solve_grid_writes_solution(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": quad_problem()})
    out_dir = tmp_path / "out"
    rc = main(["solve-grid", "--config", cfg, "--out", str(out_dir)])
    assert rc == 0
    u = GridFunction.load(str(out_dir / "solution.bin"))
    assert np.isfinite(u.values).all()
    report = json.loads((out_dir / "solve-report.json").read_text())
    assert report["converged"] is True
    assert report["residual_sup"] <= 1e-9


def test_solve_grid_missing_config_is_usage_error(tmp_path):
    assert main(["solve-grid", "--config", str(tmp_path / "missing.json")]) == 1


def test_solve_grid_invalid_json_is_usage_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["solve-grid", "--config", str(path)]) == 1


def test_solve_grid_nonconvergence_exits_two(tmp_path, capsys):
    problem = quad_problem()
    problem["f"] = {"kind": "constant", "value": 1.0}
    problem["g"] = {"kind": "constant", "value": 0.25}
    problem["ball"] = {"center": [0.0, 0.0], "radius": 0.7}
    cfg = write_config(tmp_path, {"problem": problem})
    rc = main(["solve-grid", "--config", cfg, "--out", str(tmp_path / "out")])
    err = capsys.readouterr().err
    assert rc == 2
    assert "admissible" in err


# ---------------------------------------------------------------------------
# duality, barriers, geometry
# ---------------------------------------------------------------------------


def test_legendre_check_on_convex_data(tmp_path, capsys):
    cfg = write_config(
        tmp_path, {"problem": quad_problem(), "dual_resolution": 17}
    )
    rc = main(["legendre-check", "--config", cfg])
    out = capsys.readouterr().out
    assert rc == 0
    assert "max_inv" in out


def test_barrier_cli_pass(tmp_path):
    problem = {
        "n": 4,
        "k": 1,
        "lo": [-1.0] * 4,
        "hi": [1.0] * 4,
        "num": [21] * 4,
        "f": {"kind": "constant", "value": 1.0},
        "g": {
            "kind": "quadratic",
            "constant": 0.0,
            "linear": [0.0] * 4,
            "diag": [1.0] * 4,
        },
    }
    barrier = {
        "variant": "case1",
        "lateral_coeff": 9.0,
        "young_coeff": 1.0,
        "holder": 0.9,
        "height": 0.5,
        "rhs_cap": 0.25,
    }
    cfg = write_config(tmp_path, {"problem": problem, "barrier": barrier})
    assert main(["barrier", "--config", cfg]) == 0


def test_barrier_cli_precondition_failure_is_config_error(tmp_path, capsys):
    problem = {
        "n": 4,
        "k": 1,
        "lo": [-1.0] * 4,
        "hi": [1.0] * 4,
        "num": [21] * 4,
        "f": {"kind": "constant", "value": 1.0},
        "g": {
            "kind": "quadratic",
            "constant": 0.0,
            "linear": [0.0] * 4,
            "diag": [1.0] * 4,
        },
    }
    barrier = {
        "variant": "case1",
        "lateral_coeff": 1.0,
        "young_coeff": 1.0,
        "holder": 0.9,
        "height": 0.5,
        "rhs_cap": 0.25,
    }
    cfg = write_config(tmp_path, {"problem": problem, "barrier": barrier})
    rc = main(["barrier", "--config", cfg])
    err = capsys.readouterr().err
    assert rc == 1
    assert "curvature-floor" in err


def test_geometry_cli_radius_margin(tmp_path, capsys):
    c = 3.0 ** 0.5
    problem = {
        "n": 3,
        "k": 1,
        "lo": [-1.0] * 3,
        "hi": [1.0] * 3,
        "num": [33] * 3,
        "f": {"kind": "constant", "value": 1.0},
        "g": {
            "kind": "quadratic",
            "constant": 0.0,
            "linear": [0.0] * 3,
            "diag": [c] * 3,
        },
    }
    cfg = write_config(tmp_path, {"problem": problem, "h": 0.1})
    rc = main(["geometry", "--config", cfg])
    out = capsys.readouterr().out
    assert rc == 0
    assert "margin" in out


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------


def growth_experiment_config(tmp_path, out_dir):
    return {
        "experiment": "growth",
        "problem": {
            "n": 3,
            "k": 1,
            "lo": [-1.0] * 3,
            "hi": [1.0] * 3,
            "num": [17] * 3,
            "f": {"kind": "constant", "value": 1.0},
            "g": {
                "kind": "quadratic",
                "constant": 0.0,
                "linear": [0.0] * 3,
                "diag": [2.0] * 3,
            },
        },
        "grid_sizes": [17],
        "r_values": [0.2, 0.3, 0.45],
        "seed": 7,
        "out_dir": str(out_dir),
    }


def test_experiment_cli_growth_pass(tmp_path, capsys):
    out_dir = tmp_path / "runs"
    cfg = write_config(tmp_path, growth_experiment_config(tmp_path, out_dir))
    rc = main(["experiment", "--config", cfg])
    out = capsys.readouterr().out
    assert rc == 0
    assert "PASS" in out
    for ext in ("json", "csv", "svg"):
        assert (out_dir / f"growth-report.{ext}").exists()


def test_experiment_cli_quiet_and_deterministic(tmp_path, capsys):
    out_dir = tmp_path / "runs"
    cfg = write_config(tmp_path, growth_experiment_config(tmp_path, out_dir))
    assert main(["experiment", "--config", cfg, "--quiet"]) == 0
    assert capsys.readouterr().out == ""
    first = (out_dir / "growth-report.json").read_bytes()
    assert main(["experiment", "--config", cfg, "--quiet"]) == 0
    assert (out_dir / "growth-report.json").read_bytes() == first


def test_experiment_cli_rerun_from_embedded_config(tmp_path):
    out_dir = tmp_path / "runs"
    cfg = write_config(tmp_path, growth_experiment_config(tmp_path, out_dir))
    assert main(["experiment", "--config", cfg, "--quiet"]) == 0
    report_path = out_dir / "growth-report.json"
    first = report_path.read_bytes()
    embedded = json.loads(first.decode())["config"]
    cfg2 = write_config(tmp_path, embedded, name="embedded.json")
    assert main(["experiment", "--config", cfg2, "--quiet"]) == 0
    assert report_path.read_bytes() == first


def test_experiment_cli_out_override(tmp_path):
    out_dir = tmp_path / "runs"
    override = tmp_path / "elsewhere"
    cfg = write_config(tmp_path, growth_experiment_config(tmp_path, out_dir))
    rc = main(["experiment", "--config", cfg, "--out", str(override), "--quiet"])
    assert rc == 0
    report = json.loads((override / "growth-report.json").read_text())
    assert report["config"]["out_dir"] == str(override)
    assert not (out_dir / "growth-report.json").exists()


def test_experiment_cli_failing_contract_exits_two(tmp_path, capsys):
    payload = growth_experiment_config(tmp_path, tmp_path / "cone")
    payload["problem"] = {
        "n": 4,
        "k": 1,
        "lo": [-1.0] * 4,
        "hi": [1.0] * 4,
        "num": [17] * 4,
        "f": {"kind": "constant", "value": 1.0},
        "g": {"kind": "radial-power", "coeff": 1.0, "power": 1.0},
    }
    payload["grid_sizes"] = [17]
    cfg = write_config(tmp_path, payload)
    rc = main(["experiment", "--config", cfg])
    err = capsys.readouterr().err
    assert rc == 2
    assert "exponent" in err or "witness" in err


def test_experiment_cli_bad_config_schema(tmp_path):
    payload = growth_experiment_config(tmp_path, tmp_path / "runs")
    payload["experiment"] = "bogus"
    cfg = write_config(tmp_path, payload)
    assert main(["experiment", "--config", cfg]) == 1
