"""Tests for the experiment drivers and report emitters.

The workhorse fixture is the Dirichlet problem with f = 4/3 and boundary
data x^2 + 2y^2 on [-1, 1]^2.  The quadratic x^2 + 2y^2 satisfies the
discrete equation exactly (second differences of a quadratic are exact and
sigma_2/sigma_1 of diag(2, 4) is 8/6), so the grid solver returns it to
Newton tolerance and every downstream statistic has a closed form computed
by hand in the assertions.
"""

import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessq.errors import ArgumentError
from hessq.experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    ExperimentReport,
    emit_report,
    run_experiment,
    spec_callable,
)


def quad_problem(num=21, f_value=4.0 / 3.0, n=2):
    diag = [2.0, 4.0] if n == 2 else [2.0] * n
    return {
        "n": n,
        "k": 1,
        "lo": [-1.0] * n,
        "hi": [1.0] * n,
        "num": [num] * n,
        "f": {"kind": "constant", "value": f_value},
        "g": {"kind": "quadratic", "constant": 0.0, "linear": [0.0] * n, "diag": diag},
    }


def make_config(tmp_path, experiment, **overrides):
    base = {
        "experiment": experiment,
        "problem": quad_problem(),
        "seed": 7,
        "out_dir": str(tmp_path),
    }
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


# ---------------------------------------------------------------------------
# field specs
# ---------------------------------------------------------------------------


def test_spec_callable_constant():
    fn = spec_callable({"kind": "constant", "value": 1.75})
    out = fn(np.array([[0.0, 0.0], [2.0, -3.0]]))
    assert out.shape == (2,)
    assert out[0] == 1.75 and out[1] == 1.75
    assert spec_callable({"kind": "constant", "value": 1.75}, scale=2.0)(
        np.zeros((1, 2))
    )[0] == 3.5


def test_spec_callable_quadratic_hand_value():
    spec = {
        "kind": "quadratic",
        "constant": 1.5,
        "linear": [1.0, -2.0],
        "diag": [2.0, 4.0],
    }
    fn = spec_callable(spec)
    # 1.5 + (0.5 - 2.0) + 0.5 * (2 * 0.25 + 4 * 1.0) = 2.25, exact in floats
    assert fn(np.array([[0.5, 1.0]]))[0] == 2.25
    assert spec_callable(spec, scale=2.0)(np.array([[0.5, 1.0]]))[0] == 4.5


def test_spec_callable_radial_power():
    spec = {"kind": "radial-power", "coeff": 3.0, "power": 1.0}
    fn = spec_callable(spec)
    assert fn(np.array([[3.0, 4.0]]))[0] == pytest.approx(15.0, rel=1e-14)
    shifted = spec_callable(
        {"kind": "radial-power", "coeff": 1.0, "power": 2.0, "center": [1.0, 0.0]}
    )
    assert shifted(np.array([[0.0, 0.0]]))[0] == pytest.approx(1.0, rel=1e-14)


def test_spec_callable_unknown_kind():
    with pytest.raises(ArgumentError):
        spec_callable({"kind": "polynomial", "value": 1.0})


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = make_config(tmp_path, "pogorelov", f_scales=[0.9, 1.0, 1.1], m_values=[8])
    d = cfg.as_dict()
    assert d["experiment"] == "pogorelov"
    assert d["schema_version"] == 1
    assert ExperimentConfig.from_dict(d).as_dict() == d


def test_experiment_names_are_closed():
    assert set(EXPERIMENTS) == {
        "pogorelov",
        "hessian-floor",
        "mean-value",
        "dual-jacobi",
        "inequality-scan",
        "barrier",
        "growth",
    }


@pytest.mark.parametrize(
    "mutate, hint",
    [
        (lambda d: d.update(experiment="bogus"), "experiment"),
        (lambda d: d.update(schema_version=2), "schema_version"),
        (lambda d: d.update(f_scales=[]), "f_scales"),
        (lambda d: d.update(h_sections=[-0.1]), "h_sections"),
        (lambda d: d.update(m_values=[8, 8]), "m_values"),
        (lambda d: d.update(grid_sizes=[4]), "grid_sizes"),
        (lambda d: d.update(r_values=[0.3, 0.2]), "r_values"),
        (lambda d: d.update(unknown_knob=1), "unknown"),
        (lambda d: d["problem"].pop("g"), "problem"),
        (lambda d: d["problem"].update(k=2), "k"),
        (lambda d: d["problem"].update(num=[21, 21, 21]), "num"),
        (lambda d: d["problem"].update(g={"kind": "quadratic", "diag": [1.0]}), "diag"),
        (lambda d: d.update(scan_modes=["bogus"], experiment="inequality-scan"), "scan"),
        (lambda d: d.update(experiment="barrier"), "barrier"),
        (lambda d: d.update(fit_safety=0.5), "fit_safety"),
    ],
)
def test_config_validation_errors(tmp_path, mutate, hint):
    d = {
        "experiment": "pogorelov",
        "problem": quad_problem(),
        "seed": 7,
        "out_dir": str(tmp_path),
    }
    mutate(d)
    with pytest.raises(ArgumentError):
        ExperimentConfig.from_dict(d)


def test_config_solver_experiments_need_low_dimension(tmp_path):
    d = {
        "experiment": "pogorelov",
        "problem": quad_problem(n=4),
        "out_dir": str(tmp_path),
    }
    with pytest.raises(ArgumentError):
        ExperimentConfig.from_dict(d)


def test_field_file_must_exist(tmp_path):
    with pytest.raises(ArgumentError):
        make_config(
            tmp_path,
            "growth",
            problem=quad_problem(n=3),
            field_file=str(tmp_path / "nope.bin"),
        )


@settings(max_examples=25, deadline=None)
@given(
    scales=st.lists(
        st.floats(min_value=0.1, max_value=4.0, allow_nan=False), min_size=1, max_size=5
    ),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_config_round_trip_random_sweeps(scales, seed):
    # out_dir is only carried by the config here, nothing is written
    d = {
        "experiment": "pogorelov",
        "problem": quad_problem(),
        "seed": seed,
        "out_dir": "reports",
        "f_scales": scales,
    }
    out = ExperimentConfig.from_dict(d).as_dict()
    assert out["f_scales"] == [float(s) for s in scales]
    assert ExperimentConfig.from_dict(out).as_dict() == out


# ---------------------------------------------------------------------------
# pogorelov
# ---------------------------------------------------------------------------


def test_pogorelov_exact_quadratic(tmp_path):
    cfg = make_config(
        tmp_path,
        "pogorelov",
        f_scales=[1.0],
        h_sections=[0.25],
        grid_sizes=[21],
        m_values=[8],
    )
    report = run_experiment(cfg)
    assert report.experiment == "pogorelov"
    assert not report.partial
    assert report.passed
    assert len(report.rows) == 2  # one family case plus one approximation case
    row = report.rows[0]
    assert list(row) == [
        "case",
        "h_section",
        "f_scale",
        "tau",
        "max_hess",
        "lambda_min",
        "pass",
    ]
    # exact solution x^2 + 2y^2: Hessian diag(2, 4) everywhere
    assert row["max_hess"] == pytest.approx(4.0, abs=1e-6)
    assert row["lambda_min"] == pytest.approx(2.0, abs=1e-6)
    # section {x^2 + 2y^2 < 1/4} has short semi-axis sqrt(1/8); tau is half
    assert row["tau"] == pytest.approx(0.5 * math.sqrt(0.125), abs=0.012)
    assert row["pass"] is True
    assert report.fitted["family_variation"] == 0.0
    assert 0.0 <= report.fitted["approx_variation"] <= 0.05
    mrow = report.rows[1]
    assert mrow["case"].startswith("approx-m")
    assert mrow["f_scale"] == 1.0


def test_pogorelov_family_variation_and_determinism(tmp_path):
    cfg = make_config(
        tmp_path,
        "pogorelov",
        problem=quad_problem(num=17),
        f_scales=[0.9, 1.0, 1.1],
        grid_sizes=[17],
        m_values=[8],
    )
    report = run_experiment(cfg)
    assert len(report.rows) == 4
    assert report.passed
    # the family is genuinely inhomogeneous (fixed boundary data, scaled f)
    assert 0.0 < report.fitted["family_variation"] <= 0.10
    again = run_experiment(cfg)
    assert json.dumps(report.as_dict(), sort_keys=True) == json.dumps(
        again.as_dict(), sort_keys=True
    )


def test_pogorelov_csv_columns(tmp_path):
    cfg = make_config(
        tmp_path,
        "pogorelov",
        f_scales=[1.0],
        grid_sizes=[17],
        problem=quad_problem(num=17),
        m_values=[8],
    )
    report = run_experiment(cfg)
    paths = emit_report(report, formats=("csv",))
    text = open(paths["csv"]).read()
    header = text.splitlines()[0]
    assert header == "case,h_section,f_scale,tau,max_hess,lambda_min,pass"
    assert len(text.splitlines()) == 1 + len(report.rows)


def test_pogorelov_failure_rows_keep_report_partial(tmp_path):
    problem = quad_problem(num=17)
    problem["f"] = {"kind": "constant", "value": 1.0}
    problem["g"] = {"kind": "constant", "value": 0.25}
    problem["ball"] = {"center": [0.0, 0.0], "radius": 0.7}
    cfg = make_config(
        tmp_path, "pogorelov", problem=problem, f_scales=[1.0], m_values=[8]
    )
    report = run_experiment(cfg)
    assert report.partial
    assert not report.passed
    assert all(r["pass"] is False for r in report.rows)
    assert any("error" in r for r in report.rows)


# ---------------------------------------------------------------------------
# hessian floor
# ---------------------------------------------------------------------------


def test_hessian_floor_exact_quadratic(tmp_path):
    cfg = make_config(
        tmp_path,
        "hessian-floor",
        f_scales=[1.0],
        grid_sizes=[17, 21],
        beta_values=[1.0, 2.0],
        h_sections=[0.25],
    )
    report = run_experiment(cfg)
    assert report.passed
    assert len(report.rows) == 4  # two betas, two grids, one scale
    assert list(report.rows[0]) == ["case", "beta", "f_scale", "grid", "sup_ratio", "pass"]
    for row in report.rows:
        # sup of (h - v)^beta / lambda_min over the section is h^beta / 2
        assert row["sup_ratio"] == pytest.approx(0.25 ** row["beta"] / 2.0, abs=1e-7)
    assert report.fitted["beta_star"] == 1.0
    assert report.fitted["bound"] == pytest.approx(0.125, abs=1e-7)


def test_hessian_floor_family_stays_bounded(tmp_path):
    cfg = make_config(
        tmp_path,
        "hessian-floor",
        problem=quad_problem(num=17),
        f_scales=[0.9, 1.1],
        grid_sizes=[17],
        beta_values=[0.49, 1.0, 2.0],
    )
    report = run_experiment(cfg)
    assert report.passed
    assert report.fitted["beta_star"] == 0.49
    assert len(report.rows) == 6


# ---------------------------------------------------------------------------
# mean value
# ---------------------------------------------------------------------------


def test_mean_value_exact_quadratic_family(tmp_path):
    cfg = make_config(
        tmp_path,
        "mean-value",
        f_scales=[1.0, 1.1],
        grid_sizes=[21],
        h_sections=[0.25],
    )
    report = run_experiment(cfg)
    assert report.passed
    assert len(report.rows) == 2
    row = report.rows[0]
    assert list(row) == [
        "case",
        "f_scale",
        "epsilon",
        "offset",
        "max_dual",
        "integral",
        "bound",
        "pass",
    ]
    # top eigenvalue is 4 everywhere, so the tracked field is log(4) + 1
    assert row["offset"] == pytest.approx(1.0, abs=1e-9)
    assert row["max_dual"] == pytest.approx(math.log(4.0) + 1.0, abs=1e-8)
    assert 0.3 <= row["epsilon"] <= 0.6
    assert report.fitted["C"] > 0
    assert all(r["pass"] for r in report.rows)


# ---------------------------------------------------------------------------
# dual jacobi
# ---------------------------------------------------------------------------


def test_dual_jacobi_zero_violations(tmp_path):
    cfg = make_config(
        tmp_path,
        "dual-jacobi",
        f_scales=[1.0],
        grid_sizes=[21],
        dual_resolution=21,
    )
    report = run_experiment(cfg)
    assert report.passed
    sides = [r["side"] for r in report.rows]
    assert sides == ["primal", "dual"]
    for row in report.rows:
        assert row["violations"] == 0
        assert row["count"] > 0
        assert row["pass"] is True
    assert report.fitted["primal_cap"] >= 0.0
    assert report.fitted["dual_cap"] >= 0.0


# ---------------------------------------------------------------------------
# inequality scan
# ---------------------------------------------------------------------------


def test_inequality_scan_rows(tmp_path):
    problem = quad_problem(n=4)
    problem["k"] = 2  # the threshold scan needs 1 < k < n
    cfg = make_config(
        tmp_path,
        "inequality-scan",
        problem=problem,
        scan_modes=["guan-sroka-c", "zhang-threshold"],
        sample_count=400,
    )
    cfg2 = ExperimentConfig.from_dict(cfg.as_dict())
    report = run_experiment(cfg2)
    assert report.passed
    assert [r["mode"] for r in report.rows] == ["guan-sroka-c", "zhang-threshold"]
    guan, zhang = report.rows
    assert guan["violations"] == 0
    assert guan["empirical"] > 0
    assert zhang["empirical"] is not None
    assert report.rows[0]["n"] == 4 and report.rows[0]["k"] == 2


# ---------------------------------------------------------------------------
# barrier and growth
# ---------------------------------------------------------------------------


def barrier_problem(num=21):
    return {
        "n": 4,
        "k": 1,
        "lo": [-1.0] * 4,
        "hi": [1.0] * 4,
        "num": [num] * 4,
        "f": {"kind": "constant", "value": 1.0},
        "g": {
            "kind": "quadratic",
            "constant": 0.0,
            "linear": [0.0] * 4,
            "diag": [1.0] * 4,
        },
    }


def test_barrier_experiment_case1(tmp_path):
    cfg = make_config(
        tmp_path,
        "barrier",
        problem=barrier_problem(),
        grid_sizes=[21],
        barrier={
            "variant": "case1",
            "lateral_coeff": 9.0,
            "young_coeff": 1.0,
            "holder": 0.9,
            "height": 0.5,
            "rhs_cap": 0.25,
        },
    )
    report = run_experiment(cfg)
    assert report.passed and not report.partial
    row = report.rows[0]
    assert row["variant"] == "case1"
    assert row["pass"] is True
    assert row["rhs_value"] <= 0.25
    # lower bound B rho^2 / 4 with B = 0.25 / (8 * 81) and rho = 0.5
    assert report.fitted["bound"] == pytest.approx(0.0625 / 2592.0, rel=1e-12)


def test_growth_experiment_quadratic_passes(tmp_path):
    cfg = make_config(
        tmp_path,
        "growth",
        problem=quad_problem(n=3),
        grid_sizes=[21],
        r_values=[0.2, 0.3, 0.45],
    )
    report = run_experiment(cfg)
    assert report.passed
    assert list(report.rows[0]) == ["case", "r", "value", "margin", "pass"]
    assert len(report.rows) == 3
    assert report.fitted["fitted_exponent"] == pytest.approx(2.0, abs=0.1)
    assert report.fitted["target_exponent"] == pytest.approx(1.0, abs=1e-12)


def test_growth_experiment_cone_fails(tmp_path):
    problem = {
        "n": 4,
        "k": 1,
        "lo": [-1.0] * 4,
        "hi": [1.0] * 4,
        "num": [21] * 4,
        "f": {"kind": "constant", "value": 1.0},
        "g": {"kind": "radial-power", "coeff": 1.0, "power": 1.0},
    }
    cfg = make_config(
        tmp_path, "growth", problem=problem, grid_sizes=[21], r_values=[0.2, 0.3, 0.45]
    )
    report = run_experiment(cfg)
    # cone growth is linear; the borderline target for (4, 1) is 4/3
    assert report.fitted["fitted_exponent"] == pytest.approx(1.0, abs=0.08)
    assert not report.passed


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def test_emit_report_deterministic_files(tmp_path):
    cfg = make_config(
        tmp_path,
        "growth",
        problem=quad_problem(n=3),
        grid_sizes=[17],
        r_values=[0.2, 0.3, 0.45],
    )
    report = run_experiment(cfg)
    paths = emit_report(report, formats=("json", "csv", "svg"))
    assert sorted(paths) == ["csv", "json", "svg"]
    for fmt, path in paths.items():
        assert os.path.basename(path) == f"growth-report.{fmt}"
        assert os.path.exists(path)
    blob1 = {fmt: open(p, "rb").read() for fmt, p in paths.items()}
    paths2 = emit_report(report, formats=("json", "csv", "svg"))
    blob2 = {fmt: open(p, "rb").read() for fmt, p in paths2.items()}
    assert blob1 == blob2
    loaded = json.loads(blob1["json"].decode())
    assert loaded["config"] == cfg.as_dict()
    assert loaded["passed"] is True


def test_emit_report_rejects_unknown_format(tmp_path):
    cfg = make_config(tmp_path, "growth", problem=quad_problem(n=3))
    report = ExperimentReport(
        experiment="growth",
        config=cfg.as_dict(),
        rows=[],
        fitted={},
        passed=True,
        partial=False,
        environment={"seed": 7},
    )
    with pytest.raises(ArgumentError):
        emit_report(report, formats=("pdf",))


def test_emit_empty_report_valid_json(tmp_path):
    cfg = make_config(tmp_path, "growth", problem=quad_problem(n=3))
    report = ExperimentReport(
        experiment="growth",
        config=cfg.as_dict(),
        rows=[],
        fitted={},
        passed=True,
        partial=False,
        environment={"seed": 7},
    )
    paths = emit_report(report, formats=("json", "csv", "svg"))
    loaded = json.loads(open(paths["json"]).read())
    assert loaded["rows"] == []
    assert open(paths["svg"]).read().startswith("<svg")


def test_emit_svg_is_self_contained(tmp_path):
    cfg = make_config(
        tmp_path,
        "growth",
        problem=quad_problem(n=3),
        grid_sizes=[17],
        r_values=[0.2, 0.3, 0.45],
    )
    report = run_experiment(cfg)
    paths = emit_report(report, formats=("svg",))
    text = open(paths["svg"]).read()
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert "polyline" in text or "circle" in text
    assert "http://" not in text.replace("http://www.w3.org", "")


def test_rerun_from_embedded_config_reproduces_report(tmp_path):
    cfg = make_config(
        tmp_path,
        "growth",
        problem=quad_problem(n=3),
        grid_sizes=[17],
        r_values=[0.2, 0.3, 0.45],
    )
    report = run_experiment(cfg)
    paths = emit_report(report, formats=("json",))
    embedded = json.loads(open(paths["json"]).read())["config"]
    replay = run_experiment(ExperimentConfig.from_dict(embedded))
    assert json.dumps(replay.as_dict(), sort_keys=True) == json.dumps(
        report.as_dict(), sort_keys=True
    )
