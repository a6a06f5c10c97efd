"""Command line front end.

Subcommands map onto the library layers: sampled identity checks,
constant scans, radial and grid solves, dual-transform diagnostics,
barrier and section screens, and the named experiment campaigns.

Exit codes: 0 success, 1 usage or configuration errors, 2 for a run
that completed but failed its check (non-convergence, violated margin,
failed campaign).  Witness details for code 2 go to stderr.
"""

import argparse
import json
import sys

import numpy as np

from .errors import ArgumentError, HessqError
from .experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    barrier_spec_from_dict,
    emit_report,
    field_from_problem,
    problem_from_spec,
    run_experiment,
)
from .geometry import radius_estimate_check, urbas_barrier
from .grid import GridFunction
from .inequalities import SampleConfig, estimate_constants
from .legendre import discrete_legendre, dual_checks
from .solver import grid_solve, radial_solve
from .symcalc import verify_sigma_identities

_RESIDUAL_KEYS = ("split", "deleted_sum", "weighted_sum", "square_weighted_sum")


def _say(args, text):
    if not args.quiet:
        print(text)


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ArgumentError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"config {path} is not valid JSON: {exc}")


def _cmd_identities(args):
    rng = np.random.default_rng([args.seed, 1])
    spectra = 10.0 ** rng.uniform(-2.0, 2.0, size=(args.count, args.n))
    worst = 0.0
    newton_min = np.inf
    for row in spectra:
        checks = verify_sigma_identities(row, args.k)
        worst = max(worst, *(checks[key] for key in _RESIDUAL_KEYS))
        newton_min = min(newton_min, checks["newton_margin"])
    ok = worst <= args.tol and newton_min >= -args.tol
    verdict = "PASS" if ok else "FAIL"
    _say(
        args,
        f"identities {verdict}: n={args.n} k={args.k} count={args.count} "
        f"max_residual={worst:.3e} newton_min={newton_min:.3e}",
    )
    if not ok:
        print(
            f"identity check failed: max_residual={worst:.3e} newton_min={newton_min:.3e}",
            file=sys.stderr,
        )
        return 2
    return 0


def _cmd_scan(args):
    config = SampleConfig(which=args.which, n=args.n, k=args.k, count=args.count, seed=args.seed)
    report = estimate_constants(config)
    empirical = report.empirical_constant
    shown = "none" if empirical is None else f"{empirical:.6g}"
    _say(
        args,
        f"scan {args.which}: n={args.n} k={args.k} count={report.count} "
        f"violations={report.violations} min_margin={report.min_margin:.3e} empirical={shown}",
    )
    if args.which == "guan-sroka-c" and report.violations > 0:
        print(
            f"scan found {report.violations} violations; witness {report.witness}",
            file=sys.stderr,
        )
        return 2
    return 0


def _cmd_solve_radial(args):
    profile = radial_solve(args.n, args.k, args.f, args.r_max, num_steps=args.num_steps)
    _say(
        args,
        f"radial profile: n={args.n} k={args.k} r_max={args.r_max} "
        f"residual_sup={profile.residual_sup:.3e}",
    )
    if profile.residual_sup > args.tol:
        print(
            f"radial residual {profile.residual_sup:.3e} exceeds tolerance {args.tol:.3e}",
            file=sys.stderr,
        )
        return 2
    return 0


def _cmd_solve_grid(args):
    config = _load_json(args.config)
    if not isinstance(config, dict) or "problem" not in config:
        raise ArgumentError("solve-grid config needs a 'problem' entry")
    problem = problem_from_spec(config["problem"])
    u, report = grid_solve(problem)
    if not report.converged:
        print(f"solve-grid failed: {report.message}", file=sys.stderr)
        return 2
    import os

    os.makedirs(args.out, exist_ok=True)
    solution_path = os.path.join(args.out, "solution.bin")
    u.save(solution_path)
    report_path = os.path.join(args.out, "solve-report.json")
    payload = {
        "converged": bool(report.converged),
        "iterations": int(report.iterations),
        "residual_sup": float(report.residual_sup),
        "min_interior_eig": float(report.min_interior_eig),
        "message": report.message,
    }
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _say(
        args,
        f"solved in {report.iterations} iterations, residual_sup={report.residual_sup:.3e}; "
        f"wrote {solution_path} and {report_path}",
    )
    return 0


def _cmd_legendre_check(args):
    config = _load_json(args.config)
    if not isinstance(config, dict) or "problem" not in config:
        raise ArgumentError("legendre-check config needs a 'problem' entry")
    problem = config["problem"]
    u = field_from_problem(problem)
    k = int(problem.get("k", 1))
    pair = discrete_legendre(u, int(config.get("dual_resolution", 21)))
    probes = _strided_probes(u, limit=200)
    result = dual_checks(pair, k, probes)
    summary = result["summary"]
    _say(
        args,
        f"legendre checks: checked={summary['checked']} skipped={summary['skipped']} "
        f"max_inv={summary['max_inv']:.3e} max_quot={summary['max_quot']:.3e} "
        f"max_gii={summary['max_gii']:.3e}",
    )
    tolerance = float(config.get("tolerance", 0.2))
    worst = max(summary["max_inv"], summary["max_quot"], summary["max_gii"])
    if summary["checked"] == 0 or worst > tolerance:
        print(
            f"legendre checks failed: checked={summary['checked']} worst={worst:.3e} "
            f"tolerance={tolerance:.3e}",
            file=sys.stderr,
        )
        return 2
    return 0


def _strided_probes(u, limit=200):
    coords = u.coords_flat()[u.interior_mask(2).ravel()]
    if coords.shape[0] > limit:
        stride = -(-coords.shape[0] // limit)
        coords = coords[::stride]
    return coords


def _cmd_barrier(args):
    config = _load_json(args.config)
    if not isinstance(config, dict) or "problem" not in config or "barrier" not in config:
        raise ArgumentError("barrier config needs 'problem' and 'barrier' entries")
    problem = config["problem"]
    u = field_from_problem(problem)
    spec = barrier_spec_from_dict(config["barrier"], int(problem["n"]), int(problem["k"]))
    base = config.get("base_point")
    base_arr = None if base is None else np.asarray(base, dtype=float)
    record = urbas_barrier(spec, u, base_point=base_arr)
    _say(
        args,
        f"barrier {spec.variant}: passed={record.passed} rhs_value={record.rhs_value:.3e} "
        f"sphere_min={record.sphere_min:.3e} bound={record.sphere_min_bound:.3e}",
    )
    if not record.passed:
        print(
            f"barrier screen failed: rhs_ok={record.rhs_ok} sphere_min_ok={record.sphere_min_ok} "
            f"sphere_min={record.sphere_min:.3e} bound={record.sphere_min_bound:.3e}",
            file=sys.stderr,
        )
        return 2
    return 0


def _cmd_geometry(args):
    config = _load_json(args.config)
    if not isinstance(config, dict) or "problem" not in config:
        raise ArgumentError("geometry config needs a 'problem' entry")
    problem = config["problem"]
    u = field_from_problem(problem)
    base = config.get("base_point")
    base_arr = np.zeros(u.n) if base is None else np.asarray(base, dtype=float)
    check = radius_estimate_check(
        u,
        base_arr,
        float(config.get("h", 0.25)),
        int(problem["k"]),
        rescale=config.get("rescale", "none"),
    )
    _say(
        args,
        f"radius check: n={check.n} k={check.k} h={check.h} lhs={check.lhs:.4f} "
        f"rhs={check.rhs:.4f} margin={check.margin:.4f} eps_geom={check.eps_geom:.4f}",
    )
    if check.margin < -check.eps_geom:
        print(
            f"radius estimate violated: margin={check.margin:.4f} allowance={check.eps_geom:.4f} "
            f"worst_value={check.worst_value:.4f}",
            file=sys.stderr,
        )
        return 2
    return 0


def _print_experiment_witness(report):
    for row in report.rows:
        if not row.get("pass", False):
            detail = row.get("error")
            tail = f" ({detail})" if detail else ""
            print(f"witness row {row.get('case', '?')}: pass=false{tail}", file=sys.stderr)
            return
    if report.experiment == "growth":
        fitted = report.fitted.get("fitted_exponent")
        target = report.fitted.get("target_exponent")
        print(
            f"growth exponent {fitted} is below target exponent {target}",
            file=sys.stderr,
        )
        return
    print(f"experiment {report.experiment} failed; witness in fitted {report.fitted}", file=sys.stderr)


def _cmd_experiment(args):
    payload = _load_json(args.config)
    if not isinstance(payload, dict):
        raise ArgumentError("experiment config must be a JSON object")
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.out is not None:
        payload["out_dir"] = args.out
    config = ExperimentConfig.from_dict(payload)
    report = run_experiment(config)
    paths = emit_report(report)
    for fmt in ("json", "csv", "svg"):
        _say(args, f"wrote {paths[fmt]}")
    verdict = "PASS" if report.passed else "FAIL"
    partial = " (partial)" if report.partial else ""
    _say(args, f"experiment {report.experiment} {verdict}{partial}: {len(report.rows)} rows")
    if not report.passed:
        _print_experiment_witness(report)
        return 2
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hessq",
        description="numerical checks for Hessian quotient interior estimates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("identities", help="sampled symmetric-function identity check")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--seed", type=int, default=20250819)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=_cmd_identities)

    p = sub.add_parser("scan", help="sampled constant or threshold scan")
    p.add_argument("--which", required=True, choices=("guan-sroka-c", "zhang-threshold"))
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--seed", type=int, default=20250819)
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("solve-radial", help="radial profile solve")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--f", type=float, required=True)
    p.add_argument("--r-max", type=float, required=True)
    p.add_argument("--num-steps", type=int, default=4096)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=_cmd_solve_radial)

    p = sub.add_parser("solve-grid", help="Dirichlet solve from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_solve_grid)

    p = sub.add_parser("legendre-check", help="dual transform diagnostics")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_legendre_check)

    p = sub.add_parser("barrier", help="slab barrier screen")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_barrier)

    p = sub.add_parser("geometry", help="section radius estimate check")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_geometry)

    p = sub.add_parser("experiment", help="run a named experiment campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_experiment)

    for sp in sub.choices.values():
        sp.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except HessqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
