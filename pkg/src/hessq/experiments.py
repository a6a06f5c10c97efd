"""Named experiment campaigns over solved fields and sampled cones.

Each campaign consumes a schema-checked ExperimentConfig, runs a family
of cases, and returns an ExperimentReport whose JSON, CSV, and SVG
renderings are byte-deterministic for a fixed config.  Failing sub-solves
become failure rows and mark the report partial instead of raising, so a
sweep always produces a complete artifact.

Randomness is confined to per-case child seeds derived from the config
seed, which keeps the case list order-independent; assembly of rows and
files is single threaded.
"""

import copy
import dataclasses
import importlib.metadata
import json
import math
import os
import platform

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import ConvexHull, QhullError

from .errors import ArgumentError, DomainError, HessqError
from .geometry import BarrierSpec, extract_section, growth_probe, john_ellipsoid, urbas_barrier
from .grid import GridFunction, _atomic_write_bytes
from .inequalities import LogEigenField, SampleConfig, dual_jacobi_margin, estimate_constants, jacobi_margin
from .legendre import discrete_legendre
from .solver import DirichletProblem, grid_solve
from .symcalc import sigma

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "ExperimentReport",
    "barrier_spec_from_dict",
    "emit_report",
    "field_from_problem",
    "problem_from_spec",
    "run_experiment",
    "spec_callable",
]

EXPERIMENTS = (
    "pogorelov",
    "hessian-floor",
    "mean-value",
    "dual-jacobi",
    "inequality-scan",
    "barrier",
    "growth",
)

# campaigns that run the damped-Newton Dirichlet solver per case
_SOLVE_EXPERIMENTS = ("pogorelov", "hessian-floor", "mean-value", "dual-jacobi")
# campaigns that sample a field directly from the g spec (or a saved file)
_FIELD_EXPERIMENTS = ("barrier", "growth")

_SCAN_MODES = ("guan-sroka-c", "zhang-threshold")

# gradient-quadratic coefficient tried on the primal differential margin
_TRIAL_C = 0.5

# directions per pullback cloud in the mean-value campaign
_PULLBACK_DIRECTIONS = 48

# interior Hessian variation allowed across an f-family or an m-family
_VARIATION_CAP = 0.25


# ---------------------------------------------------------------------------
# field specs
# ---------------------------------------------------------------------------


def _spec_keys(spec, kind, required, optional=()):
    present = set(spec) - {"kind"}
    missing = set(required) - present
    if missing:
        raise ArgumentError(
            f"{kind} field spec is missing {sorted(missing)}"
        )
    extra = present - set(required) - set(optional)
    if extra:
        raise ArgumentError(f"{kind} field spec has unknown keys {sorted(extra)}")


def spec_callable(spec, scale: float = 1.0):
    """Vectorized callable (m, n) -> (m,) for a JSON field spec.

    Kinds: "constant" with a value, "quadratic" with constant, linear and
    diag coefficients (value = c + l.x + 0.5 sum diag_i x_i^2), and
    "radial-power" with coeff * |x - center|^power.  scale multiplies the
    whole field, which is how f-sweeps are realized.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ArgumentError("field spec must be a dict with a 'kind' key")
    kind = spec["kind"]
    s = float(scale)
    if kind == "constant":
        _spec_keys(spec, kind, ("value",))
        value = s * float(spec["value"])

        def fn_const(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            return np.full(pts.shape[0], value)

        return fn_const
    if kind == "quadratic":
        _spec_keys(spec, kind, ("constant", "linear", "diag"))
        c0 = float(spec["constant"])
        lin = np.asarray(spec["linear"], dtype=float).ravel()
        diag = np.asarray(spec["diag"], dtype=float).ravel()
        if lin.shape != diag.shape:
            raise ArgumentError("quadratic spec needs linear and diag of equal length")

        def fn_quad(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            if pts.shape[1] != lin.size:
                raise ArgumentError(
                    f"quadratic spec has {lin.size} coefficients but points have "
                    f"{pts.shape[1]} columns"
                )
            return s * (c0 + pts @ lin + 0.5 * (pts * pts) @ diag)

        return fn_quad
    if kind == "radial-power":
        _spec_keys(spec, kind, ("coeff", "power"), optional=("center",))
        coeff = float(spec["coeff"])
        power = float(spec["power"])
        center = None if "center" not in spec else np.asarray(spec["center"], dtype=float).ravel()

        def fn_radial(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            c = np.zeros(pts.shape[1]) if center is None else center
            if c.size != pts.shape[1]:
                raise ArgumentError("radial-power center length does not match points")
            r = np.linalg.norm(pts - c, axis=1)
            return s * coeff * r**power

        return fn_radial
    raise ArgumentError(f"unknown field spec kind {kind!r}")


def _validate_field_spec(spec, n: int, label: str) -> dict:
    """Return a normalized copy of the spec, checked against dimension n."""
    fn = spec_callable(spec)  # key and kind checks
    kind = spec["kind"]
    if kind == "constant":
        value = float(spec["value"])
        if not math.isfinite(value):
            raise ArgumentError(f"{label} spec value must be finite")
        return {"kind": "constant", "value": value}
    if kind == "quadratic":
        lin = [float(v) for v in spec["linear"]]
        diag = [float(v) for v in spec["diag"]]
        if len(lin) != n or len(diag) != n:
            raise ArgumentError(
                f"{label} spec linear and diag must have length n = {n}"
            )
        c0 = float(spec["constant"])
        for v in [c0] + lin + diag:
            if not math.isfinite(v):
                raise ArgumentError(f"{label} spec coefficients must be finite")
        return {"kind": "quadratic", "constant": c0, "linear": lin, "diag": diag}
    # radial-power
    coeff = float(spec["coeff"])
    power = float(spec["power"])
    if not (math.isfinite(coeff) and math.isfinite(power)) or power <= 0:
        raise ArgumentError(f"{label} spec needs finite coeff and power > 0")
    out = {"kind": "radial-power", "coeff": coeff, "power": power}
    if "center" in spec:
        center = [float(v) for v in spec["center"]]
        if len(center) != n or not all(math.isfinite(v) for v in center):
            raise ArgumentError(f"{label} spec center must have length n = {n}")
        out["center"] = center
    del fn
    return out


_PROBLEM_REQUIRED = ("n", "k", "lo", "hi", "num", "f", "g")


def _normalize_problem(problem) -> dict:
    if not isinstance(problem, dict):
        raise ArgumentError("problem must be a dict")
    missing = set(_PROBLEM_REQUIRED) - set(problem)
    if missing:
        raise ArgumentError(f"problem is missing {sorted(missing)}")
    extra = set(problem) - set(_PROBLEM_REQUIRED) - {"ball"}
    if extra:
        raise ArgumentError(f"problem has unknown keys {sorted(extra)}")
    n = int(problem["n"])
    k = int(problem["k"])
    if n < 2:
        raise ArgumentError("problem needs n >= 2")
    if not 0 <= k < n:
        raise ArgumentError(f"problem needs 0 <= k < n, got (n, k) = ({n}, {k})")
    lo = [float(v) for v in problem["lo"]]
    hi = [float(v) for v in problem["hi"]]
    num = [int(v) for v in problem["num"]]
    if len(lo) != n or len(hi) != n or len(num) != n:
        raise ArgumentError("problem lo, hi, num must all have length n")
    if any(not (math.isfinite(a) and math.isfinite(b) and a < b) for a, b in zip(lo, hi)):
        raise ArgumentError("problem needs finite lo < hi on every axis")
    if any(v < 5 for v in num):
        raise ArgumentError("problem num needs at least 5 nodes per axis")
    out = {
        "n": n,
        "k": k,
        "lo": lo,
        "hi": hi,
        "num": num,
        "f": _validate_field_spec(problem["f"], n, "f"),
        "g": _validate_field_spec(problem["g"], n, "g"),
    }
    if problem.get("ball") is not None:
        ball = problem["ball"]
        if not isinstance(ball, dict) or set(ball) != {"center", "radius"}:
            raise ArgumentError("problem ball must be {'center': [...], 'radius': r}")
        center = [float(v) for v in ball["center"]]
        radius = float(ball["radius"])
        if len(center) != n or not radius > 0:
            raise ArgumentError("ball needs a length-n center and radius > 0")
        out["ball"] = {"center": center, "radius": radius}
    return out


def problem_from_spec(problem, f_scale: float = 1.0, num=None, f_shift: float = 0.0, g_shift: float = 0.0) -> DirichletProblem:
    """Build a DirichletProblem from a JSON problem dict.

    num overrides the per-axis node counts uniformly; f_shift and g_shift
    perturb the data by constants (f - f_shift, g + g_shift), which is how
    approximation families are produced.
    """
    spec = _normalize_problem(problem)
    n = spec["n"]
    dims = tuple(spec["num"]) if num is None else (int(num),) * n
    f_fn = spec_callable(spec["f"], scale=float(f_scale))
    g_fn = spec_callable(spec["g"])
    fs = float(f_shift)
    gs = float(g_shift)

    def f(pts):
        return f_fn(pts) - fs

    def g(pts):
        return g_fn(pts) + gs

    ball = spec.get("ball")
    ball_t = None if ball is None else (np.asarray(ball["center"], dtype=float), ball["radius"])
    return DirichletProblem(
        n=n,
        k=spec["k"],
        lo=tuple(spec["lo"]),
        hi=tuple(spec["hi"]),
        num=dims,
        f=f,
        g=g,
        ball=ball_t,
    )


def field_from_problem(problem, num=None) -> GridFunction:
    """Sample the problem's g spec on the problem box as a GridFunction."""
    spec = _normalize_problem(problem)
    n = spec["n"]
    dims = tuple(spec["num"]) if num is None else (int(num),) * n
    ball = spec.get("ball")
    ball_t = None if ball is None else (np.asarray(ball["center"], dtype=float), ball["radius"])
    return GridFunction.from_callable(
        spec_callable(spec["g"]), tuple(spec["lo"]), tuple(spec["hi"]), dims, ball=ball_t
    )


_BARRIER_COMMON = ("lateral_coeff", "young_coeff", "holder", "height", "rhs_cap")
_BARRIER_CASE2 = ("tilt_bottom", "tilt_top", "cut_bottom", "cut_top")


def barrier_spec_from_dict(settings, n: int, k: int) -> BarrierSpec:
    """Build a slab BarrierSpec from JSON settings for dimension (n, k)."""
    if not isinstance(settings, dict):
        raise ArgumentError("barrier settings must be a dict")
    variant = settings.get("variant")
    if variant not in ("case1", "case2"):
        raise ArgumentError("barrier variant must be 'case1' or 'case2'")
    allowed = {"variant"} | set(_BARRIER_COMMON)
    if variant == "case2":
        allowed |= set(_BARRIER_CASE2)
    extra = set(settings) - allowed
    if extra:
        raise ArgumentError(f"barrier settings have unknown keys {sorted(extra)}")
    missing = allowed - set(settings)
    if missing:
        raise ArgumentError(f"barrier settings are missing {sorted(missing)}")
    common = {name: float(settings[name]) for name in _BARRIER_COMMON}
    if variant == "case1":
        return BarrierSpec.case1(n=n, k=k, **common)
    return BarrierSpec.case2(
        n=n,
        k=k,
        tilt_bottom=tuple(float(v) for v in settings["tilt_bottom"]),
        tilt_top=tuple(float(v) for v in settings["tilt_top"]),
        cut_bottom=float(settings["cut_bottom"]),
        cut_top=float(settings["cut_top"]),
        **common,
    )


# ---------------------------------------------------------------------------
# config and report records
# ---------------------------------------------------------------------------


def _as_int(value, label):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ArgumentError(f"{label} must be an integer")
    return int(value)


def _float_tuple(values, label, positive=True):
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ArgumentError(f"{label} must be a sequence of numbers")
    if not out:
        raise ArgumentError(f"{label} must not be empty")
    for v in out:
        if not math.isfinite(v) or (positive and v <= 0):
            raise ArgumentError(f"{label} entries must be finite and positive")
    return out


def _increasing(values, label):
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ArgumentError(f"{label} must be strictly increasing")
    return values


@dataclasses.dataclass(eq=False)
class ExperimentConfig:
    """Validated description of one experiment campaign.

    problem follows the solver's JSON shape (n, k, lo, hi, num, f, g and
    an optional ball).  Sweep fields that a given experiment does not use
    are carried but ignored, so one config schema covers all campaigns.
    """

    experiment: str
    problem: dict
    seed: int = 20250819
    out_dir: str = "."
    schema_version: int = 1
    grid_sizes: tuple = (21,)
    f_scales: tuple = (0.9, 1.0, 1.1)
    h_sections: tuple = (0.25,)
    m_values: tuple = (8, 32)
    beta_values: tuple = (0.49, 1.0, 2.0, 2.25, 4.0, 8.0)
    r_values: tuple = (0.2, 0.3, 0.45)
    dual_resolution: int = 21
    scan_modes: tuple = ("guan-sroka-c",)
    sample_count: int = 2000
    fit_safety: float = 1.25
    spread_cap: float = 1.5
    barrier: dict | None = None
    field_file: str | None = None
    base_point: tuple | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ArgumentError(
                f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}"
            )
        if self.schema_version != 1:
            raise ArgumentError(f"unsupported schema_version {self.schema_version!r}")
        self.seed = _as_int(self.seed, "seed")
        if self.seed < 0:
            raise ArgumentError("seed must be nonnegative")
        self.out_dir = str(self.out_dir)
        self.problem = _normalize_problem(self.problem)
        n = self.problem["n"]

        sizes = tuple(_as_int(v, "grid_sizes entry") for v in self.grid_sizes)
        if not sizes or any(v < 9 for v in sizes):
            raise ArgumentError("grid_sizes needs at least one size, each >= 9")
        self.grid_sizes = sizes
        self.f_scales = _float_tuple(self.f_scales, "f_scales")
        self.h_sections = _float_tuple(self.h_sections, "h_sections")
        mv = tuple(_as_int(v, "m_values entry") for v in self.m_values)
        if not mv or any(v < 1 for v in mv):
            raise ArgumentError("m_values needs positive integers")
        self.m_values = _increasing(mv, "m_values")
        self.beta_values = _increasing(_float_tuple(self.beta_values, "beta_values"), "beta_values")
        self.r_values = _increasing(_float_tuple(self.r_values, "r_values"), "r_values")
        self.dual_resolution = _as_int(self.dual_resolution, "dual_resolution")
        if self.dual_resolution < 9:
            raise ArgumentError("dual_resolution must be at least 9")
        self.sample_count = _as_int(self.sample_count, "sample_count")
        if self.sample_count < 1:
            raise ArgumentError("sample_count must be positive")
        self.fit_safety = float(self.fit_safety)
        if not self.fit_safety >= 1.0:
            raise ArgumentError("fit_safety must be at least 1")
        self.spread_cap = float(self.spread_cap)
        if not self.spread_cap > 1.0:
            raise ArgumentError("spread_cap must exceed 1")
        modes = tuple(str(m) for m in self.scan_modes)
        if not modes or any(m not in _SCAN_MODES for m in modes):
            raise ArgumentError(f"scan_modes must be a nonempty subset of {_SCAN_MODES}")
        self.scan_modes = modes

        if self.experiment in _SOLVE_EXPERIMENTS and n not in (2, 3):
            raise ArgumentError(
                f"experiment {self.experiment!r} solves on grids and needs n in (2, 3)"
            )
        if self.experiment == "barrier":
            if self.barrier is None:
                raise ArgumentError("barrier experiment needs barrier settings")
            barrier_spec_from_dict(self.barrier, n, self.problem["k"])
            self.barrier = copy.deepcopy(self.barrier)
        elif self.barrier is not None:
            raise ArgumentError("barrier settings only apply to the barrier experiment")
        if self.experiment in _FIELD_EXPERIMENTS and self.problem.get("ball") is not None:
            raise ArgumentError(f"experiment {self.experiment!r} needs a box domain")
        if self.field_file is not None:
            if self.experiment not in _FIELD_EXPERIMENTS:
                raise ArgumentError("field_file only applies to barrier and growth")
            self.field_file = str(self.field_file)
            if not os.path.isfile(self.field_file):
                raise ArgumentError(f"field_file {self.field_file} does not exist")
        if self.base_point is not None:
            base = tuple(float(v) for v in self.base_point)
            if len(base) != n or any(not math.isfinite(v) for v in base):
                raise ArgumentError("base_point must be a finite length-n point")
            self.base_point = base

    @classmethod
    def from_dict(cls, payload) -> "ExperimentConfig":
        if not isinstance(payload, dict):
            raise ArgumentError("experiment config must be a dict")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ArgumentError(f"unknown config keys {sorted(unknown)}")
        if "experiment" not in payload or "problem" not in payload:
            raise ArgumentError("config needs at least 'experiment' and 'problem'")
        return cls(**payload)

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "problem": copy.deepcopy(self.problem),
            "seed": self.seed,
            "out_dir": self.out_dir,
            "schema_version": 1,
            "grid_sizes": list(self.grid_sizes),
            "f_scales": list(self.f_scales),
            "h_sections": list(self.h_sections),
            "m_values": list(self.m_values),
            "beta_values": list(self.beta_values),
            "r_values": list(self.r_values),
            "dual_resolution": self.dual_resolution,
            "scan_modes": list(self.scan_modes),
            "sample_count": self.sample_count,
            "fit_safety": self.fit_safety,
            "spread_cap": self.spread_cap,
            "barrier": copy.deepcopy(self.barrier),
            "field_file": self.field_file,
            "base_point": None if self.base_point is None else list(self.base_point),
        }


def _plain(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(key): _plain(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(val) for val in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(val) for val in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        return val if math.isfinite(val) else None
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _environment(seed: int) -> dict:
    try:
        version = importlib.metadata.version("hessq")
    except importlib.metadata.PackageNotFoundError:
        version = "unknown"
    return {
        "package_version": version,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "seed": int(seed),
    }


@dataclasses.dataclass(eq=False)
class ExperimentReport:
    """Rows, fitted constants, and pass flags of one campaign run."""

    experiment: str
    config: dict
    rows: list
    fitted: dict
    passed: bool
    partial: bool
    environment: dict

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": _plain(self.config),
            "rows": _plain(self.rows),
            "fitted": _plain(self.fitted),
            "passed": bool(self.passed),
            "partial": bool(self.partial),
            "environment": _plain(self.environment),
        }


# ---------------------------------------------------------------------------
# shared case machinery
# ---------------------------------------------------------------------------


def _solve_case(problem, f_scale, size, f_shift=0.0, g_shift=0.0):
    prob = problem_from_spec(problem, f_scale=f_scale, num=size, f_shift=f_shift, g_shift=g_shift)
    return grid_solve(prob)


def _bottom_node(u: GridFunction) -> tuple:
    inner = u.interior_mask(1)
    if not np.any(inner):
        raise DomainError("grid has no interior nodes")
    vals = np.where(inner, u.values, np.inf)
    return tuple(int(i) for i in np.unravel_index(int(np.argmin(vals)), u.dims))

def _tangent_surplus(u: GridFunction, idx: tuple):
    """Base point, gradient, and u minus its tangent plane at idx."""
    base = u.node_coord(idx)
    grad = u.gradient(idx)
    mesh = np.meshgrid(*u.axes(), indexing="ij")
    v = u.values - float(u.values[idx])
    for a in range(u.n):
        v = v - grad[a] * (mesh[a] - base[a])
    return base, grad, v


def _section_stats(u: GridFunction, h_section: float):
    """Core radius tau and Hessian extremes on the tau-ball of a section.

    The section is the sublevel set of the tangent surplus at the bottom
    node; tau is half the shortest John semi-axis, and the Hessian
    statistics run over interior nodes within tau of the John center.
    """
    idx = _bottom_node(u)
    section = extract_section(u, u.node_coord(idx), float(h_section))
    ell = john_ellipsoid(section)
    tau = 0.5 * float(ell.semi_axes[-1])
    coords = u.coords_flat().reshape(u.dims + (u.n,))
    dist = np.linalg.norm(coords - ell.center, axis=-1)
    core = u.interior_mask(1) & (dist <= tau + 1e-12)
    if not np.any(core):
        flat = int(np.argmin(np.where(u.interior_mask(1), dist, np.inf)))
        core = np.zeros(u.dims, dtype=bool)
        core[np.unravel_index(flat, u.dims)] = True
    eigs = np.linalg.eigvalsh(u.hessian_field()[core])
    return tau, float(np.max(np.abs(eigs))), float(np.min(eigs))


def _relative_spread(values) -> float:
    vals = [float(v) for v in values if np.isfinite(v)]
    if len(vals) < 2:
        return 0.0
    lo, hi = min(vals), max(vals)
    if lo <= 0:
        return float("inf")
    return (hi - lo) / lo


def _field_from_config(cfg: ExperimentConfig) -> GridFunction:
    if cfg.field_file is not None:
        return GridFunction.load(cfg.field_file)
    return field_from_problem(cfg.problem, num=cfg.grid_sizes[0])


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _run_pogorelov(cfg: ExperimentConfig):
    rows = []
    partial = False
    scales = cfg.f_scales
    ref_scale = scales[len(scales) // 2]
    h0 = cfg.h_sections[0]
    size0 = cfg.grid_sizes[0]
    family = []
    ref_top = None
    case = 0
    for size in cfg.grid_sizes:
        for s in scales:
            u, note = None, ""
            try:
                u, rep = _solve_case(cfg.problem, s, size)
                if not rep.converged:
                    u, note = None, rep.message
            except HessqError as exc:
                u, note = None, str(exc)
            for h in cfg.h_sections:
                cid = "case-%02d" % case
                case += 1
                if u is None:
                    rows.append({"case": cid, "h_section": float(h), "f_scale": float(s), "pass": False, "error": note})
                    partial = True
                    continue
                try:
                    tau, top, bottom = _section_stats(u, h)
                except HessqError as exc:
                    rows.append({"case": cid, "h_section": float(h), "f_scale": float(s), "pass": False, "error": str(exc)})
                    partial = True
                    continue
                ok = bool(np.isfinite(top) and bottom > 0.0)
                rows.append(
                    {
                        "case": cid,
                        "h_section": float(h),
                        "f_scale": float(s),
                        "tau": float(tau),
                        "max_hess": float(top),
                        "lambda_min": float(bottom),
                        "pass": ok,
                    }
                )
                if size == size0 and h == h0:
                    family.append(top)
                    if s == ref_scale:
                        ref_top = top

    # approximation family: perturbed data (f - 1/2m, g + 1/2m) at the
    # reference scale must keep the interior Hessian essentially unchanged
    approx_tops = []
    for m in cfg.m_values:
        cid = "approx-m%02d" % int(m)
        shift = 0.5 / float(m)
        u, note = None, ""
        try:
            u, rep = _solve_case(cfg.problem, ref_scale, size0, f_shift=shift, g_shift=shift)
            if not rep.converged:
                u, note = None, rep.message
        except HessqError as exc:
            u, note = None, str(exc)
        if u is None:
            rows.append({"case": cid, "h_section": float(h0), "f_scale": float(ref_scale), "pass": False, "error": note})
            partial = True
            continue
        try:
            tau, top, bottom = _section_stats(u, h0)
        except HessqError as exc:
            rows.append({"case": cid, "h_section": float(h0), "f_scale": float(ref_scale), "pass": False, "error": str(exc)})
            partial = True
            continue
        ok = bool(np.isfinite(top) and bottom > 0.0)
        rows.append(
            {
                "case": cid,
                "h_section": float(h0),
                "f_scale": float(ref_scale),
                "tau": float(tau),
                "max_hess": float(top),
                "lambda_min": float(bottom),
                "pass": ok,
            }
        )
        approx_tops.append(top)

    family_variation = _relative_spread(family)
    approx_pool = list(approx_tops)
    if ref_top is not None:
        approx_pool.append(ref_top)
    approx_variation = _relative_spread(approx_pool)
    fitted = {
        "family_variation": family_variation,
        "approx_variation": approx_variation,
        "variation_cap": _VARIATION_CAP,
    }
    passed = (
        bool(rows)
        and all(r["pass"] for r in rows)
        and not partial
        and family_variation <= _VARIATION_CAP
        and approx_variation <= _VARIATION_CAP
    )
    return rows, fitted, passed, partial


def _floor_profile(u: GridFunction, h_section: float):
    idx = _bottom_node(u)
    _, _, v = _tangent_surplus(u, idx)
    mask = u.interior_mask(1) & (v < h_section)
    if not np.any(mask):
        raise DomainError(f"no interior node lies below section height {h_section}")
    depth = h_section - v[mask]
    lam_min = np.linalg.eigvalsh(u.hessian_field()[mask])[:, 0]
    return depth, lam_min


def _run_hessian_floor(cfg: ExperimentConfig):
    rows = []
    partial = False
    h0 = float(cfg.h_sections[0])
    profiles = []
    for size in cfg.grid_sizes:
        for s in cfg.f_scales:
            try:
                u, rep = _solve_case(cfg.problem, s, size)
                if not rep.converged:
                    raise DomainError(rep.message)
                profiles.append((int(size), float(s), _floor_profile(u, h0), None))
            except HessqError as exc:
                profiles.append((int(size), float(s), None, str(exc)))

    sups = {}
    case = 0
    for beta in cfg.beta_values:
        per_beta = []
        for size, s, data, err in profiles:
            cid = "case-%02d" % case
            case += 1
            if data is None:
                rows.append({"case": cid, "beta": float(beta), "f_scale": s, "grid": size, "pass": False, "error": err})
                partial = True
                per_beta.append(float("inf"))
                continue
            depth, lam_min = data
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(lam_min > 0, depth ** float(beta) / lam_min, np.inf)
            sup = float(np.max(ratio))
            ok = bool(math.isfinite(sup))
            rows.append(
                {
                    "case": cid,
                    "beta": float(beta),
                    "f_scale": s,
                    "grid": size,
                    "sup_ratio": sup,
                    "pass": ok,
                }
            )
            per_beta.append(sup)
        sups[float(beta)] = per_beta

    beta_star = None
    for beta in cfg.beta_values:
        vals = sups[float(beta)]
        if not vals or any(not math.isfinite(v) for v in vals):
            continue
        if min(vals) > 0 and max(vals) / min(vals) <= cfg.spread_cap:
            beta_star = float(beta)
            break
    fitted = {
        "beta_star": beta_star,
        "bound": None if beta_star is None else max(sups[beta_star]),
        "spread_cap": cfg.spread_cap,
    }
    passed = beta_star is not None and bool(rows) and all(r["pass"] for r in rows) and not partial
    return rows, fitted, passed, partial


def _mean_value_case(cfg: ExperimentConfig, f_scale: float, size: int, h_section: float, case_index: int):
    u, rep = _solve_case(cfg.problem, f_scale, size)
    if not rep.converged:
        raise DomainError(rep.message)
    k = cfg.problem["k"]
    field = LogEigenField.from_solution(u)
    idx = _bottom_node(u)
    _, grad0, v = _tangent_surplus(u, idx)
    mask = u.interior_mask(1) & (v < h_section)
    valid = mask & field.valid_mask
    if int(np.count_nonzero(valid)) < u.n + 2:
        raise DomainError("section carries too few convex interior nodes")

    # half the distance from the base gradient to the gradient image hull
    grads = u.gradient_field()[mask]
    try:
        hull = ConvexHull(grads)
    except QhullError as exc:
        raise DomainError(f"gradient image of the section is degenerate: {exc}")
    dist = -(hull.equations[:, :-1] @ np.asarray(grad0) + hull.equations[:, -1])
    epsilon = 0.5 * float(np.min(dist))
    if not epsilon > 0:
        raise DomainError("base gradient is not interior to the gradient image")

    pair = discrete_legendre(u, cfg.dual_resolution)
    rng = np.random.default_rng([cfg.seed, 11, case_index])
    dirs = rng.normal(size=(_PULLBACK_DIRECTIONS, u.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = epsilon * np.array([0.25, 0.5, 0.75, 1.0])
    cloud = (dirs[:, None, :] * radii[None, :, None]).reshape(-1, u.n)
    ys = np.concatenate([np.asarray(grad0)[None, :], np.asarray(grad0) + cloud])
    xs = pair.inverse_map(ys)
    interp = RegularGridInterpolator(
        tuple(u.axes()), field.values, method="linear", bounds_error=False, fill_value=np.nan
    )
    pulled = interp(xs)
    finite = pulled[np.isfinite(pulled)]
    if finite.size == 0:
        raise DomainError("no pullback sample landed on convex interior nodes")
    max_dual = float(np.max(finite))

    lam = field.lam_field[valid]
    weights = np.array([sigma(row, k) for row in lam])
    integral = float(np.sum(field.values[valid] * weights) * u.h**u.n)
    return epsilon, float(field.offset), max_dual, integral


def _run_mean_value(cfg: ExperimentConfig):
    rows = []
    partial = False
    size0 = cfg.grid_sizes[0]
    h0 = float(cfg.h_sections[0])
    fitted_c = None
    eps_first = None
    for ci, s in enumerate(cfg.f_scales):
        cid = "case-%02d" % ci
        try:
            epsilon, offset, max_dual, integral = _mean_value_case(cfg, float(s), size0, h0, ci)
        except HessqError as exc:
            rows.append({"case": cid, "f_scale": float(s), "pass": False, "error": str(exc)})
            partial = True
            continue
        if fitted_c is None:
            # calibrate on the first solvable case, with safety headroom
            fitted_c = cfg.fit_safety * max_dual / (integral + 1.0)
            eps_first = epsilon
        bound = fitted_c * (integral + 1.0)
        ok = bool(max_dual <= bound * (1.0 + 1e-12) + 1e-12)
        rows.append(
            {
                "case": cid,
                "f_scale": float(s),
                "epsilon": float(epsilon),
                "offset": float(offset),
                "max_dual": float(max_dual),
                "integral": float(integral),
                "bound": float(bound),
                "pass": ok,
            }
        )
    fitted = {"C": fitted_c, "epsilon_first": eps_first, "fit_safety": cfg.fit_safety}
    passed = bool(rows) and all(r["pass"] for r in rows) and not partial
    return rows, fitted, passed, partial


def _fitted_cap(min_margin: float, safety: float) -> float:
    if not np.isfinite(min_margin):
        return 0.0
    return max(0.0, -float(min_margin)) * float(safety) + 1e-12


def _run_dual_jacobi(cfg: ExperimentConfig):
    rows = []
    partial = False
    size0 = cfg.grid_sizes[0]
    k = cfg.problem["k"]
    caps = None
    for ci, s in enumerate(cfg.f_scales):
        try:
            u, rep = _solve_case(cfg.problem, float(s), size0)
            if not rep.converged:
                raise DomainError(rep.message)
            field = LogEigenField.from_solution(u)
            f_grid = GridFunction.from_callable(
                spec_callable(cfg.problem["f"], scale=float(s)), tuple(u.lo), tuple(u.hi), u.dims
            )
            pair = discrete_legendre(u, cfg.dual_resolution)
            probes = u.coords_flat()[u.interior_mask(2).ravel()]
            if caps is None:
                raw_p = jacobi_margin(field, f_grid, k, _TRIAL_C, 0.0, probes)
                raw_d = dual_jacobi_margin(pair, field, k, 0.0)
                caps = (
                    _fitted_cap(raw_p.min_margin, cfg.fit_safety),
                    _fitted_cap(raw_d.min_margin, cfg.fit_safety),
                )
            primal = jacobi_margin(field, f_grid, k, _TRIAL_C, caps[0], probes)
            dual = dual_jacobi_margin(pair, field, k, caps[1])
        except HessqError as exc:
            rows.append({"case": "case-%02d" % ci, "f_scale": float(s), "pass": False, "error": str(exc)})
            partial = True
            continue
        for side, report in (("primal", primal), ("dual", dual)):
            ok = bool(report.count > 0 and report.violations == 0)
            rows.append(
                {
                    "case": "case-%02d-%s" % (ci, side),
                    "f_scale": float(s),
                    "side": side,
                    "count": int(report.count),
                    "min_margin": float(report.min_margin),
                    "violations": int(report.violations),
                    "pass": ok,
                }
            )
    fitted = {
        "trial_c": _TRIAL_C,
        "primal_cap": None if caps is None else caps[0],
        "dual_cap": None if caps is None else caps[1],
        "fit_safety": cfg.fit_safety,
    }
    passed = bool(rows) and all(r["pass"] for r in rows) and not partial
    return rows, fitted, passed, partial


def _run_inequality_scan(cfg: ExperimentConfig):
    rows = []
    partial = False
    n = cfg.problem["n"]
    k = cfg.problem["k"]
    empirics = {}
    for ci, mode in enumerate(cfg.scan_modes):
        cid = "case-%02d" % ci
        try:
            report = estimate_constants(
                SampleConfig(which=mode, n=n, k=k, count=cfg.sample_count, seed=cfg.seed + 7919 * ci)
            )
        except HessqError as exc:
            rows.append({"case": cid, "mode": mode, "n": n, "k": k, "pass": False, "error": str(exc)})
            partial = True
            continue
        empirical = None if report.empirical_constant is None else float(report.empirical_constant)
        if mode == "guan-sroka-c":
            ok = report.violations == 0 and empirical is not None and empirical > 0
        else:
            ok = empirical is not None
        rows.append(
            {
                "case": cid,
                "mode": mode,
                "n": n,
                "k": k,
                "count": int(report.count),
                "min_margin": float(report.min_margin),
                "violations": int(report.violations),
                "empirical": empirical,
                "pass": bool(ok),
            }
        )
        empirics[mode] = empirical
    fitted = {"empirical": empirics}
    passed = bool(rows) and all(r["pass"] for r in rows) and not partial
    return rows, fitted, passed, partial


def _run_barrier(cfg: ExperimentConfig):
    u = _field_from_config(cfg)
    spec = barrier_spec_from_dict(cfg.barrier, cfg.problem["n"], cfg.problem["k"])
    base = None if cfg.base_point is None else np.asarray(cfg.base_point, dtype=float)
    try:
        record = urbas_barrier(spec, u, base_point=base)
    except HessqError as exc:
        row = {"case": "case-00", "variant": spec.variant, "pass": False, "error": str(exc)}
        return [row], {}, False, True
    row = {
        "case": "case-00",
        "variant": spec.variant,
        "rhs_value": float(record.rhs_value),
        "sphere_min": float(record.sphere_min),
        "boundary_gap": float(record.boundary_gap),
        "interior_gap": float(record.interior_gap),
        "pass": bool(record.passed),
    }
    fitted = {"bound": float(record.sphere_min_bound), "tolerance": float(record.tolerance)}
    return [row], fitted, bool(record.passed), False


def _run_growth(cfg: ExperimentConfig):
    u = _field_from_config(cfg)
    base = np.zeros(u.n) if cfg.base_point is None else np.asarray(cfg.base_point, dtype=float)
    try:
        report = growth_probe(u, base, cfg.r_values, cfg.problem["n"], cfg.problem["k"])
    except HessqError as exc:
        return [{"case": "case-00", "pass": False, "error": str(exc)}], {}, False, True
    used = report.sphere_series if report.series_used == "sphere-min" else report.ring_series
    rows = []
    for i, r in enumerate(report.r_values):
        value = float(used[i])
        rows.append(
            {
                "case": "r-%02d" % i,
                "r": float(r),
                "value": value,
                "margin": float(report.margins[i]),
                "pass": bool(np.isfinite(value) and value > 0),
            }
        )
    fitted = {
        "fitted_exponent": float(report.fitted_exponent),
        "fitted_scale": float(report.fitted_scale),
        "target_exponent": float(report.target_exponent),
        "series_used": report.series_used,
        "dropped": [float(v) for v in report.dropped],
    }
    passed = (
        bool(rows)
        and all(r["pass"] for r in rows)
        and np.isfinite(report.fitted_exponent)
        and report.fitted_exponent >= report.target_exponent - 0.05
    )
    return rows, fitted, bool(passed), False


_DRIVERS = {
    "pogorelov": _run_pogorelov,
    "hessian-floor": _run_hessian_floor,
    "mean-value": _run_mean_value,
    "dual-jacobi": _run_dual_jacobi,
    "inequality-scan": _run_inequality_scan,
    "barrier": _run_barrier,
    "growth": _run_growth,
}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run one campaign and assemble its report.

    Identical configs reproduce the report bit for bit; sub-case failures
    are recorded as rows with an error field and flip the partial flag.
    """
    rows, fitted, passed, partial = _DRIVERS[config.experiment](config)
    return ExperimentReport(
        experiment=config.experiment,
        config=config.as_dict(),
        rows=_plain(rows),
        fitted=_plain(fitted),
        passed=bool(passed),
        partial=bool(partial),
        environment=_environment(config.seed),
    )


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

_EMIT_FORMATS = ("json", "csv", "svg")

_CSV_COLUMNS = {
    "pogorelov": ("case", "h_section", "f_scale", "tau", "max_hess", "lambda_min", "pass"),
    "hessian-floor": ("case", "beta", "f_scale", "grid", "sup_ratio", "pass"),
    "mean-value": ("case", "f_scale", "epsilon", "offset", "max_dual", "integral", "bound", "pass"),
    "dual-jacobi": ("case", "f_scale", "side", "count", "min_margin", "violations", "pass"),
    "inequality-scan": ("case", "mode", "n", "k", "count", "min_margin", "violations", "empirical", "pass"),
    "barrier": ("case", "variant", "rhs_value", "sphere_min", "boundary_gap", "interior_gap", "pass"),
    "growth": ("case", "r", "value", "margin", "pass"),
}

# per-experiment chart spec: x key (None for row index), y key, group key
_SVG_PLOTS = {
    "pogorelov": ("f_scale", "max_hess", "h_section"),
    "hessian-floor": ("beta", "sup_ratio", "grid"),
    "mean-value": ("f_scale", "max_dual", None),
    "dual-jacobi": (None, "min_margin", "side"),
    "inequality-scan": (None, "min_margin", "mode"),
    "barrier": (None, "rhs_value", None),
    "growth": ("r", "value", None),
}

_SVG_PALETTE = ("#1b6ca8", "#c2452d", "#3a7d44", "#8d5a97", "#b8860b", "#5d5d5d")


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ""
    text = str(value)
    if any(ch in text for ch in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def _csv_text(report: ExperimentReport) -> str:
    columns = list(_CSV_COLUMNS.get(report.experiment, ()))
    for row in report.rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    if not columns:
        return ""
    lines = [",".join(columns)]
    for row in report.rows:
        lines.append(",".join(_csv_cell(row.get(col)) for col in columns))
    return "\n".join(lines) + "\n"


def _svg_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _svg_series(report: ExperimentReport) -> dict:
    xkey, ykey, gkey = _SVG_PLOTS.get(report.experiment, (None, None, None))
    series = {}
    for i, row in enumerate(report.rows):
        y = row.get(ykey) if ykey else None
        if isinstance(y, bool) or not isinstance(y, (int, float)):
            continue
        y = float(y)
        if not math.isfinite(y):
            continue
        x = row.get(xkey) if xkey else None
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            x = float(i)
        else:
            x = float(x)
        if gkey and gkey in row:
            label = f"{gkey}={row[gkey]}"
        else:
            label = ykey or "value"
        xs, ys = series.setdefault(label, ([], []))
        xs.append(x)
        ys.append(y)
    return series


def _svg_text(report: ExperimentReport) -> str:
    """Hand-rolled line chart; all text is derived from the report only."""
    series = _svg_series(report)
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="640" height="420" '
        'viewBox="0 0 640 420" font-family="monospace" font-size="12">',
        '<rect x="0" y="0" width="640" height="420" fill="#ffffff"/>',
        f'<text x="20" y="24" font-size="14" fill="#111111">{_svg_escape(report.experiment)} report</text>',
    ]
    if not series:
        parts.append('<text x="20" y="210" fill="#666666">no plottable rows</text>')
        parts.append("</svg>")
        return "".join(parts)

    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi - x_lo <= 0:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi - y_lo <= 0:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad_y = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    left, top, width, height = 70.0, 48.0, 400.0, 322.0

    def sx(x):
        return left + (x - x_lo) * width / (x_hi - x_lo)

    def sy(y):
        return top + height - (y - y_lo) * height / (y_hi - y_lo)

    parts.append(
        f'<rect x="{left:.2f}" y="{top:.2f}" width="{width:.2f}" height="{height:.2f}" '
        'fill="none" stroke="#333333"/>'
    )
    for t in np.linspace(x_lo, x_hi, 5):
        px = sx(t)
        parts.append(
            f'<line x1="{px:.2f}" y1="{top + height:.2f}" x2="{px:.2f}" '
            f'y2="{top + height + 5:.2f}" stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{top + height + 18:.2f}" text-anchor="middle" '
            f'fill="#333333">{format(t, ".4g")}</text>'
        )
    for t in np.linspace(y_lo, y_hi, 5):
        py = sy(t)
        parts.append(
            f'<line x1="{left - 5:.2f}" y1="{py:.2f}" x2="{left:.2f}" y2="{py:.2f}" '
            'stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{left - 8:.2f}" y="{py + 4:.2f}" text-anchor="end" '
            f'fill="#333333">{format(t, ".4g")}</text>'
        )
    xkey, ykey, _ = _SVG_PLOTS.get(report.experiment, (None, None, None))
    parts.append(
        f'<text x="{left + width / 2:.2f}" y="408" text-anchor="middle" '
        f'fill="#333333">{_svg_escape(xkey or "case")}</text>'
    )
    parts.append(
        f'<text x="{left:.2f}" y="40" fill="#333333">{_svg_escape(ykey or "value")}</text>'
    )

    for si, (label, (xs, ys)) in enumerate(series.items()):
        color = _SVG_PALETTE[si % len(_SVG_PALETTE)]
        order = np.argsort(np.asarray(xs), kind="stable")
        points = " ".join(f"{sx(xs[j]):.2f},{sy(ys[j]):.2f}" for j in order)
        if len(xs) >= 2:
            parts.append(
                f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
        for j in order:
            parts.append(
                f'<circle cx="{sx(xs[j]):.2f}" cy="{sy(ys[j]):.2f}" r="3" fill="{color}"/>'
            )
        ly = 52 + 18 * si
        parts.append(f'<rect x="482" y="{ly}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="498" y="{ly + 9}" fill="#333333">{_svg_escape(label)}</text>')
    parts.append("</svg>")
    return "".join(parts)


def emit_report(report: ExperimentReport, formats=_EMIT_FORMATS) -> dict:
    """Write the report under its config's out_dir; returns format -> path.

    Filenames derive from the experiment name only, so re-emitting the
    same report is byte-identical and reruns overwrite in place (writes
    go through a temp file plus atomic replace).
    """
    chosen = tuple(formats)
    if not chosen:
        raise ArgumentError("need at least one output format")
    for fmt in chosen:
        if fmt not in _EMIT_FORMATS:
            raise ArgumentError(
                f"unknown report format {fmt!r}; choose from {', '.join(_EMIT_FORMATS)}"
            )
    out_dir = str(report.config.get("out_dir", "."))
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for fmt in dict.fromkeys(chosen):
        path = os.path.join(out_dir, f"{report.experiment}-report.{fmt}")
        if fmt == "json":
            text = json.dumps(report.as_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"
        elif fmt == "csv":
            text = _csv_text(report)
        else:
            text = _svg_text(report)
        _atomic_write_bytes(path, text.encode("utf-8"))
        paths[fmt] = path
    return paths
