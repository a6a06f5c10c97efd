"""Level-set sections, inscribed ellipsoids, and explicit barrier checks.

Everything in this module is phrased against the tangent-subtracted field
v(x) = u(x) - u(p) - Du(p).(x - p) at a base node p, so adding an affine
function to u never changes a result.  A "section" at height h is the
sublevel set {v < h}; its boundary cloud feeds the inscribed-ellipsoid
and radius checks.  The slab barriers are closed-form quadratics whose
defining inequalities are evaluated directly, with every precondition
named in the error it can raise.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    ArgumentError,
    ContainmentError,
    DegeneracyError,
    DomainError,
    PreconditionError,
    RankError,
)
from .grid import GridFunction
from .inequalities import _sigma_batch
from .symcalc import quotient, sigma

__all__ = [
    "Section",
    "Ellipsoid",
    "QuadraticBarrier",
    "BarrierSpec",
    "BarrierRecord",
    "RadiusCheck",
    "GrowthReport",
    "extract_section",
    "john_ellipsoid",
    "radius_estimate_check",
    "ellipsoid_barrier",
    "barrier_value",
    "barrier_hessian",
    "urbas_barrier",
    "growth_probe",
    "delta_integral",
]


def _comb0(a: int, b: int) -> int:
    """Binomial coefficient extended by zero outside 0 <= b <= a."""
    if b < 0 or a < 0 or b > a:
        return 0
    return math.comb(a, b)


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {key: _jsonable(val) for key, val in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(val) for val in value]
    return value


def _unit_directions(rng, count: int, dim: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    vecs = rng.normal(size=(count, dim))
    norms = np.maximum(np.linalg.norm(vecs, axis=1, keepdims=True), 1e-300)
    return vecs / norms


def _snap_interior(u: GridFunction, base_point) -> tuple[tuple, np.ndarray]:
    """Nearest node index to base_point, required to be interior."""
    base = np.atleast_1d(np.asarray(base_point, dtype=float))
    if base.size != u.n:
        raise ArgumentError(f"base point must have {u.n} coordinates")
    idx = np.rint((base - u.lo) / u.h).astype(int)
    dims = np.asarray(u.dims)
    if np.any(idx < 1) or np.any(idx >= dims - 1):
        raise ArgumentError("base point must snap to an interior grid node")
    idx = tuple(int(i) for i in idx)
    if not u.interior_mask(1)[idx]:
        raise ArgumentError("base node has no full difference stencil in-domain")
    return idx, u.node_coord(idx)


def _tangent_field(u: GridFunction, idx: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Nodal values of u minus its tangent plane at the node idx."""
    grad = u.gradient(idx)
    base = u.node_coord(idx)
    v = u.values - float(u.values[idx])
    for a in range(u.n):
        shape = [1] * u.n
        shape[a] = u.dims[a]
        v = v - grad[a] * (u.axes()[a] - base[a]).reshape(shape)
    return v, grad


# ---------------------------------------------------------------------------
# sections and ellipsoids


@dataclass(frozen=True, eq=False)
class Section:
    """Boundary cloud of one tangent-plane section.

    points holds the edge-crossing locations of the level set, one per
    grid edge crossing it.  flat is set when the cloud fails to span all
    directions; the convex-position test is skipped then, and consumers
    that need volume refuse flat sections.
    """

    h: float
    base_point: np.ndarray
    subgradient: np.ndarray
    points: np.ndarray
    grid: GridFunction
    flat: bool = field(init=False, default=False)

    def __post_init__(self):
        base = np.atleast_1d(np.asarray(self.base_point, dtype=float))
        object.__setattr__(self, "base_point", base)
        object.__setattr__(
            self, "subgradient", np.atleast_1d(np.asarray(self.subgradient, float))
        )
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != base.size:
            raise ArgumentError("points must be (m, n) with n matching the base")
        if pts.shape[0] == 0:
            raise ArgumentError("section cloud is empty")
        if not self.h > 0:
            raise ArgumentError("section height must be positive")
        object.__setattr__(self, "points", pts)
        n = pts.shape[1]
        centered = pts - pts.mean(axis=0)
        svals = np.linalg.svd(centered, compute_uv=False)
        rank = 0
        if svals.size and svals[0] > 0:
            rank = int(np.sum(svals > svals[0] * 1e-10))
        hull = None
        if rank < n or pts.shape[0] < n + 1:
            object.__setattr__(self, "flat", True)
        else:
            try:
                hull = ConvexHull(pts)
            except QhullError as err:
                raise DomainError(f"section cloud is degenerate: {err}") from None
            normals = hull.equations[:, :-1]
            offsets = hull.equations[:, -1]
            depth = -(pts @ normals.T + offsets).max(axis=1)
            worst = float(np.max(depth))
            if worst > 2.0 * self.grid.h:
                raise DomainError(
                    "cloud point sits {:.3g} inside its own hull; a level-set "
                    "boundary must be in convex position".format(worst)
                )
        object.__setattr__(self, "_hull", hull)

    def as_dict(self) -> dict:
        return {
            "h": float(self.h),
            "base_point": _jsonable(self.base_point),
            "subgradient": _jsonable(self.subgradient),
            "num_points": int(self.points.shape[0]),
            "flat": bool(self.flat),
            "points": _jsonable(self.points),
        }


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Solid ellipsoid: center plus descending semi-axes in a frame.

    Points are center + orientation @ (z * semi_axes) over |z| <= 1, with
    orientation columns orthonormal.  john_gap records how far (relative)
    a generating cloud poked outside the n-dilate, zero when untested.
    """

    center: np.ndarray
    semi_axes: np.ndarray
    orientation: np.ndarray
    john_gap: float = 0.0

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        axes = np.atleast_1d(np.asarray(self.semi_axes, dtype=float))
        frame = np.asarray(self.orientation, dtype=float)
        n = center.size
        if axes.shape != (n,) or frame.shape != (n, n):
            raise ArgumentError("center, semi_axes, orientation sizes disagree")
        if np.any(axes <= 0):
            raise ArgumentError("semi-axes must be positive")
        if np.any(np.diff(axes) > 0):
            raise ArgumentError("semi-axes must be sorted descending")
        gram = frame.T @ frame - np.eye(n)
        if float(np.max(np.abs(gram))) > 1e-8:
            raise ArgumentError("orientation must have orthonormal columns")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "semi_axes", axes)
        object.__setattr__(self, "orientation", frame)

    def mahalanobis(self, points) -> np.ndarray:
        """Ellipsoid norm of points: 1 on the shell, below 1 inside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        local = (pts - self.center) @ self.orientation / self.semi_axes
        return np.linalg.norm(local, axis=1)

    def as_dict(self) -> dict:
        return {
            "center": _jsonable(self.center),
            "semi_axes": _jsonable(self.semi_axes),
            "orientation": _jsonable(self.orientation),
            "john_gap": float(self.john_gap),
        }


def extract_section(u: GridFunction, base_point, h: float) -> Section:
    """Boundary cloud of {u - tangent < h} around the node nearest base_point.

    Raises ContainmentError when the sublevel set reaches the domain
    boundary and ArgumentError when the base is not interior or no grid
    edge crosses the level.
    """
    if not h > 0:
        raise ArgumentError("section height h must be positive")
    idx, base = _snap_interior(u, base_point)
    v, grad = _tangent_field(u, idx)
    boundary = u.in_domain_mask() & ~u.interior_mask(1)
    touched = v[boundary]
    if np.any(touched[np.isfinite(touched)] < h):
        raise ContainmentError(
            f"section at height {h} reaches the domain boundary; "
            "shrink h or enlarge the domain"
        )
    mesh = np.meshgrid(*u.axes(), indexing="ij")
    clouds = []
    for a in range(u.n):
        lo_sl = [slice(None)] * u.n
        hi_sl = [slice(None)] * u.n
        lo_sl[a] = slice(None, -1)
        hi_sl[a] = slice(1, None)
        va = v[tuple(lo_sl)]
        vb = v[tuple(hi_sl)]
        with np.errstate(invalid="ignore"):
            cross = (va - h) * (vb - h) < 0
        if not np.any(cross):
            continue
        t = (h - va[cross]) / (vb[cross] - va[cross])
        coords = np.stack([m[tuple(lo_sl)][cross] for m in mesh], axis=1)
        coords[:, a] += t * u.h
        clouds.append(coords)
    if not clouds:
        raise ArgumentError(f"no grid edge crosses the level at height {h}")
    return Section(
        h=float(h),
        base_point=base,
        subgradient=grad,
        points=np.vstack(clouds),
        grid=u,
    )


def john_ellipsoid(section: Section, max_points: int = 800) -> Ellipsoid:
    """Maximum-volume inscribed ellipsoid of the section hull.

    Solves the log-det program over the hull facets, then shrinks the
    result by the worst constraint ratio so the returned ellipsoid is
    inscribed to within 1e-8 regardless of solver tolerance.  Raises
    RankError for flat or undersized clouds and solver failures, and
    DomainError when the cloud escapes the n-dilate of the result by a
    relative gap above 0.05.
    """
    if section.flat:
        raise RankError("section cloud is flat; no full-dimensional ellipsoid")
    pts = section.points
    n = pts.shape[1]
    if pts.shape[0] < n + 1:
        raise RankError("need at least n + 1 cloud points")
    hull = section._hull
    if hull is None:
        hull = ConvexHull(pts)
    normals = hull.equations[:, :-1]
    offsets = -hull.equations[:, -1]
    if normals.shape[0] > max_points:
        keep = np.unique(np.linspace(0, normals.shape[0] - 1, max_points).astype(int))
        sub_normals, sub_offsets = normals[keep], offsets[keep]
    else:
        sub_normals, sub_offsets = normals, offsets

    import cvxpy as cp

    shape_var = cp.Variable((n, n), PSD=True)
    center_var = cp.Variable(n)
    constraints = [
        cp.norm(sub_normals @ shape_var, axis=1) + sub_normals @ center_var
        <= sub_offsets
    ]
    problem = cp.Problem(cp.Maximize(cp.log_det(shape_var)), constraints)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError as err:
        raise RankError(f"inscribed ellipsoid solve failed: {err}") from None
    if shape_var.value is None or problem.status not in (
        "optimal",
        "optimal_inaccurate",
    ):
        raise RankError(f"inscribed ellipsoid solve failed: {problem.status}")
    bmat = 0.5 * (shape_var.value + shape_var.value.T)
    center = np.asarray(center_var.value, dtype=float)

    # shrink to exact feasibility against the full facet list
    margin = offsets - normals @ center
    if np.any(margin <= 0):
        raise RankError("ellipsoid center escapes the hull; solve unusable")
    reach = np.linalg.norm(normals @ bmat, axis=1)
    ratios = margin / np.maximum(reach, 1e-300)
    shrink = min(1.0, float(np.min(ratios)))
    if shrink <= 1e-9:
        raise RankError("inscribed ellipsoid collapsed during feasibility shrink")
    bmat = bmat * shrink
    eigvals, eigvecs = np.linalg.eigh(bmat)
    if eigvals[0] <= 1e-12 * max(eigvals[-1], 1e-300):
        raise RankError("inscribed ellipsoid is numerically rank deficient")
    semi_axes = eigvals[::-1].copy()
    frame = eigvecs[:, ::-1].copy()

    local = (pts - center) @ frame / semi_axes
    gap = max(0.0, float(np.max(np.linalg.norm(local, axis=1))) / n - 1.0)
    if gap > 0.05:
        raise DomainError(
            f"cloud escapes the {n}-dilate of the inscribed ellipsoid "
            f"(relative gap {gap:.3g}); section is too irregular"
        )
    return Ellipsoid(center=center, semi_axes=semi_axes, orientation=frame, john_gap=gap)


# ---------------------------------------------------------------------------
# radius estimate


@dataclass(frozen=True, eq=False)
class RadiusCheck:
    """One evaluation of the section-size inequality.

    lhs is (2 h_effective)^((n-k)/2), rhs the product of the n-k largest
    semi-axes after any coordinate rescale, margin their difference.
    eps_geom bounds the geometric error of the measured ellipsoid and is
    zero when the caller supplied the ellipsoid analytically.
    """

    n: int
    k: int
    h: float
    h_effective: float
    rescale: str
    lhs: float
    rhs: float
    margin: float
    eps_geom: float
    worst_value: float
    worst_node: tuple
    axes_used: np.ndarray

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "h": self.h,
            "h_effective": self.h_effective,
            "rescale": self.rescale,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "eps_geom": self.eps_geom,
            "worst_value": self.worst_value,
            "worst_node": _jsonable(list(self.worst_node)),
            "axes_used": _jsonable(self.axes_used),
        }


def _interior_spectra(u: GridFunction):
    """Ascending Hessian eigenvalues at interior nodes plus their indices."""
    mask = u.interior_mask(1)
    mats = u.hessian_field()[mask]
    lam = np.linalg.eigvalsh(mats)
    nodes = np.argwhere(mask)
    return lam, nodes


def radius_estimate_check(
    u: GridFunction,
    base_point,
    h: float,
    k: int,
    ellipsoid: Ellipsoid | None = None,
    rescale: str = "none",
    subsol_tol: float | None = None,
) -> RadiusCheck:
    """Compare (2h)^((n-k)/2) against the product of leading semi-axes.

    The inequality presumes the field dominates unit right-hand side, so
    the nodal quotient is screened first; rescale picks what happens when
    the screen fails:

    * "none": raise PreconditionError naming the worst node.
    * "value": multiply u by a constant, lifting the section height while
      keeping the section set.
    * "coordinates": shrink coordinates by a constant, keeping the height
      while shrinking the measured ellipsoid.

    Passing an ellipsoid skips the section extraction entirely and sets
    eps_geom to zero, which is the right mode for analytic cross-checks.
    """
    n = u.n
    if not 0 <= k < n:
        raise ArgumentError(f"need 0 <= k < n = {n}, got k = {k}")
    if rescale not in ("none", "value", "coordinates"):
        raise ArgumentError(f"unknown rescale mode {rescale!r}")
    if not h > 0:
        raise ArgumentError("section height h must be positive")

    lam, nodes = _interior_spectra(u)
    sig_n = _sigma_batch(lam, n)
    sig_k = _sigma_batch(lam, k)
    with np.errstate(divide="ignore", invalid="ignore"):
        quot = np.where(sig_k > 0, sig_n / np.where(sig_k == 0, 1.0, sig_k), -np.inf)
    pos = int(np.argmin(quot))
    fmin = float(quot[pos])
    worst_node = tuple(int(i) for i in nodes[pos])

    tol = 10.0 * u.h**2 if subsol_tol is None else float(subsol_tol)
    value_scale = 1.0
    coord_scale = 1.0
    if rescale == "none":
        if fmin < 1.0 - tol:
            raise PreconditionError(
                f"quotient floor fails: min sigma_n/sigma_k = {fmin:.6g} "
                f"< 1 - {tol:.2g} at node {worst_node}; pass rescale= to "
                "normalize the level first"
            )
    else:
        if not np.isfinite(fmin) or fmin <= 0:
            raise DegeneracyError(
                "nodal quotient is not positive; cannot rescale to unit level"
            )
        if rescale == "value":
            value_scale = fmin ** (-1.0 / (n - k))
        else:
            coord_scale = fmin ** (-1.0 / (2.0 * (n - k)))

    rel_axis = 0.0
    if ellipsoid is None:
        section = extract_section(u, base_point, h)
        ell = john_ellipsoid(section)
        curv = float(np.max(np.abs(lam)))
        rel_axis = u.h**2 * curv / 8.0 / float(ell.semi_axes[-1]) + 1e-7
    else:
        ell = ellipsoid
        if ell.center.size != n:
            raise ArgumentError("ellipsoid dimension does not match the field")

    axes_used = ell.semi_axes / coord_scale
    h_eff = h * value_scale
    lhs = (2.0 * h_eff) ** ((n - k) / 2.0)
    rhs = float(np.prod(axes_used[: n - k]))
    eps_geom = 0.0
    if ellipsoid is None:
        eps_geom = rhs * ((1.0 + rel_axis) ** (n - k) - 1.0)
    return RadiusCheck(
        n=n,
        k=k,
        h=float(h),
        h_effective=float(h_eff),
        rescale=rescale,
        lhs=float(lhs),
        rhs=rhs,
        margin=float(lhs - rhs),
        eps_geom=float(eps_geom),
        worst_value=fmin,
        worst_node=worst_node,
        axes_used=axes_used,
    )


# ---------------------------------------------------------------------------
# ellipsoid barrier


@dataclass(frozen=True, eq=False)
class QuadraticBarrier:
    """w(x) = (x - center)' matrix (x - center) / 2 + offset."""

    center: np.ndarray
    matrix: np.ndarray
    scale: float
    offset: float

    def values(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        diff = pts - self.center
        return 0.5 * np.einsum("mi,ij,mj->m", diff, self.matrix, diff) + self.offset

    def as_dict(self) -> dict:
        return {
            "center": _jsonable(self.center),
            "matrix": _jsonable(self.matrix),
            "scale": float(self.scale),
            "offset": float(self.offset),
        }


def ellipsoid_barrier(
    ellipsoid: Ellipsoid, n: int, k: int
) -> tuple[QuadraticBarrier, dict]:
    """Quadratic supersolution-at-one vanishing on the ellipsoid shell.

    The scale sigma_{n-k}(semi_axes^2)^(1/(n-k)) makes the quotient of the
    constant Hessian exactly one.  The record reports that residual plus
    sampled shell and interior values; everything is closed form, so the
    checks are pointwise-exact up to roundoff.
    """
    if not 0 <= k < n:
        raise ArgumentError(f"need 0 <= k < n = {n}, got k = {k}")
    if ellipsoid.center.size != n:
        raise ArgumentError("ellipsoid dimension does not match n")
    axes_sq = ellipsoid.semi_axes**2
    scale = sigma(axes_sq, n - k) ** (1.0 / (n - k))
    core = ellipsoid.orientation @ np.diag(scale / axes_sq) @ ellipsoid.orientation.T
    quad = QuadraticBarrier(
        center=ellipsoid.center.copy(),
        matrix=0.5 * (core + core.T),
        scale=float(scale),
        offset=-0.5 * float(scale),
    )
    eigs = scale / axes_sq
    residual = abs(quotient(eigs, k) - 1.0)
    rng = np.random.default_rng(0)
    dirs = _unit_directions(rng, 128, n)
    shell = ellipsoid.center + (dirs * ellipsoid.semi_axes) @ ellipsoid.orientation.T
    inner = (
        ellipsoid.center
        + 0.5 * (dirs * ellipsoid.semi_axes) @ ellipsoid.orientation.T
    )
    boundary_max_abs = float(np.max(np.abs(quad.values(shell))))
    interior_max = float(np.max(quad.values(inner)))
    record = {
        "n": n,
        "k": k,
        "scale": float(scale),
        "residual": float(residual),
        "boundary_max_abs": boundary_max_abs,
        "interior_max": interior_max,
        "center_value": float(quad.values(ellipsoid.center[None, :])[0]),
        "pass": bool(
            residual <= 1e-12
            and boundary_max_abs <= 1e-9 * scale
            and interior_max < 0.0
        ),
    }
    return quad, record


# ---------------------------------------------------------------------------
# slab barriers


@dataclass(frozen=True, eq=False)
class BarrierSpec:
    """Parameters of one explicit slab barrier.

    Variant "case1" anchors the slab at the tangent plane, {|x'| < height,
    0 < x_n < height} in base-relative coordinates; "case2" floats it
    between two interior cuts and carries affine tilts matching sloped
    boundary data.  The "ellipsoid" variant only wraps an Ellipsoid for
    dispatch and is served by ellipsoid_barrier.

    Slab fields: lateral_coeff is the quadratic growth A in the
    slab-parallel directions; axial_coeff the small concave coefficient B
    along the slab normal (the constructors pick the canonical value, and
    anything above it fails the slab-coefficient precondition);
    young_coeff scales the A^(-decay) offset; decay is pinned to
    (1 + holder)/(1 - holder); height is the slab thickness and probe
    sphere radius; rhs_cap is the ceiling the barrier quotient must stay
    under.
    """

    variant: str
    n: int
    k: int
    lateral_coeff: float
    axial_coeff: float
    young_coeff: float
    decay: float
    height: float
    rhs_cap: float
    holder: float
    tilt_bottom: np.ndarray | None = None
    tilt_top: np.ndarray | None = None
    cut_bottom: float | None = None
    cut_top: float | None = None
    ellipsoid: Ellipsoid | None = None

    def __post_init__(self):
        if self.variant not in ("case1", "case2", "ellipsoid"):
            raise ArgumentError(f"unknown barrier variant {self.variant!r}")
        if self.n < 2 or not 0 <= self.k < self.n:
            raise ArgumentError("need n >= 2 and 0 <= k < n")
        if self.variant == "ellipsoid":
            if self.ellipsoid is None:
                raise ArgumentError("ellipsoid variant needs the ellipsoid field")
            return
        if self.ellipsoid is not None:
            raise ArgumentError("only the ellipsoid variant carries an ellipsoid")
        for name in ("lateral_coeff", "young_coeff", "height", "rhs_cap"):
            if not float(getattr(self, name)) > 0:
                raise ArgumentError(f"{name} must be positive")
        if not 0.0 < self.axial_coeff <= 1.0:
            raise ArgumentError("axial_coeff must lie in (0, 1]")
        if not 0.0 < self.holder < 1.0:
            raise ArgumentError("holder must lie in (0, 1)")
        target = (1.0 + self.holder) / (1.0 - self.holder)
        if abs(self.decay - target) > 1e-9 * max(1.0, target):
            raise ArgumentError("decay must equal (1 + holder)/(1 - holder)")
        if self.variant == "case1":
            if any(
                item is not None
                for item in (
                    self.tilt_bottom,
                    self.tilt_top,
                    self.cut_bottom,
                    self.cut_top,
                )
            ):
                raise ArgumentError("case1 takes no tilts or cuts")
            return
        if self.tilt_bottom is None or self.tilt_top is None:
            raise ArgumentError("case2 needs tilt_bottom and tilt_top")
        bottom = np.atleast_1d(np.asarray(self.tilt_bottom, dtype=float))
        top = np.atleast_1d(np.asarray(self.tilt_top, dtype=float))
        if bottom.shape != (self.n - 1,) or top.shape != (self.n - 1,):
            raise ArgumentError("tilts must be vectors of length n - 1")
        object.__setattr__(self, "tilt_bottom", bottom)
        object.__setattr__(self, "tilt_top", top)
        if self.cut_bottom is None or self.cut_top is None:
            raise ArgumentError("case2 needs both slab cuts")
        if not 0.0 < self.cut_bottom < self.cut_top < self.height:
            raise ArgumentError("slab cuts must satisfy 0 < bottom < top < height")

    @classmethod
    def case1(cls, n, k, lateral_coeff, young_coeff, holder, height, rhs_cap):
        axial = (
            float(rhs_cap)
            * 2.0 ** -(n - k)
            * float(lateral_coeff) ** -(n - k - 1)
        )
        return cls(
            variant="case1",
            n=n,
            k=k,
            lateral_coeff=float(lateral_coeff),
            axial_coeff=min(axial, 1.0),
            young_coeff=float(young_coeff),
            decay=(1.0 + holder) / (1.0 - holder),
            height=float(height),
            rhs_cap=float(rhs_cap),
            holder=float(holder),
        )

    @classmethod
    def case2(
        cls,
        n,
        k,
        lateral_coeff,
        young_coeff,
        holder,
        height,
        rhs_cap,
        tilt_bottom,
        tilt_top,
        cut_bottom,
        cut_top,
    ):
        axial = (
            float(rhs_cap)
            * 2.0 ** -(n - k + 1)
            * float(lateral_coeff) ** -(n - k - 1)
        )
        return cls(
            variant="case2",
            n=n,
            k=k,
            lateral_coeff=float(lateral_coeff),
            axial_coeff=min(axial, 1.0),
            young_coeff=float(young_coeff),
            decay=(1.0 + holder) / (1.0 - holder),
            height=float(height),
            rhs_cap=float(rhs_cap),
            holder=float(holder),
            tilt_bottom=tilt_bottom,
            tilt_top=tilt_top,
            cut_bottom=cut_bottom,
            cut_top=cut_top,
        )

    @classmethod
    def from_ellipsoid(cls, ellipsoid: Ellipsoid, n: int, k: int):
        return cls(
            variant="ellipsoid",
            n=n,
            k=k,
            lateral_coeff=1.0,
            axial_coeff=1.0,
            young_coeff=1.0,
            decay=3.0,
            height=1.0,
            rhs_cap=1.0,
            holder=0.5,
            ellipsoid=ellipsoid,
        )

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "n": self.n,
            "k": self.k,
            "lateral_coeff": float(self.lateral_coeff),
            "axial_coeff": float(self.axial_coeff),
            "young_coeff": float(self.young_coeff),
            "decay": float(self.decay),
            "height": float(self.height),
            "rhs_cap": float(self.rhs_cap),
            "holder": float(self.holder),
            "tilt_bottom": _jsonable(self.tilt_bottom),
            "tilt_top": _jsonable(self.tilt_top),
            "cut_bottom": self.cut_bottom,
            "cut_top": self.cut_top,
            "ellipsoid": None if self.ellipsoid is None else self.ellipsoid.as_dict(),
        }


def barrier_hessian(spec: BarrierSpec) -> np.ndarray:
    """Constant Hessian of the slab barrier; tilts enter the last row."""
    if spec.variant == "ellipsoid":
        raise ArgumentError("ellipsoid specs have no slab Hessian; use ellipsoid_barrier")
    n = spec.n
    mat = np.diag(
        [2.0 * spec.lateral_coeff] * (n - 1) + [2.0 * spec.axial_coeff]
    )
    if spec.variant == "case2":
        tilt = (spec.tilt_top - spec.tilt_bottom) / (spec.cut_top - spec.cut_bottom)
        mat[:-1, -1] = tilt
        mat[-1, :-1] = tilt
    return mat


def barrier_value(spec: BarrierSpec, points, sphere_min: float) -> np.ndarray:
    """Barrier values at points given in slab coordinates.

    The slab lives at {|x'| < height, bottom < x_n < top} with the base
    point at the origin; callers translate into this frame first.
    sphere_min is the probe-sphere minimum the barrier is pinned to.
    """
    if spec.variant == "ellipsoid":
        raise ArgumentError("ellipsoid specs have no slab values; use ellipsoid_barrier")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != spec.n:
        raise ArgumentError(f"points must have {spec.n} columns")
    lat = np.sum(pts[:, :-1] ** 2, axis=1)
    z = pts[:, -1]
    offset = spec.young_coeff * spec.lateral_coeff ** -spec.decay
    if spec.variant == "case1":
        rho = spec.height
        return (
            spec.lateral_coeff * lat
            + offset
            + sphere_min * z / rho
            + spec.axial_coeff * z * (z - rho)
        )
    r_bot, r_top = spec.cut_bottom, spec.cut_top
    ramp = (z - r_bot) / (r_top - r_bot)
    swing = pts[:, :-1] @ (spec.tilt_top - spec.tilt_bottom)
    return (
        spec.lateral_coeff * lat
        + offset
        + spec.axial_coeff * (z - r_bot) * (z - r_top)
        + (sphere_min + swing) * ramp
        + sphere_min
        + pts[:, :-1] @ spec.tilt_bottom
    )


@dataclass(frozen=True, eq=False)
class BarrierRecord:
    """Outcome of one slab-barrier comparison run.

    preconditions maps each named condition to its measured sides;
    boundary_gap and interior_gap are min(w - u) over the sampled slab
    faces and the slab's interior nodes; sphere_min is the probe-sphere
    minimum with the lower bound the construction implies for it.
    """

    spec: BarrierSpec
    base_point: np.ndarray
    passed: bool
    preconditions: dict
    rhs_value: float
    rhs_ok: bool
    sphere_min: float
    sphere_min_bound: float
    sphere_min_ok: bool
    boundary_gap: float
    interior_gap: float
    tolerance: float

    def as_dict(self) -> dict:
        return {
            "spec": self.spec.as_dict(),
            "base_point": _jsonable(self.base_point),
            "passed": bool(self.passed),
            "preconditions": _jsonable(self.preconditions),
            "rhs_value": float(self.rhs_value),
            "rhs_ok": bool(self.rhs_ok),
            "sphere_min": float(self.sphere_min),
            "sphere_min_bound": float(self.sphere_min_bound),
            "sphere_min_ok": bool(self.sphere_min_ok),
            "boundary_gap": float(self.boundary_gap),
            "interior_gap": float(self.interior_gap),
            "tolerance": float(self.tolerance),
        }


def urbas_barrier(
    spec: BarrierSpec, u: GridFunction, base_point=None
) -> BarrierRecord:
    """Run the slab-barrier comparison for u around a base node.

    Evaluates the named preconditions against measured field quantities
    (raising PreconditionError listing every failure), checks the barrier
    quotient against rhs_cap, and samples all slab faces plus interior
    nodes for the comparison w >= u.  Box domains only.
    """
    if spec.variant == "ellipsoid":
        raise ArgumentError("use ellipsoid_barrier for ellipsoid specs")
    if spec.n != u.n:
        raise ArgumentError("spec dimension does not match the field")
    if u.ball is not None:
        raise ArgumentError("slab barriers need a box domain")
    if base_point is None:
        base_point = np.zeros(u.n)
    idx, base = _snap_interior(u, base_point)
    n = u.n
    rho = spec.height
    if np.any(base - rho < u.lo - 1e-12) or np.any(base + rho > u.hi + 1e-12):
        raise ArgumentError("slab and probe sphere must fit inside the domain")
    if spec.variant == "case1":
        bottom, top = 0.0, rho
    else:
        bottom, top = spec.cut_bottom, spec.cut_top

    # probe sphere minimum pins the barrier's linear term
    sphere_dirs = _unit_directions(np.random.default_rng(3), 512, n)
    sphere_min = float(np.min(u.eval(base + rho * sphere_dirs)))

    # slab nodes and measured field quantities
    mesh = np.meshgrid(*u.axes(), indexing="ij")
    lat2 = sum((mesh[i] - base[i]) ** 2 for i in range(n - 1))
    zrel = mesh[-1] - base[-1]
    slab_mask = (lat2 < rho**2) & (zrel > bottom) & (zrel < top)

    # face sampling in slab coordinates
    rng = np.random.default_rng(4)
    ring = _unit_directions(rng, 160, n - 1)
    radii = rho * np.sqrt(np.linspace(0.0, 1.0, 11)[1:])
    disc = np.concatenate(
        [
            np.zeros((1, n - 1)),
            (ring[:, None, :] * radii[None, :, None]).reshape(-1, n - 1),
        ]
    )
    lateral_dirs = _unit_directions(np.random.default_rng(6), 256, n - 1)
    levels = np.linspace(bottom, top, 17)
    faces = [
        np.concatenate([disc, np.full((disc.shape[0], 1), bottom)], axis=1),
        np.concatenate([disc, np.full((disc.shape[0], 1), top)], axis=1),
    ]
    side = np.concatenate(
        [
            np.repeat(rho * lateral_dirs, levels.size, axis=0),
            np.tile(levels, lateral_dirs.shape[0])[:, None],
        ],
        axis=1,
    )
    faces.append(side)
    face_local = np.vstack(faces)
    face_abs = base + face_local
    u_faces = u.eval(face_abs)

    sup_u = float(np.max(u_faces))
    if np.any(slab_mask):
        sup_u = max(sup_u, float(np.max(u.values[slab_mask])))

    lipschitz = 0.0
    if spec.variant == "case2":
        grad_mask = slab_mask & u.interior_mask(1)
        if np.any(grad_mask):
            grads = u.gradient_field()[grad_mask]
            lipschitz = float(np.max(np.linalg.norm(grads, axis=1)))

    mu = spec.rhs_cap
    a_coef = spec.lateral_coeff
    b_coef = spec.axial_coeff
    offset = spec.young_coeff * a_coef**-spec.decay
    checks = {}
    if spec.variant == "case1":
        canonical = mu * 2.0 ** -(n - spec.k) * a_coef ** -(n - spec.k - 1)
        checks["curvature-floor"] = {
            "lhs": a_coef,
            "rhs": sup_u / rho**2 + 0.25,
            "ok": a_coef >= sup_u / rho**2 + 0.25,
        }
        checks["slab-coefficient"] = {
            "lhs": b_coef,
            "rhs": min(1.0, canonical),
            "ok": b_coef <= min(1.0, canonical) * (1.0 + 1e-12),
        }
        checks["offset-vs-slab"] = {
            "lhs": offset,
            "rhs": b_coef * rho**2 / 8.0,
            "ok": offset <= b_coef * rho**2 / 8.0,
        }
        checks["holder-range"] = {
            "lhs": spec.holder,
            "rhs": 1.0,
            "ok": 0.0 < spec.holder < 1.0,
        }
    else:
        canonical = mu * 2.0 ** -(n - spec.k + 1) * a_coef ** -(n - spec.k - 1)
        floor = sup_u / rho**2 + 0.25 + 3.0 * lipschitz / rho
        checks["curvature-floor"] = {
            "lhs": a_coef,
            "rhs": floor,
            "ok": a_coef >= floor,
        }
        checks["slab-coefficient"] = {
            "lhs": b_coef,
            "rhs": min(1.0, canonical),
            "ok": b_coef <= min(1.0, canonical) * (1.0 + 1e-12),
        }
        checks["offset-vs-slab"] = {
            "lhs": offset,
            "rhs": b_coef * rho**2 / 32.0,
            "ok": offset <= b_coef * rho**2 / 32.0,
        }
        checks["holder-range"] = {
            "lhs": spec.holder,
            "rhs": 1.0,
            "ok": 0.0 < spec.holder < 1.0,
        }
        tilt = (spec.tilt_top - spec.tilt_bottom) / (spec.cut_top - spec.cut_bottom)
        tilt_reach = max(
            float(np.linalg.norm(spec.tilt_bottom)),
            float(np.linalg.norm(spec.tilt_top)),
            rho * float(np.max(np.abs(tilt), initial=0.0)) / 4.0,
        )
        checks["tilt-bound"] = {
            "lhs": tilt_reach,
            "rhs": lipschitz,
            "ok": tilt_reach <= lipschitz * (1.0 + 1e-9),
        }
        # sigma_k of the tilted Hessian loses 2^(k-2) A^(k-2) binom(n-2,k-2)
        # sum t^2 exactly; require the loss to stay under half the lead term
        loss = (
            2.0 ** (spec.k - 2)
            * a_coef ** (spec.k - 2)
            * _comb0(n - 2, spec.k - 2)
            * float(tilt @ tilt)
        )
        lead = _comb0(n - 1, spec.k) * (2.0 * a_coef) ** spec.k
        checks["offdiag-dominance"] = {
            "lhs": loss,
            "rhs": 0.5 * lead,
            "ok": loss <= 0.5 * lead,
        }
        checks["slab-cuts"] = {
            "lhs": spec.cut_bottom,
            "rhs": rho / 4.0,
            "upper": spec.cut_top,
            "upper_floor": 3.0 * rho / 4.0,
            "ok": spec.cut_bottom < rho / 4.0 and spec.cut_top > 3.0 * rho / 4.0,
        }

    failed = [name for name, entry in checks.items() if not entry["ok"]]
    if failed:
        detail = "; ".join(
            "{} (lhs {:.4g} vs rhs {:.4g})".format(
                name, checks[name]["lhs"], checks[name]["rhs"]
            )
            for name in failed
        )
        raise PreconditionError(f"barrier preconditions failed: {detail}")

    rhs_value = quotient(np.linalg.eigvalsh(barrier_hessian(spec)), spec.k)
    rhs_ok = rhs_value <= mu * (1.0 + 1e-12)

    w_faces = barrier_value(spec, face_local, sphere_min)
    boundary_gap = float(np.min(w_faces - u_faces))

    interior_gap = float("inf")
    if np.any(slab_mask):
        node_coords = np.stack([m[slab_mask] for m in mesh], axis=1)
        w_nodes = barrier_value(spec, node_coords - base, sphere_min)
        interior_gap = float(np.min(w_nodes - u.values[slab_mask]))

    tolerance = 10.0 * (1.0 + a_coef) * u.h**2
    if spec.variant == "case1":
        sphere_min_bound = b_coef * rho**2 / 4.0
    else:
        sphere_min_bound = b_coef * rho**2 / 64.0
    sphere_min_ok = sphere_min >= sphere_min_bound - 1e-12
    passed = (
        rhs_ok
        and sphere_min_ok
        and boundary_gap >= -tolerance
        and interior_gap >= -tolerance
    )
    return BarrierRecord(
        spec=spec,
        base_point=base,
        passed=passed,
        preconditions=checks,
        rhs_value=float(rhs_value),
        rhs_ok=bool(rhs_ok),
        sphere_min=sphere_min,
        sphere_min_bound=float(sphere_min_bound),
        sphere_min_ok=bool(sphere_min_ok),
        boundary_gap=boundary_gap,
        interior_gap=interior_gap,
        tolerance=float(tolerance),
    )


# ---------------------------------------------------------------------------
# growth series and the annulus integral


@dataclass(frozen=True, eq=False)
class GrowthReport:
    """Tangent-subtracted growth series and its fitted exponent.

    sphere_series holds min over a sampled sphere per radius (NaN when
    the sphere leaves the domain); ring_series holds the inf over slab
    levels of the sup over the lateral ring.  series_used names which one
    the exponent fit ran on; margins compare it against the fitted scale
    times r^target_exponent.
    """

    n: int
    k: int
    base_point: np.ndarray
    r_values: np.ndarray
    dropped: tuple
    sphere_series: np.ndarray
    ring_series: np.ndarray
    series_used: str
    fitted_exponent: float
    fitted_scale: float
    target_exponent: float
    margins: np.ndarray

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "base_point": _jsonable(self.base_point),
            "r_values": _jsonable(self.r_values),
            "dropped": _jsonable(self.dropped),
            "sphere_series": _jsonable(self.sphere_series),
            "ring_series": _jsonable(self.ring_series),
            "series_used": self.series_used,
            "fitted_exponent": self.fitted_exponent,
            "fitted_scale": self.fitted_scale,
            "target_exponent": self.target_exponent,
            "margins": _jsonable(self.margins),
        }


def growth_probe(u: GridFunction, base_point, r_values, n: int, k: int) -> GrowthReport:
    """Growth series of the tangent-subtracted field around a base node.

    Radii whose lateral ring leaves the box are dropped.  The sphere-min
    series is preferred; when any kept sphere leaves the domain (thin
    slabs), or for later inspection, the ring series inf over levels of
    the sup over the ring stands in.  A non-positive used series raises
    DomainError since a log-log fit is then meaningless.
    """
    if n != u.n:
        raise ArgumentError("n does not match the field dimension")
    if not 0 <= k < n:
        raise ArgumentError(f"need 0 <= k < n = {n}, got k = {k}")
    if u.ball is not None:
        raise ArgumentError("growth probes need a box domain")
    rs = np.asarray(tuple(r_values), dtype=float)
    if rs.size == 0 or np.any(rs <= 0):
        raise ArgumentError("radii must be positive")
    idx, base = _snap_interior(u, base_point)
    grad = u.gradient(idx)
    u0 = float(u.values[idx])

    def tangent_vals(pts):
        return u.eval(pts) - u0 - (pts - base) @ grad

    sphere_dirs = _unit_directions(np.random.default_rng(11), 384, n)
    ring_dirs = _unit_directions(np.random.default_rng(13), 256, n - 1)
    levels = u.axes()[n - 1]
    pad = 1e-12
    kept = []
    dropped = []
    sphere_series = []
    ring_series = []
    for r in rs:
        if np.any(base[:-1] - r < u.lo[:-1] - pad) or np.any(
            base[:-1] + r > u.hi[:-1] + pad
        ):
            dropped.append(float(r))
            continue
        kept.append(float(r))
        ring_local = base[:-1] + r * ring_dirs
        level_sups = []
        for lev in levels:
            pts = np.concatenate(
                [ring_local, np.full((ring_local.shape[0], 1), lev)], axis=1
            )
            level_sups.append(float(np.max(tangent_vals(pts))))
        ring_series.append(min(level_sups))
        sphere_pts = base + r * sphere_dirs
        if np.all(sphere_pts >= u.lo - pad) and np.all(sphere_pts <= u.hi + pad):
            sphere_series.append(float(np.min(tangent_vals(sphere_pts))))
        else:
            sphere_series.append(float("nan"))
    if not kept:
        raise ArgumentError("no probe radius fits inside the domain")

    karr = np.asarray(kept)
    sphere_arr = np.asarray(sphere_series)
    ring_arr = np.asarray(ring_series)
    series_used = "sphere-min" if not np.any(np.isnan(sphere_arr)) else "ring-infsup"
    used = sphere_arr if series_used == "sphere-min" else ring_arr
    if np.any(~np.isfinite(used)) or np.any(used <= 0.0):
        raise DomainError(
            "growth series is not strictly positive; the field has no "
            "strict growth at this base point"
        )
    target = 2.0 - 2.0 / (n - k)
    if karr.size >= 2:
        fitted = float(np.polyfit(np.log(karr), np.log(used), 1)[0])
    else:
        fitted = float("nan")
    fitted_scale = float(np.exp(np.mean(np.log(used) - target * np.log(karr))))
    margins = used - fitted_scale * karr**target
    return GrowthReport(
        n=n,
        k=k,
        base_point=base,
        r_values=karr,
        dropped=tuple(dropped),
        sphere_series=sphere_arr,
        ring_series=ring_arr,
        series_used=series_used,
        fitted_exponent=fitted,
        fitted_scale=fitted_scale,
        target_exponent=float(target),
        margins=margins,
    )


def delta_integral(
    u: GridFunction, base_point, r_inner: float, r_outer: float, n: int, k: int
) -> float:
    """Integral of the clipped Laplacian power over a lateral annulus.

    The region is {r_inner < |x' - base'| < r_outer} in the first n - 1
    coordinates times the interior extent of the last axis.  The
    Laplacian is the nodal second difference, clipped at zero before the
    power (n-1)(n-k)/2; the annulus rim carries first-order coverage
    fractions so thin shells are not quantized away by the grid.
    """
    if n != u.n:
        raise ArgumentError("n does not match the field dimension")
    if not 0 <= k < n:
        raise ArgumentError(f"need 0 <= k < n = {n}, got k = {k}")
    if u.ball is not None:
        raise ArgumentError("annulus integrals need a box domain")
    if not 0 <= r_inner < r_outer:
        raise ArgumentError("need 0 <= r_inner < r_outer")
    base = np.atleast_1d(np.asarray(base_point, dtype=float))
    if base.size != n:
        raise ArgumentError(f"base point must have {n} coordinates")
    h = u.h
    vals = u.values
    inner = tuple(slice(1, -1) for _ in range(n))
    center = vals[inner]
    lap = np.zeros_like(center)
    for a in range(n):
        sl_p = list(inner)
        sl_m = list(inner)
        sl_p[a] = slice(2, None)
        sl_m[a] = slice(0, -2)
        lap += (vals[tuple(sl_p)] - 2.0 * center + vals[tuple(sl_m)]) / h**2

    in_axes = [ax[1:-1] for ax in u.axes()]
    lat_mesh = np.meshgrid(*in_axes[:-1], indexing="ij")
    rad = np.sqrt(sum((m - b) ** 2 for m, b in zip(lat_mesh, base[:-1])))
    frac = np.clip((rad - r_inner) / h + 0.5, 0.0, 1.0) * np.clip(
        (r_outer - rad) / h + 0.5, 0.0, 1.0
    )
    if not np.any(frac > 0):
        raise ArgumentError("annulus misses every interior node")

    power = (n - 1) * (n - k) / 2.0
    total = np.clip(lap, 0.0, None) ** power * frac[..., None]
    for a, ax in enumerate(in_axes):
        w = np.full(ax.size, h)
        w[0] = w[-1] = h / 2.0
        shape = [1] * n
        shape[a] = ax.size
        total = total * w.reshape(shape)
    return float(np.sum(total))
