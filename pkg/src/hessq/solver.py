"""Radial reference solutions and a damped-Newton Dirichlet solver.

Radial path.  For u = phi(|x|) the Hessian spectrum is (phi'', s, ..., s)
with s = phi'/r, so the quotient equation reduces to an ODE solved for
phi'':

    sigma_n = phi'' s^(n-1),   sigma_k = C(n-1,k) s^k + C(n-1,k-1) phi'' s^(k-1)
    phi'' = f C(n-1,k) s / (s^(n-k) - f C(n-1,k-1))

which is integrated by classical fourth-order Runge-Kutta after a series
start phi ~ c r^2 / 2 on [0, 10h], where c = (f(0) C(n,k))^(1/(n-k)) is
the isotropic value with quotient f(0).

Grid path (n = 2 or 3).  Damped Newton on the nodal residual
F(D2_h u) - f with second-order central differences, per-node spectral
decomposition, and the analytic first-derivative tensors for the exact
Jacobian.  Eigenvalues are clamped at delta_floor inside the linearization
only; the reported solution is never clamped.  Ball domains use staircase
Dirichlet nodes: every in-ball node missing an in-ball neighbor is pinned
to the boundary data evaluated at the node itself.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve

from .errors import ArgumentError, DegeneracyError, DomainError
from .grid import GridFunction
from .inequalities import _sigma_batch, _sigma_del1_batch

__all__ = [
    "RadialProfile",
    "DirichletProblem",
    "SolveReport",
    "radial_phi_pp",
    "radial_solve",
    "grid_solve",
    "approximation_sandwich",
    "fit_order",
]


def _comb(a: int, b: int) -> int:
    return math.comb(a, b) if 0 <= b <= a else 0


def radial_phi_pp(s: float, r: float, n: int, k: int, f: float) -> float:
    """Second radial derivative solving the quotient equation at slope
    s = phi'/r.

    Raises DegeneracyError when s^(n-k) <= f C(n-1,k-1), where convexity
    of the profile would fail; warns when the denominator is within 1e-9
    of that boundary.
    """
    if not 0 <= k < n:
        raise ArgumentError(f"need 0 <= k < n, got (n, k) = ({n}, {k})")
    if s <= 0:
        raise DomainError("slope phi'/r must be positive")
    if f <= 0:
        raise DomainError("right-hand side must be positive")
    lead = s ** (n - k)
    denom = lead - f * _comb(n - 1, k - 1)
    if denom <= 0:
        raise DegeneracyError(
            f"slope too small: s^(n-k) = {lead:.6g} <= f*C(n-1,k-1) = "
            f"{f * _comb(n - 1, k - 1):.6g}"
        )
    if denom < 1e-9 * lead:
        warnings.warn(
            "radial profile near the degenerate slope; phi'' is ill-conditioned",
            RuntimeWarning,
            stacklevel=2,
        )
    return f * _comb(n - 1, k) * s / denom


@dataclass(eq=False)
class RadialProfile:
    """Sampled radial solution phi with phi(0) = 0, phi'(0) = 0."""

    n: int
    k: int
    r: np.ndarray
    phi: np.ndarray
    phi_p: np.ndarray
    phi_pp: np.ndarray
    f_values: np.ndarray
    residual_sup: float

    def spectrum_at(self, i: int) -> np.ndarray:
        """Hessian spectrum (phi'', s, ..., s) at node i > 0."""
        if i <= 0:
            s = self.phi_pp[0]
            return np.full(self.n, s)
        s = self.phi_p[i] / self.r[i]
        return np.concatenate([[self.phi_pp[i]], np.full(self.n - 1, s)])

    def _spline(self):
        if not hasattr(self, "_phi_spline"):
            object.__setattr__(
                self,
                "_phi_spline",
                CubicSpline(self.r, self.phi, bc_type=((1, 0.0), "not-a-knot")),
            )
        return self._phi_spline

    def u_at(self, points) -> np.ndarray:
        """u(x) = phi(|x|) for points of shape (m, n)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rr = np.linalg.norm(pts, axis=1)
        if np.any(rr > self.r[-1] * (1 + 1e-12)):
            raise ArgumentError("point outside the solved radius")
        return self._spline()(np.minimum(rr, self.r[-1]))


def radial_solve(n: int, k: int, f, r_max: float, num_steps: int = 4096) -> RadialProfile:
    """Integrate the radial reduction out to r_max.

    f may be a scalar or a callable of r.  The start uses the exact
    quadratic series phi = c r^2/2 on the first ten steps; classical RK4
    in (phi, phi') continues from there.  For constant f the profile is
    the isotropic quadratic and the integration reproduces it to rounding.
    """
    if not 0 <= k < n:
        raise ArgumentError(f"need 0 <= k < n, got (n, k) = ({n}, {k})")
    if r_max <= 0 or num_steps < 20:
        raise ArgumentError("need r_max > 0 and num_steps >= 20")
    fr = f if callable(f) else (lambda _r, _v=float(f): _v)
    f0 = float(fr(0.0))
    if f0 <= 0:
        raise DomainError("f must be positive at r = 0")
    c = (f0 * math.comb(n, k)) ** (1.0 / (n - k))
    h = r_max / num_steps
    r = np.linspace(0.0, r_max, num_steps + 1)
    phi = np.empty(num_steps + 1)
    phi_p = np.empty(num_steps + 1)
    start = 10
    phi[: start + 1] = 0.5 * c * r[: start + 1] ** 2
    phi_p[: start + 1] = c * r[: start + 1]

    def rhs(ri, yi):
        fv = float(fr(ri))
        if fv <= 0:
            raise DomainError(f"f({ri:.6g}) = {fv:.6g} is not positive")
        return np.array([yi[1], radial_phi_pp(yi[1] / ri, ri, n, k, fv)])

    y = np.array([phi[start], phi_p[start]])
    for i in range(start, num_steps):
        ri = r[i]
        k1 = rhs(ri, y)
        k2 = rhs(ri + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(ri + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(ri + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        phi[i + 1] = y[0]
        phi_p[i + 1] = y[1]

    f_vals = np.array([float(fr(ri)) for ri in r])
    phi_pp = np.empty(num_steps + 1)
    phi_pp[0] = c
    for i in range(1, num_steps + 1):
        phi_pp[i] = radial_phi_pp(phi_p[i] / r[i], r[i], n, k, f_vals[i])
    res = 0.0
    for i in range(1, num_steps + 1):
        s = phi_p[i] / r[i]
        lam = np.concatenate([[phi_pp[i]], np.full(n - 1, s)])
        num = _sigma_batch(lam[None, :], n)[0]
        den = _sigma_batch(lam[None, :], k)[0]
        res = max(res, abs(num / den - f_vals[i]))
    return RadialProfile(
        n=n,
        k=k,
        r=r,
        phi=phi,
        phi_p=phi_p,
        phi_pp=phi_pp,
        f_values=f_vals,
        residual_sup=float(res),
    )


# ---------------------------------------------------------------------------
# grid solver
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class DirichletProblem:
    """Dirichlet data for the quotient equation on a box or ball.

    f and g may be scalars or callables taking an (m, n) array of points.
    A ball domain is given as (center, radius) and realized as the set of
    grid nodes inside the ball; its staircase boundary nodes carry g
    evaluated at the node positions.
    """

    n: int
    k: int
    lo: tuple
    hi: tuple
    num: tuple
    f: object
    g: object
    ball: tuple | None = None

    def __post_init__(self):
        if not 0 <= self.k < self.n:
            raise ArgumentError(f"need 0 <= k < n, got ({self.n}, {self.k})")
        if len(self.lo) != self.n or len(self.hi) != self.n or len(self.num) != self.n:
            raise ArgumentError("lo, hi, num must all have length n")

    def f_at(self, pts: np.ndarray) -> np.ndarray:
        if callable(self.f):
            return np.asarray(self.f(pts), dtype=float)
        return np.full(pts.shape[0], float(self.f))

    def g_at(self, pts: np.ndarray) -> np.ndarray:
        if callable(self.g):
            return np.asarray(self.g(pts), dtype=float)
        return np.full(pts.shape[0], float(self.g))


@dataclass(eq=False)
class SolveReport:
    converged: bool
    iterations: int
    residual_sup: float
    min_interior_eig: float
    message: str
    residual_history: list = dc_field(default_factory=list)
    damping_history: list = dc_field(default_factory=list)


def _domain_masks(axes, ball):
    dims = tuple(len(ax) for ax in axes)
    if ball is None:
        inside = np.ones(dims, dtype=bool)
    else:
        center, radius = np.asarray(ball[0], dtype=float), float(ball[1])
        grids = np.meshgrid(*axes, indexing="ij")
        r2 = sum((g - c) ** 2 for g, c in zip(grids, center))
        inside = r2 <= radius**2 * (1 + 1e-12)
    # separable box erosion: interior nodes have their full Moore
    # neighborhood inside, which covers every cross-difference corner
    interior = inside.copy()
    for ax in range(len(dims)):
        interior &= np.roll(interior, 1, axis=ax) & np.roll(interior, -1, axis=ax)
    for ax in range(len(dims)):
        sl = [slice(None)] * len(dims)
        sl[ax] = 0
        interior[tuple(sl)] = False
        sl[ax] = -1
        interior[tuple(sl)] = False
    dirichlet = inside & ~interior
    return inside, interior, dirichlet


def _hessian_rows(values, interior, h):
    """FD Hessians at interior nodes, shape (m, n, n)."""
    nd = values.ndim
    m = int(np.count_nonzero(interior))
    hess = np.empty((m, nd, nd))
    for a in range(nd):
        up = np.roll(values, -1, axis=a)
        dn = np.roll(values, 1, axis=a)
        hess[:, a, a] = ((up - 2 * values + dn) / h**2)[interior]
    for a in range(nd):
        for b in range(a + 1, nd):
            pp = np.roll(values, (-1, -1), axis=(a, b))
            mm = np.roll(values, (1, 1), axis=(a, b))
            pm = np.roll(values, (-1, 1), axis=(a, b))
            mp = np.roll(values, (1, -1), axis=(a, b))
            cross = ((pp + mm - pm - mp) / (4 * h**2))[interior]
            hess[:, a, b] = cross
            hess[:, b, a] = cross
    return hess


def _residual(values, interior, h, n, k, f_int):
    hess = _hessian_rows(values, interior, h)
    w, q = np.linalg.eigh(hess)
    lam = w[:, ::-1]
    q = q[:, :, ::-1]
    sk = _sigma_batch(lam, k)
    if lam[:, -1].min() <= 0 or sk.min() <= 0:
        return None, lam, q
    sn = _sigma_batch(lam, n)
    return sn / sk - f_int, lam, q


def _jacobian(lam, q, interior, h, n, k, delta_floor, unknown_row, strides):
    lamc = np.maximum(lam, delta_floor)
    sn = _sigma_batch(lamc, n)
    sk = _sigma_batch(lamc, k)
    gn = _sigma_del1_batch(lamc, n - 1)
    gk = _sigma_del1_batch(lamc, k - 1)
    fii = gn / sk[:, None] - (sn / sk**2)[:, None] * gk
    famb = np.einsum("mai,mi,mbi->mab", q, fii, q)

    flat_int = np.flatnonzero(interior.ravel())
    m = flat_int.size
    rows, cols, data = [], [], []

    def push(off_flat, coeff):
        cg = flat_int + off_flat
        rr = np.arange(m)
        ur = unknown_row[cg]
        keep = ur >= 0
        rows.append(rr[keep])
        cols.append(ur[keep])
        data.append(coeff[keep])

    center = -2.0 / h**2 * np.einsum("maa->m", famb)
    push(0, center)
    for a in range(n):
        push(strides[a], famb[:, a, a] / h**2)
        push(-strides[a], famb[:, a, a] / h**2)
    for a in range(n):
        for b in range(a + 1, n):
            cpl = famb[:, a, b] / (2 * h**2)
            push(strides[a] + strides[b], cpl)
            push(-strides[a] - strides[b], cpl)
            push(strides[a] - strides[b], -cpl)
            push(-strides[a] + strides[b], -cpl)
    mat = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m),
    )
    return mat.tocsr()


def grid_solve(
    problem: DirichletProblem,
    tol: float = 1e-10,
    max_iter: int = 40,
    delta_floor: float = 1e-6,
) -> tuple[GridFunction, SolveReport]:
    """Damped Newton solve of F(D2_h u) = f with Dirichlet data g.

    Returns the solution GridFunction (NaN outside a ball domain) and a
    SolveReport.  Non-convergence is reported, not raised; only malformed
    problems raise.
    """
    n = problem.n
    if n not in (2, 3):
        raise ArgumentError("grid path supports n = 2 or 3; use the radial path")
    axes = [
        np.linspace(problem.lo[a], problem.hi[a], problem.num[a]) for a in range(n)
    ]
    steps = [ax[1] - ax[0] for ax in axes]
    if max(steps) - min(steps) > 1e-9 * max(steps):
        raise ArgumentError("node spacing must be uniform across axes")
    h = float(steps[0])
    dims = tuple(problem.num)
    inside, interior, dirichlet = _domain_masks(axes, problem.ball)
    if not interior.any():
        raise ArgumentError("no interior nodes; refine the grid")
    grids = np.meshgrid(*axes, indexing="ij")
    pts_all = np.stack([g.ravel() for g in grids], axis=1)
    f_int = problem.f_at(pts_all[interior.ravel()])
    if f_int.min() <= 0:
        raise DomainError("f must be strictly positive on the domain")
    g_dir = problem.g_at(pts_all[dirichlet.ravel()])

    unknown_row = np.full(int(np.prod(dims)), -1, dtype=np.int64)
    unknown_row[np.flatnonzero(interior.ravel())] = np.arange(
        int(np.count_nonzero(interior))
    )
    strides = np.array(
        [int(np.prod(dims[a + 1 :], dtype=np.int64)) for a in range(n)]
    )

    # starting iterate: solve the FD Poisson problem lap u0 = n c(x) with
    # the exact Dirichlet data, where c(x) is the isotropic slope with
    # quotient f(x); doubling the right side adds a convex bubble until
    # the iterate is admissible
    c_int = (f_int * math.comb(n, problem.k)) ** (1.0 / (n - problem.k))
    base = np.zeros(dims)
    base[dirichlet] = g_dir

    def laplacian_rows(vals):
        out = np.zeros(int(np.count_nonzero(interior)))
        for a in range(n):
            up = np.roll(vals, -1, axis=a)
            dn = np.roll(vals, 1, axis=a)
            out += ((up - 2 * vals + dn) / h**2)[interior]
        return out

    lap_mat = None
    values = None
    for mult in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0):
        if lap_mat is None:
            m = int(np.count_nonzero(interior))
            flat_int = np.flatnonzero(interior.ravel())
            rows_l, cols_l, data_l = [], [], []
            for off, w in [(0, -2.0 * n / h**2)] + [
                (sgn * strides[a], 1.0 / h**2)
                for a in range(n)
                for sgn in (1, -1)
            ]:
                cg = flat_int + off
                ur = unknown_row[cg]
                keep = ur >= 0
                rows_l.append(np.arange(m)[keep])
                cols_l.append(ur[keep])
                data_l.append(np.full(int(keep.sum()), w))
            lap_mat = sparse.coo_matrix(
                (
                    np.concatenate(data_l),
                    (np.concatenate(rows_l), np.concatenate(cols_l)),
                ),
                shape=(m, m),
            ).tocsr()
        rhs = mult * n * c_int
        delta = spsolve(lap_mat, rhs - laplacian_rows(base))
        cand = base.copy()
        cand[interior] += delta
        res, lam, q = _residual(cand, interior, h, n, problem.k, f_int)
        if res is not None:
            values = cand
            break
    if values is None:
        return (
            GridFunction(
                lo=problem.lo,
                hi=problem.hi,
                values=np.where(inside, base, np.nan),
                ball=problem.ball,
            ),
            SolveReport(
                converged=False,
                iterations=0,
                residual_sup=float("inf"),
                min_interior_eig=float("nan"),
                message="no admissible starting iterate",
            ),
        )

    history, damping = [], []
    norm2 = float(np.linalg.norm(res))
    message = "max_iter exceeded"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        sup = float(np.max(np.abs(res)))
        history.append(sup)
        if sup <= tol:
            converged = True
            message = "converged"
            break
        jac = _jacobian(
            lam, q, interior, h, n, problem.k, delta_floor, unknown_row, strides
        )
        step = spsolve(jac, -res)
        t = 1.0
        halvings = 0
        accepted = False
        while halvings <= 30:
            trial = values.copy()
            trial[interior] += t * step
            res2, lam2, q2 = _residual(trial, interior, h, n, problem.k, f_int)
            if res2 is not None and np.linalg.norm(res2) < norm2:
                values, res, lam, q = trial, res2, lam2, q2
                norm2 = float(np.linalg.norm(res))
                accepted = True
                break
            t *= 0.5
            halvings += 1
        damping.append(halvings)
        if not accepted:
            message = "line search stalled"
            break
    else:
        history.append(float(np.max(np.abs(res))))

    sup = float(np.max(np.abs(res)))
    if not converged and sup <= tol:
        converged = True
        message = "converged"
    min_eig = float(lam[:, -1].min())
    if converged and min_eig < delta_floor / 2:
        converged = False
        message = "interior Hessian eigenvalue below floor"
    out_vals = np.where(inside, values, np.nan)
    u = GridFunction(lo=problem.lo, hi=problem.hi, values=out_vals, ball=problem.ball)
    return u, SolveReport(
        converged=converged,
        iterations=it,
        residual_sup=sup,
        min_interior_eig=min_eig,
        message=message,
        residual_history=history,
        damping_history=damping,
    )


def fit_order(hs, errs) -> float:
    """Least-squares slope of log err against log h."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if hs.size < 2 or np.any(errs <= 0):
        raise ArgumentError("need at least two levels with positive errors")
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def approximation_sandwich(
    problem: DirichletProblem,
    truth: GridFunction | None = None,
    m_list=(4, 8, 16, 32),
    slack: float | None = None,
) -> dict:
    """Perturbed-data solves f - 1/(2m), g + 1/(2m) bracketed against the
    reference solution.

    For each m the perturbed solution u_m must dominate the reference u,
    and u must dominate u_m + (M/(2m)) (|x - x_c|^2 - 4r^2) - 1/m where
    2r is the circumradius of the domain about its center and M is the
    explicit constant

        M = C(n,k)^(1/(n-k)) / ((n-k) * min(1, min f_m)^((n-k-1)/(n-k)))

    large enough that the shifted function is a subsolution (mean value
    bound on t^(1/(n-k)) between f_m and f, then superadditivity of the
    quotient root).  Violations are measured beyond a discretization
    slack, default 10 h^2.  The sup gap |u_m - u| is fitted against 1/m.
    """
    if any(m <= 0 for m in m_list) or list(m_list) != sorted(m_list):
        raise ArgumentError("m_list must be positive and increasing")
    base_u, base_rep = (truth, None) if truth is not None else grid_solve(problem)
    if base_rep is not None and not base_rep.converged:
        raise DomainError(f"reference solve failed: {base_rep.message}")
    n, k = problem.n, problem.k
    axes = base_u.axes()
    h = base_u.h
    if slack is None:
        slack = 10.0 * h**2
    grids = np.meshgrid(*axes, indexing="ij")
    pts_all = np.stack([g.ravel() for g in grids], axis=1)
    dom = base_u.in_domain_mask()
    center = pts_all[dom.ravel()].mean(axis=0)
    circum2 = float(np.max(np.sum((pts_all[dom.ravel()] - center) ** 2, axis=1)))
    rows = []
    gaps = []
    ms = []
    max_upper = 0.0
    max_lower = 0.0
    for m in m_list:
        shift = 1.0 / (2.0 * m)

        def fm(p, _s=shift):
            return problem.f_at(p) - _s

        def gm(p, _s=shift):
            return problem.g_at(p) + _s

        fmin_m = float(np.min(fm(pts_all[dom.ravel()])))
        if fmin_m <= 0:
            raise DomainError(f"m = {m} drives f nonpositive (min {fmin_m:.3g})")
        sub = dataclasses.replace(problem, f=fm, g=gm)
        um, rep = grid_solve(sub)
        if not rep.converged:
            rows.append({"m": m, "converged": False, "message": rep.message})
            continue
        big_m = math.comb(n, k) ** (1.0 / (n - k)) / (
            (n - k) * min(1.0, fmin_m) ** ((n - k - 1.0) / (n - k))
        )
        du = um.values - base_u.values
        upper = float(np.nanmin(du))
        lower_field = (
            base_u.values
            - um.values
            - (big_m / (2 * m))
            * (np.sum((pts_all - center) ** 2, axis=1).reshape(base_u.dims) - circum2)
            + 1.0 / m
        )
        lower = float(np.nanmin(lower_field))
        gap = float(np.nanmax(np.abs(du)))
        rows.append(
            {
                "m": m,
                "converged": True,
                "upper_min": upper,
                "lower_min": lower,
                "gap_sup": gap,
                "M": big_m,
            }
        )
        gaps.append(gap)
        ms.append(m)
        max_upper = max(max_upper, -upper)
        max_lower = max(max_lower, -lower)
    exponent = None
    if len(gaps) >= 2:
        exponent = float(-np.polyfit(np.log(ms), np.log(gaps), 1)[0])
    return {
        "rows": rows,
        "fitted_exponent": exponent,
        "max_upper_violation": max_upper,
        "max_lower_violation": max_lower,
        "slack": slack,
        "upper_ok": max_upper <= slack,
        "lower_ok": max_lower <= slack,
    }
