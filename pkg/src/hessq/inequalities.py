"""Concavity margins, superadditivity, and seeded violation scans.

The two central quadratic-form margins live here.  For a direction xi and a
spectrum lam sorted non-increasing with lam_1 the top entry:

    zhang_margin:   [ -sum_{i!=j} sigma_k^(ii,jj) xi_i xi_j
                      + (2/sigma_k) (sum_i sigma_k^(ii) xi_i)^2
                      + sum_{i>=2} sigma_k^(ii) xi_i^2 / lam_1 ]
                    - (1 + 1/(4nk)) sigma_k^(11) xi_1^2 / lam_1

    guan_sroka_margin:
                    [ -sum_{i,j} F^(ii,jj) xi_i xi_j
                      + (1/F) (sum_i F^(ii) xi_i)^2 ]
                    - (1 + trial_c) F^(11) xi_1^2 / lam_1

with F the quotient sigma_n / sigma_k.  Every term of the first margin is
homogeneous of degree k - 2 in lam, so the margin scales exactly as
t^(k-2); scans assert that covariance to rounding.

Scans are vectorized over the sample axis and deterministic: eigenvalues
are drawn log-uniform per entry from a seeded generator, directions
uniformly from the sphere, and separate child seeds per field keep sample
prefixes stable when the count grows.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ArgumentError, DomainError
from .grid import GridFunction
from .symcalc import hq_derivatives, sigma

__all__ = [
    "SampleConfig",
    "MarginReport",
    "LogEigenField",
    "zhang_margin",
    "guan_sroka_margin",
    "superadditivity_margin",
    "jacobi_margin",
    "dual_jacobi_margin",
    "cauchy_margin",
    "divergence_residual",
    "estimate_constants",
]

# Relative slack treated as a violation boundary in scans.
VIOLATION_RTOL = 1e-10

# Relative spectral gap under which the top eigenvalue is not simple.
SIMPLE_GAP = 1e-6


# ---------------------------------------------------------------------------
# batched elementary symmetric machinery (sample axis first)
# ---------------------------------------------------------------------------


def _sigma_batch(lam: np.ndarray, k: int) -> np.ndarray:
    """sigma_k along the last axis of an (m, n) array."""
    m, n = lam.shape
    if k < 0 or k > n:
        return np.zeros(m)
    if k == 0:
        return np.ones(m)
    e = np.zeros((m, k + 1))
    e[:, 0] = 1.0
    top = 0
    for c in range(n):
        top = min(top + 1, k)
        for j in range(top, 0, -1):
            e[:, j] += lam[:, c] * e[:, j - 1]
    return e[:, k]


def _sigma_del1_batch(lam: np.ndarray, k: int) -> np.ndarray:
    """sigma_k with one entry deleted, shape (m, n); column i deletes i."""
    m, n = lam.shape
    out = np.empty((m, n))
    for i in range(n):
        keep = np.delete(lam, i, axis=1)
        out[:, i] = _sigma_batch(keep, k)
    return out


def _sigma_del2_batch(lam: np.ndarray, k: int) -> np.ndarray:
    """sigma_k with two entries deleted, shape (m, n, n); symmetric, zero
    diagonal."""
    m, n = lam.shape
    out = np.zeros((m, n, n))
    for i in range(n):
        for j in range(i + 1, n):
            keep = np.delete(lam, (i, j), axis=1)
            v = _sigma_batch(keep, k)
            out[:, i, j] = v
            out[:, j, i] = v
    return out


def _require_sorted_desc(lam: np.ndarray) -> None:
    if np.any(np.diff(lam, axis=-1) > 1e-12 * (1.0 + np.abs(lam[..., :1]))):
        raise ArgumentError("spectrum must be sorted non-increasing")


def _zhang_batch(lam: np.ndarray, xi: np.ndarray, k: int):
    """Margin and per-sample scale for the large-eigenvalue concavity form."""
    m, n = lam.shape
    sk = _sigma_batch(lam, k)
    if np.any(sk <= 0):
        raise DomainError("sigma_k must be positive on every sample")
    g = _sigma_del1_batch(lam, k - 1)
    d = _sigma_del2_batch(lam, k - 2)
    cross = np.einsum("mij,mi,mj->m", d, xi, xi) - np.einsum(
        "mii,mi,mi->m", d, xi, xi
    )
    term1 = -cross
    proj = np.einsum("mi,mi->m", g, xi)
    term2 = 2.0 * proj**2 / sk
    lam1 = lam[:, 0]
    term3 = np.einsum("mi,mi->m", g[:, 1:], xi[:, 1:] ** 2) / lam1
    rhs = (1.0 + 1.0 / (4.0 * n * k)) * g[:, 0] * xi[:, 0] ** 2 / lam1
    margin = term1 + term2 + term3 - rhs
    scale = np.maximum.reduce(
        [np.ones(m), np.abs(term1), np.abs(term2), np.abs(term3), np.abs(rhs)]
    )
    return margin, scale


def _quotient_tensors_batch(lam: np.ndarray, k: int):
    """Batched first and second quotient derivative arrays.

    Returns (F, grad, hess) with grad shape (m, n) and hess shape (m, n, n)
    holding the full second derivative in eigenvalue coordinates, diagonal
    included.
    """
    m, n = lam.shape
    sn = _sigma_batch(lam, n)
    sk = _sigma_batch(lam, k)
    if np.any(sk <= 0):
        raise DomainError("sigma_k must be positive on every sample")
    gn = _sigma_del1_batch(lam, n - 1)
    gk = _sigma_del1_batch(lam, k - 1)
    dn = _sigma_del2_batch(lam, n - 2)
    dk = _sigma_del2_batch(lam, k - 2)
    fval = sn / sk
    grad = gn / sk[:, None] - (sn / sk**2)[:, None] * gk

    hess = (
        dn / sk[:, None, None]
        - np.einsum("m,mi,mj->mij", 1.0 / sk**2, gn, gk)
        - np.einsum("m,mi,mj->mij", 1.0 / sk**2, gk, gn)
        - np.einsum("m,mij->mij", sn / sk**2, dk)
        + 2.0 * np.einsum("m,mi,mj->mij", sn / sk**3, gk, gk)
    )
    diag = (
        -2.0 * gn * gk / sk[:, None] ** 2 + 2.0 * (sn / sk**3)[:, None] * gk**2
    )
    ii = np.arange(n)
    hess[:, ii, ii] = diag
    return fval, grad, hess


def _guan_sroka_batch(lam: np.ndarray, xi: np.ndarray, k: int, trial_c: float):
    """Margin, scale, and per-sample concavity surplus ratio."""
    fval, grad, hess = _quotient_tensors_batch(lam, k)
    quad = -np.einsum("mij,mi,mj->m", hess, xi, xi)
    proj = np.einsum("mi,mi->m", grad, xi)
    augment = proj**2 / fval
    lhs = quad + augment
    lam1 = lam[:, 0]
    base = grad[:, 0] * xi[:, 0] ** 2 / lam1
    margin = lhs - (1.0 + trial_c) * base
    scale = np.maximum.reduce(
        [np.ones(lam.shape[0]), np.abs(quad), np.abs(augment), np.abs(base)]
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(base > 0, lhs / base - 1.0, np.inf)
    return margin, scale, ratio


# ---------------------------------------------------------------------------
# public scalar margins
# ---------------------------------------------------------------------------


def zhang_margin(spectrum, xi, k: int) -> float:
    """Concavity-form margin for the k-th symmetric function at large top
    eigenvalue.  Positive means the sharpened inequality holds at (lam, xi).

    Requires 1 < k < n, spectrum sorted non-increasing with lam_1 > 0 and
    sigma_k > 0.  Homogeneous of degree k - 2 in the spectrum.
    """
    lam = np.atleast_2d(np.asarray(spectrum, dtype=float))
    xiv = np.atleast_2d(np.asarray(xi, dtype=float))
    n = lam.shape[1]
    if not 1 < k < n:
        raise ArgumentError(f"need 1 < k < n = {n}, got k = {k}")
    if xiv.shape != lam.shape:
        raise ArgumentError("xi must match the spectrum length")
    _require_sorted_desc(lam)
    if lam[0, 0] <= 0:
        raise DomainError("top eigenvalue must be positive")
    margin, _ = _zhang_batch(lam, xiv, k)
    return float(margin[0])


def guan_sroka_margin(spectrum, xi, k: int, trial_c: float = 0.0) -> float:
    """Quotient-operator concavity margin at trial constant ``trial_c``.

    Requires a strictly positive spectrum sorted non-increasing and
    1 <= k < n.
    """
    lam = np.atleast_2d(np.asarray(spectrum, dtype=float))
    xiv = np.atleast_2d(np.asarray(xi, dtype=float))
    n = lam.shape[1]
    if not 1 <= k < n:
        raise ArgumentError(f"need 1 <= k < n = {n}, got k = {k}")
    if xiv.shape != lam.shape:
        raise ArgumentError("xi must match the spectrum length")
    _require_sorted_desc(lam)
    if np.min(lam) <= 0:
        raise DomainError("spectrum must be strictly positive")
    margin, _, _ = _guan_sroka_batch(lam, xiv, k, trial_c)
    return float(margin[0])


def superadditivity_margin(mat_a, mat_b, k: int) -> float:
    """Margin of the normalized quotient root under matrix addition.

    With Froot(M) = (sigma_n / sigma_k)^(1/(n-k)) on positive semidefinite
    matrices (zero when singular), returns Froot(A + B) - Froot(A) -
    Froot(B), which is nonnegative by concavity and 1-homogeneity.
    """
    a = np.asarray(mat_a, dtype=float)
    b = np.asarray(mat_b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ArgumentError("need two square matrices of equal size")
    n = a.shape[0]
    if not 0 <= k < n:
        raise ArgumentError(f"need 0 <= k < n = {n}, got k = {k}")

    def froot(mat):
        w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        if np.min(w) < -1e-10 * max(1.0, float(np.max(np.abs(w)))):
            raise DomainError("matrix is not positive semidefinite")
        w = np.clip(w, 0.0, None)
        if np.min(w) == 0.0:
            return 0.0
        return (sigma(w, n) / sigma(w, k)) ** (1.0 / (n - k))

    return froot(a + b) - froot(a) - froot(b)


def cauchy_margin(
    spectrum, grad_b, k: int, l: int, trial_cap: float, eps0: float, f_at_point=None
) -> float:
    """Split-bound margin for the weighted first-derivative sum.

    Returns [ trial_cap * eps0 * sum_i H^(ii) b_i^2
    + (trial_cap / eps0) * sigma_k ] minus sum_i | b_i sigma_l^(ii) |,
    where H^(ii) is the divergence coefficient of the quotient operator.
    Positive spectrum, 1 <= l <= k.
    """
    lam = np.asarray(spectrum, dtype=float).ravel()
    bvec = np.asarray(grad_b, dtype=float).ravel()
    n = lam.size
    if not 1 <= l <= k < n:
        raise ArgumentError(f"need 1 <= l <= k < n = {n}")
    if bvec.size != n:
        raise ArgumentError("grad_b must match the spectrum length")
    if eps0 <= 0 or trial_cap <= 0:
        raise ArgumentError("trial_cap and eps0 must be positive")
    if np.min(lam) <= 0:
        raise DomainError("spectrum must be strictly positive")
    hq = hq_derivatives(lam, k, f_at_point=f_at_point)
    sl_grad = np.array([sigma(lam, l - 1, drop=(i,)) for i in range(n)])
    lhs = trial_cap * eps0 * float(
        np.sum(hq.divcoef * bvec**2)
    ) + (trial_cap / eps0) * sigma(lam, k)
    rhs = float(np.sum(np.abs(bvec * sl_grad)))
    return lhs - rhs


# ---------------------------------------------------------------------------
# grid-level margins
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LogEigenField:
    """Log of the top Hessian eigenvalue over a grid solution, offset to
    stay positive.

    values = log(lam_1(D2u)) + offset at nodes with a full difference
    stencil, NaN elsewhere.  simple_mask marks nodes where the top
    eigenvalue is simple (relative gap above SIMPLE_GAP); second
    differences of the field are meaningful only there.
    """

    base: GridFunction
    values: np.ndarray
    offset: float
    simple_mask: np.ndarray
    lam_field: np.ndarray
    frame_field: np.ndarray
    valid_mask: np.ndarray

    @classmethod
    def from_solution(cls, u: GridFunction) -> "LogEigenField":
        hess = u.hessian_field()
        inner = u.interior_mask(1)
        n = u.n
        lam_field = np.full(u.dims + (n,), np.nan)
        frame_field = np.full(u.dims + (n, n), np.nan)
        hmats = hess[inner]
        if hmats.size:
            w, v = np.linalg.eigh(hmats)
            lam_field[inner] = w[..., ::-1]
            frame_field[inner] = v[..., :, ::-1]
        top = lam_field[..., 0]
        simple = np.zeros(u.dims, dtype=bool)
        with np.errstate(invalid="ignore"):
            ok = inner & (top > 0)
            gap = top - lam_field[..., 1]
            simple[ok] = gap[ok] > SIMPLE_GAP * top[ok]
        vals = np.full(u.dims, np.nan)
        with np.errstate(invalid="ignore"):
            vals[ok] = np.log(top[ok])
        finite = vals[np.isfinite(vals)]
        offset = float(max(0.0, -np.min(finite)) + 1.0) if finite.size else 1.0
        vals = vals + offset
        return cls(
            base=u,
            values=vals,
            offset=offset,
            simple_mask=simple,
            lam_field=lam_field,
            frame_field=frame_field,
            valid_mask=ok,
        )


def _fd_of_array(arr: np.ndarray, idx: tuple, h: float):
    """Gradient and Hessian of a nodal array at idx by central differences."""
    n = arr.ndim
    idx = tuple(int(i) for i in idx)

    def at(off):
        j = tuple(i + o for i, o in zip(idx, off))
        return arr[j]

    g = np.zeros(n)
    hess = np.zeros((n, n))
    c0 = at((0,) * n)
    for a in range(n):
        e = [0] * n
        e[a] = 1
        up, dn = at(tuple(e)), at(tuple(-x for x in e))
        g[a] = (up - dn) / (2 * h)
        hess[a, a] = (up - 2 * c0 + dn) / h**2
    for a in range(n):
        for b in range(a + 1, n):
            ea = [0] * n
            eb = [0] * n
            ea[a] = 1
            eb[b] = 1
            pp = at(tuple(x + y for x, y in zip(ea, eb)))
            mm = at(tuple(-x - y for x, y in zip(ea, eb)))
            pm = at(tuple(x - y for x, y in zip(ea, eb)))
            mp = at(tuple(y - x for x, y in zip(ea, eb)))
            hess[a, b] = hess[b, a] = (pp + mm - pm - mp) / (4 * h**2)
    return g, hess


@dataclass(eq=False)
class MarginReport:
    """Outcome of a seeded margin scan."""

    which: str
    n: int
    k: int
    count: int
    seed: int
    min_margin: float
    violations: int
    empirical_constant: float | None
    witness: dict
    details: dict = dc_field(default_factory=dict)

    def csv_row(self) -> str:
        wit = ";".join(
            f"{v:.17g}" for v in self.witness.get("spectrum", [])
        )
        emp = "" if self.empirical_constant is None else f"{self.empirical_constant:.17g}"
        return (
            f"{self.which},{self.n},{self.k},{self.count},"
            f"{self.min_margin:.17g},{self.violations},{emp},{wit}"
        )

    CSV_HEADER = "which,n,k,count,min_margin,violations,empirical_constant,witness"


def jacobi_margin(
    field: LogEigenField,
    f: GridFunction | None,
    k: int,
    trial_c: float,
    trial_cap: float,
    probe_points,
) -> MarginReport:
    """Differential-inequality margin for the log top-eigenvalue field.

    At each probe (snapped to a node) evaluates, in the eigenframe of D2u,

        sum_i F^(ii) b_ii - trial_c * sum_i F^(ii) b_i^2 + trial_cap

    and reports the minimum and the violation count.  Probes lacking a
    stencil, lying off the convex regime, or with a non-simple top
    eigenvalue are skipped and counted in the details.
    """
    u = field.base
    n = u.n
    if not 1 <= k < n:
        raise ArgumentError(f"need 1 <= k < n = {n}, got k = {k}")
    rows = []
    skipped = {"stencil": 0, "nonconvex": 0, "multiple": 0}
    inner2 = u.interior_mask(2)
    for point in np.atleast_2d(np.asarray(probe_points, dtype=float)):
        idx = tuple(
            int(i)
            for i in np.clip(
                np.round((point - u.lo) / u.h).astype(int), 0, np.array(u.dims) - 1
            )
        )
        if not inner2[idx]:
            skipped["stencil"] += 1
            continue
        neighborhood_ok = True
        for off in np.ndindex(*(3,) * n):
            j = tuple(i + o - 1 for i, o in zip(idx, off))
            if not field.valid_mask[j]:
                neighborhood_ok = False
                break
        if not neighborhood_ok:
            skipped["nonconvex"] += 1
            continue
        if not field.simple_mask[idx]:
            skipped["multiple"] += 1
            continue
        lam = field.lam_field[idx]
        qmat = field.frame_field[idx]
        if lam[-1] <= 0:
            skipped["nonconvex"] += 1
            continue
        fv = None if f is None else float(f.values[idx])
        hq = hq_derivatives(lam, k, f_at_point=fv)
        g_amb, h_amb = _fd_of_array(field.values, idx, u.h)
        b_i = qmat.T @ g_amb
        b_ii = np.diag(qmat.T @ h_amb @ qmat)
        margin = (
            float(np.sum(hq.grad * b_ii))
            - trial_c * float(np.sum(hq.grad * b_i**2))
            + trial_cap
        )
        rows.append((margin, idx, lam))
    if rows:
        min_margin, widx, wlam = min(rows, key=lambda r: r[0])
        witness = {
            "node": [int(i) for i in widx],
            "spectrum": [float(v) for v in wlam],
            "margin": float(min_margin),
        }
        violations = sum(1 for m, _, _ in rows if m < 0)
    else:
        min_margin, witness, violations = float("nan"), {}, 0
    return MarginReport(
        which="jacobi",
        n=n,
        k=k,
        count=len(rows),
        seed=0,
        min_margin=float(min_margin),
        violations=violations,
        empirical_constant=None,
        witness=witness,
        details={"skipped": skipped, "trial_c": trial_c, "trial_cap": trial_cap},
    )


def dual_jacobi_margin(pair, field: LogEigenField, k: int, trial_cap: float) -> MarginReport:
    """Dual-side margin: second differences of the pulled-back log field.

    b*(y) = b(x(y)) through the sharpened inverse map; the margin is
    sum_i G^(ii) b*_ii + trial_cap with G the deleted-sigma gradient of
    sigma_{n-k} at D2w(y), both in the eigenframe of D2w.  Evaluated at all
    non-extrapolated dual nodes with full stencil whose pullback lands in
    the valid region of b.
    """
    u = pair.primal
    n = u.n
    if not 1 <= k < n:
        raise ArgumentError(f"need 1 <= k < n = {n}, got k = {k}")
    dual = pair.dual
    inner = dual.interior_mask(1)
    usable = inner & ~pair.extrapolated

    # interpolator for b over its valid region
    from scipy.interpolate import RegularGridInterpolator

    bvals = np.array(field.values, copy=True)
    binterp = RegularGridInterpolator(
        u.axes(), bvals, method="linear", bounds_error=False, fill_value=np.nan
    )

    def bstar(ys):
        xs = pair.inverse_map(ys)
        return binterp(xs)

    rows = []
    skipped = 0
    step = dual.h
    for idx in map(tuple, np.argwhere(usable)):
        y0 = dual.node_coord(idx)
        d2w = pair.dual_hessian(y0, step)
        mu, qmat = np.linalg.eigh(d2w)
        mu = mu[::-1]
        qmat = qmat[:, ::-1]
        if mu[-1] <= 0:
            skipped += 1
            continue
        gii = np.array([sigma(mu, n - k - 1, drop=(i,)) for i in range(n)])
        base = bstar(y0[None, :])[0]
        acc = 0.0
        bad = False
        for i in range(n):
            d = qmat[:, i] * step
            vp = bstar((y0 + d)[None, :])[0]
            vm = bstar((y0 - d)[None, :])[0]
            if not (np.isfinite(vp) and np.isfinite(vm) and np.isfinite(base)):
                bad = True
                break
            acc += gii[i] * (vp - 2 * base + vm) / step**2
        if bad:
            skipped += 1
            continue
        rows.append((acc + trial_cap, idx))
    if rows:
        min_margin, widx = min(rows, key=lambda r: r[0])
        witness = {"dual_node": [int(i) for i in widx], "margin": float(min_margin)}
        violations = sum(1 for m, _ in rows if m < 0)
    else:
        min_margin, witness, violations = float("nan"), {}, 0
    return MarginReport(
        which="dual-jacobi",
        n=n,
        k=k,
        count=len(rows),
        seed=0,
        min_margin=float(min_margin),
        violations=violations,
        empirical_constant=None,
        witness=witness,
        details={"skipped": skipped, "trial_cap": trial_cap},
    )


def divergence_residual(u: GridFunction, k: int, probe_points) -> dict:
    """Row-wise residual of the divergence-free structure of the sigma_k
    gradient field along a grid solution.

    At probe x and row i the residual is | sum_j d_j sigma_k^(ij)(D2u) |
    by central differences of the matrix-gradient field.  Rows whose
    stencil leaves the grid are skipped.
    """
    n = u.n
    if not 1 <= k <= n:
        raise ArgumentError(f"need 1 <= k <= n = {n}, got k = {k}")
    inner3 = u.interior_mask(3)
    rows = []

    def sigma_grad_matrix(idx):
        d2 = u.hessian(idx)
        w, v = np.linalg.eigh(d2)
        lam = w[::-1]
        q = v[:, ::-1]
        g = np.array([sigma(lam, k - 1, drop=(i,)) for i in range(n)])
        return (q * g) @ q.T

    for point in np.atleast_2d(np.asarray(probe_points, dtype=float)):
        idx = np.clip(
            np.round((np.asarray(point, dtype=float) - u.lo) / u.h).astype(int),
            0,
            np.array(u.dims) - 1,
        )
        if not inner3[tuple(idx)]:
            rows.append({"x": [float(v) for v in u.node_coord(idx)], "skipped": "stencil"})
            continue
        div = np.zeros(n)
        for j in range(n):
            e = np.zeros(n, dtype=int)
            e[j] = 1
            gp = sigma_grad_matrix(tuple(idx + e))
            gm = sigma_grad_matrix(tuple(idx - e))
            div += (gp[:, j] - gm[:, j]) / (2 * u.h)
        rows.append(
            {
                "x": [float(v) for v in u.node_coord(idx)],
                "residual": [float(abs(v)) for v in div],
                "max": float(np.max(np.abs(div))),
            }
        )
    done = [r for r in rows if "skipped" not in r]
    return {
        "rows": rows,
        "summary": {
            "checked": len(done),
            "skipped": len(rows) - len(done),
            "max_residual": max((r["max"] for r in done), default=float("nan")),
        },
    }


# ---------------------------------------------------------------------------
# seeded scans
# ---------------------------------------------------------------------------


@dataclass
class SampleConfig:
    """Sampling law for margin scans.

    Eigenvalues are drawn log-uniform in [lam_lo, lam_hi] and sorted
    non-increasing; directions uniform on the sphere.  For the threshold
    scan the top eigenvalue is replaced by

        lam_1 = ratio * max(1, sigma_k(tail), max(tail))

    which keeps the ordering and makes ``ratio`` the scanned quantity.
    Child generators seeded (seed, tag) per field keep prefixes stable
    when count grows.
    """

    which: str
    n: int
    k: int
    count: int = 10_000
    seed: int = 20250819
    lam_lo: float = 1e-3
    lam_hi: float = 1e3
    trial_c: float = 0.0
    xi_law: str = "mixed"
    ratio_grid: tuple[float, ...] = (1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8)

    def __post_init__(self):
        if self.which not in ("zhang-threshold", "guan-sroka-c"):
            raise ArgumentError(f"unknown scan mode {self.which!r}")
        if self.n < 2 or not 0 <= self.k <= self.n:
            raise ArgumentError(f"bad (n, k) = ({self.n}, {self.k})")
        if self.count < 1:
            raise ArgumentError("count must be positive")
        if not 0 < self.lam_lo < self.lam_hi:
            raise ArgumentError("need 0 < lam_lo < lam_hi")
        if self.xi_law not in ("sphere", "sparse", "mixed"):
            raise ArgumentError(f"unknown xi_law {self.xi_law!r}")


def _draw_spectra(cfg: SampleConfig, count: int, tag: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, tag])
    lo, hi = np.log10(cfg.lam_lo), np.log10(cfg.lam_hi)
    lam = 10.0 ** rng.uniform(lo, hi, size=(count, cfg.n))
    return np.sort(lam, axis=1)[:, ::-1]


def _sphere_directions(cfg: SampleConfig, count: int, tag: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, tag])
    v = rng.normal(size=(count, cfg.n))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def _sparse_directions(cfg: SampleConfig, count: int, tag: int) -> np.ndarray:
    """Directions supported on one or two coordinates, unit norm.

    Each random field comes from one array draw of its own child stream so
    that prefixes are stable under a larger count.
    """
    n = cfg.n
    u = np.random.default_rng([cfg.seed, tag, 0]).random(size=(count, 3))
    w = np.random.default_rng([cfg.seed, tag, 1]).normal(size=(count, 2))
    first = np.minimum((u[:, 0] * n).astype(int), n - 1)
    second = (first + 1 + np.minimum((u[:, 1] * (n - 1)).astype(int), n - 2)) % n
    two = u[:, 2] < 0.5
    out = np.zeros((count, n))
    rows = np.arange(count)
    out[rows, first] = w[:, 0]
    out[rows[two], second[two]] = w[two, 1]
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return out / norms


def _draw_directions(cfg: SampleConfig, count: int, tag: int) -> np.ndarray:
    """Direction samples; the mixed law interleaves by sample index so a
    prefix of a longer run matches a shorter run exactly."""
    if cfg.xi_law == "sphere":
        return _sphere_directions(cfg, count, tag)
    if cfg.xi_law == "sparse":
        return _sparse_directions(cfg, count, tag)
    n_even = (count + 1) // 2
    n_odd = count // 2
    sph = _sphere_directions(cfg, n_even, tag)
    spr = _sparse_directions(cfg, max(n_odd, 1), tag + 50)
    out = np.empty((count, cfg.n))
    out[0::2] = sph
    out[1::2] = spr[:n_odd]
    return out


def _force_top(lam: np.ndarray, k: int, ratio: float) -> np.ndarray:
    tail = lam[:, 1:]
    sk_tail = _sigma_batch(tail, k)
    top = ratio * np.maximum.reduce(
        [np.ones(lam.shape[0]), sk_tail, tail.max(axis=1)]
    )
    out = lam.copy()
    out[:, 0] = top
    return out


def estimate_constants(config: SampleConfig, which: str | None = None) -> MarginReport:
    """Seeded scan dispatcher.

    Mode ``guan-sroka-c``: draws samples on the positive cone, evaluates
    the quotient concavity margin at trial_c = 0, and fits the empirical
    surplus constant as the infimum of the per-sample surplus ratio.

    Mode ``zhang-threshold``: walks ratio_grid upward, drawing ``count``
    samples per ratio with the top eigenvalue forced, and returns the
    smallest ratio from which no violations occur onward; the witness is
    the worst sample at that ratio.  Reports the witness ratio in three
    normalizations (raw top, top over max(1, sigma_k), top over
    sigma_k^(1/k)) in the details.
    """
    cfg = config
    if which is not None and which != cfg.which:
        cfg = dataclasses.replace(cfg, which=which)
    if cfg.which == "guan-sroka-c":
        if not 1 <= cfg.k < cfg.n:
            raise ArgumentError("guan-sroka-c needs 1 <= k < n")
        lam = _draw_spectra(cfg, cfg.count, tag=1)
        xi = _draw_directions(cfg, cfg.count, tag=2)
        margin, scale, ratio = _guan_sroka_batch(lam, xi, cfg.k, trial_c=0.0)
        violations = int(np.sum(margin < -VIOLATION_RTOL * scale))
        arg = int(np.argmin(margin / scale))
        emp = float(np.min(ratio[np.isfinite(ratio)]))
        witness = {
            "spectrum": [float(v) for v in lam[arg]],
            "xi": [float(v) for v in xi[arg]],
            "margin": float(margin[arg]),
            "scale": float(scale[arg]),
        }
        return MarginReport(
            which=cfg.which,
            n=cfg.n,
            k=cfg.k,
            count=cfg.count,
            seed=cfg.seed,
            min_margin=float(np.min(margin)),
            violations=violations,
            empirical_constant=emp,
            witness=witness,
            details={"normalized_min": float(np.min(margin / scale))},
        )

    # zhang-threshold
    if not 1 < cfg.k < cfg.n:
        raise ArgumentError("zhang-threshold needs 1 < k < n")
    per_ratio = []
    for ridx, ratio in enumerate(cfg.ratio_grid):
        lam = _force_top(_draw_spectra(cfg, cfg.count, tag=100 + ridx), cfg.k, ratio)
        xi = _draw_directions(cfg, cfg.count, tag=200 + ridx)
        margin, scale = _zhang_batch(lam, xi, cfg.k)
        viol = int(np.sum(margin < -VIOLATION_RTOL * scale))
        arg = int(np.argmin(margin / scale))
        per_ratio.append(
            {
                "ratio": float(ratio),
                "violations": viol,
                "min_margin": float(np.min(margin)),
                "argmin": (lam[arg], xi[arg], float(margin[arg]), float(scale[arg])),
            }
        )
    threshold = None
    for i, row in enumerate(per_ratio):
        if all(r["violations"] == 0 for r in per_ratio[i:]):
            threshold = row
            break
    if threshold is None:
        witness = {}
        emp = None
        min_margin = min(r["min_margin"] for r in per_ratio)
        violations = sum(r["violations"] for r in per_ratio)
    else:
        wl, wx, wm, ws = threshold["argmin"]
        sk_full = float(_sigma_batch(wl[None, :], cfg.k)[0])
        witness = {
            "spectrum": [float(v) for v in wl],
            "xi": [float(v) for v in wx],
            "margin": wm,
            "scale": ws,
            "top_over_sigma_k": float(wl[0] / max(1.0, sk_full)),
            "top_raw": float(wl[0]),
            "top_over_sigma_k_root": float(wl[0] / sk_full ** (1.0 / cfg.k)),
        }
        emp = threshold["ratio"]
        min_margin = threshold["min_margin"]
        violations = threshold["violations"]
    return MarginReport(
        which=cfg.which,
        n=cfg.n,
        k=cfg.k,
        count=cfg.count * len(cfg.ratio_grid),
        seed=cfg.seed,
        min_margin=float(min_margin),
        violations=violations,
        empirical_constant=emp,
        witness=witness,
        details={
            "per_ratio": [
                {kk: r[kk] for kk in ("ratio", "violations", "min_margin")}
                for r in per_ratio
            ]
        },
    )
