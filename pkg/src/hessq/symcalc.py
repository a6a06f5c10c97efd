"""Elementary symmetric functions and quotient-operator derivative tensors.

Everything downstream (margin scans, solvers, barriers) reduces to a small
calculus on the spectrum lam = (lam_1 >= ... >= lam_n):

    sigma_k(lam)        k-th elementary symmetric function, sigma_0 = 1
    sigma_k(lam | I)    same with the entries indexed by I deleted
    quotient(lam, k)    sigma_n(lam) / sigma_k(lam)

First and second derivatives of sigma_k with respect to the matrix argument,
evaluated at a diagonal point, are deletion polynomials:

    d sigma_k / d m_pp          = sigma_{k-1}(lam | p)
    d^2 sigma_k / d m_pp d m_rr = sigma_{k-2}(lam | pr)        (p != r)
    d^2 sigma_k / d m_pq d m_qp = -sigma_{k-2}(lam | pq)       (p != q)

and the off-diagonal second derivative also has the divided-difference form
(sigma_k^(pp) - sigma_k^(qq)) / (lam_q - lam_p), which this module checks but
never uses near coincident eigenvalues: the deletion form is exact there.

The quotient operator's tensors follow by the product rule and are assembled
in ``hq_derivatives``.  All evaluation uses the one-pass recurrence

    e_j <- e_j + x * e_{j-1}    (j descending)

so a full prefix of sigma values costs O(n k) with no subset enumeration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegeneracyError, DomainError

__all__ = [
    "Spectrum",
    "SymMatrix",
    "DerivativeTensors",
    "HqDerivatives",
    "sigma",
    "sigma_prefix",
    "in_gamma_cone",
    "verify_sigma_identities",
    "sigma_derivatives",
    "hq_derivatives",
    "quotient",
    "eigen_descending",
]

# Gap below which the divided-difference identity is not asserted against the
# deletion form (relative to the top eigenvalue).
_QUOTIENT_GAP = 1e-8


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalue vector, sorted descending on construction.

    Entries must be finite and there must be at least two of them.  The
    stored array is read-only; treat a Spectrum as a value.
    """

    values: np.ndarray

    def __init__(self, values) -> None:
        arr = np.asarray(values, dtype=float).ravel()
        if arr.size < 2:
            raise ArgumentError(f"spectrum needs n >= 2 entries, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("spectrum entries must be finite")
        arr = np.sort(arr)[::-1].copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return self.values.size

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, i):
        return self.values[i]


def _as_values(spectrum) -> np.ndarray:
    """Accept a Spectrum or any 1-d array-like; return a float ndarray."""
    if isinstance(spectrum, Spectrum):
        return spectrum.values
    arr = np.asarray(spectrum, dtype=float).ravel()
    if arr.size < 2:
        raise ArgumentError(f"spectrum needs n >= 2 entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError("spectrum entries must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """Symmetric matrix with validation at construction.

    Symmetry is required within 1e-12 * (1 + max |entry|); the stored matrix
    is the symmetrized copy, so downstream eigendecompositions never see the
    asymmetric noise.
    """

    mat: np.ndarray

    def __init__(self, mat) -> None:
        arr = np.asarray(mat, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ArgumentError(f"expected a square matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("matrix entries must be finite")
        scale = 1.0 + np.max(np.abs(arr)) if arr.size else 1.0
        if np.max(np.abs(arr - arr.T)) > 1e-12 * scale:
            raise ArgumentError("matrix is not symmetric within tolerance")
        sym = 0.5 * (arr + arr.T)
        sym.flags.writeable = False
        object.__setattr__(self, "mat", sym)

    @property
    def n(self) -> int:
        return self.mat.shape[0]


def _as_matrix(mat) -> np.ndarray:
    if isinstance(mat, SymMatrix):
        return mat.mat
    return SymMatrix(mat).mat


def sigma_prefix(values: np.ndarray, kmax: int) -> np.ndarray:
    """All sigma_j for j = 0..kmax of a plain value array, by the one-pass
    recurrence.  Returns an array of length kmax + 1 with sigma_0 = 1."""
    e = np.zeros(kmax + 1)
    e[0] = 1.0
    top = 0
    for x in values:
        top = min(top + 1, kmax)
        for j in range(top, 0, -1):
            e[j] += x * e[j - 1]
    return e


def sigma(spectrum, k: int, drop: tuple[int, ...] = ()) -> float:
    """sigma_k of the spectrum with the positions in ``drop`` deleted.

    ``drop`` holds 0-based positions into the spectrum as given.  Plain
    arrays keep the caller's ordering; Spectrum instances are descending by
    construction.  Out-of-range k follows the usual convention: sigma_0 = 1
    and sigma_k = 0 whenever k < 0 or k exceeds the surviving entry count.
    """
    lam = _as_values(spectrum)
    n = lam.size
    if drop:
        dset = set(int(i) for i in drop)
        if len(dset) != len(drop):
            raise ArgumentError(f"duplicate drop positions: {drop}")
        for i in dset:
            if not 0 <= i < n:
                raise ArgumentError(f"drop position {i} outside 0..{n - 1}")
        keep = [i for i in range(n) if i not in dset]
        lam = lam[keep]
    if k < 0 or k > lam.size:
        return 0.0
    if k == 0:
        return 1.0
    return float(sigma_prefix(lam, k)[k])


def quotient(spectrum, k: int) -> float:
    """sigma_n / sigma_k of the spectrum; requires sigma_k != 0 and k < n."""
    lam = _as_values(spectrum)
    n = lam.size
    if not 0 <= k < n:
        raise ArgumentError(f"need 0 <= k < n = {n}, got k = {k}")
    sk = sigma(lam, k)
    if sk == 0.0:
        raise DegeneracyError("sigma_k vanishes; quotient undefined")
    return sigma(lam, n) / sk


def in_gamma_cone(spectrum, k: int) -> bool:
    """True when sigma_j(lam) > 0 strictly for every j = 1..k."""
    lam = _as_values(spectrum)
    if not 1 <= k <= lam.size:
        raise ArgumentError(f"need 1 <= k <= n = {lam.size}, got k = {k}")
    e = sigma_prefix(lam, k)
    return bool(np.all(e[1 : k + 1] > 0.0))


def verify_sigma_identities(spectrum, k: int) -> dict[str, float]:
    """Scale-normalized residuals of the classical deletion identities.

    Returned keys:

    ``split``
        sigma_k = lam_i sigma_{k-1}(lam|i) + sigma_k(lam|i), worst i.
    ``deleted_sum``
        sum_i sigma_k(lam|i) = (n - k) sigma_k.
    ``weighted_sum``
        sum_i lam_i sigma_{k-1}(lam|i) = k sigma_k.
    ``square_weighted_sum``
        sum_i lam_i^2 sigma_{k-1}(lam|i) = sigma_1 sigma_k - (k+1) sigma_{k+1}.
    ``newton_margin``
        (sigma_{k-1}^2 - sigma_k sigma_{k-2}) / scale, nonnegative for
        positive spectra.  This entry is a margin, not a residual.

    Residuals are |lhs - rhs| / max(1, |lhs|, |rhs|) so tolerances can be
    quoted independently of the spectrum's magnitude.
    """
    lam = _as_values(spectrum)
    n = lam.size
    if not 1 <= k <= n:
        raise ArgumentError(f"need 1 <= k <= n = {n}, got k = {k}")

    sk = sigma(lam, k)
    sk1 = sigma(lam, k + 1)
    s1 = sigma(lam, 1)
    del_k = np.array([sigma(lam, k, drop=(i,)) for i in range(n)])
    del_km1 = np.array([sigma(lam, k - 1, drop=(i,)) for i in range(n)])

    def rel(lhs: float, rhs: float) -> float:
        return abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))

    split = max(rel(sk, lam[i] * del_km1[i] + del_k[i]) for i in range(n))
    deleted_sum = rel(float(np.sum(del_k)), (n - k) * sk)
    weighted = rel(float(np.dot(lam, del_km1)), k * sk)
    square_weighted = rel(float(np.dot(lam**2, del_km1)), s1 * sk - (k + 1) * sk1)

    skm1 = sigma(lam, k - 1)
    skm2 = sigma(lam, k - 2)
    nm_raw = skm1 * skm1 - sk * skm2
    nm_scale = max(1.0, abs(skm1 * skm1), abs(sk * skm2))

    return {
        "split": split,
        "deleted_sum": deleted_sum,
        "weighted_sum": weighted,
        "square_weighted_sum": square_weighted,
        "newton_margin": nm_raw / nm_scale,
    }


@dataclass(frozen=True, eq=False)
class DerivativeTensors:
    """First and second derivatives of sigma_k at a diagonal point.

    grad[p] is sigma_{k-1}(lam|p).  hess_diag[p, r] is the derivative with
    respect to two diagonal entries, sigma_{k-2}(lam|pr) off the diagonal and
    zero on it.  hess_off[p, q] is the paired off-diagonal second derivative,
    -sigma_{k-2}(lam|pq) off the diagonal and zero on it.
    """

    k: int
    value: float
    grad: np.ndarray
    hess_diag: np.ndarray
    hess_off: np.ndarray


def sigma_derivatives(spectrum, k: int) -> DerivativeTensors:
    """Deletion-polynomial derivative tensors of sigma_k at the spectrum.

    Always uses the deletion form; near-coincident eigenvalues therefore
    cost nothing in accuracy.  The divided-difference identity

        -hess_off[p, q] * (lam_q - lam_p) = grad[p] - grad[q]

    is asserted only across pairs whose gap exceeds a relative threshold,
    and a failure raises DegeneracyError since it indicates corrupt input.
    """
    lam = _as_values(spectrum)
    n = lam.size
    if not 0 <= k <= n:
        raise ArgumentError(f"need 0 <= k <= n = {n}, got k = {k}")

    grad = np.array([sigma(lam, k - 1, drop=(i,)) for i in range(n)])
    hess_diag = np.zeros((n, n))
    hess_off = np.zeros((n, n))
    for p in range(n):
        for q in range(p + 1, n):
            d = sigma(lam, k - 2, drop=(p, q))
            hess_diag[p, q] = hess_diag[q, p] = d
            hess_off[p, q] = hess_off[q, p] = -d

    top = max(1.0, float(np.max(np.abs(lam))))
    for p in range(n):
        for q in range(p + 1, n):
            gap = lam[q] - lam[p]
            if abs(gap) > _QUOTIENT_GAP * top:
                dd = (grad[p] - grad[q]) / gap
                ref = max(1.0, abs(dd), abs(hess_off[p, q]))
                if abs(-hess_off[p, q] - dd) > 1e-8 * ref:
                    raise DegeneracyError(
                        f"divided-difference check failed at pair ({p}, {q})"
                    )

    return DerivativeTensors(
        k=k, value=sigma(lam, k), grad=grad, hess_diag=hess_diag, hess_off=hess_off
    )


@dataclass(frozen=True, eq=False)
class HqDerivatives:
    """Derivative tensors of the quotient sigma_n / sigma_k on the cone.

    grad[p] is the diagonal first derivative.  hess_diag[p, r] is the second
    derivative with respect to diagonal entries p and r, including the p = r
    case on its diagonal.  hess_off[p, q] is the paired off-diagonal second
    derivative for p != q, zero on the diagonal.  divcoef[i] stores
    f * sigma_k(lam|i) / lam_i, the divergence-structure coefficient equal to
    sigma_k * grad[i] when f is the quotient value itself.
    """

    k: int
    value: float
    grad: np.ndarray
    hess_diag: np.ndarray
    hess_off: np.ndarray
    divcoef: np.ndarray


def hq_derivatives(spectrum, k: int, f_at_point: float | None = None) -> HqDerivatives:
    """Assemble quotient-operator tensors from the sigma deletion tensors.

    The spectrum must lie in the positive cone (every entry > 0) and k < n.
    When ``f_at_point`` is given (the equation's right-hand side at the
    point), it replaces the computed quotient value inside divcoef; this is
    what solver-side users want, since there the two agree only up to the
    discretization residual.
    """
    lam = _as_values(spectrum)
    n = lam.size
    if not 0 <= k < n:
        raise ArgumentError(f"need 0 <= k < n = {n}, got k = {k}")
    if np.min(lam) <= 0.0:
        raise DomainError("spectrum must be strictly positive for the quotient")

    dn = sigma_derivatives(lam, n)
    dk = sigma_derivatives(lam, k)
    sn, sk = dn.value, dk.value
    if sk == 0.0:
        raise DegeneracyError("sigma_k vanishes on a positive spectrum input")
    F = sn / sk

    grad = dn.grad / sk - sn * dk.grad / sk**2

    hess_diag = np.zeros((n, n))
    for p in range(n):
        for r in range(n):
            if p == r:
                hess_diag[p, p] = (
                    -2.0 * dn.grad[p] * dk.grad[p] / sk**2
                    + 2.0 * sn * dk.grad[p] ** 2 / sk**3
                )
            else:
                hess_diag[p, r] = (
                    dn.hess_diag[p, r] / sk
                    - dn.grad[p] * dk.grad[r] / sk**2
                    - dn.grad[r] * dk.grad[p] / sk**2
                    - sn * dk.hess_diag[p, r] / sk**2
                    + 2.0 * sn * dk.grad[p] * dk.grad[r] / sk**3
                )

    hess_off = np.zeros((n, n))
    for p in range(n):
        for q in range(n):
            if p != q:
                hess_off[p, q] = dn.hess_off[p, q] / sk - sn * dk.hess_off[p, q] / sk**2

    f_val = F if f_at_point is None else float(f_at_point)
    divcoef = np.array(
        [f_val * sigma(lam, k, drop=(i,)) / lam[i] for i in range(n)]
    )

    return HqDerivatives(
        k=k, value=F, grad=grad, hess_diag=hess_diag, hess_off=hess_off, divcoef=divcoef
    )


def eigen_descending(mat) -> tuple[Spectrum, np.ndarray]:
    """Spectral decomposition with eigenvalues sorted descending.

    Returns (spectrum, Q) with Q's columns the matching eigenvectors, so
    Q @ diag(spectrum) @ Q.T reconstructs the input.  A conditioning warning
    is emitted when the smallest gap falls under 1e-9 relative to the top
    eigenvalue magnitude; derivative tensors built on the deletion form stay
    valid, but anything using divided differences should not trust the frame.
    """
    arr = _as_matrix(mat)
    w, v = np.linalg.eigh(arr)
    lam = w[::-1].copy()
    q = v[:, ::-1].copy()
    top = max(1.0, float(np.max(np.abs(lam))))
    gaps = np.diff(lam)
    if gaps.size and np.max(gaps) > -1e-9 * top:
        warnings.warn(
            "near-coincident eigenvalues; eigenframe is ill conditioned",
            RuntimeWarning,
            stacklevel=2,
        )
    return Spectrum(lam), q
