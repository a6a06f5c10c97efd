"""Spectral calculus tests.

The reference implementation here is deliberately naive: sigma_k by explicit
subset enumeration, derivatives by central differences in matrix space.  The
package code must agree with these oracles; it never shares code with them.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessq.errors import ArgumentError, DegeneracyError, DomainError
from hessq.symcalc import (
    DerivativeTensors,
    Spectrum,
    SymMatrix,
    eigen_descending,
    hq_derivatives,
    in_gamma_cone,
    quotient,
    sigma,
    sigma_derivatives,
    verify_sigma_identities,
)


def sigma_bruteforce(values, k):
    """Subset-enumeration sigma_k, the independent oracle."""
    values = list(values)
    if k < 0 or k > len(values):
        return 0.0
    if k == 0:
        return 1.0
    return sum(
        float(np.prod([values[i] for i in subset]))
        for subset in itertools.combinations(range(len(values)), k)
    )


def test_sigma_frozen_values():
    assert sigma((1.0, 2.0, 3.0, 4.0), 3) == pytest.approx(50.0, abs=0.0)
    # deleting the leading (largest) entry of (3, 2, 1)
    assert sigma((3.0, 2.0, 1.0), 2, drop=(0,)) == pytest.approx(2.0, abs=0.0)
    assert sigma((3.0, 2.0, 1.0), 0) == 1.0
    assert sigma((3.0, 2.0, 1.0), 4) == 0.0
    assert sigma((3.0, 2.0, 1.0), -1) == 0.0


def test_sigma_against_bruteforce_random():
    rng = np.random.default_rng(71)
    for n in range(2, 9):
        for _ in range(40):
            lam = rng.uniform(-3.0, 3.0, size=n)
            for k in range(0, n + 1):
                ref = sigma_bruteforce(lam, k)
                got = sigma(lam, k)
                assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_sigma_deletion_against_bruteforce():
    rng = np.random.default_rng(3)
    for _ in range(25):
        lam = np.sort(rng.uniform(0.1, 4.0, size=5))[::-1]
        for i, j in itertools.combinations(range(5), 2):
            keep = [lam[t] for t in range(5) if t not in (i, j)]
            for k in range(0, 4):
                assert sigma(lam, k, drop=(i, j)) == pytest.approx(
                    sigma_bruteforce(keep, k), rel=1e-12, abs=1e-12
                )


def test_sigma_input_validation():
    with pytest.raises(ArgumentError):
        sigma((1.0,), 1)
    with pytest.raises(ArgumentError):
        sigma((1.0, np.nan), 1)
    with pytest.raises(ArgumentError):
        sigma((1.0, 2.0), 1, drop=(0, 0))
    with pytest.raises(ArgumentError):
        sigma((1.0, 2.0), 1, drop=(5,))


def test_spectrum_sorts_descending():
    s = Spectrum([1.0, 3.0, 2.0])
    assert np.array_equal(s.values, [3.0, 2.0, 1.0])
    assert s.n == 3
    with pytest.raises(ArgumentError):
        Spectrum([1.0])


def test_gamma_cone_membership():
    # sigma_2(1, 1, -1/2) = 1 - 1/2 - 1/2 = 0, boundary point excluded
    assert not in_gamma_cone((1.0, 1.0, -0.5), 2)
    assert in_gamma_cone((1.0, 1.0, -0.5), 1)
    assert in_gamma_cone((3.0, 2.0, 1.0), 3)
    assert not in_gamma_cone((-1.0, -2.0, -3.0), 1)


def test_identity_residuals_hand_case():
    # spectrum (3, 2, 1), k = 2: both sides of the square-weighted identity
    # evaluate to 48 by hand arithmetic
    lam = (3.0, 2.0, 1.0)
    lhs = sum(
        lam[i] ** 2 * sigma(lam, 1, drop=(i,)) for i in range(3)
    )
    rhs = sigma(lam, 1) * sigma(lam, 2) - 3.0 * sigma(lam, 3)
    assert lhs == pytest.approx(48.0, abs=0.0)
    assert rhs == pytest.approx(48.0, abs=0.0)
    res = verify_sigma_identities(lam, 2)
    for name in ("split", "deleted_sum", "weighted_sum", "square_weighted_sum"):
        assert res[name] <= 1e-15, name
    assert res["newton_margin"] >= 0.0


@settings(max_examples=200, deadline=None)
@given(
    st.integers(min_value=2, max_value=6).flatmap(
        lambda n: st.tuples(
            st.lists(
                st.floats(min_value=0.01, max_value=100.0),
                min_size=n,
                max_size=n,
            ),
            st.integers(min_value=1, max_value=n),
        )
    )
)
def test_identities_hold_on_positive_spectra(case):
    lam, k = case
    res = verify_sigma_identities(lam, k)
    for name in ("split", "deleted_sum", "weighted_sum", "square_weighted_sum"):
        assert res[name] <= 1e-10, (name, lam, k)
    assert res["newton_margin"] >= -1e-10


def test_identities_hold_off_the_cone_too():
    # the four identities are polynomial, so signs must not matter
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 7))
        lam = rng.uniform(-5.0, 5.0, size=n)
        k = int(rng.integers(1, n + 1))
        res = verify_sigma_identities(lam, k)
        for name in ("split", "deleted_sum", "weighted_sum", "square_weighted_sum"):
            assert res[name] <= 1e-10


def test_sigma_derivatives_hand_case():
    # plain arrays keep the caller's index order; only Spectrum re-sorts
    t = sigma_derivatives((1.0, 2.0, 3.0), 2)
    assert np.allclose(t.grad, [5.0, 4.0, 3.0], rtol=0, atol=0)
    assert t.value == pytest.approx(11.0, abs=0.0)
    assert t.hess_diag[0, 1] == 1.0 and t.hess_diag[0, 0] == 0.0
    assert t.hess_off[0, 1] == -1.0 and t.hess_off[0, 0] == 0.0
    # divided-difference form against the deletion form
    lam = (1.0, 2.0, 3.0)
    dd = (t.grad[0] - t.grad[1]) / (lam[1] - lam[0])
    assert -t.hess_off[0, 1] == pytest.approx(dd, rel=1e-15)


def _fd_eigen_grad(lam, k, h=1e-6):
    lam = np.asarray(lam, dtype=float)
    out = np.zeros_like(lam)
    for p in range(lam.size):
        e = np.zeros_like(lam)
        e[p] = h
        out[p] = (sigma_bruteforce(lam + e, k) - sigma_bruteforce(lam - e, k)) / (2 * h)
    return out


def _fd_matrix_second(lam, k, p, q, h=1e-4):
    """d^2/dt^2 sigma_k(diag(lam) + t S_pq) at t = 0, S_pq symmetric unit."""
    lam = np.asarray(lam, dtype=float)
    n = lam.size
    s = np.zeros((n, n))
    s[p, q] = s[q, p] = 1.0
    def val(t):
        return sigma_bruteforce(np.linalg.eigvalsh(np.diag(lam) + t * s), k)
    return (val(h) - 2.0 * val(0.0) + val(-h)) / h**2


def test_sigma_derivatives_against_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(10):
        n = int(rng.integers(3, 6))
        lam = np.sort(rng.uniform(0.5, 3.0, size=n))[::-1]
        # keep gaps honest so the FD eigenframe is stable
        lam += np.arange(n)[::-1] * 0.3
        for k in range(1, n + 1):
            t = sigma_derivatives(lam, k)
            fd_grad = _fd_eigen_grad(lam, k)
            assert np.allclose(t.grad, fd_grad, rtol=1e-6, atol=1e-6)
            for p in range(n):
                for q in range(p + 1, n):
                    fd = _fd_matrix_second(lam, k, p, q)
                    assert 2.0 * t.hess_off[p, q] == pytest.approx(
                        fd, rel=2e-4, abs=2e-4
                    )


def test_hq_derivatives_hand_case():
    d = hq_derivatives((2.0, 1.0), 1)
    assert d.value == pytest.approx(2.0 / 3.0, rel=1e-15)
    assert np.allclose(d.grad, [1.0 / 9.0, 4.0 / 9.0], rtol=1e-14)
    assert np.allclose(d.divcoef, [1.0 / 3.0, 4.0 / 3.0], rtol=1e-14)
    # divcoef must match sigma_k * grad when no external f is supplied
    assert np.allclose(d.divcoef, 3.0 * d.grad, rtol=1e-14)


def test_hq_divcoef_consistency_random():
    rng = np.random.default_rng(19)
    for _ in range(50):
        n = int(rng.integers(2, 7))
        lam = rng.uniform(0.05, 5.0, size=n)
        k = int(rng.integers(0, n))
        d = hq_derivatives(lam, k)
        sk = sigma(lam, k)
        assert np.allclose(d.divcoef, sk * d.grad, rtol=1e-10, atol=1e-12)
        d2 = hq_derivatives(lam, k, f_at_point=2.0 * d.value)
        assert np.allclose(d2.divcoef, 2.0 * d.divcoef, rtol=1e-12)


def _fd_quotient_eigen_hess(lam, n, k, p, r, h=1e-4):
    lam = np.asarray(lam, dtype=float)
    def val(t_p, t_r):
        mod = lam.copy()
        mod[p] += t_p
        mod[r] += t_r
        return sigma_bruteforce(mod, n) / sigma_bruteforce(mod, k)
    if p == r:
        return (val(h, 0) - 2 * val(0, 0) + val(-h, 0)) / h**2
    return (
        val(h, h) - val(h, -h) - val(-h, h) + val(-h, -h)
    ) / (4 * h**2)


def test_hq_derivatives_against_finite_differences():
    rng = np.random.default_rng(23)
    for _ in range(8):
        n = int(rng.integers(3, 6))
        lam = np.sort(rng.uniform(0.5, 3.0, size=n))[::-1] + np.arange(n)[::-1] * 0.25
        for k in range(0, n):
            d = hq_derivatives(lam, k)
            for p in range(n):
                e = np.zeros(n)
                e[p] = 1e-5
                fd = (
                    sigma_bruteforce(lam + e, n) / sigma_bruteforce(lam + e, k)
                    - sigma_bruteforce(lam - e, n) / sigma_bruteforce(lam - e, k)
                ) / 2e-5
                assert d.grad[p] == pytest.approx(fd, rel=1e-5, abs=1e-8)
                for r in range(n):
                    fd2 = _fd_quotient_eigen_hess(lam, n, k, p, r)
                    assert d.hess_diag[p, r] == pytest.approx(fd2, rel=2e-4, abs=2e-6)


def test_hq_off_diagonal_quotient_identity():
    # -hess_off[p, q] = (grad[p] - grad[q]) / (lam_q - lam_p) away from ties
    rng = np.random.default_rng(29)
    for _ in range(40):
        n = int(rng.integers(2, 6))
        lam = np.sort(rng.uniform(0.2, 4.0, size=n))[::-1] + np.arange(n)[::-1] * 0.2
        k = int(rng.integers(0, n))
        d = hq_derivatives(lam, k)
        for p in range(n):
            for q in range(p + 1, n):
                dd = (d.grad[p] - d.grad[q]) / (lam[q] - lam[p])
                assert -d.hess_off[p, q] == pytest.approx(dd, rel=1e-9, abs=1e-12)


def test_hq_requires_positive_cone():
    with pytest.raises(DomainError):
        hq_derivatives((2.0, -1.0), 1)
    with pytest.raises(ArgumentError):
        hq_derivatives((2.0, 1.0), 2)


def test_quotient_basic():
    assert quotient((2.0, 1.0), 1) == pytest.approx(2.0 / 3.0, rel=1e-15)
    with pytest.raises(DegeneracyError):
        quotient((1.0, -1.0), 1)


def test_symmatrix_validation():
    with pytest.raises(ArgumentError):
        SymMatrix([[0.0, 1.0], [0.0, 0.0]])
    m = SymMatrix([[2.0, 0.5], [0.5, 1.0]])
    assert m.n == 2
    with pytest.raises(ArgumentError):
        SymMatrix(np.ones((2, 3)))


def test_eigen_descending_reconstructs():
    rng = np.random.default_rng(31)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        a = rng.normal(size=(n, n))
        m = a + a.T
        spec, q = eigen_descending(m)
        assert np.all(np.diff(spec.values) <= 1e-12)
        rebuilt = q @ np.diag(spec.values) @ q.T
        assert np.allclose(rebuilt, m, atol=1e-10)


def test_eigen_descending_warns_on_ties():
    with pytest.warns(RuntimeWarning):
        eigen_descending(np.eye(3))
