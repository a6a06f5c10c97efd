"""Discrete Legendre transform tests.

Closed forms used as oracles: the conjugate of a positive quadratic
0.5 x^T A x + b . x is 0.5 (y - b)^T A^{-1} (y - b), and the gradient map
is y = A x + b.  Everything else is checked by refinement ratios.
"""

import numpy as np
import pytest

from hessq.errors import ArgumentError, DomainError
from hessq.grid import GridFunction
from hessq.legendre import discrete_legendre, dual_checks, pushforward_check


def quad_factory(diag, b=None):
    d = np.asarray(diag, dtype=float)
    off = np.zeros(d.size) if b is None else np.asarray(b, dtype=float)

    def f(pts):
        return 0.5 * np.sum(d * pts**2, axis=1) + pts @ off

    return f


def quartic2(pts):
    r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
    return 0.5 * r2 + 0.25 * (
        pts[:, 0] ** 4 + pts[:, 1] ** 4 + pts[:, 0] ** 2 * pts[:, 1] ** 2
    )


def test_transform_quadratic_matches_closed_form():
    u = GridFunction.from_callable(quad_factory([1.0, 1.0]), [-1, -1], [1, 1], 41)
    pair = discrete_legendre(u, dual_resolution=31)
    w = pair.dual
    ok = ~pair.extrapolated
    ygrid = w.coords_flat().reshape(w.dims + (2,))
    exact = 0.5 * np.sum(ygrid**2, axis=-1)
    gap = exact - w.values
    # plain maximum under-estimates by at most the sampling gap
    assert np.all(gap[ok] >= -1e-12)
    assert np.max(np.abs(gap[ok])) <= u.h**2


def test_fenchel_inequality_and_touching():
    u = GridFunction.from_callable(quad_factory([2.0, 0.5]), [-1, -1], [1, 1], 33)
    pair = discrete_legendre(u, dual_resolution=25)
    w = pair.dual
    ygrid = w.coords_flat()
    scores = ygrid @ pair.x_nodes.T - pair._node_u[None, :]
    assert np.min(w.values.ravel()[:, None] - scores) >= -1e-12
    # equality within 2h(1 + |y|) at y = Du(x) for interior x
    inner = u.interior_mask(1)
    idxs = np.argwhere(inner)[:: max(1, inner.sum() // 50)]
    for idx in map(tuple, idxs):
        x = u.node_coord(idx)
        y = u.gradient(idx)
        wv, _ = pair.conjugate(y[None, :])
        gap = wv[0] - (x @ y - float(u.values[idx]))
        assert -1e-12 <= gap <= 2 * u.h * (1 + np.linalg.norm(y))


def test_round_trip_and_monotone_map():
    u = GridFunction.from_callable(quad_factory([1.5, 0.8]), [-1, -1], [1, 1], 33)
    pair = discrete_legendre(u, dual_resolution=25)
    inner = u.interior_mask(1)
    idxs = [tuple(t) for t in np.argwhere(inner)[:: inner.sum() // 20]]
    xs = np.array([u.node_coord(i) for i in idxs])
    ys = np.array([u.gradient(i) for i in idxs])
    back = pair.inverse_map(ys)
    assert np.max(np.abs(back - xs)) <= u.h
    # monotonicity of the sampled gradient map, delta = min eigenvalue
    delta = 0.8
    rng = np.random.default_rng(2)
    for _ in range(200):
        a, b = rng.integers(0, len(idxs), size=2)
        if a == b:
            continue
        lhs = (ys[a] - ys[b]) @ (xs[a] - xs[b])
        assert lhs >= delta * np.sum((xs[a] - xs[b]) ** 2) - 10 * u.h


def test_involution_returns_original():
    u = GridFunction.from_callable(quad_factory([1.0, 2.0]), [-1, -1], [1, 1], 41)
    pair = discrete_legendre(u, dual_resolution=41)
    back = discrete_legendre(pair.dual, dual_resolution=41)
    # compare the double transform against u at its own nodes
    w2 = back.dual
    inner = u.interior_mask(1)
    pts = u.coords_flat()[inner.ravel()]
    vals, _ = back.conjugate(pts)
    ref = u.values[inner]
    assert np.max(np.abs(vals - ref)) <= 2.0 * u.h
    assert w2.n == u.n


def test_severely_nonconvex_rejected():
    def bad(pts):
        return -0.5 * np.sum(pts**2, axis=1)

    u = GridFunction.from_callable(bad, [-1, -1], [1, 1], 17)
    with pytest.raises(DomainError):
        discrete_legendre(u, dual_resolution=9)


def test_dual_resolution_validated():
    u = GridFunction.from_callable(quad_factory([1.0, 1.0]), [-1, -1], [1, 1], 9)
    with pytest.raises(ArgumentError):
        discrete_legendre(u, dual_resolution=2)


def test_dual_checks_anisotropic_quadratic():
    u = GridFunction.from_callable(
        quad_factory([1.0, 2.0, 3.0]), [-1, -1, -1], [1, 1, 1], 21
    )
    pair = discrete_legendre(u, dual_resolution=15)
    rep = dual_checks(pair, k=1, probe_points=[[0.0, 0.0, 0.0], [0.2, -0.1, 0.1]])
    s = rep["summary"]
    assert s["checked"] == 2 and s["skipped"] == 0
    assert s["max_inv"] <= u.h
    assert s["max_quot"] <= u.h
    assert s["max_gii"] <= u.h


def test_dual_checks_refinement_factor_on_quartic():
    # residuals on a smooth quartic perturbation must drop by >= 3 per halving
    prev = None
    for res in (33, 65, 129):
        u = GridFunction.from_callable(quartic2, [-1, -1], [1, 1], res)
        pair = discrete_legendre(u, dual_resolution=res // 2)
        rep = dual_checks(
            pair, k=1, probe_points=[[0.1, 0.05], [-0.2, 0.3], [0.0, 0.0]]
        )
        cur = rep["summary"]["max_quot"]
        if prev is not None:
            assert prev / cur >= 3.0, (prev, cur)
        prev = cur


def test_gii_identity_exercised_in_three_dims():
    def u3(p):
        return 0.5 * (p[:, 0] ** 2 + 1.5 * p[:, 1] ** 2 + 2.2 * p[:, 2] ** 2) + 0.15 * (
            p[:, 0] ** 4 + p[:, 1] ** 4 + 0.5 * p[:, 2] ** 4
        )

    resids = []
    for res in (17, 33):
        u = GridFunction.from_callable(u3, [-1, -1, -1], [1, 1, 1], res)
        pair = discrete_legendre(u, dual_resolution=max(9, res // 2))
        rep = dual_checks(pair, k=2, probe_points=[[0.1, 0.05, -0.1], [0.0, 0.0, 0.0]])
        resids.append(rep["summary"]["max_gii"])
    assert resids[0] / resids[1] >= 2.0
    assert resids[1] <= 0.05


def test_pushforward_quadratic_small_residual():
    u = GridFunction.from_callable(quad_factory([1.0, 2.0]), [-1, -1], [1, 1], 33)
    phi = GridFunction.from_callable(
        lambda p: p[:, 0] ** 2, [-1, -1], [1, 1], 33
    )
    pair = discrete_legendre(u, dual_resolution=25)
    rep = pushforward_check(pair, phi, k=1, probe_points=[[0.0, 0.0], [0.2, -0.1]])
    s = rep["summary"]
    assert s["checked"] == 2
    assert s["max_second"] <= u.h
    assert s["max_first"] <= u.h


def test_pushforward_converges_on_quartic():
    resids = []
    for res in (33, 65):
        u = GridFunction.from_callable(quartic2, [-1, -1], [1, 1], res)
        phi = GridFunction.from_callable(
            lambda p: p[:, 0] ** 2 + 0.5 * p[:, 0] * p[:, 1], [-1, -1], [1, 1], res
        )
        pair = discrete_legendre(u, dual_resolution=res // 2)
        rep = pushforward_check(
            pair, phi, k=1, probe_points=[[0.1, 0.05], [-0.2, 0.3]]
        )
        resids.append(rep["summary"]["max_second"])
    assert resids[0] / resids[1] >= 2.0


def test_extrapolated_flags_set_outside_image():
    def rotated(pts):
        return 0.5 * (
            2.0 * pts[:, 0] ** 2 + pts[:, 1] ** 2
        ) + 0.5 * pts[:, 0] * pts[:, 1]

    u = GridFunction.from_callable(rotated, [-1, -1], [1, 1], 21)
    pair = discrete_legendre(u, dual_resolution=15)
    # the image is a parallelogram; its bounding box has extrapolated corners
    assert pair.extrapolated.any()
    assert not pair.extrapolated.all()
    # center of the dual grid corresponds to y = 0, inside the image
    center = tuple(d // 2 for d in pair.dual.dims)
    assert not pair.extrapolated[center]


def test_probe_outside_stencil_is_skipped():
    u = GridFunction.from_callable(quad_factory([1.0, 1.0]), [-1, -1], [1, 1], 17)
    pair = discrete_legendre(u, dual_resolution=9)
    rep = dual_checks(pair, k=1, probe_points=[[-1.0, -1.0]])
    assert rep["rows"][0]["skipped"] == "stencil"
    assert rep["summary"]["checked"] == 0
