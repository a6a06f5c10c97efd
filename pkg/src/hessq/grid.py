"""Uniform-grid scalar fields with finite-difference accessors.

A GridFunction stores nodal values of a scalar field on a uniform tensor
grid over a box, optionally masked to an inscribed ball.  Spacing is a
single scalar h shared by all axes.  Derivative accessors use classical
central differences; order 2 everywhere, order 4 available where the wider
stencil fits, since the dual-transform machinery wants the extra accuracy
at sampling nodes.

Binary serialization (documented byte-exactly, little-endian throughout):

    offset 0                : int64   n        (dimension count)
    offset 8                : int64   dims[n]  (nodes per axis)
    offset 8 + 8n           : float64 lo[n]
    offset 8 + 16n          : float64 hi[n]
    offset 8 + 24n          : float64 spacing
    offset 16 + 24n         : float64 payload, row-major (C order),
                              prod(dims) values

A JSON sidecar at <path>.json repeats the header fields and records the
domain kind (box or ball); it is written with sorted keys and a trailing
newline so identical content yields identical bytes.  Files are written to
a temporary name in the target directory and renamed into place.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import ArgumentError, DomainError

__all__ = ["GridFunction"]

_SIDECAR_SCHEMA = 1


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-gridfn-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class GridFunction:
    """Scalar field sampled on a uniform grid.

    Parameters
    ----------
    lo, hi : array-like, shape (n,)
        Box corners.  The grid places dims[i] nodes on [lo[i], hi[i]] with
        common spacing h; construction fails if the axes disagree on h.
    values : ndarray, shape dims
        Nodal values.  Must be finite at every in-domain node.
    ball : None or (center, radius)
        When given, the domain is the closed ball intersected with the box;
        nodes outside it are carried but ignored by domain-aware accessors.
    fn : callable, optional
        Vectorized generator fn(points) -> values for off-node evaluation.
        Point evaluation falls back to multilinear interpolation without it.
    """

    def __init__(self, lo, hi, values, ball=None, fn=None):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float)).copy()
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float)).copy()
        self.values = np.asarray(values, dtype=float)
        if self.lo.ndim != 1 or self.lo.shape != self.hi.shape:
            raise ArgumentError("lo and hi must be 1-d and congruent")
        if self.values.ndim != self.lo.size:
            raise ArgumentError(
                f"values rank {self.values.ndim} does not match box rank {self.lo.size}"
            )
        if np.any(self.hi <= self.lo):
            raise ArgumentError("need lo < hi on every axis")
        dims = np.array(self.values.shape, dtype=np.int64)
        if np.any(dims < 2):
            raise ArgumentError("need at least 2 nodes per axis")
        spacings = (self.hi - self.lo) / (dims - 1)
        h = float(spacings[0])
        if np.any(np.abs(spacings - h) > 1e-9 * max(h, 1e-30)):
            raise ArgumentError(f"spacing differs across axes: {spacings}")
        self.h = h
        if ball is not None:
            center, radius = ball
            center = np.asarray(center, dtype=float)
            if center.shape != self.lo.shape or not radius > 0:
                raise ArgumentError("ball must be (center, radius > 0) in the box rank")
            self.ball = (center.copy(), float(radius))
        else:
            self.ball = None
        self.fn = fn
        if not np.all(np.isfinite(self.values[self.in_domain_mask()])):
            raise DomainError("non-finite values at in-domain nodes")
        self._interp = None

    # ----- geometry -----

    @property
    def n(self) -> int:
        return self.lo.size

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(self.lo[i], self.hi[i], self.dims[i]) for i in range(self.n)
        ]

    def node_coord(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        return self.lo + idx * self.h

    def coords_flat(self) -> np.ndarray:
        """All node coordinates, shape (prod(dims), n), row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def in_domain_mask(self) -> np.ndarray:
        if self.ball is None:
            return np.ones(self.dims, dtype=bool)
        center, radius = self.ball
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        r2 = sum((m - c) ** 2 for m, c in zip(mesh, center))
        return r2 <= radius**2 + 1e-12 * radius**2

    def interior_mask(self, reach: int = 1) -> np.ndarray:
        """Nodes whose full centered stencil of the given reach is in-domain.

        The stencil is the L-infinity ball of radius ``reach`` in index
        space, which covers axial and cross second-difference patterns.
        """
        out = self.in_domain_mask().copy()
        for _ in range(reach):
            # separable box erosion: axis by axis over the already-eroded mask
            for ax in range(self.n):
                out = out & np.roll(out, 1, axis=ax) & np.roll(out, -1, axis=ax)
            # np.roll wraps around; strip the boundary layer explicitly
            for ax in range(self.n):
                sl = [slice(None)] * self.n
                sl[ax] = 0
                out[tuple(sl)] = False
                sl[ax] = -1
                out[tuple(sl)] = False
        return out

    # ----- evaluation -----

    def eval(self, points) -> np.ndarray:
        """Field values at arbitrary points, via fn when present."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.n:
            raise ArgumentError(f"points must have {self.n} columns")
        if self.fn is not None:
            return np.asarray(self.fn(pts), dtype=float).reshape(pts.shape[0])
        if self._interp is None:
            from scipy.interpolate import RegularGridInterpolator

            self._interp = RegularGridInterpolator(
                self.axes(), self.values, method="linear", bounds_error=True
            )
        return np.asarray(self._interp(pts), dtype=float)

    # ----- nodal finite differences -----

    def _shift_value(self, idx, offset) -> float:
        j = tuple(int(a + b) for a, b in zip(idx, offset))
        for t, d in zip(j, self.dims):
            if not 0 <= t < d:
                raise DomainError(f"stencil leaves the grid at index {j}")
        return float(self.values[j])

    def gradient(self, idx, order: int = 2) -> np.ndarray:
        """Central-difference gradient at a node index."""
        idx = tuple(int(i) for i in idx)
        g = np.zeros(self.n)
        for a in range(self.n):
            e = np.zeros(self.n, dtype=int)
            e[a] = 1
            if order == 2:
                g[a] = (self._shift_value(idx, e) - self._shift_value(idx, -e)) / (
                    2 * self.h
                )
            elif order == 4:
                g[a] = (
                    -self._shift_value(idx, 2 * e)
                    + 8 * self._shift_value(idx, e)
                    - 8 * self._shift_value(idx, -e)
                    + self._shift_value(idx, -2 * e)
                ) / (12 * self.h)
            else:
                raise ArgumentError(f"unsupported order {order}")
        return g

    def hessian(self, idx, order: int = 2) -> np.ndarray:
        """Central-difference Hessian at a node index (symmetric by build)."""
        idx = tuple(int(i) for i in idx)
        n, h = self.n, self.h
        out = np.zeros((n, n))
        c0 = float(self.values[idx])
        for a in range(n):
            e = np.zeros(n, dtype=int)
            e[a] = 1
            if order == 2:
                out[a, a] = (
                    self._shift_value(idx, e) - 2 * c0 + self._shift_value(idx, -e)
                ) / h**2
            elif order == 4:
                out[a, a] = (
                    -self._shift_value(idx, 2 * e)
                    + 16 * self._shift_value(idx, e)
                    - 30 * c0
                    + 16 * self._shift_value(idx, -e)
                    - self._shift_value(idx, -2 * e)
                ) / (12 * h**2)
            else:
                raise ArgumentError(f"unsupported order {order}")
        w4 = {-2: 1.0 / 12, -1: -8.0 / 12, 1: 8.0 / 12, 2: -1.0 / 12}
        for a in range(n):
            for b in range(a + 1, n):
                ea = np.zeros(n, dtype=int)
                eb = np.zeros(n, dtype=int)
                ea[a] = 1
                eb[b] = 1
                if order == 2:
                    v = (
                        self._shift_value(idx, ea + eb)
                        + self._shift_value(idx, -ea - eb)
                        - self._shift_value(idx, ea - eb)
                        - self._shift_value(idx, -ea + eb)
                    ) / (4 * h**2)
                else:
                    v = 0.0
                    for i, wi in w4.items():
                        for j, wj in w4.items():
                            v += wi * wj * self._shift_value(idx, i * ea + j * eb)
                    v /= h**2
                out[a, b] = out[b, a] = v
        return out

    def third_tensor(self, idx) -> np.ndarray:
        """Full third-derivative tensor T[a, b, c] = d^3 u / dx_a dx_b dx_c.

        Order-2 accurate: central difference of the order-2 Hessian along
        the third axis.  Needs an index-space reach of 2.
        """
        idx = np.asarray(idx, dtype=int)
        n, h = self.n, self.h
        out = np.zeros((n, n, n))
        for c in range(n):
            e = np.zeros(n, dtype=int)
            e[c] = 1
            hp = self.hessian(tuple(idx + e))
            hm = self.hessian(tuple(idx - e))
            out[:, :, c] = (hp - hm) / (2 * h)
        # symmetrize over all index orderings to cut stencil anisotropy
        sym = (
            out
            + out.transpose(0, 2, 1)
            + out.transpose(1, 0, 2)
            + out.transpose(1, 2, 0)
            + out.transpose(2, 0, 1)
            + out.transpose(2, 1, 0)
        ) / 6.0
        return sym

    # ----- vectorized whole-field differences -----

    def _shifted(self, offset) -> np.ndarray:
        """View of values shifted by an integer offset, NaN where undefined."""
        out = np.full(self.dims, np.nan)
        src = [slice(None)] * self.n
        dst = [slice(None)] * self.n
        for ax, o in enumerate(offset):
            o = int(o)
            d = self.dims[ax]
            if abs(o) >= d:
                return out
            if o >= 0:
                dst[ax] = slice(0, d - o)
                src[ax] = slice(o, d)
            else:
                dst[ax] = slice(-o, d)
                src[ax] = slice(0, d + o)
        out[tuple(dst)] = self.values[tuple(src)]
        return out

    def gradient_field(self, order: int = 2) -> np.ndarray:
        """Gradient at every node, shape dims + (n,), NaN where the stencil
        leaves the grid."""
        g = np.full(self.dims + (self.n,), np.nan)
        for a in range(self.n):
            e = np.zeros(self.n, dtype=int)
            e[a] = 1
            if order == 2:
                g[..., a] = (self._shifted(e) - self._shifted(-e)) / (2 * self.h)
            elif order == 4:
                g[..., a] = (
                    -self._shifted(2 * e)
                    + 8 * self._shifted(e)
                    - 8 * self._shifted(-e)
                    + self._shifted(-2 * e)
                ) / (12 * self.h)
            else:
                raise ArgumentError(f"unsupported order {order}")
        return g

    def hessian_field(self, order: int = 2) -> np.ndarray:
        """Hessian at every node, shape dims + (n, n), NaN where undefined."""
        n, h = self.n, self.h
        out = np.full(self.dims + (n, n), np.nan)
        for a in range(n):
            e = np.zeros(n, dtype=int)
            e[a] = 1
            if order == 2:
                out[..., a, a] = (
                    self._shifted(e) - 2 * self.values + self._shifted(-e)
                ) / h**2
            elif order == 4:
                out[..., a, a] = (
                    -self._shifted(2 * e)
                    + 16 * self._shifted(e)
                    - 30 * self.values
                    + 16 * self._shifted(-e)
                    - self._shifted(-2 * e)
                ) / (12 * h**2)
            else:
                raise ArgumentError(f"unsupported order {order}")
        w4 = {-2: 1.0 / 12, -1: -8.0 / 12, 1: 8.0 / 12, 2: -1.0 / 12}
        for a in range(n):
            for b in range(a + 1, n):
                ea = np.zeros(n, dtype=int)
                eb = np.zeros(n, dtype=int)
                ea[a] = 1
                eb[b] = 1
                if order == 2:
                    v = (
                        self._shifted(ea + eb)
                        + self._shifted(-ea - eb)
                        - self._shifted(ea - eb)
                        - self._shifted(-ea + eb)
                    ) / (4 * h**2)
                else:
                    v = np.zeros(self.dims)
                    for i, wi in w4.items():
                        for j, wj in w4.items():
                            v = v + wi * wj * self._shifted(i * ea + j * eb)
                    v = v / h**2
                out[..., a, b] = v
                out[..., b, a] = v
        return out

    def third_field(self) -> np.ndarray:
        """Third-derivative tensor at every node, shape dims + (n, n, n)."""
        n, h = self.n, self.h
        hess = self.hessian_field()
        out = np.full(self.dims + (n, n, n), np.nan)
        pad = np.full((1,) * self.n + (n, n), np.nan)
        for c in range(n):
            up = np.concatenate(
                [np.take(hess, range(1, self.dims[c]), axis=c),
                 np.broadcast_to(pad, hess.shape[:c] + (1,) + hess.shape[c + 1:])],
                axis=c,
            )
            dn = np.concatenate(
                [np.broadcast_to(pad, hess.shape[:c] + (1,) + hess.shape[c + 1:]),
                 np.take(hess, range(0, self.dims[c] - 1), axis=c)],
                axis=c,
            )
            out[..., :, :, c] = (up - dn) / (2 * h)
        perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
        base = tuple(range(self.n))
        acc = sum(out.transpose(base + tuple(self.n + p for p in pm)) for pm in perms)
        return acc / 6.0

    # ----- constructors and IO -----

    @classmethod
    def from_callable(cls, fn, lo, hi, num, ball=None) -> "GridFunction":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        n = lo.size
        if np.isscalar(num):
            num = (int(num),) * n
        axes = [np.linspace(lo[i], hi[i], num[i]) for i in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.asarray(fn(pts), dtype=float).reshape([num[i] for i in range(n)])
        return cls(lo, hi, vals, ball=ball, fn=fn)

    def refined(self, factor: int = 2) -> "GridFunction":
        """Same box at factor-times finer node count; requires fn."""
        if self.fn is None:
            raise ArgumentError("refinement needs the generating callable")
        num = tuple((d - 1) * factor + 1 for d in self.dims)
        return GridFunction.from_callable(self.fn, self.lo, self.hi, num, ball=self.ball)

    def save(self, path: str) -> None:
        dims = np.array(self.dims, dtype="<i8")
        parts = [
            np.array([self.n], dtype="<i8").tobytes(),
            dims.tobytes(),
            self.lo.astype("<f8").tobytes(),
            self.hi.astype("<f8").tobytes(),
            np.array([self.h], dtype="<f8").tobytes(),
            np.ascontiguousarray(self.values, dtype="<f8").tobytes(),
        ]
        _atomic_write_bytes(path, b"".join(parts))
        meta = {
            "schema_version": _SIDECAR_SCHEMA,
            "kind": "grid-function",
            "n": int(self.n),
            "dims": [int(d) for d in self.dims],
            "lo": [float(v) for v in self.lo],
            "hi": [float(v) for v in self.hi],
            "spacing": float(self.h),
            "byte_order": "little",
            "payload_dtype": "float64",
            "payload_offset": 16 + 24 * self.n,
            "payload_count": int(np.prod(self.dims)),
            "domain": (
                {"type": "box"}
                if self.ball is None
                else {
                    "type": "ball",
                    "center": [float(c) for c in self.ball[0]],
                    "radius": float(self.ball[1]),
                }
            ),
        }
        sidecar = json.dumps(meta, sort_keys=True, indent=2) + "\n"
        _atomic_write_bytes(path + ".json", sidecar.encode())

    @classmethod
    def load(cls, path: str) -> "GridFunction":
        with open(path, "rb") as fh:
            raw = fh.read()
        n = int(np.frombuffer(raw, dtype="<i8", count=1)[0])
        if n < 1 or n > 16:
            raise ArgumentError(f"implausible dimension {n} in header")
        dims = np.frombuffer(raw, dtype="<i8", count=n, offset=8)
        lo = np.frombuffer(raw, dtype="<f8", count=n, offset=8 + 8 * n)
        hi = np.frombuffer(raw, dtype="<f8", count=n, offset=8 + 16 * n)
        off = 8 + 24 * n
        spacing = float(np.frombuffer(raw, dtype="<f8", count=1, offset=off)[0])
        count = int(np.prod(dims))
        payload = np.frombuffer(raw, dtype="<f8", count=count, offset=off + 8)
        values = payload.reshape(tuple(int(d) for d in dims)).copy()
        ball = None
        sidecar = path + ".json"
        if os.path.exists(sidecar):
            with open(sidecar) as fh:
                meta = json.load(fh)
            if meta.get("dims") != [int(d) for d in dims]:
                raise ArgumentError("sidecar dims disagree with binary header")
            dom = meta.get("domain", {"type": "box"})
            if dom.get("type") == "ball":
                ball = (np.asarray(dom["center"], dtype=float), float(dom["radius"]))
        gf = cls(lo, hi, values, ball=ball)
        if abs(gf.h - spacing) > 1e-9 * max(spacing, 1e-30):
            raise ArgumentError("stored spacing disagrees with box geometry")
        return gf
