"""Convex polygon clipping and exact polynomial moments.

All polygons are CCW (n, 2) float arrays.  Batch kernels operate on packed
cell arrays (flat vertex buffer + offsets) so the hot loops stay in numba.
Balls are represented by area-matched regular polygons; that substitution is
the only geometric approximation in the integration pipeline.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

__all__ = [
    "ball_polygon",
    "poly_area",
    "poly_moments2",
    "clip_convex",
    "region_moments",
    "region_clip",
    "pack_polygons",
    "triangle_quadrature",
]


def ball_polygon(center, radius: float, m: int = 1024) -> np.ndarray:
    """Regular m-gon with the exact area of the disk B_radius(center)."""
    ang = 2.0 * math.pi / m
    r_poly = radius * math.sqrt(ang / math.sin(ang))
    th = ang * np.arange(m)
    c = np.asarray(center, dtype=float)
    return c + r_poly * np.stack([np.cos(th), np.sin(th)], axis=1)


@njit(cache=True)
def _moments2(verts, n):
    a = 0.0
    mx = 0.0
    my = 0.0
    mxx = 0.0
    mxy = 0.0
    myy = 0.0
    for i in range(n):
        x0 = verts[i, 0]
        y0 = verts[i, 1]
        j = i + 1
        if j == n:
            j = 0
        x1 = verts[j, 0]
        y1 = verts[j, 1]
        cr = x0 * y1 - x1 * y0
        a += cr
        mx += (x0 + x1) * cr
        my += (y0 + y1) * cr
        mxx += (x0 * x0 + x0 * x1 + x1 * x1) * cr
        myy += (y0 * y0 + y0 * y1 + y1 * y1) * cr
        mxy += (2.0 * x0 * y0 + x0 * y1 + x1 * y0 + 2.0 * x1 * y1) * cr
    return a / 2.0, mx / 6.0, my / 6.0, mxx / 12.0, mxy / 24.0, myy / 12.0


@njit(cache=True)
def _clip_halfplane(src, ns, a, b, c, dst):
    """Keep {x: a*x + b*y <= c}. Returns the new vertex count in dst."""
    m = 0
    if ns == 0:
        return 0
    fprev = a * src[ns - 1, 0] + b * src[ns - 1, 1] - c
    px = src[ns - 1, 0]
    py = src[ns - 1, 1]
    for i in range(ns):
        x = src[i, 0]
        y = src[i, 1]
        f = a * x + b * y - c
        if fprev <= 0.0:
            if f <= 0.0:
                dst[m, 0] = x
                dst[m, 1] = y
                m += 1
            else:
                t = fprev / (fprev - f)
                dst[m, 0] = px + t * (x - px)
                dst[m, 1] = py + t * (y - py)
                m += 1
        else:
            if f <= 0.0:
                t = fprev / (fprev - f)
                dst[m, 0] = px + t * (x - px)
                dst[m, 1] = py + t * (y - py)
                m += 1
                dst[m, 0] = x
                dst[m, 1] = y
                m += 1
        px = x
        py = y
        fprev = f
    return m


@njit(cache=True)
def _clip_by_region(cell, nc, redges, buf_a, buf_b):
    """Clip a convex cell by the convex region given as edge half-planes.

    ``redges`` is (k, 3): rows (a, b, c) meaning a*x + b*y <= c.
    Result left in buf_a; returns vertex count.
    """
    n = nc
    for i in range(n):
        buf_a[i, 0] = cell[i, 0]
        buf_a[i, 1] = cell[i, 1]
    use_a = True
    for e in range(redges.shape[0]):
        a = redges[e, 0]
        b = redges[e, 1]
        c = redges[e, 2]
        if use_a:
            n = _clip_halfplane(buf_a, n, a, b, c, buf_b)
        else:
            n = _clip_halfplane(buf_b, n, a, b, c, buf_a)
        use_a = not use_a
        if n == 0:
            return 0
    if not use_a:
        for i in range(n):
            buf_a[i, 0] = buf_b[i, 0]
            buf_a[i, 1] = buf_b[i, 1]
    return n


def _region_edges(region: np.ndarray) -> np.ndarray:
    """Half-plane rows (a, b, c) for a CCW convex polygon."""
    p = np.asarray(region, dtype=float)
    q = np.roll(p, -1, axis=0)
    d = q - p
    a = d[:, 1]
    b = -d[:, 0]
    c = a * p[:, 0] + b * p[:, 1]
    return np.column_stack([a, b, c])


def _region_radii(region: np.ndarray, center) -> tuple[float, float]:
    """(inscribed, circumscribed) radii of a convex region around center."""
    c = np.asarray(center, dtype=float)
    edges = _region_edges(region)
    nrm = np.hypot(edges[:, 0], edges[:, 1])
    r_in = float(np.min((edges[:, 2] - edges[:, 0] * c[0] - edges[:, 1] * c[1]) / nrm))
    r_out = float(np.max(np.hypot(*(region - c).T)))
    return max(r_in, 0.0), r_out


@njit(cache=True)
def _batch_region_moments(offsets, verts, redges, cx, cy, r_in, bbox, out):
    nbuf = redges.shape[0] + 40
    buf_a = np.empty((nbuf, 2))
    buf_b = np.empty((nbuf, 2))
    ncells = offsets.shape[0] - 1
    for ci in range(ncells):
        lo = offsets[ci]
        hi = offsets[ci + 1]
        nc = hi - lo
        if nc < 3:
            continue
        dmax = 0.0
        xlo = 1e300
        xhi = -1e300
        ylo = 1e300
        yhi = -1e300
        for i in range(lo, hi):
            x = verts[i, 0]
            y = verts[i, 1]
            dx = x - cx
            dy = y - cy
            d = math.sqrt(dx * dx + dy * dy)
            if d > dmax:
                dmax = d
            if x < xlo:
                xlo = x
            if x > xhi:
                xhi = x
            if y < ylo:
                ylo = y
            if y > yhi:
                yhi = y
        if xhi < bbox[0] or xlo > bbox[1] or yhi < bbox[2] or ylo > bbox[3]:
            continue
        if dmax <= r_in:
            a, mx, my, mxx, mxy, myy = _moments2(verts[lo:hi], nc)
        else:
            n = _clip_by_region(verts[lo:hi], nc, redges, buf_a, buf_b)
            if n < 3:
                continue
            a, mx, my, mxx, mxy, myy = _moments2(buf_a, n)
        out[ci, 0] = a
        out[ci, 1] = mx
        out[ci, 2] = my
        out[ci, 3] = mxx
        out[ci, 4] = mxy
        out[ci, 5] = myy


def _region_bbox(region: np.ndarray) -> np.ndarray:
    r = np.asarray(region, dtype=float)
    return np.array([r[:, 0].min(), r[:, 0].max(), r[:, 1].min(), r[:, 1].max()])


def region_moments(offsets, verts, region, center) -> np.ndarray:
    """Per-cell moments (area, x, y, x^2, xy, y^2) of cell ∩ region."""
    redges = _region_edges(region)
    r_in, _ = _region_radii(region, center)
    out = np.zeros((len(offsets) - 1, 6))
    _batch_region_moments(
        np.asarray(offsets, dtype=np.int64),
        np.asarray(verts, dtype=float),
        redges,
        float(center[0]),
        float(center[1]),
        r_in,
        _region_bbox(region),
        out,
    )
    return out


@njit(cache=True)
def _batch_region_clip(offsets, verts, redges, cx, cy, r_in, bbox, out_off, out_verts):
    nbuf = redges.shape[0] + 40
    buf_a = np.empty((nbuf, 2))
    buf_b = np.empty((nbuf, 2))
    ncells = offsets.shape[0] - 1
    pos = 0
    for ci in range(ncells):
        lo = offsets[ci]
        hi = offsets[ci + 1]
        nc = hi - lo
        out_off[ci] = pos
        if nc < 3:
            continue
        dmax = 0.0
        xlo = 1e300
        xhi = -1e300
        ylo = 1e300
        yhi = -1e300
        for i in range(lo, hi):
            x = verts[i, 0]
            y = verts[i, 1]
            dx = x - cx
            dy = y - cy
            d = math.sqrt(dx * dx + dy * dy)
            if d > dmax:
                dmax = d
            if x < xlo:
                xlo = x
            if x > xhi:
                xhi = x
            if y < ylo:
                ylo = y
            if y > yhi:
                yhi = y
        if xhi < bbox[0] or xlo > bbox[1] or yhi < bbox[2] or ylo > bbox[3]:
            continue
        if dmax <= r_in:
            if pos + nc > out_verts.shape[0]:
                return -1
            for i in range(lo, hi):
                out_verts[pos, 0] = verts[i, 0]
                out_verts[pos, 1] = verts[i, 1]
                pos += 1
        else:
            n = _clip_by_region(verts[lo:hi], nc, redges, buf_a, buf_b)
            if pos + n > out_verts.shape[0]:
                return -1
            for i in range(n):
                out_verts[pos, 0] = buf_a[i, 0]
                out_verts[pos, 1] = buf_a[i, 1]
                pos += 1
    out_off[ncells] = pos
    return pos


def region_clip(offsets, verts, region, center):
    """Clip every cell to the region; returns packed (offsets, verts)."""
    redges = _region_edges(region)
    r_in, _ = _region_radii(region, center)
    offsets = np.asarray(offsets, dtype=np.int64)
    verts = np.asarray(verts, dtype=float)
    ncells = len(offsets) - 1
    out_off = np.zeros(ncells + 1, dtype=np.int64)
    cap = verts.shape[0] + 8 * len(region) + 8 * max(ncells, 1)
    while True:
        out_verts = np.empty((cap, 2))
        pos = _batch_region_clip(
            offsets,
            verts,
            redges,
            float(center[0]),
            float(center[1]),
            r_in,
            _region_bbox(region),
            out_off,
            out_verts,
        )
        if pos >= 0:
            break
        cap *= 2
    return out_off, out_verts[:pos].copy()


def poly_area(poly: np.ndarray) -> float:
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def poly_moments2(poly: np.ndarray):
    """(area, ∫x, ∫y, ∫x², ∫xy, ∫y²) over one polygon."""
    p = np.ascontiguousarray(poly, dtype=float)
    if len(p) < 3:
        return (0.0,) * 6
    return _moments2(p, len(p))


def clip_convex(poly: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Intersection polygon of a convex poly with a convex region."""
    p = np.ascontiguousarray(poly, dtype=float)
    redges = _region_edges(region)
    nbuf = len(region) + len(p) + 8
    buf_a = np.empty((nbuf, 2))
    buf_b = np.empty((nbuf, 2))
    n = _clip_by_region(p, len(p), redges, buf_a, buf_b)
    return buf_a[:n].copy()


def pack_polygons(polys) -> tuple[np.ndarray, np.ndarray]:
    """Pack a list of (k, 2) polygons into (offsets, flat_verts)."""
    offsets = np.zeros(len(polys) + 1, dtype=np.int64)
    for i, p in enumerate(polys):
        offsets[i + 1] = offsets[i] + len(p)
    verts = np.empty((offsets[-1], 2))
    for i, p in enumerate(polys):
        if len(p):
            verts[offsets[i] : offsets[i + 1]] = p
    return offsets, verts


def triangle_quadrature(offsets, verts, degree: int):
    """Gauss nodes and weights exact for polynomials of total ``degree``.

    Each convex polygon is fan-triangulated and each triangle mapped from
    the unit square by the collapsed (Duffy) transform, so a tensor
    Gauss-Legendre rule of the right order integrates any polynomial of the
    stated total degree exactly.

    Returns (points (Q, 2), weights (Q,), poly_index (Q,)).
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    verts = np.asarray(verts, dtype=float)
    v0s, v1s, v2s, owner = [], [], [], []
    for ci in range(len(offsets) - 1):
        lo, hi = offsets[ci], offsets[ci + 1]
        for k in range(lo + 1, hi - 1):
            v0s.append(verts[lo])
            v1s.append(verts[k])
            v2s.append(verts[k + 1])
            owner.append(ci)
    if not v0s:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=np.int64)
    v0 = np.array(v0s)
    e1 = np.array(v1s) - v0
    e2 = np.array(v2s) - v0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    ns = (degree + 3) // 2
    nt = (degree + 2) // 2
    xs, ws = np.polynomial.legendre.leggauss(ns)
    xt, wt = np.polynomial.legendre.leggauss(nt)
    s = (xs + 1.0) / 2.0
    t = (xt + 1.0) / 2.0
    ws = ws / 2.0
    wt = wt / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt) * S  # Duffy Jacobian contributes a factor s
    S = S.ravel()
    T = T.ravel()
    W = W.ravel()
    # x = v0 + s*(1-t)*e1 + s*t*e2
    a = (S * (1.0 - T))[None, :]
    b = (S * T)[None, :]
    px = v0[:, 0:1] + a * e1[:, 0:1] + b * e2[:, 0:1]
    py = v0[:, 1:2] + a * e1[:, 1:2] + b * e2[:, 1:2]
    wq = np.abs(det)[:, None] * W[None, :]
    pts = np.stack([px.ravel(), py.ravel()], axis=1)
    idx = np.repeat(np.asarray(owner, dtype=np.int64), len(W))
    return pts, wq.ravel(), idx
