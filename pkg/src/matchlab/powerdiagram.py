"""Power (Laguerre) diagrams of weighted sites clipped to a convex frame.

The regular triangulation comes from the lower convex hull of the lifted
sites (x, y, |p|^2 - w); triangulation neighbors are exactly the candidate
half-plane constraints of each cell, so cells are built by clipping the
frame polygon against neighbor bisectors.  Cell edges keep the index of the
neighbor that generated them, which is what the dual-ascent Hessian needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.spatial import ConvexHull
from scipy.spatial._qhull import QhullError

__all__ = ["CellComplex", "neighbor_csr", "build_complex"]


def neighbor_csr(sites: np.ndarray, lifted_z: np.ndarray):
    """Adjacency of the regular triangulation as CSR (indptr, indices).

    Hidden sites (empty power cells) get an empty adjacency row.  Degenerate
    inputs (m <= 3, collinear clouds) fall back to the all-pairs adjacency,
    which is always a superset of the true constraint set.
    """
    m = len(sites)
    if m == 1:
        return np.zeros(2, dtype=np.int64), np.zeros(0, dtype=np.int64)
    simplices = None
    if m >= 4:
        lifted = np.column_stack([sites, lifted_z])
        try:
            hull = ConvexHull(lifted)
            lower = hull.equations[:, 2] < -1e-12
            simplices = hull.simplices[lower]
        except QhullError:
            simplices = None
    if simplices is None:
        if m > 4096:
            raise RuntimeError("degenerate site cloud too large for all-pairs fallback")
        idx = np.arange(m)
        pairs = np.array([(i, j) for i in idx for j in idx if i != j], dtype=np.int64)
        e0, e1 = pairs[:, 0], pairs[:, 1]
    else:
        a = simplices[:, [0, 1, 2]].ravel()
        b = simplices[:, [1, 2, 0]].ravel()
        e0 = np.concatenate([a, b])
        e1 = np.concatenate([b, a])
    order = np.lexsort((e1, e0))
    e0, e1 = e0[order], e1[order]
    keep = np.ones(len(e0), dtype=bool)
    if len(e0) > 1:
        keep[1:] = (e0[1:] != e0[:-1]) | (e1[1:] != e1[:-1])
    e0, e1 = e0[keep], e1[keep]
    indptr = np.zeros(m + 1, dtype=np.int64)
    np.add.at(indptr, e0 + 1, 1)
    indptr = np.cumsum(indptr)
    return indptr, e1.astype(np.int64)


@njit(cache=True)
def _build_cells(
    sites,
    zlift,
    indptr,
    indices,
    frame,
    build,
    maxv,
    out_verts,
    out_counts,
    out_geom,
    edge_j,
    edge_len,
    edge_ptr,
):
    """Clip the frame by neighbor bisectors for every site in ``build``.

    out_geom rows: (area, mx, my, m2, rmax) with m2 = integral of |x|^2.
    Edge arrays are per built cell, segmented by edge_ptr, storing the
    neighbor site index and the shared-edge length.
    Returns 0 on success, -1 on vertex-buffer overflow.
    """
    nf = frame.shape[0]
    bufx = np.empty((maxv, 2))
    bufl = np.empty(maxv, dtype=np.int64)
    bufx2 = np.empty((maxv, 2))
    bufl2 = np.empty(maxv, dtype=np.int64)
    ptr = 0
    for bi in range(build.shape[0]):
        i = build[bi]
        edge_ptr[bi] = ptr
        lo = indptr[i]
        hi = indptr[i + 1]
        out_counts[bi] = 0
        if hi == lo and sites.shape[0] > 1:
            # hidden site: empty power cell
            continue
        n = nf
        for k in range(nf):
            bufx[k, 0] = frame[k, 0]
            bufx[k, 1] = frame[k, 1]
            bufl[k] = -1
        xi = sites[i, 0]
        yi = sites[i, 1]
        zi = zlift[i]
        src_is_1 = True
        for e in range(lo, hi):
            j = indices[e]
            a = 2.0 * (sites[j, 0] - xi)
            b = 2.0 * (sites[j, 1] - yi)
            c = zlift[j] - zi
            # clip {a*x + b*y <= c}, labeling new edges with j
            if src_is_1:
                n = _clip_labeled(bufx, bufl, n, a, b, c, j, bufx2, bufl2)
            else:
                n = _clip_labeled(bufx2, bufl2, n, a, b, c, j, bufx, bufl)
            src_is_1 = not src_is_1
            if n == -1:
                return -1
            if n == 0:
                break
        if n < 3:
            continue
        V = bufx if src_is_1 else bufx2
        Lb = bufl if src_is_1 else bufl2
        # geometry
        area = 0.0
        mx = 0.0
        my = 0.0
        m2 = 0.0
        rmax = 0.0
        for k in range(n):
            x0 = V[k, 0]
            y0 = V[k, 1]
            kk = k + 1
            if kk == n:
                kk = 0
            x1 = V[kk, 0]
            y1 = V[kk, 1]
            cr = x0 * y1 - x1 * y0
            area += cr
            mx += (x0 + x1) * cr
            my += (y0 + y1) * cr
            m2 += (x0 * x0 + x0 * x1 + x1 * x1 + y0 * y0 + y0 * y1 + y1 * y1) * cr
            dx = x0 - xi
            dy = y0 - yi
            d = (dx * dx + dy * dy) ** 0.5
            if d > rmax:
                rmax = d
        out_geom[bi, 0] = area / 2.0
        out_geom[bi, 1] = mx / 6.0
        out_geom[bi, 2] = my / 6.0
        out_geom[bi, 3] = m2 / 12.0
        out_geom[bi, 4] = rmax
        base = bi * maxv
        for k in range(n):
            out_verts[base + k, 0] = V[k, 0]
            out_verts[base + k, 1] = V[k, 1]
        out_counts[bi] = n
        # labeled edges -> shared-edge lengths
        for k in range(n):
            lab = Lb[k]
            if lab < 0:
                continue
            kk = k + 1
            if kk == n:
                kk = 0
            dx = V[kk, 0] - V[k, 0]
            dy = V[kk, 1] - V[k, 1]
            elen = (dx * dx + dy * dy) ** 0.5
            if elen <= 0.0:
                continue
            if ptr >= edge_j.shape[0]:
                return -1
            edge_j[ptr] = lab
            edge_len[ptr] = elen
            ptr += 1
    edge_ptr[build.shape[0]] = ptr
    return 0


@njit(cache=True)
def _clip_labeled(V, Lb, n, a, b, c, newlab, W, Lw):
    m = 0
    if n == 0:
        return 0
    cap = W.shape[0]
    px = V[n - 1, 0]
    py = V[n - 1, 1]
    fprev = a * px + b * py - c
    plab = Lb[n - 1]
    for k in range(n):
        x = V[k, 0]
        y = V[k, 1]
        f = a * x + b * y - c
        if fprev <= 0.0:
            if f <= 0.0:
                if m >= cap:
                    return -1
                W[m, 0] = px
                W[m, 1] = py
                Lw[m] = plab
                m += 1
            else:
                if m + 2 > cap:
                    return -1
                W[m, 0] = px
                W[m, 1] = py
                Lw[m] = plab
                m += 1
                t = fprev / (fprev - f)
                W[m, 0] = px + t * (x - px)
                W[m, 1] = py + t * (y - py)
                Lw[m] = newlab
                m += 1
        else:
            if f <= 0.0:
                if m >= cap:
                    return -1
                t = fprev / (fprev - f)
                W[m, 0] = px + t * (x - px)
                W[m, 1] = py + t * (y - py)
                Lw[m] = plab
                m += 1
        px = x
        py = y
        fprev = f
        plab = Lb[k]
    return m


@dataclass
class CellComplex:
    """Clipped power cells of the ``build`` sites plus Hessian edge data."""

    sites: np.ndarray
    weights: np.ndarray
    build: np.ndarray
    offsets: np.ndarray
    verts: np.ndarray
    area: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    rmax: np.ndarray
    edge_ptr: np.ndarray
    edge_j: np.ndarray
    edge_len: np.ndarray

    def cell_polygon(self, bi: int) -> np.ndarray:
        return self.verts[self.offsets[bi] : self.offsets[bi + 1]]

    @property
    def centroid(self) -> np.ndarray:
        c = np.zeros_like(self.first_moment)
        nz = self.area > 0
        c[nz] = self.first_moment[nz] / self.area[nz, None]
        return c

    def dist_sq_integral(self, points: np.ndarray) -> np.ndarray:
        """Per built cell: integral over the cell of |x - p_i|^2."""
        p = np.asarray(points, dtype=float)
        return (
            self.second_moment
            - 2.0 * (p * self.first_moment).sum(axis=1)
            + (p**2).sum(axis=1) * self.area
        )


def build_complex(sites, weights, frame, build=None) -> CellComplex:
    """Power cells (clipped to the convex CCW frame) of selected sites."""
    sites = np.ascontiguousarray(sites, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    frame = np.ascontiguousarray(frame, dtype=float)
    m = len(sites)
    if build is None:
        build = np.arange(m, dtype=np.int64)
    else:
        build = np.asarray(build, dtype=np.int64)
    zlift = (sites**2).sum(axis=1) - weights
    indptr, indices = neighbor_csr(sites, zlift)
    nb = len(build)
    deg = (indptr[1:] - indptr[:-1])[build] if m > 1 else np.zeros(nb, dtype=np.int64)
    maxv = int(max(32, (deg.max() if nb else 0) + len(frame) + 8))
    cap_edges = int(deg.sum() + nb + 8)
    while True:
        out_verts = np.empty((nb * maxv, 2))
        out_counts = np.zeros(nb, dtype=np.int64)
        out_geom = np.zeros((nb, 5))
        edge_j = np.empty(cap_edges, dtype=np.int64)
        edge_len = np.empty(cap_edges)
        edge_ptr = np.zeros(nb + 1, dtype=np.int64)
        rc = _build_cells(
            sites,
            zlift,
            indptr,
            indices,
            frame,
            build,
            maxv,
            out_verts,
            out_counts,
            out_geom,
            edge_j,
            edge_len,
            edge_ptr,
        )
        if rc == 0:
            break
        maxv *= 2
        cap_edges *= 2
    offsets = np.zeros(nb + 1, dtype=np.int64)
    np.cumsum(out_counts, out=offsets[1:])
    verts = np.empty((offsets[-1], 2))
    for bi in range(nb):
        n = out_counts[bi]
        if n:
            verts[offsets[bi] : offsets[bi + 1]] = out_verts[bi * maxv : bi * maxv + n]
    nedges = edge_ptr[nb]
    return CellComplex(
        sites=sites,
        weights=weights,
        build=build,
        offsets=offsets,
        verts=verts,
        area=out_geom[:, 0].copy(),
        first_moment=out_geom[:, 1:3].copy(),
        second_moment=out_geom[:, 3].copy(),
        rmax=out_geom[:, 4].copy(),
        edge_ptr=edge_ptr,
        edge_j=edge_j[:nedges].copy(),
        edge_len=edge_len[:nedges].copy(),
    )
