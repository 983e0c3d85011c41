"""Semi-discrete quadratic optimal transport via power diagrams.

Solves transport from a uniform density on a square or flat torus to a
weighted point cloud by damped Newton ascent on the concave Kantorovich
dual (Kitagawa-Merigot scheme): cell masses are the dual gradient and the
weighted-graph Laplacian of shared power-cell edges is the Hessian.

Torus diagrams replicate targets into the 3x3 neighbor copies (adaptively
narrowed to a boundary band for large clouds) and keep the unclipped cells
of the central copies; a margin check certifies that no missing replica
could cut any central cell, and fails loudly otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .geometry import Domain, wrap
from .pointcloud import PointConfiguration
from .polyops import ball_polygon, poly_area, region_clip, region_moments
from .powerdiagram import CellComplex, build_complex

__all__ = [
    "SolverError",
    "TransportSolution",
    "solve_semidiscrete",
    "map_apply",
    "inverse_cell",
    "CellInfo",
    "excess_energy",
    "displacement_ball_moments",
    "shifted_excess",
    "optimal_shift_excess",
    "linfty_displacement",
    "interpolant",
    "Interpolant",
    "PotentialPair",
    "potentials",
    "second_difference",
    "dual_functional",
    "solution_text",
]


class SolverError(RuntimeError):
    """Raised when the dual ascent cannot reach the mass tolerance."""

    def __init__(self, msg: str, worst_residual: float = math.nan):
        super().__init__(msg)
        self.worst_residual = worst_residual


def _merge_coincident(points: np.ndarray, masses: np.ndarray, scale: float):
    """Sum masses of targets closer than 1e-12 * scale (serialization guard)."""
    if len(points) < 2:
        return points, masses
    tol = 1e-12 * scale
    key = np.round(points / max(tol, 1e-300)).astype(np.int64)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    if (counts == 1).all():
        return points, masses
    reps = np.full(counts.shape[0], -1, dtype=np.int64)
    for idx in range(len(points)):
        g = inv[idx]
        if reps[g] < 0:
            reps[g] = idx
    msum = np.zeros(counts.shape[0])
    np.add.at(msum, inv, masses)
    return points[reps], msum


@dataclass
class TransportSolution:
    """Laguerre-cell description of the optimal map T = grad(psi)."""

    domain: Domain
    density: float
    points: np.ndarray  # target points, fundamental coordinates
    masses: np.ndarray
    weights: np.ndarray  # dual weights, normalized so psi(0) = 0
    sites: np.ndarray  # all replicas used by the diagram (central first)
    site_base: np.ndarray  # replica -> base target index
    offsets: np.ndarray  # packed central cell polygons (unwrapped coords)
    verts: np.ndarray
    cell_area: np.ndarray
    cell_m1: np.ndarray
    cell_m2: np.ndarray
    cost: float
    n_iter: int
    residual_max: float
    tol: float
    margin: float = 0.0
    _bbox: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def periodic(self) -> bool:
        return self.domain.periodic

    @property
    def side(self) -> float:
        return self.domain.side

    @property
    def cell_masses(self) -> np.ndarray:
        return self.density * self.cell_area

    def cell_polygon(self, i: int) -> np.ndarray:
        return self.verts[self.offsets[i] : self.offsets[i + 1]]

    def cell_bboxes(self) -> np.ndarray:
        if self._bbox is None:
            n = len(self.points)
            bb = np.empty((n, 4))
            for i in range(n):
                p = self.cell_polygon(i)
                if len(p) == 0:
                    bb[i] = (np.inf, -np.inf, np.inf, -np.inf)
                else:
                    bb[i] = (p[:, 0].min(), p[:, 0].max(), p[:, 1].min(), p[:, 1].max())
            object.__setattr__(self, "_bbox", bb)
        return self._bbox


def _torus_sites(points: np.ndarray, L: float, delta: float):
    """Replicate wrapped points into the 3x3 copies within the margin band."""
    shifts = np.array(
        [
            (0.0, 0.0),
            (L, 0.0),
            (-L, 0.0),
            (0.0, L),
            (0.0, -L),
            (L, L),
            (L, -L),
            (-L, L),
            (-L, -L),
        ]
    )
    lim = L / 2.0 + delta
    sites = [points]
    base = [np.arange(len(points), dtype=np.int64)]
    for z in shifts[1:]:
        p = points + z
        m = (np.abs(p) <= lim).all(axis=1)
        if m.any():
            sites.append(p[m])
            base.append(np.nonzero(m)[0].astype(np.int64))
    return np.concatenate(sites), np.concatenate(base)


def _hessian(cc: CellComplex, site_base: np.ndarray, density: float, n: int):
    counts = np.diff(cc.edge_ptr)
    i_arr = np.repeat(np.arange(n, dtype=np.int64), counts)
    j_site = cc.edge_j
    jb = site_base[j_site]
    keep = jb != i_arr
    i_arr, j_site, jb = i_arr[keep], j_site[keep], jb[keep]
    elen = cc.edge_len[keep]
    d = np.hypot(
        cc.sites[i_arr, 0] - cc.sites[j_site, 0],
        cc.sites[i_arr, 1] - cc.sites[j_site, 1],
    )
    val = density * elen / (2.0 * d)
    rows = np.concatenate([i_arr, i_arr])
    cols = np.concatenate([i_arr, jb])
    vals = np.concatenate([val, -val])
    H = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return (H + H.T) * 0.5


def _gauge_solve(H, r, pin: int):
    n = H.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[pin] = False
    Hs = H[mask][:, mask].tocsc()
    delta = np.zeros(n)
    sol = spsolve(Hs, r[mask])
    if not np.all(np.isfinite(sol)):
        raise SolverError("singular dual Hessian (disconnected diagram)")
    delta[mask] = sol
    return delta


def solve_semidiscrete(
    domain: Domain,
    density: float,
    targets,
    tol: float = 1e-7,
    max_iter: int = 80,
) -> TransportSolution:
    """Optimal transport from density * Lebesgue on the domain to the targets.

    The density is rescaled to balance the total target mass exactly (the
    mu-hat normalization); ``tol`` is relative to the average cell mass.
    Raises SolverError with the worst mass residual on non-convergence.
    """
    if isinstance(targets, PointConfiguration):
        pts, nu = targets.points.copy(), targets.masses.copy()
    else:
        pts = np.atleast_2d(np.asarray(targets, dtype=float)).copy()
        nu = np.ones(len(pts))
    if len(pts) == 0:
        raise ValueError("empty target support")
    if domain.kind == "torus":
        pts = wrap(pts, domain.side)
    scale = domain.side if domain.kind != "ball" else 2 * domain.radius
    pts, nu = _merge_coincident(pts, nu, scale)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts, nu = pts[order], nu[order]
    n = len(pts)
    total = float(nu.sum())
    # mu-hat normalization: the density is rescaled so that it balances the
    # target mass exactly; the caller's value only sets the expected scale.
    dens = total / domain.area

    periodic = domain.kind == "torus"
    L = domain.side
    if periodic:
        spacing = L / math.sqrt(n)
        delta = L if n <= 256 else min(L, max(10.0 * spacing, 8.0))
    else:
        delta = 0.0
    frame_dom = domain.boundary_polygon()

    state = {"delta": delta}

    def build(w: np.ndarray) -> tuple[CellComplex, np.ndarray, np.ndarray]:
        while True:
            if periodic:
                sites, base = _torus_sites(pts, L, state["delta"])
                lim = L / 2.0 + state["delta"]
                frame = np.array(
                    [[-lim, -lim], [lim, -lim], [lim, lim], [-lim, lim]]
                ) * (1.0 + 1e-12)
            else:
                sites, base = pts, np.arange(n, dtype=np.int64)
                frame = frame_dom
            cc = build_complex(sites, w[base], frame, build=np.arange(n, dtype=np.int64))
            if not periodic or state["delta"] >= L:
                return cc, sites, base
            rho = float(cc.rmax.max()) if n else 0.0
            dw = float(w.max() - w.min()) if n else 0.0
            if rho + math.sqrt(rho * rho + max(dw, 0.0)) <= state["delta"]:
                return cc, sites, base
            state["delta"] = min(L, 2.0 * state["delta"])

    w = np.zeros(n)
    if n == 1:
        cc, sites, base = build(w)
        m = dens * cc.area
        resid = float(np.abs(nu - m).max())
        return _finalize(domain, dens, pts, nu, w, cc, sites, base, 0, resid, tol, state)

    cc, sites, base = build(w)
    m = dens * cc.area
    eps0 = 0.5 * min(float(m.min()), float(nu.min()))
    if eps0 <= 0:
        raise SolverError("degenerate start: empty Voronoi cell", float(np.abs(nu - m).max()))
    mean_nu = total / n
    pin = int(np.argmax(nu))
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        r = nu - m
        worst = float(np.abs(r).max())
        if worst <= tol * mean_nu:
            n_iter -= 1
            break
        H = _hessian(cc, base, dens, n)
        delta_w = _gauge_solve(H, r, pin)
        rnorm = float(np.linalg.norm(r))
        t = 1.0
        accepted = False
        while t >= 2.0**-30:
            w2 = w + t * delta_w
            cc2, sites2, base2 = build(w2)
            m2 = dens * cc2.area
            if float(m2.min()) >= eps0 and float(
                np.linalg.norm(nu - m2)
            ) <= (1.0 - t / 2.0) * rnorm:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise SolverError(
                f"damped Newton stalled at iteration {n_iter}", worst_residual=worst
            )
        w, cc, m, sites, base = w2, cc2, m2, sites2, base2
    else:
        raise SolverError(
            f"no convergence after {max_iter} iterations",
            worst_residual=float(np.abs(nu - m).max()),
        )
    resid = float(np.abs(nu - m).max())
    return _finalize(domain, dens, pts, nu, w, cc, sites, base, n_iter, resid, tol, state)


def _finalize(domain, dens, pts, nu, w, cc, sites, base, n_iter, resid, tol, state):
    # normalize the additive gauge so that psi(0) = 0
    shift = float(np.max(w - (pts**2).sum(axis=1)))
    w = w - shift
    cost = float(dens * cc.dist_sq_integral(sites[: len(pts)]).sum())
    if domain.kind == "torus":
        # cells live in y + closed(Q_L); sanity per the replication contract
        if cc.rmax.max() > domain.side * 0.70711:
            raise SolverError("torus cell touches the replication boundary")
    return TransportSolution(
        domain=domain,
        density=dens,
        points=pts,
        masses=nu,
        weights=w,
        sites=sites,
        site_base=base,
        offsets=cc.offsets,
        verts=cc.verts,
        cell_area=cc.area,
        cell_m1=cc.first_moment,
        cell_m2=cc.second_moment,
        cost=cost,
        n_iter=n_iter,
        residual_max=resid,
        tol=tol,
        margin=state.get("delta", 0.0),
    )


def map_apply(sol: TransportSolution, x) -> np.ndarray:
    """T(x): the target of the owning Laguerre cell, lowest index on ties."""
    xq = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.asarray(x).ndim == 1
    if sol.periodic:
        xq = wrap(xq, sol.side)
    zl = (sol.sites**2).sum(axis=1) - sol.weights[sol.site_base]
    out = np.empty(len(xq), dtype=np.int64)
    chunk = max(1, int(2e6 // max(len(sol.sites), 1)))
    for s in range(0, len(xq), chunk):
        blk = xq[s : s + chunk]
        val = -2.0 * blk @ sol.sites.T + zl[None, :]
        best = val.min(axis=1)
        for k in range(len(blk)):
            cand = np.nonzero(val[k] <= best[k] + 1e-12 * max(1.0, abs(best[k])))[0]
            out[s + k] = sol.site_base[cand].min()
    res = sol.points[out]
    return res[0] if single else res


@dataclass
class CellInfo:
    polygon: np.ndarray
    barycenter: np.ndarray
    empty: bool


def inverse_cell(sol: TransportSolution, i: int) -> CellInfo:
    """Laguerre cell polygon of target i and its area barycenter."""
    if not 0 <= i < len(sol):
        raise IndexError("target index out of range")
    poly = sol.cell_polygon(i)
    empty = sol.cell_area[i] <= sol.tol * sol.masses.mean()
    if sol.cell_area[i] > 0:
        bary = sol.cell_m1[i] / sol.cell_area[i]
    else:
        bary = sol.points[i].copy()
    if sol.periodic:
        bary = wrap(bary, sol.side)
    return CellInfo(polygon=poly, barycenter=bary, empty=bool(empty))


def _chart_cells(sol: TransportSolution, center, radius: float):
    """Packed replica cells possibly meeting B_radius(center), with T values.

    On the torus, cells are repeated by lattice shifts so the ball (radius
    up to ~L) sees every periodic copy; the piecewise value attached to a
    shifted cell is the shifted target.  On a square domain the ball must
    fit inside.
    """
    c = np.asarray(center, dtype=float)
    bb = sol.cell_bboxes()
    if not sol.periodic:
        h = sol.side / 2.0
        if (np.abs(c) + radius > h + 1e-9 * sol.side).any():
            raise ValueError("ball exceeds the non-periodic domain")
        return sol.offsets, sol.verts, sol.points
    L = sol.side
    kmax = int(math.ceil((radius + 1.01 * L) / L))
    sel_parts = []
    shift_parts = []
    for zx in range(-kmax, kmax + 1):
        for zy in range(-kmax, kmax + 1):
            z = np.array([zx * L, zy * L])
            ok = (
                (bb[:, 0] + z[0] <= c[0] + radius)
                & (bb[:, 1] + z[0] >= c[0] - radius)
                & (bb[:, 2] + z[1] <= c[1] + radius)
                & (bb[:, 3] + z[1] >= c[1] - radius)
            )
            idx = np.nonzero(ok)[0]
            if len(idx):
                sel_parts.append(idx)
                shift_parts.append(np.repeat(z[None, :], len(idx), axis=0))
    if not sel_parts:
        return np.zeros(1, dtype=np.int64), np.zeros((0, 2)), np.zeros((0, 2))
    sel = np.concatenate(sel_parts)
    shifts = np.concatenate(shift_parts)
    counts = np.diff(sol.offsets)[sel]
    offsets = np.zeros(len(sel) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    verts = np.empty((offsets[-1], 2))
    for k, (i, z) in enumerate(zip(sel, shifts)):
        verts[offsets[k] : offsets[k + 1]] = (
            sol.verts[sol.offsets[i] : sol.offsets[i + 1]] + z
        )
    values = sol.points[sel] + shifts
    return offsets, verts, values


def displacement_ball_moments(sol: TransportSolution, center, radius: float, ngon: int = 1024):
    """Per-cell moments of cell ∩ B_radius(center) plus the cell's T value."""
    offsets, verts, values = _chart_cells(sol, center, radius)
    region = ball_polygon(center, radius, ngon)
    mom = region_moments(offsets, verts, region, center)
    return mom, values


def shifted_excess(sol, center, radius: float, xi=(0.0, 0.0), ngon: int = 1024) -> float:
    """Integral over B_radius(center) of |T(x) - x + xi|^2 dx."""
    mom, vals = displacement_ball_moments(sol, center, radius, ngon)
    v = vals + np.asarray(xi, dtype=float)
    area, m1, m2 = mom[:, 0], mom[:, 1:3], mom[:, 3] + mom[:, 5]
    return float(((v**2).sum(axis=1) * area - 2.0 * (v * m1).sum(axis=1) + m2).sum())


def excess_energy(sol: TransportSolution, center, R: float, ngon: int = 1024) -> float:
    """E(center, R) = R^{-4} * integral over B_{2R}(center) of |T - x|^2."""
    return shifted_excess(sol, center, 2.0 * R, (0.0, 0.0), ngon) / R**4


def optimal_shift_excess(sol, center, radius: float, ngon: int = 1024):
    """(inf_xi ∫|T-(x-xi)|^2, xi*) over the ball; xi* = mean of x - T(x)."""
    mom, vals = displacement_ball_moments(sol, center, radius, ngon)
    area, m1, m2 = mom[:, 0], mom[:, 1:3], mom[:, 3] + mom[:, 5]
    tot_area = float(area.sum())
    if tot_area <= 0:
        return 0.0, np.zeros(2)
    int_u = (vals * area[:, None] - m1).sum(axis=0)  # integral of T - x
    base = float(((vals**2).sum(axis=1) * area - 2.0 * (vals * m1).sum(axis=1) + m2).sum())
    xi_star = -int_u / tot_area
    value = base - float((int_u**2).sum()) / tot_area
    return value, xi_star


def linfty_displacement(sol: TransportSolution, center, R: float, ngon: int = 512) -> float:
    """sup over B_{7R/4}(center) of |T - x| (max over clipped cell vertices)."""
    offsets, verts, values = _chart_cells(sol, center, 1.75 * R)
    region = ball_polygon(center, 1.75 * R, ngon)
    coff, cverts = region_clip(offsets, verts, region, center)
    best = 0.0
    for k in range(len(coff) - 1):
        seg = cverts[coff[k] : coff[k + 1]]
        if len(seg):
            d = np.hypot(seg[:, 0] - values[k, 0], seg[:, 1] - values[k, 1]).max()
            best = max(best, float(d))
    return best


@dataclass
class Interpolant:
    """Displacement interpolation at time t: shrunken cells, flat density."""

    t: float
    offsets: np.ndarray
    verts: np.ndarray
    values: np.ndarray
    density: float
    source_density: float

    def total_mass(self) -> float:
        tot = 0.0
        for k in range(len(self.offsets) - 1):
            tot += poly_area(self.verts[self.offsets[k] : self.offsets[k + 1]])
        return tot * self.density


def interpolant(sol: TransportSolution, t: float) -> Interpolant:
    """Shrink every cell by (1-t) about its target; density (1-t)^{-2}."""
    if not 0.0 <= t < 1.0:
        raise ValueError("t must be in [0, 1)")
    verts = np.empty_like(sol.verts)
    for i in range(len(sol)):
        lo, hi = sol.offsets[i], sol.offsets[i + 1]
        y = sol.points[i]
        verts[lo:hi] = y + (1.0 - t) * (sol.verts[lo:hi] - y)
    return Interpolant(
        t=t,
        offsets=sol.offsets,
        verts=verts,
        values=sol.points,
        density=sol.density / (1.0 - t) ** 2,
        source_density=sol.density,
    )


@dataclass
class PotentialPair:
    """Evaluators for the convex potential psi (psi(0) = 0) and its conjugate."""

    sites: np.ndarray
    phi: np.ndarray  # per replica: (|p|^2 - w)/2
    psi0: float
    star_verts: np.ndarray
    star_vals: np.ndarray  # psi at star_verts (raw gauge)
    reach_psi: float
    reach_star: float

    def psi(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if np.abs(x).max() > self.reach_psi:
            raise ValueError("evaluation outside the covered region")
        return float(np.max(self.sites @ x - self.phi) - self.psi0)

    def psi_star_raw(self, y) -> float:
        y = np.asarray(y, dtype=float)
        if np.abs(y).max() > self.reach_star:
            raise ValueError("evaluation outside the covered region")
        return float(np.max(self.star_verts @ y - self.star_vals))

    def psi_star(self, y) -> float:
        return self.psi_star_raw(y) + self.psi0


def potentials(sol: TransportSolution) -> PotentialPair:
    phi_all = ((sol.sites**2).sum(axis=1) - sol.weights[sol.site_base]) / 2.0
    psi0 = float(np.max(-phi_all))
    owner = np.repeat(np.arange(len(sol), dtype=np.int64), np.diff(sol.offsets))
    base_sites = sol.points[owner]
    base_w = sol.weights[owner]
    if sol.periodic:
        L = sol.side
        star_v, star_s = [], []
        for zx in (-L, 0.0, L):
            for zy in (-L, 0.0, L):
                z = np.array([zx, zy])
                vv = sol.verts + z
                pp = base_sites + z
                ph = ((pp**2).sum(axis=1) - base_w) / 2.0
                star_v.append(vv)
                star_s.append((vv * pp).sum(axis=1) - ph)
        star_verts = np.concatenate(star_v)
        star_vals = np.concatenate(star_s)
        reach_psi = L / 2.0 + sol.margin / 2.0
        reach_star = L
    else:
        ph = ((base_sites**2).sum(axis=1) - base_w) / 2.0
        star_verts = sol.verts
        star_vals = (sol.verts * base_sites).sum(axis=1) - ph
        reach_psi = math.inf
        reach_star = math.inf
    return PotentialPair(
        sites=sol.sites,
        phi=phi_all,
        psi0=psi0,
        star_verts=star_verts,
        star_vals=star_vals,
        reach_psi=reach_psi,
        reach_star=reach_star,
    )


def second_difference(pp: PotentialPair, y, h) -> float:
    """D^2_h psi*(y); independent of the additive normalization by design."""
    y = np.asarray(y, dtype=float)
    h = np.asarray(h, dtype=float)
    return (
        pp.psi_star_raw(y + h) + pp.psi_star_raw(y - h) - 2.0 * pp.psi_star_raw(y)
    )


def dual_functional(domain: Domain, density: float, points, masses, w) -> float:
    """Kantorovich dual value at weights w (for optimality spot checks)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nu = np.asarray(masses, dtype=float)
    w = np.asarray(w, dtype=float)
    n = len(pts)
    if domain.kind == "torus":
        L = domain.side
        sites, base = _torus_sites(wrap(pts, L), L, L)
        lim = 1.5 * L * (1 + 1e-12)
        frame = np.array([[-lim, -lim], [lim, -lim], [lim, lim], [-lim, lim]])
    else:
        sites, base = pts, np.arange(n, dtype=np.int64)
        frame = domain.boundary_polygon()
    cc = build_complex(sites, w[base], frame, build=np.arange(n, dtype=np.int64))
    transport = density * cc.dist_sq_integral(sites[:n]).sum()
    return float((nu * w).sum() + transport - (w * density * cc.area).sum())


def solution_text(sol: TransportSolution) -> str:
    """Weights and cost in structured text (one weight line per target)."""
    lines = [
        "L=%.17g periodic=%d n=%d cost=%.17g" % (
            sol.side,
            int(sol.periodic),
            len(sol),
            sol.cost,
        )
    ]
    for (x, y), m, w in zip(sol.points, sol.masses, sol.weights):
        lines.append("%.17g %.17g %.17g %.17g" % (x, y, m, w))
    return "\n".join(lines) + "\n"
