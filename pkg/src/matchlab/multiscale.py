"""Per-realization multiscale statistics: data term, Theta, r_*, shift.

The data term at scale ell is the Euclidean W2^2 between the restricted
cloud and its own average density on Q_ell, normalized by ell^4.  Small
restrictions (< 8 points) go through the exact assignment oracle on a grid;
everything else uses the semi-discrete solver with the true uniform source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import w2_uniform_grid
from .geometry import Domain, DyadicLadder, square, wrap
from .pointcloud import PointConfiguration, restrict
from .semidiscrete import (
    SolverError,
    TransportSolution,
    inverse_cell,
    optimal_shift_excess,
    shifted_excess,
    solve_semidiscrete,
)

__all__ = [
    "ScaleRecord",
    "ScaleScan",
    "scan_data_term",
    "compute_theta",
    "ThetaStat",
    "compute_rstar",
    "StarRadius",
    "rstar_bound",
    "compute_shift",
    "ShiftRecord",
    "main_estimate_profile",
    "ProfileRow",
]

ASSIGNMENT_CUTOFF = 8  # below this many points the grid oracle solves the scale


@dataclass
class ScaleRecord:
    ell: float
    n_points: int
    w2sq: float = math.nan
    data_term: float = math.nan
    method: str = ""
    grid_m: int = 0
    error_estimate: float = math.nan
    failed: str = ""  # non-empty reason marks the scale as unusable


@dataclass
class ScaleScan:
    side: float
    n_total: int
    records: list[ScaleRecord]

    def record_at(self, ell: float) -> ScaleRecord:
        for r in self.records:
            if abs(r.ell - ell) <= 1e-9 * max(1.0, ell):
                return r
        raise KeyError(f"no record at scale {ell}")

    def ok(self) -> bool:
        return all(not r.failed for r in self.records)


def _grid_m_for(n: int) -> int:
    return max(64, int(math.ceil(8.0 * math.sqrt(max(n, 1)))))


def scan_data_term(
    cfg: PointConfiguration,
    ladder: DyadicLadder,
    grid_m: int | None = None,
    tol: float = 1e-7,
) -> ScaleScan:
    """Euclidean W2^2(mu_ell, mu(Q_ell)/ell^2) for every ladder scale."""
    if ladder.ceiling > cfg.side * (1 + 1e-12):
        raise ValueError("ladder exceeds the configuration domain")
    records = []
    for ell in ladder:
        sub = restrict(cfg, ell)
        n = len(sub)
        rec = ScaleRecord(ell=ell, n_points=n)
        if n == 0:
            rec.failed = "empty restriction"
            records.append(rec)
            continue
        try:
            if n < ASSIGNMENT_CUTOFF:
                m = grid_m or _grid_m_for(n)
                gc = w2_uniform_grid(sub, ell, m, metric="euclid")
                rec.w2sq = gc.cost
                rec.method = "assignment"
                rec.grid_m = m
                rec.error_estimate = gc.resolution_error
            else:
                sol = solve_semidiscrete(square(ell), n / ell**2, sub, tol=tol)
                rec.w2sq = sol.cost
                rec.method = "semidiscrete"
                rec.error_estimate = sol.tol * ell * ell * ell * ell
            rec.data_term = rec.w2sq / ell**4
        except (SolverError, RuntimeError) as exc:
            rec.failed = f"solver failure: {exc}"
        records.append(rec)
    return ScaleScan(side=cfg.side, n_total=len(cfg), records=records)


@dataclass
class ThetaStat:
    theta: float
    per_scale: list[tuple[float, float]]
    lower_bound_only: bool = False


def compute_theta(scan: ScaleScan) -> ThetaStat:
    """Theta = sup over scales ell_k >= 2 of W2^2 / (ell_k^2 log ell_k)."""
    vals = []
    incomplete = False
    for rec in scan.records:
        if rec.ell < 2.0 * (1 - 1e-12):
            continue
        if rec.failed:
            incomplete = True
            continue
        vals.append((rec.ell, rec.w2sq / (rec.ell**2 * math.log(rec.ell))))
    theta = max((v for _, v in vals), default=0.0)
    return ThetaStat(theta=theta, per_scale=vals, lower_bound_only=incomplete)


def rstar_bound(ell: float, r: float) -> float:
    """The admissible data-term bound log(ell/r) / (ell/r)^2."""
    t = ell / r
    return math.log(t) / t**2


@dataclass
class StarRadius:
    r_star: float
    r_tilde: float
    min_support_dist: float
    density_ok: bool
    support_nonempty: bool
    from_convention: bool  # r_tilde fell back to L/2 (empty feasible set)
    theta: float = math.nan


def _predicate(scan: ScaleScan, r: float) -> bool:
    L = scan.side
    for rec in scan.records:
        if rec.ell < 2.0 * r - 1e-12 or rec.ell > L * (1 + 1e-12):
            continue
        if rec.failed or not math.isfinite(rec.data_term):
            return False
        if rec.data_term > rstar_bound(rec.ell, r):
            return False
    return True


def compute_rstar(
    scan: ScaleScan, cfg: PointConfiguration, grid_ratio: float = 2 ** (1 / 8)
) -> StarRadius:
    """Minimal radius on a geometric grid making the data-term bound hold.

    r_tilde is the smallest grid value r in [1, L/2] with
    D_ell <= log(ell/r)/(ell/r)^2 for every scanned dyadic ell in [2r, L],
    with the L/2 convention when no grid value works; r_* additionally
    dominates the distance from the origin to the support and is overridden
    to L/2 when the global density leaves [1/2, 2].
    """
    L = scan.side
    dens = len(cfg) / L**2
    density_ok = 0.5 <= dens <= 2.0
    if len(cfg):
        dist = np.hypot(cfg.points[:, 0], cfg.points[:, 1])
        min_dist = float(dist.min())
    else:
        min_dist = math.inf
    support_nonempty = len(cfg) > 0
    r_tilde = L / 2.0
    from_convention = True
    r = 1.0
    while r <= L / 2.0 * (1 + 1e-12):
        if _predicate(scan, r):
            r_tilde = r
            from_convention = False
            break
        r *= grid_ratio
    if not density_ok:
        r_star = L / 2.0
    else:
        r_star = max(r_tilde, min_dist if support_nonempty else L / 2.0)
    return StarRadius(
        r_star=float(r_star),
        r_tilde=float(r_tilde),
        min_support_dist=min_dist,
        density_ok=density_ok,
        support_nonempty=support_nonempty,
        from_convention=from_convention,
        theta=compute_theta(scan).theta,
    )


@dataclass
class ShiftRecord:
    y_index: int
    y_point: np.ndarray
    x_shift: np.ndarray  # barycenter of the pre-image cell of y
    y_norm: float
    x_norm: float
    bound_ratio: float = math.nan  # |x|^2 / (r*^2 log^3(L/r*))
    map_at_shift_ok: bool = True


def compute_shift(
    sol: TransportSolution, rstar: StarRadius | None = None
) -> ShiftRecord:
    """Nearest support point to the origin and the barycenter of its cell."""
    if not sol.periodic:
        raise ValueError("shift record requires the periodic (torus) solve")
    pts = sol.points
    d = np.hypot(pts[:, 0], pts[:, 1])
    best = d.min()
    cand = np.nonzero(d <= best + 1e-15 * max(1.0, best))[0]
    # lexicographic tie-break (points are stored sorted, so take the first)
    yi = int(cand[0])
    info = inverse_cell(sol, yi)
    xL = info.barycenter
    y = pts[yi]
    # interior check: the barycenter must map back to y
    from .semidiscrete import map_apply

    mapped = map_apply(sol, xL)
    ok = bool(np.allclose(mapped, y, atol=1e-9 * max(1.0, sol.side)))
    rec = ShiftRecord(
        y_index=yi,
        y_point=y.copy(),
        x_shift=np.asarray(xL, dtype=float),
        y_norm=float(np.hypot(*y)),
        x_norm=float(np.hypot(*xL)),
        map_at_shift_ok=ok,
    )
    if rstar is not None:
        L = sol.side
        rs = rstar.r_star
        if rs < L / 2.0 and L / rs > 1.0 + 1e-9:
            denom = rs**2 * math.log(L / rs) ** 3
            if denom > 0:
                rec.bound_ratio = rec.x_norm**2 / denom
    return rec


@dataclass
class ProfileRow:
    ell: float
    fixed_value: float  # (1/ell^4) int_{B_ell(x_L)} |T - (x - x_L)|^2
    fixed_bound: float  # log^3(ell/r*) / (ell/r*)^2
    fixed_ratio: float
    opt_value: float  # same with the optimal shift
    opt_bound: float  # log(ell/r*) / (ell/r*)^2
    opt_ratio: float
    xi_opt: np.ndarray
    skipped: str = ""


def main_estimate_profile(
    sol: TransportSolution,
    shift_rec: ShiftRecord,
    rstar: StarRadius,
    ladder: DyadicLadder,
) -> list[ProfileRow]:
    """Per-scale fixed-shift and optimal-shift excess ratios on B_ell(x_L)."""
    rows = []
    rs = rstar.r_star
    xL = shift_rec.x_shift
    for ell in ladder:
        if ell < 2.0 * rs * (1 - 1e-12):
            rows.append(
                ProfileRow(ell, math.nan, math.nan, math.nan, math.nan, math.nan,
                           math.nan, np.zeros(2), skipped="below 2 r_*")
            )
            continue
        t = ell / rs
        fixed_bound = math.log(t) ** 3 / t**2
        opt_bound = math.log(t) / t**2
        fixed = shifted_excess(sol, xL, ell, xi=xL) / ell**4
        opt_raw, xi = optimal_shift_excess(sol, xL, ell)
        opt = opt_raw / ell**4
        rows.append(
            ProfileRow(
                ell=ell,
                fixed_value=fixed,
                fixed_bound=fixed_bound,
                fixed_ratio=fixed / fixed_bound,
                opt_value=opt,
                opt_bound=opt_bound,
                opt_ratio=opt / opt_bound,
                xi_opt=xi,
            )
        )
    return rows
