"""Point configurations and seeded samplers for unit-intensity Poisson clouds.

Configurations are immutable; points are stored sorted lexicographically in
fundamental-domain coordinates so that serialization is canonical and
round-trips bit-exactly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Domain, RngStream, square, torus, wrap

__all__ = [
    "PointConfiguration",
    "sample_poisson",
    "sample_fixed_n",
    "restrict",
    "shift",
    "periodize",
    "poisson_count",
    "serialize",
    "deserialize",
]

_FMT = "%.17g"  # shortest representation that round-trips float64


def _lexsort(points: np.ndarray, masses: np.ndarray):
    order = np.lexsort((points[:, 1], points[:, 0]))
    return points[order], masses[order]


@dataclass(frozen=True)
class PointConfiguration:
    """Weighted Dirac cloud on a square or torus domain."""

    points: np.ndarray
    domain: Domain
    masses: np.ndarray = None
    periodic: bool = False

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(np.atleast_2d(self.points), dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must be an (n, 2) array")
        masses = self.masses
        if masses is None:
            masses = np.ones(len(pts))
        masses = np.ascontiguousarray(masses, dtype=float)
        if masses.shape != (len(pts),):
            raise ValueError("masses must match points")
        if len(masses) and not (masses > 0).all():
            raise ValueError("masses must be positive")
        if len(pts) and not self.domain.contains(pts).all():
            raise ValueError("points outside the fundamental region")
        pts, masses = _lexsort(pts, masses)
        pts.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", masses)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def side(self) -> float:
        return self.domain.side

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def count_box(self, lo, hi) -> float:
        """Total mass in the box [lo, hi); wraps around on periodic clouds."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if not self.periodic:
            m = ((self.points >= lo) & (self.points < hi)).all(axis=1)
            return float(self.masses[m].sum())
        L = self.side
        total = 0.0
        for zx in (-L, 0.0, L):
            for zy in (-L, 0.0, L):
                p = self.points + np.array([zx, zy])
                m = ((p >= lo) & (p < hi)).all(axis=1)
                total += float(self.masses[m].sum())
        return total

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        return serialize(self) == serialize(other)


def poisson_count(lam: float, gen: np.random.Generator) -> int:
    """Poisson draw from the generator's uniform stream.

    Inversion (product of uniforms) up to lam <= 30, Hormann's PTRS
    transformed rejection above; both consume only ``gen.random()`` so the
    draw is pinned to the underlying bit stream.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if lam == 0:
        return 0
    if lam <= 30.0:
        limit = math.exp(-lam)
        n = 0
        prod = gen.random()
        while prod > limit:
            n += 1
            prod *= gen.random()
        return n
    # PTRS (Hormann 1993), valid for lam >= 10.
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = gen.random() - 0.5
        v = gen.random()
        us = 0.5 - abs(u)
        k = int(math.floor((2.0 * a / us + b) * u + lam + 0.43))
        if us >= 0.07 and v <= v_r:
            return k
        if k < 0 or (us < 0.013 and v > us):
            continue
        lhs = math.log(v * inv_alpha / (a / (us * us) + b))
        if lhs <= k * loglam - lam - math.lgamma(k + 1.0):
            return k


def sample_poisson(L: float, rng: RngStream) -> PointConfiguration:
    """Unit-intensity Poisson cloud on the centered square of side L."""
    if not L > 0:
        raise ValueError("L must be positive")
    gen = rng.generator()
    n = poisson_count(L * L, gen)
    pts = gen.random((n, 2)) * L - L / 2.0
    return PointConfiguration(pts, square(L))


def sample_fixed_n(n: int, side: float, rng: RngStream) -> PointConfiguration:
    """Exactly n iid uniform points on the centered square."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.generator()
    pts = gen.random((n, 2)) * side - side / 2.0
    return PointConfiguration(pts, square(side))


def restrict(cfg: PointConfiguration, ell: float) -> PointConfiguration:
    """Points with both coordinates in [-ell/2, ell/2), on a square domain."""
    if ell > cfg.side * (1 + 1e-12):
        raise ValueError("restriction scale exceeds the domain side")
    h = ell / 2.0
    m = ((cfg.points >= -h) & (cfg.points < h)).all(axis=1)
    return PointConfiguration(cfg.points[m], square(ell), cfg.masses[m])


def shift(cfg: PointConfiguration, z) -> PointConfiguration:
    """Shift action: every point y becomes y - z, wrapped to the torus."""
    if not cfg.periodic:
        raise ValueError("shift requires a periodic configuration")
    z = np.asarray(z, dtype=float)
    pts = wrap(cfg.points - z, cfg.side)
    return PointConfiguration(pts, cfg.domain, cfg.masses, periodic=True)


def periodize(cfg: PointConfiguration) -> PointConfiguration:
    """Flag the configuration as the torus-periodic extension of itself."""
    if cfg.domain.kind not in ("square", "torus"):
        raise ValueError("periodize requires a square domain")
    return PointConfiguration(cfg.points, torus(cfg.side), cfg.masses, periodic=True)


def serialize(cfg: PointConfiguration) -> str:
    """Canonical text form: header then one 'x y mass' line per point."""
    buf = io.StringIO()
    buf.write(
        "L=%s periodic=%d n=%d\n" % (_FMT % cfg.side, int(cfg.periodic), len(cfg))
    )
    for (x, y), m in zip(cfg.points, cfg.masses):
        buf.write("%s %s %s\n" % (_FMT % x, _FMT % y, _FMT % m))
    return buf.getvalue()


def deserialize(text: str) -> PointConfiguration:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty serialization")
    header = dict(kv.split("=", 1) for kv in lines[0].split())
    L = float(header["L"])
    periodic = bool(int(header["periodic"]))
    n = int(header["n"])
    if len(lines) - 1 != n:
        raise ValueError("point count does not match header")
    data = np.array([[float(t) for t in ln.split()] for ln in lines[1:]])
    data = data.reshape(n, 3)
    dom = torus(L) if periodic else square(L)
    return PointConfiguration(data[:, :2], dom, data[:, 2], periodic=periodic)
