"""Domains, periodic metric, dyadic scale ladders, and seeded RNG streams.

Everything here is immutable after construction and safe to share across
worker processes.  All lengths are in absolute units; points live in
fundamental-domain coordinates [-L/2, L/2)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Domain",
    "square",
    "ball",
    "torus",
    "PerMetric",
    "dist_per",
    "wrap",
    "DyadicLadder",
    "dyadic_ladder",
    "theta_ladder",
    "RngStream",
]


@dataclass(frozen=True)
class Domain:
    """A planar domain: centered square, ball, or flat torus.

    ``kind`` is one of ``"square"``, ``"ball"``, ``"torus"``.  Squares and
    tori are centered at the origin with side ``side``; balls carry an
    explicit center and radius.
    """

    kind: str
    side: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("square", "ball", "torus"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind in ("square", "torus") and not self.side > 0:
            raise ValueError("side must be positive")
        if self.kind == "ball" and not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def area(self) -> float:
        if self.kind == "ball":
            return math.pi * self.radius**2
        return self.side**2

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the fundamental region."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "ball":
            c = np.asarray(self.center)
            return np.hypot(*(pts - c).T) <= self.radius
        h = self.side / 2.0
        return ((pts >= -h) & (pts < h)).all(axis=1)

    def boundary_polygon(self, n_ball: int = 512) -> np.ndarray:
        """CCW polygon of the domain boundary (balls are polygonized)."""
        if self.kind == "ball":
            from .polyops import ball_polygon

            return ball_polygon(np.asarray(self.center), self.radius, n_ball)
        h = self.side / 2.0
        return np.array([[-h, -h], [h, -h], [h, h], [-h, h]])


def square(side: float) -> Domain:
    return Domain("square", side=side)


def ball(center, radius: float) -> Domain:
    return Domain("ball", center=(float(center[0]), float(center[1])), radius=radius)


def torus(side: float) -> Domain:
    return Domain("torus", side=side)


def wrap(pts: np.ndarray, side: float) -> np.ndarray:
    """Reduce coordinates to the fundamental domain [-side/2, side/2)."""
    pts = np.asarray(pts, dtype=float)
    return (pts + side / 2.0) % side - side / 2.0


def dist_per(x, y, side: float):
    """Torus distance: min over lattice shifts z of |x - y + z|.

    Inputs are reduced mod ``side`` first; supports broadcasting over
    leading axes with points in the final axis of length 2.
    """
    if not side > 0:
        raise ValueError("side must be positive")
    d = wrap(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), side)
    d = np.abs(d)
    d = np.minimum(d, side - d)
    return np.sqrt((d**2).sum(axis=-1))


@dataclass(frozen=True)
class PerMetric:
    """Periodic metric on the torus of the given side."""

    side: float

    def __call__(self, x, y):
        return dist_per(x, y, self.side)


@dataclass(frozen=True)
class DyadicLadder:
    """Strictly increasing geometric ladder of scales with a fixed ratio."""

    scales: tuple[float, ...]
    ratio: float = 2.0

    def __post_init__(self) -> None:
        if len(self.scales) == 0:
            raise ValueError("empty ladder")
        s = np.asarray(self.scales)
        if len(s) > 1:
            r = s[1:] / s[:-1]
            if not np.allclose(r, self.ratio, rtol=1e-12):
                raise ValueError("ladder scales must increase by the fixed ratio")

    @property
    def floor(self) -> float:
        return self.scales[0]

    @property
    def ceiling(self) -> float:
        return self.scales[-1]

    def __iter__(self):
        return iter(self.scales)

    def __len__(self) -> int:
        return len(self.scales)


def dyadic_ladder(floor: float, ceiling: float, ratio: float = 2.0) -> DyadicLadder:
    """All scales floor * ratio^k that fit inside [floor, ceiling].

    ``ratio`` must be an integer power of two.  Raises on an empty range.
    """
    if not (floor > 0 and ceiling > 0):
        raise ValueError("scales must be positive")
    if floor > ceiling * (1 + 1e-12):
        raise ValueError("empty ladder: floor exceeds ceiling")
    log2r = math.log2(ratio)
    if not (ratio > 1 and abs(log2r - round(log2r)) < 1e-12):
        raise ValueError("ratio must be a power of two")
    scales = []
    s = float(floor)
    while s <= ceiling * (1 + 1e-12):
        scales.append(s)
        s *= ratio
    return DyadicLadder(tuple(scales), ratio=float(ratio))


def theta_ladder(top: float, theta: float, floor: float) -> list[float]:
    """Decreasing Campanato ladder top, theta*top, ... down to floor."""
    if not (0 < theta < 1):
        raise ValueError("theta must be in (0, 1)")
    out = []
    s = float(top)
    while s >= floor * (1 - 1e-12):
        out.append(s)
        s *= theta
    return out


@dataclass(frozen=True)
class RngStream:
    """Deterministic RNG stream keyed by (seed, stream).

    Identical keys reproduce identical draws bit-exactly; each stream is
    owned by exactly one worker (split, never share).
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, k: int) -> "RngStream":
        # Disjoint by SeedSequence spawn-key semantics: fold k into the key.
        return RngStream(self.seed, (self.stream << 20) + 1 + k)
