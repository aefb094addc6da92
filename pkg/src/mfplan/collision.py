"""Collision predicate over the fused map plus recent, not yet fused clouds.

The map is only refreshed at the fusion rate, so obstacles seen since the last
fusion live in a small ring of k-d trees.  A primitive is clear when every
sample lies in acceptable map space and keeps ``r_drone`` from every buffered
point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .occupancy import FREE, OCCUPIED, SlidingGrid, lattice_index, query_many
from .primitives import JerkPrimitive, VelPrimitive, sample_positions


class StampOrderError(ValueError):
    """Clouds must arrive with strictly increasing stamps."""


@dataclass(frozen=True)
class KdCloud:
    tree: cKDTree = field(repr=False)
    stamp: int
    size: int

    @classmethod
    def build(cls, points, stamp: int) -> "KdCloud":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return cls(cKDTree(pts), int(stamp), len(pts))


@dataclass
class CloudBuffer:
    """Ring of k-d trees newer than the map watermark, oldest first."""

    capacity: int = 4
    clouds: tuple[KdCloud, ...] = ()
    watermark: int = -1
    nn_queries: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")

    def __len__(self) -> int:
        return len(self.clouds)

    @property
    def last_stamp(self) -> int:
        return self.clouds[-1].stamp if self.clouds else self.watermark

    def view(self) -> "CloudBuffer":
        """Point-in-time view; the tuple of trees is shared, never mutated."""
        return CloudBuffer(self.capacity, self.clouds, self.watermark)

    def advance_watermark(self, stamp: int) -> "CloudBuffer":
        """Drop clouds whose stamp is at or below ``stamp`` (already fused)."""
        self.watermark = max(self.watermark, int(stamp))
        self.clouds = tuple(c for c in self.clouds if c.stamp > self.watermark)
        return self


def push_cloud(buffer: CloudBuffer, points, stamp: int) -> CloudBuffer:
    if stamp <= buffer.last_stamp:
        raise StampOrderError(f"stamp {stamp} not after {buffer.last_stamp}")
    clouds = buffer.clouds + (KdCloud.build(points, stamp),)
    buffer.clouds = clouds[-buffer.capacity:]
    return buffer


def nearest_obstacle_distances(buffer: CloudBuffer, pts) -> np.ndarray:
    """Exact distance from each point to the nearest buffered cloud point."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    out = np.full(len(pts), np.inf)
    for c in buffer.clouds:
        if c.size == 0:
            continue
        d, _ = c.tree.query(pts)
        np.minimum(out, d, out=out)
    buffer.nn_queries += len(pts)
    return out


def nearest_obstacle_distance(buffer: CloudBuffer, p) -> float:
    return float(nearest_obstacle_distances(buffer, p)[0])


def polyline_samples(points, step: float) -> np.ndarray:
    """Points along a polyline with spacing at most ``step``, vertices included."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / step)))
        t = np.arange(1, n + 1)[:, None] / n
        out.append(a + t * (b - a))
    return np.concatenate(out)


def jerk_samples(prim: JerkPrimitive, step: float) -> np.ndarray:
    """Positions along a jerk primitive, spaced at most ``step`` apart, knots included."""
    T = prim.duration
    if T <= 0:
        return prim.pos[:1].copy()
    per = 8
    while True:
        ts = np.linspace(0.0, T, prim.N * per + 1)
        pts = sample_positions(prim, ts)
        gap = np.linalg.norm(np.diff(pts, axis=0), axis=1).max(initial=0.0)
        if gap <= step or per >= 4096:
            return pts
        per = int(per * max(2.0, math.ceil(gap / step)))


def primitive_samples(prim, step: float) -> np.ndarray:
    if isinstance(prim, JerkPrimitive):
        return jerk_samples(prim, step)
    if isinstance(prim, VelPrimitive):
        return polyline_samples([prim.p0, prim.pf], step)
    return polyline_samples(prim, step)


def points_clear(pts, grid: SlidingGrid, buffer: CloudBuffer | None, r_drone: float,
                 check_unknown: bool, blocked: np.ndarray | None = None) -> bool:
    """Pointwise clearance predicate shared by every primitive type.

    ``blocked`` is an optional padded mask (inflated obstacles, altitude band)
    in the grid's voxel frame; samples in blocked voxels are rejected too.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    st = query_many(grid, pts)
    if check_unknown:
        if np.any(st != FREE):
            return False
    elif np.any(st == OCCUPIED):
        return False
    if blocked is not None:
        idx = lattice_index(pts, grid.voxel_size) - grid.origin + 1
        idx = np.clip(idx, 0, np.asarray(blocked.shape) - 1)
        if np.any(blocked[idx[:, 0], idx[:, 1], idx[:, 2]]):
            return False
    if buffer is not None and len(buffer):
        if np.any(nearest_obstacle_distances(buffer, pts) < r_drone):
            return False
    return True


def primitive_clear(prim, grid: SlidingGrid, buffer: CloudBuffer | None, r_drone: float,
                    check_unknown: bool = True, blocked: np.ndarray | None = None) -> bool:
    """True when the whole primitive avoids obstacles (and Unknown if asked).

    ``prim`` may be a jerk primitive, a velocity primitive or a polyline.
    Samples are spaced at most half a voxel apart and include every knot.
    """
    pts = primitive_samples(prim, 0.5 * grid.voxel_size)
    return points_clear(pts, grid, buffer, r_drone, check_unknown, blocked)
