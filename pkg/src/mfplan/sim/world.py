"""Ground-truth worlds made of vertical cylinders and axis-aligned boxes."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

CYL = 0
BOX = 1


@dataclass(frozen=True)
class Cylinder:
    center: tuple[float, float]
    radius: float
    z: tuple[float, float] = (0.0, 6.0)

    def to_dict(self):
        return {"type": "cylinder", "center": list(self.center), "radius": self.radius,
                "z": list(self.z)}


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def to_dict(self):
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass
class World:
    """Static scene plus the episode's start and terminal goal.

    ``rooms`` are optional (xmin, ymin, xmax, ymax) rectangles used only for
    behavioural analysis of office runs.
    """

    shapes: list = field(default_factory=list)
    bounds: tuple = ((0.0, 0.0, 0.0), (10.0, 10.0, 6.0))
    start: tuple = (0.0, 0.0, 1.5)
    goal: tuple = (10.0, 0.0, 1.5)
    seed: int | None = None
    name: str = "world"
    rooms: list = field(default_factory=list)
    floor: bool = True

    def __post_init__(self):
        self._packed = None

    # -- flat arrays for the numba kernels: [kind, a0..a5]
    @property
    def packed(self) -> np.ndarray:
        if self._packed is None:
            rows = []
            for s in self.shapes:
                if isinstance(s, Cylinder):
                    rows.append([CYL, s.center[0], s.center[1], s.radius, s.z[0], s.z[1], 0.0])
                else:
                    rows.append([BOX, *s.lo, *s.hi])
            self._packed = np.array(rows, dtype=float).reshape(-1, 7)
        return self._packed

    def distance(self, pts) -> np.ndarray:
        """Euclidean distance from each point to the nearest obstacle (0 inside).

        The floor, when present, is the half-space z <= 0.
        """
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        d = _distance_kernel(self.packed, pts)
        if self.floor:
            np.minimum(d, np.maximum(pts[:, 2], 0.0), out=d)
        return d

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed,
                "bounds": [list(self.bounds[0]), list(self.bounds[1])],
                "start": list(self.start), "goal": list(self.goal), "floor": self.floor,
                "rooms": [list(r) for r in self.rooms],
                "shapes": [s.to_dict() for s in self.shapes]}

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        shapes = []
        for i, s in enumerate(d.get("shapes", [])):
            kind = s.get("type")
            if kind == "cylinder":
                shapes.append(Cylinder(tuple(s["center"]), float(s["radius"]), tuple(s.get("z", (0.0, 6.0)))))
            elif kind == "box":
                shapes.append(Box(tuple(s["lo"]), tuple(s["hi"])))
            else:
                raise ValueError(f"shape {i}: unknown type {kind!r}")
        b = d.get("bounds", [[0, 0, 0], [10, 10, 6]])
        return cls(shapes, (tuple(b[0]), tuple(b[1])), tuple(d["start"]), tuple(d["goal"]),
                   d.get("seed"), d.get("name", "world"), [tuple(r) for r in d.get("rooms", [])],
                   bool(d.get("floor", True)))


def save_world(world: World, path) -> None:
    Path(path).write_text(json.dumps(world.to_dict(), indent=1))


def load_world(path) -> World:
    return World.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------ kernels

@njit(cache=True)
def _shape_distance(row, x, y, z):
    if row[0] == CYL:
        dr = math.sqrt((x - row[1]) ** 2 + (y - row[2]) ** 2) - row[3]
        dz = max(row[4] - z, z - row[5])
        if dr <= 0 and dz <= 0:
            return 0.0
        return math.sqrt(max(dr, 0.0) ** 2 + max(dz, 0.0) ** 2)
    dx = max(row[1] - x, 0.0, x - row[4])
    dy = max(row[2] - y, 0.0, y - row[5])
    dz = max(row[3] - z, 0.0, z - row[6])
    return math.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True)
def _distance_kernel(packed, pts):
    out = np.empty(pts.shape[0])
    for i in range(pts.shape[0]):
        best = np.inf
        for s in range(packed.shape[0]):
            d = _shape_distance(packed[s], pts[i, 0], pts[i, 1], pts[i, 2])
            if d < best:
                best = d
        out[i] = best
    return out


@njit(cache=True)
def _ray_shape(row, o, d, tmax):
    """Smallest t in [0, tmax] where o + t d enters the shape; inf if none."""
    if row[0] == CYL:
        best = np.inf
        fx = o[0] - row[1]
        fy = o[1] - row[2]
        a = d[0] * d[0] + d[1] * d[1]
        if a > 1e-18:
            b = 2 * (fx * d[0] + fy * d[1])
            c = fx * fx + fy * fy - row[3] * row[3]
            disc = b * b - 4 * a * c
            if disc >= 0:
                sq = math.sqrt(disc)
                for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
                    if 0 <= t <= tmax:
                        z = o[2] + t * d[2]
                        if row[4] <= z <= row[5] and t < best:
                            best = t
        if abs(d[2]) > 1e-18:
            for zc in (row[4], row[5]):
                t = (zc - o[2]) / d[2]
                if 0 <= t <= tmax and t < best:
                    x = o[0] + t * d[0] - row[1]
                    y = o[1] + t * d[1] - row[2]
                    if x * x + y * y <= row[3] * row[3]:
                        best = t
        return best
    t0 = 0.0
    t1 = tmax
    for k in range(3):
        lo = row[1 + k]
        hi = row[4 + k]
        if abs(d[k]) < 1e-18:
            if o[k] < lo or o[k] > hi:
                return np.inf
            continue
        ta = (lo - o[k]) / d[k]
        tb = (hi - o[k]) / d[k]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return np.inf
    return t0


@njit(cache=True)
def _cast_kernel(packed, cand, cen, rad, near, o, dirs, tmax, floor):
    """``cand`` is sorted by ``near`` (distance to the bounding sphere)."""
    n = dirs.shape[0]
    out = np.full(n, np.inf)
    for i in range(n):
        d = dirs[i]
        best = np.inf
        if floor and d[2] < 0:
            t = -o[2] / d[2]
            if 0 <= t <= tmax:
                best = t
        for m in range(cand.shape[0]):
            if near[m] > best:
                break
            c = cand[m]
            vx = cen[c, 0] - o[0]
            vy = cen[c, 1] - o[1]
            vz = cen[c, 2] - o[2]
            tca = vx * d[0] + vy * d[1] + vz * d[2]
            if tca < -rad[c]:
                continue
            if vx * vx + vy * vy + vz * vz - tca * tca > rad[c] * rad[c]:
                continue
            t = _ray_shape(packed[c], o, d, tmax)
            if t < best:
                best = t
        out[i] = best
    return out


def cast_rays(world: World, origin, dirs, max_range: float) -> np.ndarray:
    """Distance along each unit direction to the first hit (inf when none in range)."""
    o = np.asarray(origin, float)
    dirs = np.ascontiguousarray(np.asarray(dirs, float).reshape(-1, 3))
    P = world.packed
    if len(P):
        cen = np.where(P[:, :1] == CYL,
                       np.c_[P[:, 1], P[:, 2], 0.5 * (P[:, 4] + P[:, 5])],
                       0.5 * (P[:, 1:4] + P[:, 4:7]))
        rad = np.where(P[:, 0] == CYL,
                       np.hypot(P[:, 3], 0.5 * (P[:, 5] - P[:, 4])),
                       0.5 * np.linalg.norm(P[:, 4:7] - P[:, 1:4], axis=1))
        near = np.linalg.norm(cen - o, axis=1) - rad
        # shapes out of reach are dropped, the rest visited nearest first
        cand = np.nonzero(near <= max_range)[0]
        cand = cand[np.argsort(near[cand], kind="stable")].astype(np.int64)
        near_c = np.ascontiguousarray(near[cand])
    else:
        cen = np.zeros((0, 3))
        rad = np.zeros(0)
        cand = np.zeros(0, dtype=np.int64)
        near_c = np.zeros(0)
    return _cast_kernel(P, cand, np.ascontiguousarray(cen), np.ascontiguousarray(rad), near_c,
                        o, dirs, float(max_range), world.floor)


def segment_clearance(world: World, a, b, step: float = 0.01) -> float:
    """Minimum obstacle distance along segment a->b sampled at ``step``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / step)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return float(world.distance(a + t * (b - a)).min())
