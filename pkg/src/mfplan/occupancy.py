"""Sliding three-state voxel map.

The grid moves with the vehicle and stores, per voxel, one of Unknown, Free
or Occupied.  Depth scans are fused by 3D Bresenham ray tracing.  The window
is always aligned to the global voxel lattice so sliding is an integer copy.
"""
from __future__ import annotations

import enum
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

UNKNOWN = 0
FREE = 1
OCCUPIED = 2
# points within this fraction of a voxel below a lattice plane bin above it,
# so that k * s lands in voxel k despite rounding in the division
LATTICE_EPS = 1e-9


class VoxelState(enum.IntEnum):
    UNKNOWN = UNKNOWN
    FREE = FREE
    OCCUPIED = OCCUPIED


class OutOfBounds(ValueError):
    """Raised when a world point lies outside the current map window."""


class NoFeasibleGoal(RuntimeError):
    """Raised when no Free or frontier voxel exists in the window."""


@dataclass
class DepthScan:
    """One depth frame expressed in the world frame.

    ``points`` are ray endpoints that hit something, ``max_range_dirs`` are unit
    directions of rays that travelled ``max_range`` without a hit.
    """

    origin: np.ndarray
    points: np.ndarray
    max_range_dirs: np.ndarray
    max_range: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.max_range_dirs = np.asarray(self.max_range_dirs, dtype=float).reshape(-1, 3)
        self.max_range = float(self.max_range)


@dataclass
class SlidingGrid:
    """Dense voxel window over the global lattice ``k * voxel_size``.

    ``origin`` is the global integer index of local voxel (0, 0, 0); the window
    covers ``[origin * s, (origin + dims) * s)`` per axis.
    """

    voxel_size: float
    dims: np.ndarray
    origin: np.ndarray
    cells: np.ndarray = field(repr=False)
    stamp: int = 0

    @classmethod
    def create(cls, center, side_lengths=(20.0, 20.0, 6.0), voxel_size=0.1):
        s = float(voxel_size)
        dims = np.array([int(round(L / s)) for L in side_lengths], dtype=np.int64)
        if np.any(dims < 1):
            raise ValueError("side lengths must span at least one voxel")
        origin = _snap_origin(np.asarray(center, float), dims, s)
        cells = np.zeros(tuple(dims), dtype=np.uint8)
        return cls(s, dims, origin, cells, 0)

    @property
    def lo(self) -> np.ndarray:
        return self.origin * self.voxel_size

    @property
    def hi(self) -> np.ndarray:
        return (self.origin + self.dims) * self.voxel_size

    @property
    def center(self) -> np.ndarray:
        return (self.origin + self.dims / 2.0) * self.voxel_size

    @property
    def side_lengths(self) -> np.ndarray:
        return self.dims * self.voxel_size

    def contains(self, p) -> bool:
        idx = lattice_index(p, self.voxel_size) - self.origin
        return bool(np.all(idx >= 0) and np.all(idx < self.dims))

    def voxel_center(self, idx) -> np.ndarray:
        return (self.origin + np.asarray(idx, dtype=np.int64) + 0.5) * self.voxel_size

    def snapshot(self) -> "SlidingGrid":
        """Read-only copy suitable for handing to planners."""
        cells = self.cells.copy()
        cells.flags.writeable = False
        return SlidingGrid(self.voxel_size, self.dims.copy(), self.origin.copy(), cells, self.stamp)

    def copy(self) -> "SlidingGrid":
        return SlidingGrid(self.voxel_size, self.dims.copy(), self.origin.copy(),
                           self.cells.copy(), self.stamp)

    # -- binary layout: header (center xyz f64, dims xyz i32, s f64, stamp u64), body u8
    _HEADER = struct.Struct("<3d3id Q")

    def to_bytes(self) -> bytes:
        head = self._HEADER.pack(*self.center, *(int(d) for d in self.dims),
                                 self.voxel_size, int(self.stamp))
        return head + np.ascontiguousarray(self.cells, dtype=np.uint8).tobytes(order="C")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SlidingGrid":
        n = cls._HEADER.size
        cx, cy, cz, nx, ny, nz, s, stamp = cls._HEADER.unpack(blob[:n])
        dims = np.array([nx, ny, nz], dtype=np.int64)
        body = np.frombuffer(blob[n:], dtype=np.uint8)
        if body.size != int(np.prod(dims)):
            raise ValueError(f"body has {body.size} voxels, header says {int(np.prod(dims))}")
        if body.max(initial=0) > OCCUPIED:
            raise ValueError("voxel byte outside {0, 1, 2}")
        origin = _snap_origin(np.array([cx, cy, cz]), dims, s)
        return cls(s, dims, origin, body.reshape(tuple(dims)).copy(), int(stamp))


def lattice_index(p, s: float) -> np.ndarray:
    """Global integer voxel index of world point(s) ``p`` (half-open bins)."""
    return np.floor(np.asarray(p, float) / s + LATTICE_EPS).astype(np.int64)


def _snap_origin(center: np.ndarray, dims: np.ndarray, s: float) -> np.ndarray:
    return np.round(center / s - dims / 2.0).astype(np.int64)


def world_to_voxel(grid: SlidingGrid, p) -> tuple[int, int, int]:
    """Local voxel index of world point ``p`` (half-open binning per axis)."""
    p = np.asarray(p, dtype=float)
    idx = lattice_index(p, grid.voxel_size) - grid.origin
    if np.any(idx < 0) or np.any(idx >= grid.dims):
        raise OutOfBounds(f"point {p.tolist()} outside window [{grid.lo.tolist()}, {grid.hi.tolist()})")
    return int(idx[0]), int(idx[1]), int(idx[2])


def query(grid: SlidingGrid, p) -> VoxelState:
    try:
        idx = world_to_voxel(grid, p)
    except OutOfBounds:
        return VoxelState.UNKNOWN
    return VoxelState(int(grid.cells[idx]))


def query_many(grid: SlidingGrid, pts: np.ndarray) -> np.ndarray:
    """Vectorised ``query``: uint8 states, Unknown outside the window."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    idx = lattice_index(pts, grid.voxel_size) - grid.origin
    inside = np.all((idx >= 0) & (idx < grid.dims), axis=1)
    out = np.zeros(len(pts), dtype=np.uint8)
    if inside.any():
        i = idx[inside]
        out[inside] = grid.cells[i[:, 0], i[:, 1], i[:, 2]]
    return out


# ---------------------------------------------------------------- ray tracing

@njit(cache=True)
def _bresenham_into(a0, a1, a2, b0, b1, b2, out):
    """Write the 3D Bresenham line a->b into ``out`` (n, 3); returns n.

    Ties are broken from the lexicographically smaller endpoint so that a->b
    and b->a cover the same voxels.
    """
    if (b0, b1, b2) < (a0, a1, a2):
        n = _bresenham_raw(b0, b1, b2, a0, a1, a2, out)
        for i in range(n // 2):
            for k in range(3):
                t = out[i, k]
                out[i, k] = out[n - 1 - i, k]
                out[n - 1 - i, k] = t
        return n
    return _bresenham_raw(a0, a1, a2, b0, b1, b2, out)


@njit(cache=True)
def _bresenham_raw(a0, a1, a2, b0, b1, b2, out):
    d0 = abs(b0 - a0)
    d1 = abs(b1 - a1)
    d2 = abs(b2 - a2)
    s0 = 1 if b0 > a0 else -1
    s1 = 1 if b1 > a1 else -1
    s2 = 1 if b2 > a2 else -1
    x, y, z = a0, a1, a2
    n = 0
    out[n, 0] = x
    out[n, 1] = y
    out[n, 2] = z
    n += 1
    if d0 >= d1 and d0 >= d2:
        e1 = 2 * d1 - d0
        e2 = 2 * d2 - d0
        for _ in range(d0):
            if e1 > 0:
                y += s1
                e1 -= 2 * d0
            if e2 > 0:
                z += s2
                e2 -= 2 * d0
            e1 += 2 * d1
            e2 += 2 * d2
            x += s0
            out[n, 0] = x
            out[n, 1] = y
            out[n, 2] = z
            n += 1
    elif d1 >= d0 and d1 >= d2:
        e0 = 2 * d0 - d1
        e2 = 2 * d2 - d1
        for _ in range(d1):
            if e0 > 0:
                x += s0
                e0 -= 2 * d1
            if e2 > 0:
                z += s2
                e2 -= 2 * d1
            e0 += 2 * d0
            e2 += 2 * d2
            y += s1
            out[n, 0] = x
            out[n, 1] = y
            out[n, 2] = z
            n += 1
    else:
        e0 = 2 * d0 - d2
        e1 = 2 * d1 - d2
        for _ in range(d2):
            if e0 > 0:
                x += s0
                e0 -= 2 * d2
            if e1 > 0:
                y += s1
                e1 -= 2 * d2
            e0 += 2 * d0
            e1 += 2 * d1
            z += s2
            out[n, 0] = x
            out[n, 1] = y
            out[n, 2] = z
            n += 1
    return n


def bresenham3d(a, b) -> list[tuple[int, int, int]]:
    """Voxels on the 26-connected digital line from ``a`` to ``b`` inclusive."""
    a = [int(v) for v in a]
    b = [int(v) for v in b]
    n_max = max(abs(b[i] - a[i]) for i in range(3)) + 1
    buf = np.empty((n_max, 3), dtype=np.int64)
    n = _bresenham_into(a[0], a[1], a[2], b[0], b[1], b[2], buf)
    return [tuple(int(v) for v in row) for row in buf[:n]]


@njit(cache=True)
def _clip_to_box(o, e, lo, hi):
    """Liang-Barsky clip of segment o->e to [lo, hi]; returns (t_exit, clipped)."""
    t1 = 1.0
    for k in range(3):
        d = e[k] - o[k]
        if d > 0.0:
            t = (hi[k] - o[k]) / d
            if t < t1:
                t1 = t
        elif d < 0.0:
            t = (lo[k] - o[k]) / d
            if t < t1:
                t1 = t
    if t1 < 1.0:
        return max(t1, 0.0), True
    return 1.0, False


@njit(cache=True)
def _fuse_kernel(cells, origin, s, org, points, dirs, max_range):
    nx, ny, nz = cells.shape
    lo = np.empty(3)
    hi = np.empty(3)
    dims = np.array([nx, ny, nz])
    # shrink by a tiny margin so clipped endpoints bin inside the window
    for k in range(3):
        lo[k] = origin[k] * s + 1e-9 * s
        hi[k] = (origin[k] + dims[k]) * s - 1e-6 * s
    o_idx = np.empty(3, dtype=np.int64)
    for k in range(3):
        o_idx[k] = np.int64(np.floor(org[k] / s + 1e-9)) - origin[k]
    n_hits = points.shape[0]
    n_total = n_hits + dirs.shape[0]
    longest = 0
    for k in range(3):
        longest += dims[k]
    buf = np.empty((longest + 2, 3), dtype=np.int64)
    hit_idx = np.full((n_hits, 3), -1, dtype=np.int64)
    e = np.empty(3)
    for r in range(n_total):
        is_hit = r < n_hits
        if is_hit:
            for k in range(3):
                e[k] = points[r, k]
        else:
            for k in range(3):
                e[k] = org[k] + dirs[r - n_hits, k] * max_range
        t, clipped = _clip_to_box(org, e, lo, hi)
        if clipped:
            for k in range(3):
                e[k] = org[k] + t * (e[k] - org[k])
        e0 = np.int64(np.floor(e[0] / s + 1e-9)) - origin[0]
        e1 = np.int64(np.floor(e[1] / s + 1e-9)) - origin[1]
        e2 = np.int64(np.floor(e[2] / s + 1e-9)) - origin[2]
        e0 = min(max(e0, 0), nx - 1)
        e1 = min(max(e1, 0), ny - 1)
        e2 = min(max(e2, 0), nz - 1)
        n = _bresenham_into(o_idx[0], o_idx[1], o_idx[2], e0, e1, e2, buf)
        carve_all = (not is_hit) or clipped
        last = n if carve_all else n - 1
        for i in range(last):
            cells[buf[i, 0], buf[i, 1], buf[i, 2]] = 1
        if is_hit and not clipped:
            hit_idx[r, 0] = e0
            hit_idx[r, 1] = e1
            hit_idx[r, 2] = e2
    for r in range(n_hits):
        if hit_idx[r, 0] >= 0:
            cells[hit_idx[r, 0], hit_idx[r, 1], hit_idx[r, 2]] = 2


def fuse_scan(grid: SlidingGrid, scan: DepthScan) -> tuple[SlidingGrid, float]:
    """Ray-trace ``scan`` into ``grid`` in place.

    Pass-through voxels are carved Free first and hit voxels are marked
    Occupied afterwards, so a hit is never erased by a neighbouring ray of the
    same scan.  Rays leaving the window are clipped and carved like max-range
    rays.  Returns the grid and the wall-clock fusion time in seconds.
    """
    if not grid.contains(scan.origin):
        raise OutOfBounds("scan origin outside the map window")
    t0 = time.perf_counter()
    if not grid.cells.flags.writeable:
        raise ValueError("cannot fuse into a read-only snapshot")
    _fuse_kernel(grid.cells, grid.origin, grid.voxel_size, scan.origin,
                 scan.points, scan.max_range_dirs, scan.max_range)
    grid.stamp += 1
    return grid, time.perf_counter() - t0


def slide_to(grid: SlidingGrid, new_center) -> SlidingGrid:
    """Recentre the window on the lattice nearest ``new_center`` (in place)."""
    new_origin = _snap_origin(np.asarray(new_center, float), grid.dims, grid.voxel_size)
    shift = new_origin - grid.origin
    if not shift.any():
        return grid
    out = np.zeros_like(grid.cells)
    src, dst = [], []
    for k in range(3):
        n, d = int(grid.dims[k]), int(shift[k])
        if abs(d) >= n:
            src = None
            break
        if d >= 0:
            src.append(slice(d, n))
            dst.append(slice(0, n - d))
        else:
            src.append(slice(0, n + d))
            dst.append(slice(-d, n))
    if src is not None:
        out[tuple(dst)] = grid.cells[tuple(src)]
    grid.cells = out
    grid.origin = new_origin
    return grid


# ------------------------------------------------------------ goal projection

@njit(cache=True)
def _is_candidate(cells, i, j, k, mask, any_unknown):
    if mask.shape[0] > 0 and not mask[i, j, k]:
        return False
    c = cells[i, j, k]
    if c == 1:
        return True
    if c != 0:
        return False
    if any_unknown:
        return True
    nx, ny, nz = cells.shape
    if i > 0 and cells[i - 1, j, k] == 1:
        return True
    if i < nx - 1 and cells[i + 1, j, k] == 1:
        return True
    if j > 0 and cells[i, j - 1, k] == 1:
        return True
    if j < ny - 1 and cells[i, j + 1, k] == 1:
        return True
    if k > 0 and cells[i, j, k - 1] == 1:
        return True
    if k < nz - 1 and cells[i, j, k + 1] == 1:
        return True
    return False


@njit(cache=True)
def _nearest_candidate(cells, q, mask, any_unknown):
    """Nearest candidate voxel to local-continuous point ``q`` (voxel units)."""
    nx, ny, nz = cells.shape
    c0 = min(max(int(np.floor(q[0])), 0), nx - 1)
    c1 = min(max(int(np.floor(q[1])), 0), ny - 1)
    c2 = min(max(int(np.floor(q[2])), 0), nz - 1)
    best = np.inf
    bi, bj, bk = -1, -1, -1
    rmax = max(nx, max(ny, nz))
    for r in range(rmax + 1):
        if bi >= 0 and (r - 0.5) > np.sqrt(best):
            break
        for i in range(max(c0 - r, 0), min(c0 + r, nx - 1) + 1):
            on_i = abs(i - c0) == r
            for j in range(max(c1 - r, 0), min(c1 + r, ny - 1) + 1):
                on_j = abs(j - c1) == r
                if on_i or on_j:
                    k_lo = max(c2 - r, 0)
                    k_hi = min(c2 + r, nz - 1)
                    k_step = 1
                else:
                    k_lo = c2 - r
                    k_hi = c2 + r
                    k_step = 2 * r
                for k in range(k_lo, k_hi + 1, k_step):
                    if k < 0 or k >= nz:
                        continue
                    if not _is_candidate(cells, i, j, k, mask, any_unknown):
                        continue
                    d = (i + 0.5 - q[0]) ** 2 + (j + 0.5 - q[1]) ** 2 + (k + 0.5 - q[2]) ** 2
                    if d < best:
                        best = d
                        bi, bj, bk = i, j, k
    return bi, bj, bk


def ray_box_exit(a, b, lo, hi) -> np.ndarray:
    """Point where the ray a->b leaves the box [lo, hi] (``a`` inside)."""
    a = np.asarray(a, float)
    d = np.asarray(b, float) - a
    t_best = np.inf
    for k in range(3):
        if d[k] > 0:
            t_best = min(t_best, (hi[k] - a[k]) / d[k])
        elif d[k] < 0:
            t_best = min(t_best, (lo[k] - a[k]) / d[k])
    if not np.isfinite(t_best):
        return a.copy()
    return a + t_best * d


def project_goal(grid: SlidingGrid, A, G_term, mask: np.ndarray | None = None,
                 any_unknown: bool = False) -> np.ndarray:
    """Project the terminal goal into the window and snap it to a reachable voxel.

    ``Q`` is ``G_term`` when inside the window, otherwise where the ray from
    ``A`` towards ``G_term`` leaves the window.  The returned goal is the centre
    of the Free or frontier voxel (Unknown, 6-adjacent to Free) nearest to
    ``Q``.  With ``any_unknown`` every Unknown voxel is a candidate, not only
    frontier ones.  ``mask`` optionally restricts the admissible voxels.
    """
    G_term = np.asarray(G_term, float)
    if grid.contains(G_term):
        Q = G_term
    else:
        Q = ray_box_exit(A, G_term, grid.lo, grid.hi)
    q_local = Q / grid.voxel_size - grid.origin
    q_local = np.clip(q_local, 0.0, grid.dims - 1e-9)
    m = np.zeros((0, 0, 0), dtype=np.bool_) if mask is None else mask
    i, j, k = _nearest_candidate(grid.cells, q_local, m, bool(any_unknown))
    if i < 0:
        raise NoFeasibleGoal("window holds no candidate voxel")
    return grid.voxel_center((i, j, k))


# ------------------------------------------------------------------ inflation

def ball_offsets(radius_vox: int) -> np.ndarray:
    r = int(radius_vox)
    rng = np.arange(-r, r + 1)
    g = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), -1).reshape(-1, 3)
    return g[(g ** 2).sum(1) <= r * r].astype(np.int64)


@njit(cache=True)
def _stamp_offsets(src, offsets, out):
    nx, ny, nz = src.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if src[i, j, k]:
                    for o in range(offsets.shape[0]):
                        a = i + offsets[o, 0]
                        b = j + offsets[o, 1]
                        c = k + offsets[o, 2]
                        if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz:
                            out[a, b, c] = True


def inflate(mask: np.ndarray, radius_vox: int) -> np.ndarray:
    """Dilate a boolean mask by a Euclidean ball of ``radius_vox`` voxels."""
    mask = np.asarray(mask, dtype=np.bool_)
    if radius_vox <= 0:
        return mask.copy()
    out = np.zeros_like(mask)
    _stamp_offsets(mask, ball_offsets(radius_vox), out)
    return out
