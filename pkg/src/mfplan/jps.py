"""3D Jump Point Search on a 26-connected voxel grid, plus path geometry.

Moves may not cut corners: a diagonal step needs every voxel of the unit
sub-cube it spans to be free.  Pruning rules are derived once at import from
the 3x3x3 neighbourhood: a neighbour of ``y`` reached from parent ``p`` is
pruned when some path ``p -> n`` avoiding ``y`` is strictly shorter, or equally
long and takes the higher-degree move first.  Everything else that is not a
natural (sub-move) successor is forced.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .occupancy import OCCUPIED, SlidingGrid, ball_offsets, inflate

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)


class NoPath(RuntimeError):
    """Raised when the goal cannot be reached through non-blocked voxels."""


# ------------------------------------------------------------ move tables
# Offsets are indexed in a 27-slot layout, slot = (dx+1)*9 + (dy+1)*3 + (dz+1);
# slot 13 is the centre voxel.

OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)
CENTER = 13
DIR_SLOTS = np.array([i for i in range(27) if i != CENTER], dtype=np.int64)
DEGREE = np.abs(OFFSETS).sum(axis=1)
STEP_LEN = np.array([0.0, 1.0, SQRT2, SQRT3])[DEGREE]


def _slot(o) -> int:
    return (o[0] + 1) * 9 + (o[1] + 1) * 3 + (o[2] + 1)


def _submoves(o) -> list[tuple[int, int, int]]:
    """All non-zero moves obtained by zeroing components of ``o`` (``o`` included)."""
    nz = [k for k in range(3) if o[k] != 0]
    out = []
    for r in range(1, len(nz) + 1):
        for keep in itertools.combinations(nz, r):
            out.append(tuple(o[k] if k in keep else 0 for k in range(3)))
    return out


def _move_cells(c, m) -> list[tuple[int, int, int]] | None:
    """Cells that must be free to step from cell ``c`` by ``m``, or None if any leaves the cube."""
    cells = []
    for sm in _submoves(m):
        q = tuple(c[k] + sm[k] for k in range(3))
        if max(abs(v) for v in q) > 1:
            return None
        cells.append(q)
    return cells


def _mask(cells) -> int:
    m = 0
    for q in cells:
        m |= 1 << _slot(q)
    return m


def _build_tables():
    n_slots = 27
    req = np.zeros(n_slots, dtype=np.int64)
    for s in DIR_SLOTS:
        req[s] = _mask(_submoves(tuple(OFFSETS[s])))
    natural = np.zeros((n_slots, n_slots), dtype=np.bool_)
    for s in DIR_SLOTS:
        for sm in _submoves(tuple(OFFSETS[s])):
            natural[s, _slot(sm)] = True
    natural[CENTER, DIR_SLOTS] = True

    moves = [tuple(OFFSETS[s]) for s in DIR_SLOTS]
    cube = [tuple(o) for o in OFFSETS if tuple(o) != (0, 0, 0)]
    alt_lists: dict[tuple[int, int], list[int]] = {}
    for sd in DIR_SLOTS:
        d = tuple(OFFSETS[sd])
        p = tuple(-v for v in d)
        for sn in DIR_SLOTS:
            if natural[sd, sn]:
                continue
            n = tuple(OFFSETS[sn])
            l_via = STEP_LEN[sd] + STEP_LEN[sn]
            found: list[int] = []
            if n == p:
                found.append(0)
            # strictly shorter detours inside the cube, at most three moves
            stack = [(p, 0.0, 0, (p,))]
            while stack:
                c, length, mask, visited = stack.pop()
                for m in moves:
                    q = tuple(c[k] + m[k] for k in range(3))
                    if q not in cube or q in visited:
                        continue
                    step = STEP_LEN[_slot(m)]
                    if length + step >= l_via - 1e-9:
                        continue
                    need = _move_cells(c, m)
                    if need is None:
                        continue
                    m2 = mask | _mask(need)
                    if q == n:
                        found.append(m2)
                    elif len(visited) < 3:
                        stack.append((q, length + step, m2, visited + (q,)))
            # tie broken toward taking the higher-degree move first
            if DEGREE[sn] > DEGREE[sd]:
                mid = tuple(p[k] + n[k] for k in range(3))
                if mid in cube:
                    a = _move_cells(p, n)
                    b = _move_cells(mid, d)
                    if a is not None and b is not None:
                        found.append(_mask(a) | _mask(b))
            found = sorted(set(f & ~(1 << CENTER) for f in found))
            minimal = [f for f in found if not any(g != f and (g & f) == g for g in found)]
            alt_lists[(int(sd), int(sn))] = minimal
    starts = np.zeros((n_slots, n_slots), dtype=np.int64)
    counts = np.zeros((n_slots, n_slots), dtype=np.int64)
    flat: list[int] = []
    for (sd, sn), lst in alt_lists.items():
        starts[sd, sn] = len(flat)
        counts[sd, sn] = len(lst)
        flat.extend(lst)
    alts = np.array(flat if flat else [0], dtype=np.int64)
    # non-natural candidate lists per arrival direction
    cand = np.full((n_slots, 26), -1, dtype=np.int64)
    for sd in range(n_slots):
        row = [int(sn) for sn in DIR_SLOTS if not natural[sd, sn]]
        cand[sd, : len(row)] = row
    return req, natural, starts, counts, alts, cand


REQ, NATURAL, ALT_START, ALT_COUNT, ALT_MASKS, NONNATURAL = _build_tables()
FULL_MASK = int(sum(1 << int(s) for s in DIR_SLOTS))


def _check_free_space_rules():
    # in an obstacle-free neighbourhood every non-natural neighbour must be pruned
    for sd in DIR_SLOTS:
        for sn in NONNATURAL[sd]:
            if sn < 0:
                break
            lo, cnt = ALT_START[sd, sn], ALT_COUNT[sd, sn]
            if not any((ALT_MASKS[lo + i] & FULL_MASK) == ALT_MASKS[lo + i] for i in range(cnt)):
                raise AssertionError(f"free-space rule broken for {OFFSETS[sd]} -> {OFFSETS[sn]}")


_check_free_space_rules()


# ------------------------------------------------------------ planning view

@dataclass
class PlanningMap:
    """Obstacle model the global planner searches over.

    ``blocked`` marks voxels JPS may not enter: Occupied voxels dilated by the
    vehicle radius, plus layers outside the optional altitude band.  It is
    padded by one blocked voxel on every side so the kernels skip bounds tests.
    """

    grid: SlidingGrid
    occupied: np.ndarray = field(repr=False)       # inflated Occupied, unpadded
    blocked: np.ndarray = field(repr=False)        # padded uint8
    inflate_voxels: int = 0
    z_band: tuple[float, float] | None = None

    @property
    def voxel_size(self) -> float:
        return self.grid.voxel_size

    def is_blocked(self, idx) -> bool:
        i, j, k = idx
        return bool(self.blocked[i + 1, j + 1, k + 1])

    def band_mask(self) -> np.ndarray:
        """Boolean mask of voxels inside the altitude band."""
        g = self.grid
        mask = np.ones(tuple(g.dims), dtype=np.bool_)
        if self.z_band is not None:
            zc = (g.origin[2] + np.arange(g.dims[2]) + 0.5) * g.voxel_size
            ok = (zc >= self.z_band[0]) & (zc <= self.z_band[1])
            mask[:, :, ~ok] = False
        return mask


def planning_map(grid: SlidingGrid, r_drone: float = 0.0,
                 z_band: tuple[float, float] | None = None) -> PlanningMap:
    """Build the inflated, padded obstacle view of a grid snapshot.

    The result is cached on the snapshot, keyed by radius and band.
    """
    key = (grid.stamp, tuple(int(v) for v in grid.origin), float(r_drone),
           None if z_band is None else tuple(z_band))
    cached = getattr(grid, "_planning_cache", None)
    if cached is not None and cached[0] == key and not grid.cells.flags.writeable:
        return cached[1]
    n_inf = int(math.ceil(r_drone / grid.voxel_size - 1e-9)) if r_drone > 0 else 0
    occ = inflate(grid.cells == OCCUPIED, n_inf)
    blocked = np.ones(tuple(grid.dims + 2), dtype=np.uint8)
    blocked[1:-1, 1:-1, 1:-1] = occ
    pm = PlanningMap(grid, occ, blocked, n_inf, z_band)
    if z_band is not None:
        zc = (grid.origin[2] + np.arange(grid.dims[2]) + 0.5) * grid.voxel_size
        out = np.nonzero((zc < z_band[0]) | (zc > z_band[1]))[0]
        blocked[:, :, out + 1] = 1
    grid._planning_cache = (key, pm)
    return pm


def _as_planning_map(g) -> PlanningMap:
    if isinstance(g, PlanningMap):
        return g
    return planning_map(g)


# ------------------------------------------------------------ search kernels

@njit(cache=True)
def _heap_push(hk, hv, n, key, val):
    if n >= hk.shape[0]:
        nk = np.empty(hk.shape[0] * 2)
        nv = np.empty(hv.shape[0] * 2, dtype=np.int64)
        nk[:n] = hk[:n]
        nv[:n] = hv[:n]
        hk, hv = nk, nv
    i = n
    hk[i] = key
    hv[i] = val
    while i > 0:
        par = (i - 1) >> 1
        if hk[par] <= hk[i]:
            break
        hk[par], hk[i] = hk[i], hk[par]
        hv[par], hv[i] = hv[i], hv[par]
        i = par
    return hk, hv, n + 1


@njit(cache=True)
def _heap_pop(hk, hv, n):
    key, val = hk[0], hv[0]
    n -= 1
    hk[0] = hk[n]
    hv[0] = hv[n]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= n:
            break
        c = l
        if l + 1 < n and hk[l + 1] < hk[l]:
            c = l + 1
        if hk[i] <= hk[c]:
            break
        hk[c], hk[i] = hk[i], hk[c]
        hv[c], hv[i] = hv[i], hv[c]
        i = c
    return key, val, n


@njit(cache=True)
def _octile(a, b, sy, sz):
    ax, r = divmod(a, sy)
    ay, az = divmod(r, sz)
    bx, r = divmod(b, sy)
    by, bz = divmod(r, sz)
    d0 = abs(ax - bx)
    d1 = abs(ay - by)
    d2 = abs(az - bz)
    lo = min(d0, min(d1, d2))
    hi = max(d0, max(d1, d2))
    mid = d0 + d1 + d2 - lo - hi
    return 1.7320508075688772 * lo + 1.4142135623730951 * (mid - lo) + (hi - mid)


@njit(cache=True)
def _free_mask(blk, y, strides):
    m = 0
    for s in range(27):
        if s == 13:
            continue
        if blk[y + strides[s]] == 0:
            m |= 1 << s
    return m


@njit(cache=True)
def _has_forced(fm, sd, nonnat, alt_start, alt_count, alts, req, full):
    if fm == full:
        return False
    for c in range(26):
        sn = nonnat[sd, c]
        if sn < 0:
            break
        r = req[sn]
        if (fm & r) != r:
            continue
        lo = alt_start[sd, sn]
        pruned = False
        for i in range(alt_count[sd, sn]):
            a = alts[lo + i]
            if (fm & a) == a:
                pruned = True
                break
        if not pruned:
            return True
    return False


@njit(cache=True)
def _jump(blk, y, sd, goal, strides, subs, nsub, nonnat, alt_start, alt_count, alts, req, full,
          cap):
    """Follow direction slot ``sd`` from ``y``; returns (jump point, steps) or (-1, 0).

    With ``cap > 0`` the cell reached after ``cap`` steps is reported as a
    jump point.  Extra jump points never break optimality, and they stop
    diagonal scans from sweeping whole open volumes.
    """
    st = strides[sd]
    steps = 0
    rq = req[sd]
    while True:
        fm = _free_mask(blk, y, strides)
        if (fm & rq) != rq:
            return -1, 0
        y += st
        steps += 1
        if y == goal:
            return y, steps
        if cap > 0 and steps >= cap:
            return y, steps
        fm = _free_mask(blk, y, strides)
        if _has_forced(fm, sd, nonnat, alt_start, alt_count, alts, req, full):
            return y, steps
        for i in range(nsub[sd]):
            sub = subs[sd, i]
            j, _ = _jump(blk, y, sub, goal, strides, subs, nsub, nonnat,
                         alt_start, alt_count, alts, req, full, cap)
            if j >= 0:
                return y, steps


@njit(cache=True)
def _jps_kernel(blk, shape, start, goal, natural, nonnat, alt_start, alt_count, alts,
                req, full, subs, nsub, step_len, g, parent, pdir, seen, closed, stamp, cap):
    sy = shape[1] * shape[2]
    sz = shape[2]
    strides = np.zeros(27, dtype=np.int64)
    for s in range(27):
        dx = s // 9 - 1
        dy = (s // 3) % 3 - 1
        dz = s % 3 - 1
        strides[s] = dx * sy + dy * sz + dz
    hk = np.empty(1024)
    hv = np.empty(1024, dtype=np.int64)
    n = 0
    g[start] = 0.0
    parent[start] = -1
    pdir[start] = 13
    seen[start] = stamp
    hk, hv, n = _heap_push(hk, hv, n, _octile(start, goal, sy, sz), start)
    expanded = 0
    while n > 0:
        f, y, n = _heap_pop(hk, hv, n)
        if closed[y] == stamp:
            continue
        closed[y] = stamp
        expanded += 1
        if y == goal:
            return True, expanded
        sd = pdir[y]
        fm = _free_mask(blk, y, strides)
        for sn in range(27):
            if sn == 13:
                continue
            r = req[sn]
            if (fm & r) != r:
                continue
            if not natural[sd, sn]:
                lo = alt_start[sd, sn]
                pruned = False
                for i in range(alt_count[sd, sn]):
                    a = alts[lo + i]
                    if (fm & a) == a:
                        pruned = True
                        break
                if pruned:
                    continue
            j, k = _jump(blk, y, sn, goal, strides, subs, nsub, nonnat,
                         alt_start, alt_count, alts, req, full, cap)
            if j < 0 or closed[j] == stamp:
                continue
            gj = g[y] + k * step_len[sn]
            if seen[j] != stamp or gj < g[j]:
                seen[j] = stamp
                g[j] = gj
                parent[j] = y
                pdir[j] = sn
                hk, hv, n = _heap_push(hk, hv, n, gj + _octile(j, goal, sy, sz), j)
    return False, expanded


@njit(cache=True)
def _astar_kernel(blk, shape, start, goal, req, step_len, g, parent, pdir, seen, closed, stamp):
    sy = shape[1] * shape[2]
    sz = shape[2]
    strides = np.zeros(27, dtype=np.int64)
    for s in range(27):
        strides[s] = (s // 9 - 1) * sy + ((s // 3) % 3 - 1) * sz + (s % 3 - 1)
    hk = np.empty(1024)
    hv = np.empty(1024, dtype=np.int64)
    n = 0
    g[start] = 0.0
    parent[start] = -1
    pdir[start] = 13
    seen[start] = stamp
    hk, hv, n = _heap_push(hk, hv, n, _octile(start, goal, sy, sz), start)
    expanded = 0
    while n > 0:
        f, y, n = _heap_pop(hk, hv, n)
        if closed[y] == stamp:
            continue
        closed[y] = stamp
        expanded += 1
        if y == goal:
            return True, expanded
        fm = _free_mask(blk, y, strides)
        for sn in range(27):
            if sn == 13:
                continue
            r = req[sn]
            if (fm & r) != r:
                continue
            j = y + strides[sn]
            if closed[j] == stamp:
                continue
            gj = g[y] + step_len[sn]
            if seen[j] != stamp or gj < g[j]:
                seen[j] = stamp
                g[j] = gj
                parent[j] = y
                pdir[j] = sn
                hk, hv, n = _heap_push(hk, hv, n, gj + _octile(j, goal, sy, sz), j)
    return False, expanded


def _sub_tables():
    subs = np.full((27, 6), -1, dtype=np.int64)
    nsub = np.zeros(27, dtype=np.int64)
    for s in DIR_SLOTS:
        d = tuple(OFFSETS[s])
        # proper sub-moves, higher degree first
        lst = sorted((sm for sm in _submoves(d) if sm != d), key=lambda m: -sum(map(abs, m)))
        nsub[s] = len(lst)
        subs[s, : len(lst)] = [_slot(m) for m in lst]
    return subs, nsub


SUBS, NSUB = _sub_tables()


class _Workspace:
    """Reusable per-shape search buffers; visit stamps avoid clearing them."""

    def __init__(self, size: int):
        self.g = np.empty(size)
        self.parent = np.empty(size, dtype=np.int64)
        self.pdir = np.empty(size, dtype=np.int64)
        self.seen = np.zeros(size, dtype=np.int32)
        self.closed = np.zeros(size, dtype=np.int32)
        self.stamp = 0

    def next_stamp(self) -> int:
        self.stamp += 1
        if self.stamp >= 2**31 - 2:
            self.seen[:] = 0
            self.closed[:] = 0
            self.stamp = 1
        return self.stamp


_WORKSPACES: dict[int, _Workspace] = {}


def _workspace(size: int) -> _Workspace:
    ws = _WORKSPACES.get(size)
    if ws is None:
        if len(_WORKSPACES) > 4:
            _WORKSPACES.clear()
        ws = _WORKSPACES[size] = _Workspace(size)
    return ws


# ------------------------------------------------------------ grid path

@dataclass
class GridPath:
    """Piecewise-linear path through voxel centres.

    ``move_counts`` holds how many straight, face-diagonal and cube-diagonal
    unit steps the path uses, so lengths can be compared exactly.
    """

    waypoints: np.ndarray
    length: float
    move_counts: tuple[int, int, int] = (0, 0, 0)
    expanded: int = 0

    @property
    def n(self) -> int:
        return len(self.waypoints)

    def arc_lengths(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])


def _unravel(flat: int, padded_shape) -> np.ndarray:
    return np.array(np.unravel_index(flat, padded_shape), dtype=np.int64) - 1


def _trace(ws: _Workspace, goal: int, padded_shape) -> list[int]:
    chain = [goal]
    while ws.parent[chain[-1]] >= 0:
        chain.append(int(ws.parent[chain[-1]]))
    return chain[::-1]


def _path_from_chain(pm: PlanningMap, chain: list[int], expanded: int) -> GridPath:
    shape = pm.blocked.shape
    idx = np.array([_unravel(c, shape) for c in chain], dtype=np.int64)
    counts = [0, 0, 0]
    keep = [0]
    for i in range(1, len(idx)):
        d = idx[i] - idx[i - 1]
        steps = int(np.abs(d).max())
        unit = d // max(steps, 1)
        counts[int(np.abs(unit).sum()) - 1] += steps
        if i + 1 < len(idx):
            d2 = idx[i + 1] - idx[i]
            unit2 = d2 // max(int(np.abs(d2).max()), 1)
            if np.array_equal(unit, unit2):
                continue
        keep.append(i)
    if len(idx) == 1:
        keep = [0]
    cells = idx[keep]
    wps = pm.grid.voxel_center(cells)
    s = pm.voxel_size
    length = s * (counts[0] + SQRT2 * counts[1] + SQRT3 * counts[2])
    return GridPath(np.atleast_2d(wps), length, tuple(counts), expanded)


def _nearest_unblocked(pm: PlanningMap, idx) -> tuple[int, int, int] | None:
    """Closest unblocked voxel to ``idx`` by Euclidean index distance.

    Searches growing cubes; a hit at Chebyshev radius ``r`` is final once the
    cube reaches ``r * sqrt(3)``, since nothing outside can be closer.
    """
    inner = pm.blocked[1:-1, 1:-1, 1:-1]
    idx = np.asarray(idx, dtype=np.int64)
    dims = np.array(inner.shape)
    best = None
    r = 1
    while True:
        lo = np.maximum(idx - r, 0)
        hi = np.minimum(idx + r + 1, dims)
        free = np.argwhere(inner[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] == 0)
        if len(free):
            d = ((free + lo - idx) ** 2).sum(1)
            k = int(np.argmin(d))
            best = free[k] + lo
            if d[k] <= r * r:
                break
            r = max(r + 1, int(math.ceil(math.sqrt(d[k]))))
            lo = np.maximum(idx - r, 0)
            hi = np.minimum(idx + r + 1, dims)
            free = np.argwhere(inner[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] == 0)
            d = ((free + lo - idx) ** 2).sum(1)
            best = free[int(np.argmin(d))] + lo
            break
        if np.all(lo == 0) and np.all(hi == dims):
            return None
        r *= 2
    return tuple(int(v) for v in best)


def _endpoints(pm: PlanningMap, start, goal):
    from .occupancy import world_to_voxel
    si = world_to_voxel(pm.grid, start)
    gi = world_to_voxel(pm.grid, goal)
    if pm.is_blocked(si):
        raise NoPath(f"start voxel {si} is blocked")
    if pm.is_blocked(gi):
        alt = _nearest_unblocked(pm, gi)
        if alt is None:
            raise NoPath("no unblocked voxel for the goal")
        gi = alt
    shape = pm.blocked.shape
    s_flat = int(np.ravel_multi_index(tuple(np.array(si) + 1), shape))
    g_flat = int(np.ravel_multi_index(tuple(np.array(gi) + 1), shape))
    return s_flat, g_flat


def jps_search(grid, start, goal, max_jump: int = 0) -> GridPath:
    """Shortest 26-connected path from ``start`` to ``goal`` by Jump Point Search.

    ``grid`` is a :class:`PlanningMap` (or a bare grid snapshot, in which case
    only Occupied voxels block).  Unknown and Free voxels are traversable.  A
    goal inside a blocked voxel is replaced by the nearest unblocked voxel.
    ``max_jump`` bounds jump length in voxels (0 = unbounded).
    """
    pm = _as_planning_map(grid)
    s_flat, g_flat = _endpoints(pm, start, goal)
    blk = pm.blocked.reshape(-1)
    ws = _workspace(blk.size)
    stamp = ws.next_stamp()
    ok, expanded = _jps_kernel(blk, np.array(pm.blocked.shape, dtype=np.int64), s_flat, g_flat,
                               NATURAL, NONNATURAL, ALT_START, ALT_COUNT, ALT_MASKS, REQ,
                               FULL_MASK, SUBS, NSUB, STEP_LEN, ws.g, ws.parent, ws.pdir,
                               ws.seen, ws.closed, stamp, int(max_jump))
    if not ok:
        raise NoPath("goal unreachable through Free and Unknown space")
    return _path_from_chain(pm, _trace(ws, g_flat, pm.blocked.shape), int(expanded))


def astar_search(grid, start, goal) -> GridPath:
    """Plain 26-connected A* with the same move rules as :func:`jps_search`."""
    pm = _as_planning_map(grid)
    s_flat, g_flat = _endpoints(pm, start, goal)
    blk = pm.blocked.reshape(-1)
    ws = _workspace(blk.size)
    stamp = ws.next_stamp()
    ok, expanded = _astar_kernel(blk, np.array(pm.blocked.shape, dtype=np.int64), s_flat, g_flat,
                                 REQ, STEP_LEN, ws.g, ws.parent, ws.pdir, ws.seen, ws.closed, stamp)
    if not ok:
        raise NoPath("goal unreachable")
    return _path_from_chain(pm, _trace(ws, g_flat, pm.blocked.shape), int(expanded))


def blocked_from_mask(mask: np.ndarray, voxel_size: float = 1.0, origin=(0, 0, 0)) -> PlanningMap:
    """Planning view over an explicit boolean obstacle mask (no inflation)."""
    mask = np.asarray(mask, dtype=np.bool_)
    cells = np.where(mask, OCCUPIED, 0).astype(np.uint8)
    grid = SlidingGrid(float(voxel_size), np.array(mask.shape, dtype=np.int64),
                       np.asarray(origin, dtype=np.int64), cells, 0)
    return planning_map(grid)


# ------------------------------------------------------------ path geometry

def _segment_sphere_roots(p0, p1, c, r):
    d = p1 - p0
    f = p0 - c
    a = float(d @ d)
    if a == 0.0:
        return []
    b = 2.0 * float(f @ d)
    cc = float(f @ f) - r * r
    disc = b * b - 4 * a * cc
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    roots = sorted({(-b - sq) / (2 * a), (-b + sq) / (2 * a)})
    return [t for t in roots if -1e-12 <= t <= 1 + 1e-12]


def first_sphere_intersection(path: GridPath, A, r: float):
    """First point along ``path`` at distance ``r`` from ``A``.

    Returns ``(B_prime, r_idx, inside)`` where ``r_idx`` is the index of the
    first waypoint after the crossing.  When the whole path stays within the
    sphere ``inside`` is True and the last waypoint is returned.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    A = np.asarray(A, float)
    w = path.waypoints
    n = len(w)
    for i in range(n - 1):
        roots = _segment_sphere_roots(w[i], w[i + 1], A, r)
        if roots:
            t = min(max(roots[0], 0.0), 1.0)
            pt = w[i] + t * (w[i + 1] - w[i])
            idx = i + 1 if t < 1.0 - 1e-12 else min(i + 2, n - 1)
            return _on_sphere(pt, A, r), idx, False
    return w[-1].copy(), n - 1, True


def last_sphere_intersection(path: GridPath, A, r: float):
    """Last point along ``path`` at distance ``r`` from ``A``; mirrors the first."""
    if r <= 0:
        raise ValueError("radius must be positive")
    A = np.asarray(A, float)
    w = path.waypoints
    n = len(w)
    for i in range(n - 2, -1, -1):
        roots = _segment_sphere_roots(w[i], w[i + 1], A, r)
        if roots:
            t = min(max(roots[-1], 0.0), 1.0)
            pt = w[i] + t * (w[i + 1] - w[i])
            return _on_sphere(pt, A, r), i + 1, False
    return w[-1].copy(), n - 1, True


def _on_sphere(pt, A, r):
    v = pt - A
    nv = np.linalg.norm(v)
    return A + v * (r / nv) if nv > 0 else pt


def intermediate_waypoints(path: GridPath, r_idx: int, s_idx: int) -> np.ndarray:
    if r_idx > s_idx:
        raise ValueError("r_idx must not exceed s_idx")
    return path.waypoints[r_idx:s_idx].copy()


def _segment_voxels(p0, p1, s):
    """Voxels crossed by segment p0->p1 in order, with entry/exit parameters.

    Exact grid traversal: a voxel is reported when the segment spends a
    positive length inside it.  Corner and edge grazes are skipped.
    """
    from .occupancy import lattice_index
    d = p1 - p0
    c = lattice_index(p0, s)
    end = lattice_index(p1, s)
    step = np.sign(d).astype(np.int64)
    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for k in range(3):
        if step[k] != 0:
            edge = (c[k] + (step[k] > 0)) * s
            t_max[k] = (edge - p0[k]) / d[k]
            t_delta[k] = s / abs(d[k])
    t = 0.0
    out = []
    while True:
        t_next = min(float(t_max.min()), 1.0)
        if t_next > t + 1e-12 or np.array_equal(c, end):
            out.append((c.copy(), t, t_next))
        if t_next >= 1.0 or np.array_equal(c, end):
            break
        ties = t_max <= t_next + 1e-12
        c = c + np.where(ties, step, 0)
        t_max = np.where(ties, t_max + t_delta, t_max)
        t = t_next
    return out


def path_first_last_blocked(path: GridPath, grid):
    """Entry point of the first and exit point of the last blocked voxel on ``path``.

    ``grid`` is a bare grid (Occupied blocks) or a :class:`PlanningMap`
    (inflated obstacles and out-of-band layers block).  Returns None when the
    path is clear.  Voxels outside the window do not block.
    """
    if isinstance(grid, PlanningMap):
        g = grid.grid
        test = lambda ijk: bool(grid.blocked[ijk[0] + 1, ijk[1] + 1, ijk[2] + 1])
    else:
        g = grid
        test = lambda ijk: int(g.cells[ijk]) == OCCUPIED
    s = g.voxel_size
    w = np.asarray(path.waypoints, float)
    first = last = None
    for i in range(len(w) - 1):
        for c, t_in, t_out in _segment_voxels(w[i], w[i + 1], s):
            loc = c - g.origin
            if np.any(loc < 0) or np.any(loc >= g.dims):
                continue
            if not test(tuple(int(v) for v in loc)):
                continue
            if first is None:
                first = w[i] + t_in * (w[i + 1] - w[i])
            last = w[i] + t_out * (w[i + 1] - w[i])
    if first is None:
        return None
    return first, last
