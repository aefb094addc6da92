"""Known-map reference: grid-optimal path over the rasterised ground truth."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..jps import GridPath, astar_search, blocked_from_mask
from .world import World, _shape_distance


@njit(cache=True)
def _raster_kernel(packed, lo, s, dims, r, out):
    for si in range(packed.shape[0]):
        row = packed[si]
        if row[0] == 0:
            blo = np.array([row[1] - row[3], row[2] - row[3], row[4]])
            bhi = np.array([row[1] + row[3], row[2] + row[3], row[5]])
        else:
            blo = row[1:4].copy()
            bhi = row[4:7].copy()
        i0 = np.empty(3, np.int64)
        i1 = np.empty(3, np.int64)
        for k in range(3):
            i0[k] = max(int(math.floor((blo[k] - r - lo[k]) / s)) - 1, 0)
            i1[k] = min(int(math.ceil((bhi[k] + r - lo[k]) / s)) + 1, dims[k])
        for i in range(i0[0], i1[0]):
            x = lo[0] + (i + 0.5) * s
            for j in range(i0[1], i1[1]):
                y = lo[1] + (j + 0.5) * s
                for k in range(i0[2], i1[2]):
                    if out[i, j, k]:
                        continue
                    z = lo[2] + (k + 0.5) * s
                    if _shape_distance(row, x, y, z) < r:
                        out[i, j, k] = True


def rasterize(world: World, s: float, lo, dims, r_drone: float) -> np.ndarray:
    """Boolean mask of voxels whose centre lies within ``r_drone`` of an obstacle."""
    lo = np.asarray(lo, float)
    dims = np.asarray(dims, dtype=np.int64)
    out = np.zeros(tuple(dims), dtype=np.bool_)
    if len(world.packed):
        _raster_kernel(world.packed, lo, float(s), dims, float(r_drone), out)
    if world.floor:
        zc = lo[2] + (np.arange(dims[2]) + 0.5) * s
        out[:, :, zc < r_drone] = True
    return out


def oracle_grid(world: World, s: float, r_drone: float, z: float, margin: float = 4.0):
    """Single horizontal layer at height ``z`` covering the world plus ``margin``.

    All obstacles are vertical prisms spanning the flight band, so a shortest
    path never gains by changing altitude and one layer suffices.
    """
    b0, b1 = np.asarray(world.bounds[0], float), np.asarray(world.bounds[1], float)
    ilo = np.floor((b0[:2] - margin) / s).astype(np.int64)
    ihi = np.ceil((b1[:2] + margin) / s).astype(np.int64)
    kz = int(math.floor(z / s))
    origin = np.array([ilo[0], ilo[1], kz], dtype=np.int64)
    dims = np.array([ihi[0] - ilo[0], ihi[1] - ilo[1], 1], dtype=np.int64)
    mask = rasterize(world, s, origin * s, dims, r_drone)
    return mask, origin


def oracle_path(world: World, A, G, s_oracle: float = 0.1, r_drone: float = 0.3,
                margin: float = 4.0) -> GridPath:
    A = np.asarray(A, float)
    G = np.asarray(G, float)
    mask, origin = oracle_grid(world, s_oracle, r_drone, float(A[2]), margin)
    pm = blocked_from_mask(mask, s_oracle, origin)
    # both endpoints on the same layer
    G = np.array([G[0], G[1], A[2]])
    return astar_search(pm, A, G)


def oracle_shortest_path(world: World, s_oracle: float = 0.1, A=None, G=None,
                         r_drone: float = 0.3, margin: float = 4.0) -> float:
    """Length (m) of the 26-connected shortest path on the inflated ground truth."""
    A = world.start if A is None else A
    G = world.goal if G is None else G
    return oracle_path(world, A, G, s_oracle, r_drone, margin).length
