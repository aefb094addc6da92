"""Independent reference implementations shared by several test modules."""
import itertools
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

MOVES = [m for m in itertools.product((-1, 0, 1), repeat=3) if m != (0, 0, 0)]


def dijkstra_length(mask, start, goal):
    """Shortest no-corner-cutting 26-connected path length by sparse Dijkstra.

    A diagonal step needs every voxel reached by zeroing some of its
    components to be free.  Returns inf when unreachable.
    """
    free = ~np.asarray(mask, bool)
    shape = free.shape
    n = free.size
    ids = np.arange(n).reshape(shape)
    rows, cols, w = [], [], []
    for m in MOVES:
        subs = [tuple(m[k] if k in keep else 0 for k in range(3))
                for r in range(1, 4) for keep in itertools.combinations(range(3), r)]
        subs = {sm for sm in subs if sm != (0, 0, 0)}
        src = np.ones(shape, bool)
        for sm in subs:
            shifted = np.zeros(shape, bool)
            sl_dst = tuple(slice(max(0, -d), shape[k] - max(0, d)) for k, d in enumerate(sm))
            sl_src = tuple(slice(max(0, d), shape[k] - max(0, -d)) for k, d in enumerate(sm))
            shifted[sl_dst] = free[sl_src]
            src &= shifted
        src &= free
        a = ids[src]
        idx = np.argwhere(src) + np.array(m)
        b = np.ravel_multi_index(idx.T, shape)
        rows.append(a)
        cols.append(b)
        w.append(np.full(len(a), math.sqrt(sum(abs(v) for v in m))))
    g = coo_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    d = dijkstra(g.tocsr(), indices=int(ids[start]))
    return float(d[ids[goal]])
