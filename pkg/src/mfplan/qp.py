"""Small dense strictly-convex QP solver (Goldfarb-Idnani dual active set).

Solves::

    min 0.5 x'Gx + a'x   s.t.  C[:, :meq]' x == b[:meq],  C[:, meq:]' x >= b[meq:]

``G`` must be symmetric positive definite.  Problems here have ten or so
variables, so the active-set factorisation is simply recomputed each step.
"""
import numpy as np
from numba import njit

OPTIMAL = 0
INFEASIBLE = 1
MAX_ITER = 2


@njit(cache=True)
def _directions(Ginv, Nt, q, nplus):
    """Primal step ``z`` and dual step ``r`` for adding normal ``nplus``.

    ``Nt`` holds the active normals as rows.
    """
    n = Ginv.shape[0]
    Gn = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(n):
            acc += Ginv[i, k] * nplus[k]
        Gn[i] = acc
    if q == 0:
        return Gn, np.zeros(0)
    GN = np.zeros((n, q))
    for j in range(q):
        for i in range(n):
            acc = 0.0
            for k in range(n):
                acc += Ginv[i, k] * Nt[j, k]
            GN[i, j] = acc
    M = np.zeros((q, q))
    rhs = np.zeros(q)
    for i in range(q):
        acc = 0.0
        for k in range(n):
            acc += Nt[i, k] * Gn[k]
        rhs[i] = acc
        for j in range(q):
            acc = 0.0
            for k in range(n):
                acc += Nt[i, k] * GN[k, j]
            M[i, j] = acc
    r = np.linalg.solve(M, rhs)
    z = Gn.copy()
    for i in range(n):
        for j in range(q):
            z[i] -= GN[i, j] * r[j]
    return z, r


@njit(cache=True)
def solve_qp(G, a, C, b, meq, max_iter=500, tol=1e-10):
    """Returns ``(x, lam, status, iterations)``; ``lam`` has one entry per column of C."""
    n = G.shape[0]
    m = C.shape[1]
    Ct = np.ascontiguousarray(C.T)
    Ginv = np.linalg.inv(np.ascontiguousarray(G))
    x = -(Ginv @ np.ascontiguousarray(a))
    N = np.zeros((n, n))
    act = np.full(n, -1, dtype=np.int64)
    sgn = np.ones(m)
    u = np.zeros(n)
    q = 0
    it = 0
    lam = np.zeros(m)

    for p in range(meq):
        cp = Ct[p].copy()
        s = cp @ x - b[p]
        sign = -1.0 if s > 0 else 1.0
        cp *= sign
        s *= sign
        z, r = _directions(Ginv, N, q, cp)
        zc = z @ cp
        if abs(zc) < 1e-14:
            if abs(s) > 1e-9:
                return x, lam, INFEASIBLE, it
            continue
        t = -s / zc
        x += t * z
        for j in range(q):
            u[j] -= t * r[j]
        N[q] = cp
        act[q] = p
        u[q] = t
        sgn[p] = sign
        q += 1

    while it < max_iter:
        it += 1
        # most violated inequality
        p = -1
        worst = -tol
        for j in range(meq, m):
            s = Ct[j] @ x - b[j]
            scale = 1.0 + abs(b[j])
            if s / scale < worst:
                is_active = False
                for k in range(q):
                    if act[k] == j:
                        is_active = True
                        break
                if not is_active:
                    worst = s / scale
                    p = j
        if p < 0:
            for k in range(q):
                lam[act[k]] = u[k] * sgn[act[k]]
            return x, lam, OPTIMAL, it
        cp = Ct[p].copy()
        uplus = 0.0
        while True:
            it += 1
            if it > max_iter:
                return x, lam, MAX_ITER, it
            z, r = _directions(Ginv, N, q, cp)
            t1 = np.inf
            kdrop = -1
            for k in range(q):
                if act[k] >= meq and r[k] > 1e-14:
                    ratio = u[k] / r[k]
                    if ratio < t1:
                        t1 = ratio
                        kdrop = k
            zc = z @ cp
            if np.sqrt(z @ z) <= 1e-13 * (1.0 + np.sqrt(cp @ cp)) or zc <= 1e-18:
                if kdrop < 0:
                    return x, lam, INFEASIBLE, it
                for k in range(q):
                    u[k] -= t1 * r[k]
                uplus += t1
            else:
                s = cp @ x - b[p]
                t2 = -s / zc
                t = t2 if t2 <= t1 else t1
                x += t * z
                for k in range(q):
                    u[k] -= t * r[k]
                uplus += t
                if t2 <= t1:
                    N[q] = cp
                    act[q] = p
                    u[q] = uplus
                    q += 1
                    break
            # drop the blocking constraint and retry the same violated one
            for k in range(kdrop, q - 1):
                N[k] = N[k + 1]
                act[k] = act[k + 1]
                u[k] = u[k + 1]
            q -= 1
            act[q] = -1
            u[q] = 0.0
    return x, lam, MAX_ITER, it


@njit(cache=True)
def kkt_residual(G, a, C, b, meq, x, lam):
    """Largest violation among stationarity, feasibility and complementarity.

    Each term is divided by the magnitude of the quantities it is formed from,
    so the measure does not grow with the conditioning of ``G``.
    """
    x = np.ascontiguousarray(x)
    lam = np.ascontiguousarray(lam)
    Ct = np.ascontiguousarray(C.T)
    res = 0.0
    if G.shape[0] > 0:
        Gx = G @ x
        Cl = C @ lam
        scale = 1.0 + max(np.abs(Gx).max(), np.abs(a).max(), np.abs(Cl).max())
        res = np.abs(Gx + a - Cl).max() / scale
    for j in range(C.shape[1]):
        cx = Ct[j] @ x
        s = (cx - b[j]) / (1.0 + max(abs(cx), abs(b[j])))
        if j < meq:
            res = max(res, abs(s))
        else:
            res = max(res, -s)
            res = max(res, -lam[j] / (1.0 + np.abs(lam).max()))
            res = max(res, abs(lam[j] * s) / (1.0 + np.abs(lam).max()))
    return res
