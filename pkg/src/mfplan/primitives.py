"""Jerk- and velocity-controlled trajectory primitives.

Both are fixed-horizon problems with ``N`` steps.  The time step starts at a
lower bound built from per-axis minimum times and is grown geometrically until
the QP is feasible and the terminal state is reached within tolerance.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .qp import OPTIMAL, kkt_residual, solve_qp


class MaxIterations(RuntimeError):
    """dt growth hit its cap without a converged solution."""


class OutOfDomain(ValueError):
    """Sample time outside ``[0, N * dt]``."""


@dataclass
class FlatState:
    pos: np.ndarray
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float).reshape(3).copy()
        self.vel = np.asarray(self.vel, dtype=float).reshape(3).copy()
        self.acc = np.asarray(self.acc, dtype=float).reshape(3).copy()
        if not (np.isfinite(self.pos).all() and np.isfinite(self.vel).all()
                and np.isfinite(self.acc).all()):
            raise ValueError("FlatState components must be finite")

    @classmethod
    def rest(cls, pos) -> "FlatState":
        return cls(pos)

    def as_rows(self) -> np.ndarray:
        """(3 axes, 3 derivatives) array: row i is [p_i, v_i, a_i]."""
        return np.stack([self.pos, self.vel, self.acc], axis=1)

    def copy(self) -> "FlatState":
        return FlatState(self.pos, self.vel, self.acc)


@dataclass(frozen=True)
class Limits:
    v_max: float
    a_max: float
    j_max: float

    def __post_init__(self):
        if min(self.v_max, self.a_max, self.j_max) <= 0:
            raise ValueError("limits must be strictly positive")

    def scaled(self, k: float) -> "Limits":
        return Limits(self.v_max * k, self.a_max * k, self.j_max * k)


@dataclass(frozen=True)
class TerminalWeight:
    """Diagonal terminal weight on [pos, vel, acc] (same value on x, y, z)."""

    pos: float = 1e3
    vel: float = 1e2
    acc: float = 1e1

    def __post_init__(self):
        if min(self.pos, self.vel, self.acc) < 0:
            raise ValueError("terminal weights must be non-negative")

    def diag(self) -> np.ndarray:
        return np.repeat([self.pos, self.vel, self.acc], 3)


@dataclass
class JerkPrimitive:
    x0: FlatState
    inputs: np.ndarray           # (N, 3) jerk
    dt: float
    N: int
    terminal: FlatState
    pos: np.ndarray = field(repr=False, default=None)  # (N+1, 3) knot states
    vel: np.ndarray = field(repr=False, default=None)
    acc: np.ndarray = field(repr=False, default=None)
    objective: float = 0.0       # sum ||u||^2 + terminal penalty
    kkt: float = 0.0
    dt0: float = 0.0
    n_solves: int = 1
    solve_time: float = 0.0

    @property
    def duration(self) -> float:
        return self.N * self.dt


@dataclass
class VelPrimitive:
    p0: np.ndarray
    pf: np.ndarray
    inputs: np.ndarray           # (N, 3) velocity
    dt: float
    N: int
    kkt: float = 0.0
    n_solves: int = 1
    solve_time: float = 0.0

    @property
    def duration(self) -> float:
        return self.N * self.dt


# ------------------------------------------------------------ dt lower bound

@njit(cache=True)
def _poly(c, t):
    return ((c[0] * t + c[1]) * t + c[2]) * t + c[3]


@njit(cache=True)
def _bisect(c, lo, hi):
    flo = _poly(c, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = _poly(c, mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _first_cubic_root(c3, c2, c1, c0):
    """Smallest t >= 0 with c3 t^3 + c2 t^2 + c1 t + c0 = 0, given c3 > 0 and c0 < 0."""
    c = np.array([c3, c2, c1, c0])
    # critical points split [0, inf) into monotone pieces
    pts = [0.0]
    disc = 4 * c2 * c2 - 12 * c3 * c1
    if disc >= 0:
        sq = math.sqrt(disc)
        r1 = (-2 * c2 - sq) / (6 * c3)
        r2 = (-2 * c2 + sq) / (6 * c3)
        if r1 > 0:
            pts.append(r1)
        if r2 > 0 and r2 != r1:
            pts.append(r2)
    for i in range(len(pts) - 1):
        if _poly(c, pts[i + 1]) >= 0:
            return _bisect(c, pts[i], pts[i + 1])
    lo = pts[-1]
    hi = max(1.0, 2 * lo)
    while _poly(c, hi) < 0:
        hi *= 2
    return _bisect(c, lo, hi)


@njit(cache=True)
def _axis_times(dp, v0, a0, vmax, amax, jmax):
    if dp == 0.0:
        return 0.0, 0.0, 0.0
    sg = 1.0 if dp > 0 else -1.0
    d = abs(dp)
    v = sg * v0
    a = sg * a0
    tv = d / vmax
    ta = (-v + math.sqrt(v * v + 2 * amax * d)) / amax
    tj = _first_cubic_root(jmax / 6.0, a / 2.0, v, -d)
    return tv, ta, tj


def axis_times(x0: FlatState, xf: FlatState, limits: Limits) -> np.ndarray:
    """(3 axes, 3) array of [T_v, T_a, T_j]."""
    out = np.zeros((3, 3))
    dp = xf.pos - x0.pos
    for i in range(3):
        out[i] = _axis_times(float(dp[i]), float(x0.vel[i]), float(x0.acc[i]),
                             limits.v_max, limits.a_max, limits.j_max)
    return out


def min_time_per_axis(x0: FlatState, xf: FlatState, limits: Limits, N: int,
                      dt_min: float = 1e-3) -> float:
    """Lower bound on the step: slowest of the nine axis times, over N.

    T_v, T_a and T_j come from constant-velocity, -acceleration and -jerk
    motion at the limit, pushed toward the goal from the initial state.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    dt0 = float(axis_times(x0, xf, limits).max()) / N
    return max(dt0, dt_min)


def dt_lattice_start(dt0: float, dt_min: float, gamma: float) -> float:
    """Smallest ``dt_min * gamma**k`` that is >= ``dt0``.

    Snapping to a shared lattice makes the converged step monotone in the
    limits: relaxing them can only make an earlier lattice point acceptable.
    """
    if dt0 <= dt_min:
        return dt_min
    k = math.ceil(math.log(dt0 / dt_min) / math.log(gamma) - 1e-12)
    dt = dt_min * gamma ** k
    while dt < dt0:
        dt *= gamma
    return dt


# ------------------------------------------------------------ jerk QP

@njit(cache=True)
def _jerk_axis_qp(s0, sf, N, dt, vmax, amax, jmax, qp_, qv, qa):
    A = np.array([[1.0, dt, dt * dt / 2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    B = np.array([dt ** 3 / 6, dt * dt / 2, dt])
    P = np.eye(3)
    S = np.zeros((3, N))
    Sv = np.zeros((N, N))
    Sa = np.zeros((N, N))
    hv = np.zeros(N)
    ha = np.zeros(N)
    for k in range(N):
        P = A @ P
        S = A @ S
        for r in range(3):
            S[r, k] += B[r]
        h = P @ s0
        Sv[k] = S[1]
        Sa[k] = S[2]
        hv[k] = h[1]
        ha[k] = h[2]
    hN = P @ s0
    q = np.array([qp_, qv, qa])
    G = np.eye(N) * 2.0
    a = np.zeros(N)
    for r in range(3):
        e = hN[r] - sf[r]
        for i in range(N):
            a[i] += 2 * q[r] * e * S[r, i]
            for j in range(N):
                G[i, j] += 2 * q[r] * S[r, i] * S[r, j]
    m = 6 * N
    C = np.zeros((N, m))
    b = np.zeros(m)
    for k in range(N):
        C[:, k] = -Sv[k]
        b[k] = -vmax + hv[k]
        C[:, N + k] = Sv[k]
        b[N + k] = -vmax - hv[k]
        C[:, 2 * N + k] = -Sa[k]
        b[2 * N + k] = -amax + ha[k]
        C[:, 3 * N + k] = Sa[k]
        b[3 * N + k] = -amax - ha[k]
        C[k, 4 * N + k] = -1.0
        b[4 * N + k] = -jmax
        C[k, 5 * N + k] = 1.0
        b[5 * N + k] = -jmax
    u, lam, status, it = solve_qp(G, a, C, b, 0)
    kkt = kkt_residual(G, a, C, b, 0, u, lam)
    obj = 0.0
    for i in range(N):
        obj += u[i] * u[i]
    xN = hN + S @ u
    for r in range(3):
        obj += q[r] * (xN[r] - sf[r]) ** 2
    return u, status, kkt, obj


@njit(cache=True)
def _rollout(s0, u, dt):
    """Knot states (N+1, 3 axes, 3 derivatives) of the triple integrator."""
    N = u.shape[0]
    out = np.zeros((N + 1, 3, 3))
    out[0] = s0
    for k in range(N):
        for ax in range(3):
            p, v, a = out[k, ax, 0], out[k, ax, 1], out[k, ax, 2]
            j = u[k, ax]
            out[k + 1, ax, 0] = p + v * dt + a * dt * dt / 2 + j * dt ** 3 / 6
            out[k + 1, ax, 1] = v + a * dt + j * dt * dt / 2
            out[k + 1, ax, 2] = a + j * dt
    return out


def _solve_jerk_at(x0: FlatState, xf: FlatState, N: int, dt: float, limits: Limits,
                   Q: TerminalWeight):
    s0 = x0.as_rows()
    sf = xf.as_rows()
    U = np.zeros((N, 3))
    ok = True
    kkt = 0.0
    obj = 0.0
    for ax in range(3):
        u, status, res, o = _jerk_axis_qp(s0[ax], sf[ax], N, dt, limits.v_max, limits.a_max,
                                          limits.j_max, Q.pos, Q.vel, Q.acc)
        ok &= status == OPTIMAL
        kkt = max(kkt, res)
        obj += o
        U[:, ax] = u
    return U, ok, kkt, obj


def _make_jerk(x0, U, dt, N, kkt, obj, dt0, n_solves, elapsed) -> JerkPrimitive:
    knots = _rollout(x0.as_rows(), U, dt)
    pos, vel, acc = knots[:, :, 0], knots[:, :, 1], knots[:, :, 2]
    terminal = FlatState(pos[-1], vel[-1], acc[-1])
    return JerkPrimitive(x0.copy(), U, dt, N, terminal, pos.copy(), vel.copy(), acc.copy(),
                         obj, kkt, dt0, n_solves, elapsed)


def solve_jerk_fixed_dt(x0: FlatState, xf: FlatState, N: int, dt: float, limits: Limits,
                        Q: TerminalWeight = TerminalWeight()) -> JerkPrimitive:
    """Solve the jerk QP at a given step, without dt growth.

    Raises MaxIterations when the QP is infeasible at this ``dt``.
    """
    t0 = time.perf_counter()
    U, ok, kkt, obj = _solve_jerk_at(x0, xf, N, dt, limits, Q)
    if not ok:
        raise MaxIterations(f"jerk QP infeasible at dt={dt:.4g}")
    return _make_jerk(x0, U, dt, N, kkt, obj, dt, 1, time.perf_counter() - t0)


def solve_jerk(x0: FlatState, xf: FlatState, N: int, limits: Limits,
               Q: TerminalWeight = TerminalWeight(), *, gamma: float = 1.25,
               dt_min: float = 1e-3, max_iter: int = 50, kkt_tol: float = 1e-6,
               term_tol: tuple[float, float, float] = (0.05, 0.1, 0.5)) -> JerkPrimitive:
    """Minimum-jerk-energy primitive from ``x0`` toward ``xf`` under box limits.

    The step starts at the lattice point above :func:`min_time_per_axis` and
    grows by ``gamma`` until the QP is feasible with KKT residual at most
    ``kkt_tol`` and the terminal position/velocity/acceleration errors
    (infinity norm) are within ``term_tol``.  Components whose weight is
    zero are left free.
    """
    t0 = time.perf_counter()
    dt0 = min_time_per_axis(x0, xf, limits, N, dt_min)
    dt = dt_lattice_start(dt0, dt_min, gamma)
    target = xf.as_rows()
    # terminal components with zero weight are free and not checked
    weighted = np.array([Q.pos > 0, Q.vel > 0, Q.acc > 0], dtype=float)
    for it in range(1, max_iter + 1):
        U, ok, kkt, obj = _solve_jerk_at(x0, xf, N, dt, limits, Q)
        if ok and kkt <= kkt_tol:
            end = _rollout(x0.as_rows(), U, dt)[-1]
            err = np.abs(end - target).max(axis=0) * weighted
            if err[0] <= term_tol[0] and err[1] <= term_tol[1] and err[2] <= term_tol[2]:
                return _make_jerk(x0, U, dt, N, kkt, obj, dt0, it, time.perf_counter() - t0)
        dt *= gamma
    raise MaxIterations(f"no converged jerk primitive after {max_iter} dt increases")


# ------------------------------------------------------------ velocity QP

@njit(cache=True)
def _vel_axis_qp(dp, N, dt, vmax):
    G = np.eye(N) * 2.0
    a = np.zeros(N)
    C = np.zeros((N, 1 + 2 * N))
    b = np.zeros(1 + 2 * N)
    C[:, 0] = dt
    b[0] = dp
    for i in range(N):
        C[i, 1 + i] = -1.0
        b[1 + i] = -vmax
        C[i, 1 + N + i] = 1.0
        b[1 + N + i] = -vmax
    v, lam, status, it = solve_qp(G, a, C, b, 1)
    return v, status, kkt_residual(G, a, C, b, 1, v, lam)


def solve_velocity_segment(p0, pf, N: int, v_max: float, *, gamma: float = 1.25,
                           dt_min: float = 1e-3, max_iter: int = 50,
                           kkt_tol: float = 1e-6) -> VelPrimitive:
    t0 = time.perf_counter()
    p0 = np.asarray(p0, float)
    pf = np.asarray(pf, float)
    dp = pf - p0
    dt = max(float(np.abs(dp).max()) / v_max / N, dt_min)
    for it in range(1, max_iter + 1):
        V = np.zeros((N, 3))
        ok = True
        kkt = 0.0
        for ax in range(3):
            v, status, res = _vel_axis_qp(float(dp[ax]), N, dt, v_max)
            ok &= status == OPTIMAL
            kkt = max(kkt, res)
            V[:, ax] = v
        if ok and kkt <= kkt_tol:
            return VelPrimitive(p0.copy(), pf.copy(), V, dt, N, kkt, it, time.perf_counter() - t0)
        dt *= gamma
    raise MaxIterations(f"no feasible velocity primitive after {max_iter} dt increases")


def solve_velocity_chain(points, N: int, v_max: float, **kw) -> list[VelPrimitive]:
    """One velocity primitive per consecutive pair of ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        raise ValueError("a velocity chain needs at least two points")
    return [solve_velocity_segment(pts[i], pts[i + 1], N, v_max, **kw)
            for i in range(len(pts) - 1)]


# ------------------------------------------------------------ sampling

def sample_primitive(prim, t: float) -> FlatState:
    """Exact state at time ``t`` within the primitive."""
    T = prim.N * prim.dt
    if t < -1e-12 or t > T + 1e-12:
        raise OutOfDomain(f"t={t} outside [0, {T}]")
    if isinstance(prim, VelPrimitive):
        t = min(max(t, 0.0), T)
        k = min(int(t / prim.dt), prim.N - 1)
        tau = t - k * prim.dt
        pos = prim.p0 + prim.dt * prim.inputs[:k].sum(axis=0) + tau * prim.inputs[k]
        return FlatState(pos, prim.inputs[k], np.zeros(3))
    if t <= 0.0:
        return prim.x0.copy()
    if t >= T:
        return prim.terminal.copy()
    k = min(int(t / prim.dt), prim.N - 1)
    tau = t - k * prim.dt
    p, v, a, j = prim.pos[k], prim.vel[k], prim.acc[k], prim.inputs[k]
    return FlatState(p + v * tau + a * tau ** 2 / 2 + j * tau ** 3 / 6,
                     v + a * tau + j * tau ** 2 / 2,
                     a + j * tau)


def sample_positions(prim: JerkPrimitive, ts: np.ndarray) -> np.ndarray:
    """Vectorised positions of a jerk primitive at times ``ts`` (clamped to its span)."""
    ts = np.clip(np.asarray(ts, float), 0.0, prim.N * prim.dt)
    k = np.minimum((ts / prim.dt).astype(np.int64), prim.N - 1)
    tau = (ts - k * prim.dt)[:, None]
    return (prim.pos[k] + prim.vel[k] * tau + prim.acc[k] * tau ** 2 / 2
            + prim.inputs[k] * tau ** 3 / 6)


# ------------------------------------------------------------ costs

def cost_jerk(prim: JerkPrimitive, j_max: float) -> float:
    return float(prim.N * prim.dt / j_max ** 2 * np.sum(prim.inputs ** 2))


def cost_velocity(prims, v_max: float) -> float:
    return float(sum(p.N * p.dt / v_max ** 2 * np.sum(p.inputs ** 2) for p in prims))


def cost_distance(C, tail, v_max: float) -> float:
    """Time to fly ``C -> q_s -> ... -> q_n`` at ``v_max``."""
    tail = np.asarray(tail, dtype=float).reshape(-1, 3)
    if len(tail) == 0:
        return 0.0
    d = np.linalg.norm(tail[0] - np.asarray(C, float))
    d += np.linalg.norm(np.diff(tail, axis=0), axis=1).sum()
    return float(d / v_max)
