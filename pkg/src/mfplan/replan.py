"""Multi-fidelity receding-horizon replanning.

Each replan composes three pieces toward the projected goal: a jerk primitive
from the start state ``A`` to a point ``B`` on the inner sphere, a chain of
velocity primitives from ``B`` through the global path's waypoints to ``C`` on
the outer sphere, and the remaining geometric path from ``C`` to the goal.
When the fresh global path turns away from the previous one by more than
``alpha0``, the previous path (repaired around new obstacles) is scored the
same way and the cheaper of the two jerk primitives is executed.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .collision import CloudBuffer, primitive_clear
from .jps import (GridPath, NoPath, PlanningMap, first_sphere_intersection, intermediate_waypoints,
                  jps_search, last_sphere_intersection, path_first_last_blocked, planning_map,
                  _nearest_unblocked)
from .occupancy import FREE, NoFeasibleGoal, OutOfBounds, SlidingGrid, ball_offsets, project_goal, query, world_to_voxel
from .primitives import (FlatState, JerkPrimitive, Limits, MaxIterations, TerminalWeight, cost_distance,
                         cost_jerk, cost_velocity, sample_primitive, solve_jerk, solve_velocity_chain)

STAGES = ("goal_ms", "jps_ms", "cvx_jerk_ms", "cvx_vel_ms", "collision_ms")


class NoFeasibleTerminal(RuntimeError):
    """Every sampled terminal point was rejected."""


@dataclass
class ReplanConfig:
    R_a_min: float = 1.5
    R_a_max: float = 4.0
    R_b: float = 7.0
    alpha0: float = math.radians(15.0)
    samples_total: int = 30
    arc_step: float = math.radians(10.0)
    ring_offsets: tuple[float, ...] = (math.radians(10.0), math.radians(20.0))
    ring_points: int = 8
    r_drone: float = 0.3
    z_band: tuple[float, float] | None = (1.0, 2.0)
    jps_max_jump: int = 32
    goal_any_unknown: bool = True
    N_jerk: int = 10
    N_vel: int = 10
    limits: Limits = field(default_factory=lambda: Limits(2.5, 4.0, 20.0))
    Q: TerminalWeight = field(default_factory=TerminalWeight)
    gamma_dt: float = 1.25
    dt_min: float = 1e-3
    max_dt_iter: int = 50
    kkt_tol: float = 1e-6
    term_tol: tuple[float, float, float] = (0.05, 0.1, 0.5)

    def __post_init__(self):
        if not (self.R_b > self.R_a_max > self.R_a_min > 0):
            raise ValueError("need R_b > R_a_max > R_a_min > 0")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.samples_total < 1 or self.ring_points < 1:
            raise ValueError("sample counts must be positive")
        if self.arc_step <= 0:
            raise ValueError("arc_step must be positive")
        if self.r_drone < 0:
            raise ValueError("r_drone must be non-negative")
        if self.N_jerk < 2 or self.N_vel < 2:
            raise ValueError("N must be at least 2")


# ------------------------------------------------------------ committed trajectory

@dataclass
class CommittedTrajectory:
    """Jerk primitives spliced in time; holds at rest after the last one ends."""

    pieces: list[tuple[float, JerkPrimitive]] = field(default_factory=list)
    hold: FlatState | None = None

    @classmethod
    def hover(cls, pos) -> "CommittedTrajectory":
        return cls([], FlatState.rest(pos))

    @property
    def end_time(self) -> float:
        if not self.pieces:
            return -math.inf
        t0, p = self.pieces[-1]
        return t0 + p.duration

    def sample(self, t: float) -> FlatState:
        for t0, p in reversed(self.pieces):
            if t >= t0:
                if t <= t0 + p.duration:
                    return sample_primitive(p, t - t0)
                end = p.terminal
                return FlatState(end.pos, np.zeros(3), np.zeros(3))
        if self.hold is not None:
            return self.hold.copy()
        t0, p = self.pieces[0]
        return p.x0.copy()

    def splice(self, t_A: float, prim: JerkPrimitive) -> None:
        """Keep everything before ``t_A`` and continue with ``prim`` from there."""
        if not self.pieces and self.hold is not None:
            self.hold = None
        self.pieces = [(t0, p) for t0, p in self.pieces if t0 < t_A]
        self.pieces.append((t_A, prim))

    def prune(self, t_now: float) -> None:
        """Drop pieces superseded before ``t_now``."""
        while len(self.pieces) > 1 and self.pieces[1][0] <= t_now:
            self.pieces.pop(0)


# ------------------------------------------------------------ state and outcome

@dataclass
class ReplanState:
    k: int = 0
    prev_jps: GridPath | None = None
    prev_Bp: np.ndarray | None = None
    committed: CommittedTrajectory | None = None


@dataclass
class BranchResult:
    path: GridPath
    prim: JerkPrimitive
    B: np.ndarray
    Bp: np.ndarray
    r_idx: int
    queue_index: int


@dataclass
class ReplanOutcome:
    ok: bool
    chosen_prim: JerkPrimitive | None = None
    chosen_branch: int = 0
    J1: float = math.nan
    J2: float = math.nan
    gate_open: bool = False
    angle: float = math.nan
    r_a: float = math.nan
    r_b: float = math.nan
    G: np.ndarray | None = None
    jps: GridPath | None = None
    B: np.ndarray | None = None
    Bp: np.ndarray | None = None
    timings: dict = field(default_factory=lambda: {k: 0.0 for k in STAGES + ("total_ms",)})
    n_qp_solves: int = 0
    jerk_solve_ms: list = field(default_factory=list)
    vel_solve_ms: list = field(default_factory=list)
    clouds_in_buffer: int = 0
    nn_queries: int = 0
    failure: str = ""


class _Clock:
    """Accumulates wall-clock milliseconds per stage."""

    def __init__(self, timings: dict):
        self.t = timings

    def __call__(self, stage):
        return _Lap(self.t, stage)


class _Lap:
    def __init__(self, t, stage):
        self.t, self.stage = t, stage

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.t[self.stage] += (time.perf_counter() - self.t0) * 1e3
        return False


# ------------------------------------------------------------ geometry helpers

def saturate(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def angle_between(B1, A, B2) -> float:
    """Angle at ``A`` between rays A->B1 and A->B2 (0 when either is degenerate)."""
    u = np.asarray(B1, float) - np.asarray(A, float)
    v = np.asarray(B2, float) - np.asarray(A, float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(math.acos(max(-1.0, min(1.0, float(u @ v) / (nu * nv)))))


def _slerp_dirs(d0, d1, step):
    """Unit directions strictly after ``d0`` up to ``d1`` along the great circle."""
    ang = math.acos(max(-1.0, min(1.0, float(d0 @ d1))))
    if ang < 1e-9:
        return []
    n = max(1, int(math.ceil(ang / step - 1e-9)))
    out = []
    if ang > math.pi - 1e-9:
        # antipodal: any great circle works, pick one through the horizontal
        perp = _basis(d0)[0]
        d1_axis = perp
        for i in range(1, n + 1):
            th = ang * i / n
            out.append(math.cos(th) * d0 + math.sin(th) * d1_axis)
        return out
    so = math.sin(ang)
    for i in range(1, n + 1):
        th = ang * i / n
        out.append((math.sin(ang - th) * d0 + math.sin(th) * d1) / so)
    return out


def _basis(d):
    """Two unit vectors orthogonal to ``d``; the first is horizontal when possible."""
    z = np.array([0.0, 0.0, 1.0])
    e1 = np.cross(z, d)
    if np.linalg.norm(e1) < 1e-9:
        e1 = np.cross(np.array([1.0, 0.0, 0.0]), d)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2 / np.linalg.norm(e2)


# ring azimuths: horizontal neighbours first
_RING_ORDER = (0, 4, 1, 7, 3, 5, 2, 6)


def _ring(d, offset, n_pts):
    e1, e2 = _basis(d)
    order = _RING_ORDER if n_pts == 8 else range(n_pts)
    out = []
    for j in order:
        phi = 2 * math.pi * j / n_pts
        w = math.cos(phi) * e1 + math.sin(phi) * e2
        out.append(math.cos(offset) * d + math.sin(offset) * w)
    return out


def sample_points(Bp, path: GridPath, A, r_a: float, cfg: ReplanConfig, r_idx: int | None = None):
    """Ordered terminal candidates on the sphere of radius ``r_a`` around ``A``.

    B' first, then great-circle arcs through the projections of the interior
    waypoints q_{r-1}, ..., q_2 (walking back toward the start), then rings
    around B' at growing angular offsets until ``samples_total`` is reached.
    """
    A = np.asarray(A, float)
    d0 = np.asarray(Bp, float) - A
    if np.linalg.norm(d0) == 0:
        return np.asarray(Bp, float).reshape(1, 3)
    d0 /= np.linalg.norm(d0)
    if r_idx is None:
        r_idx = first_sphere_intersection(path, A, r_a)[1]
    dirs = [d0]
    cur = d0
    for q in path.waypoints[1:r_idx][::-1]:
        v = q - A
        nv = np.linalg.norm(v)
        if nv < 1e-9:
            continue
        nxt = v / nv
        dirs.extend(_slerp_dirs(cur, nxt, cfg.arc_step))
        cur = nxt
    offsets = list(cfg.ring_offsets)
    step = offsets[-1] - offsets[-2] if len(offsets) > 1 else (offsets[0] if offsets else math.radians(10))
    k = 0
    while len(dirs) < cfg.samples_total:
        if k < len(offsets):
            off = offsets[k]
        else:
            off = offsets[-1] + step * (k - len(offsets) + 1) if offsets else step * (k + 1)
        if off >= math.pi:
            break
        dirs.extend(_ring(d0, off, cfg.ring_points))
        k += 1
    # drop near-duplicates, keep order
    D = np.array(dirs)
    gram = D @ D.T
    keep: list[int] = []
    for i in range(len(D)):
        if not keep or gram[i, keep].max() < 1 - 1e-12:
            keep.append(i)
            if len(keep) == cfg.samples_total:
                break
    return A + r_a * D[keep]


# ------------------------------------------------------------ planning view

def escape_map(pm: PlanningMap, start) -> PlanningMap:
    """Planning view where inflation around ``start`` is lifted.

    Used when the vehicle sits inside the inflated margin of a newly seen
    obstacle: only raw Occupied voxels (and the altitude band) block near it.
    """
    g = pm.grid
    si = np.array(world_to_voxel(g, start))
    if not pm.is_blocked(tuple(si)):
        return pm
    blocked = pm.blocked.copy()
    n = max(pm.inflate_voxels, 1)
    offs = ball_offsets(n)
    raw = (g.cells == 2)
    band = pm.band_mask()
    for o in offs:
        c = si + o
        if np.any(c < 0) or np.any(c >= g.dims):
            continue
        i, j, k = (int(v) for v in c)
        blocked[i + 1, j + 1, k + 1] = 1 if (raw[i, j, k] or not band[i, j, k]) else 0
    return PlanningMap(g, pm.occupied, blocked, pm.inflate_voxels, pm.z_band)


# ------------------------------------------------------------ replan pieces

def get_primj(path: GridPath, A: FlatState, r_a: float, grid: SlidingGrid, buffer: CloudBuffer | None,
              cfg: ReplanConfig, pm: PlanningMap | None = None, stats: ReplanOutcome | None = None,
              clock: _Clock | None = None) -> BranchResult:
    """First collision-free jerk primitive over the sampled terminal queue."""
    lap = clock or (lambda stage: _NullLap())
    with lap("collision_ms"):
        Bp, r_idx, _ = first_sphere_intersection(path, A.pos, r_a)
        queue = sample_points(Bp, path, A.pos, r_a, cfg, r_idx)
    blocked = pm.blocked if pm is not None else None
    for qi, B in enumerate(queue):
        with lap("collision_ms"):
            if query(grid, B) != FREE:
                continue
            if pm is not None and grid.contains(B) and pm.is_blocked(world_to_voxel(grid, B)):
                continue
        try:
            with lap("cvx_jerk_ms"):
                prim = solve_jerk(A, FlatState.rest(B), cfg.N_jerk, cfg.limits, cfg.Q,
                                  gamma=cfg.gamma_dt, dt_min=cfg.dt_min, max_iter=cfg.max_dt_iter,
                                  kkt_tol=cfg.kkt_tol, term_tol=cfg.term_tol)
        except MaxIterations:
            continue
        if stats is not None:
            stats.n_qp_solves += prim.n_solves
            stats.jerk_solve_ms.append(prim.solve_time * 1e3)
        with lap("collision_ms"):
            clear = primitive_clear(prim, grid, buffer, cfg.r_drone, True, blocked)
        if clear:
            return BranchResult(path, prim, B.copy(), Bp, r_idx, qi)
    raise NoFeasibleTerminal(f"all {len(queue)} terminal samples rejected")


class _NullLap:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _concat(paths: list[GridPath]) -> GridPath:
    wps = [paths[0].waypoints]
    last = paths[0].waypoints[-1]
    for p in paths[1:]:
        w = p.waypoints
        if np.allclose(w[0], last):
            w = w[1:]
        if len(w):
            wps.append(w)
            last = w[-1]
    counts = tuple(int(sum(p.move_counts[i] for p in paths)) for i in range(3))
    wp = np.concatenate(wps)
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1).sum() if len(wp) > 1 else 0.0
    return GridPath(wp, float(seg), counts, sum(p.expanded for p in paths))


def _snap_free(pm: PlanningMap, p) -> np.ndarray:
    g = pm.grid
    idx = world_to_voxel(g, p)
    if not pm.is_blocked(idx):
        return np.asarray(p, float)
    alt = _nearest_unblocked(pm, idx)
    if alt is None:
        raise NoPath("no unblocked voxel near the repair point")
    return g.voxel_center(alt)


def build_jps2(prev_jps: GridPath, pm: PlanningMap, A, G, max_jump: int = 0) -> GridPath | None:
    """Previous global path, rerouted around whatever now blocks it.

    Returns the path unchanged when it is still clear, the concatenation of
    A->I1, I1->I2 and I2->G otherwise, and None if any of those searches fail.
    """
    hit = path_first_last_blocked(prev_jps, pm)
    if hit is None:
        return prev_jps
    I1, I2 = hit
    g = pm.grid
    try:
        if not (g.contains(I1) and g.contains(I2)):
            raise NoPath("repair point outside the window")
        I1 = _snap_free(pm, I1)
        I2 = _snap_free(pm, I2)
        legs = [jps_search(pm, A, I1, max_jump), jps_search(pm, I1, I2, max_jump),
                jps_search(pm, I2, G, max_jump)]
    except (NoPath, OutOfBounds):
        return None
    return _concat(legs)


def get_cost(branch: BranchResult, A, r_b: float, cfg: ReplanConfig,
             stats: ReplanOutcome | None = None, clock: _Clock | None = None) -> float:
    """Jerk + velocity-chain + remaining-distance cost of one branch."""
    lap = clock or (lambda stage: _NullLap())
    with lap("cvx_vel_ms"):
        return _get_cost(branch, A, r_b, cfg, stats)


def _get_cost(branch, A, r_b, cfg, stats):
    path = branch.path
    C, s_idx, _ = last_sphere_intersection(path, A, r_b)
    r_idx = min(branch.r_idx, s_idx)
    wp = intermediate_waypoints(path, r_idx, s_idx)
    chain = np.vstack([branch.B, wp, C]) if len(wp) else np.vstack([branch.B, C])
    try:
        prims = solve_velocity_chain(chain, cfg.N_vel, cfg.limits.v_max, gamma=cfg.gamma_dt,
                                     dt_min=cfg.dt_min, max_iter=cfg.max_dt_iter,
                                     kkt_tol=cfg.kkt_tol)
    except MaxIterations:
        return math.inf
    if stats is not None:
        stats.n_qp_solves += sum(p.n_solves for p in prims)
        stats.vel_solve_ms.extend(p.solve_time * 1e3 for p in prims)
    J = cost_jerk(branch.prim, cfg.limits.j_max)
    J += cost_velocity(prims, cfg.limits.v_max)
    J += cost_distance(C, path.waypoints[s_idx:], cfg.limits.v_max)
    return J


def replan(A: FlatState, G_term, grid: SlidingGrid, buffer: CloudBuffer | None, cfg: ReplanConfig,
           state: ReplanState, force_both: bool = False) -> ReplanOutcome:
    """One iteration of the replanning loop.

    On success the state's previous path and B' are updated and the chosen
    jerk primitive is returned; on failure the state keeps its old path and
    the caller should keep flying the committed trajectory.  ``force_both``
    evaluates both branches regardless of the angle gate (for testing).
    """
    t_start = time.perf_counter()
    out = ReplanOutcome(ok=False)
    clock = _Clock(out.timings)
    state.k += 1
    if buffer is not None:
        out.clouds_in_buffer = len(buffer)
        nn0 = buffer.nn_queries
    try:
        with clock("jps_ms"):
            pm = planning_map(grid, cfg.r_drone, cfg.z_band)
            pm = escape_map(pm, A.pos)
        with clock("goal_ms"):
            admissible = pm.blocked[1:-1, 1:-1, 1:-1] == 0
            G = project_goal(grid, A.pos, G_term, admissible, cfg.goal_any_unknown)
        out.G = G
        with clock("jps_ms"):
            jps1 = jps_search(pm, A.pos, G, cfg.jps_max_jump)
        out.jps = jps1
        AG = float(np.linalg.norm(G - A.pos))
        q2 = jps1.waypoints[1] if jps1.n > 1 else jps1.waypoints[0]
        r_a = min(saturate(float(np.linalg.norm(q2 - A.pos)), cfg.R_a_min, cfg.R_a_max), AG)
        r_b = min(cfg.R_b, AG)
        out.r_a, out.r_b = r_a, r_b
        if r_a <= 1e-6:
            raise NoFeasibleTerminal("already at the projected goal")
        # heading hint kept even if no primitive is found
        with clock("jps_ms"):
            out.Bp = first_sphere_intersection(jps1, A.pos, r_a)[0]
        b1 = get_primj(jps1, A, r_a, grid, buffer, cfg, pm, out, clock)
        chosen, branch = b1, 1
        if state.prev_Bp is not None:
            out.angle = angle_between(b1.Bp, A.pos, state.prev_Bp)
        gate = state.prev_jps is not None and (out.angle > cfg.alpha0 or force_both)
        out.gate_open = gate
        if gate:
            out.J1 = get_cost(b1, A.pos, r_b, cfg, out, clock)
            out.J2 = math.inf
            with clock("jps_ms"):
                jps2 = build_jps2(state.prev_jps, pm, A.pos, G, cfg.jps_max_jump)
            if jps2 is not None:
                try:
                    b2 = get_primj(jps2, A, r_a, grid, buffer, cfg, pm, out, clock)
                    out.J2 = get_cost(b2, A.pos, r_b, cfg, out, clock)
                except NoFeasibleTerminal:
                    b2 = None
                if b2 is not None and out.J2 < out.J1:
                    chosen, branch = b2, 2
        state.prev_jps = chosen.path
        state.prev_Bp = chosen.Bp
        out.ok = True
        out.chosen_prim = chosen.prim
        out.chosen_branch = branch
        out.B, out.Bp = chosen.B, chosen.Bp
    except (NoPath, NoFeasibleTerminal, NoFeasibleGoal, OutOfBounds) as e:
        out.failure = f"{type(e).__name__}: {e}"
    if buffer is not None:
        out.nn_queries = buffer.nn_queries - nn0
    out.timings["total_ms"] = (time.perf_counter() - t_start) * 1e3
    return out


def commit(outcome: ReplanOutcome, state: ReplanState, t_A: float, t_now: float | None = None) -> CommittedTrajectory:
    """Splice the chosen primitive into the committed trajectory at ``t_A``."""
    if state.committed is None:
        raise ValueError("state has no committed trajectory")
    if outcome.ok:
        state.committed.splice(t_A, outcome.chosen_prim)
    if t_now is not None:
        state.committed.prune(t_now)
    return state.committed
