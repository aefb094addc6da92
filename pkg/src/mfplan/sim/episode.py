"""Closed-loop episode: sensing, fusion, replanning and perfect tracking.

A fixed 5 ms step drives three rates: the camera pushes clouds into the
buffer, the mapper fuses the newest scan and advances the watermark, and the
planner replans from the committed state a fixed lead time ahead.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..collision import CloudBuffer, primitive_clear, push_cloud
from ..occupancy import SlidingGrid, fuse_scan, slide_to
from ..primitives import FlatState
from ..replan import STAGES, CommittedTrajectory, ReplanConfig, ReplanState, commit, replan
from .sensor import SensorConfig, render_depth
from .world import World


@dataclass
class SimConfig:
    dt: float = 0.005
    f_sensor: float = 30.0
    f_map: float = 10.0
    f_replan: float = 20.0
    delta_commit: float = 0.05
    timeout: float = 120.0
    success_radius: float = 0.5
    map_side: tuple[float, float, float] = (20.0, 20.0, 6.0)
    voxel_size: float = 0.1
    buffer_capacity: int = 4
    yaw_rate: float = 2.0
    body_radius: float = 0.2
    safety_audit: bool = True

    def __post_init__(self):
        if self.dt <= 0 or self.timeout <= 0:
            raise ValueError("dt and timeout must be positive")
        if not (self.f_sensor > 0 and self.f_map > 0 and self.f_replan > 0):
            raise ValueError("rates must be positive")
        if self.voxel_size <= 0 or min(self.map_side) <= 0:
            raise ValueError("map size and voxel size must be positive")


@dataclass
class RunMetrics:
    success: bool = False
    outcome: str = "running"
    path_length: float = 0.0
    flight_time: float = 0.0
    min_clearance: float = math.inf
    collisions: int = 0
    unsafe_commits: int = 0
    n_replans: int = 0
    n_replan_failures: int = 0
    replan_records: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "replan_records"}
        recs = self.replan_records
        tot = [r["total_ms"] for r in recs]
        d["replan_ms_median"] = float(np.median(tot)) if tot else 0.0
        d["replan_ms_mean"] = float(np.mean(tot)) if tot else 0.0
        for st in STAGES:
            d[f"{st}_mean"] = float(np.mean([r[st] for r in recs])) if recs else 0.0
        return d


@dataclass
class Trace:
    replan: list = field(default_factory=list)
    state: list = field(default_factory=list)
    fusion: list = field(default_factory=list)
    paths: list = field(default_factory=list)
    jerk_ms: list = field(default_factory=list)
    vel_ms: list = field(default_factory=list)


REPLAN_COLUMNS = ["k", "t", "ok", "goal_ms", "jps_ms", "cvx_jerk_ms", "cvx_vel_ms", "collision_ms",
                  "total_ms", "J1", "J2", "branch", "angle_deg", "r_a", "r_b", "n_qp_solves",
                  "gate_open", "clouds_in_buffer", "nn_queries", "failure"]
TIMING_COLUMNS = ("goal_ms", "jps_ms", "cvx_jerk_ms", "cvx_vel_ms", "collision_ms", "total_ms")
STATE_COLUMNS = ["t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "yaw"]
FUSION_COLUMNS = ["t", "stamp", "scan", "n_points", "fuse_ms", "watermark"]
PATH_COLUMNS = ["k", "wp_index", "x", "y", "z"]


def _every(f: float, dt: float) -> int:
    return max(1, int(round(1.0 / (f * dt))))


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def run_episode(world: World, cfg: ReplanConfig = None, sim: SimConfig = None,
                sensor: SensorConfig = None, record_state: bool = True) -> tuple[RunMetrics, Trace]:
    cfg = cfg or ReplanConfig()
    sim = sim or SimConfig()
    sensor = sensor or SensorConfig()
    start = np.asarray(world.start, float)
    G_term = np.asarray(world.goal, float)

    grid = SlidingGrid.create(start, sim.map_side, sim.voxel_size)
    snapshot = grid.snapshot()
    buffer = CloudBuffer(sim.buffer_capacity)
    rstate = ReplanState(committed=CommittedTrajectory.hover(start))
    metrics = RunMetrics()
    trace = Trace()

    n_sensor = _every(sim.f_sensor, sim.dt)
    n_map = _every(sim.f_map, sim.dt)
    n_replan = _every(sim.f_replan, sim.dt)
    n_steps = int(math.ceil(sim.timeout / sim.dt))

    d0 = G_term - start
    yaw = math.atan2(d0[1], d0[0])
    yaw_target = yaw
    scan_id = 0
    latest = None
    prev_speed = 0.0

    for step in range(n_steps + 1):
        t = step * sim.dt
        x = rstate.committed.sample(t)
        pos = x.pos

        # ground truth checks
        clear = float(world.distance(pos)[0]) - sim.body_radius
        metrics.min_clearance = min(metrics.min_clearance, clear)
        if clear < 0:
            metrics.collisions += 1
            metrics.outcome = "collision"
            break
        speed = float(np.linalg.norm(x.vel))
        if step > 0:
            metrics.path_length += 0.5 * (speed + prev_speed) * sim.dt
        prev_speed = speed
        if record_state:
            trace.state.append([t, *pos, *x.vel, *x.acc, yaw])
        if np.linalg.norm(pos - G_term) < sim.success_radius:
            metrics.success = True
            metrics.outcome = "success"
            break

        # camera heading follows the planner's direction of travel
        dyaw = _wrap(yaw_target - yaw)
        yaw = _wrap(yaw + max(-sim.yaw_rate * sim.dt, min(sim.yaw_rate * sim.dt, dyaw)))

        if step % n_sensor == 0:
            latest = render_depth(world, pos, yaw, sensor)
            scan_id += 1
            push_cloud(buffer, latest.points, scan_id)

        if step % n_map == 0 and latest is not None:
            grid = slide_to(grid, pos)
            if grid.contains(latest.origin):
                grid, secs = fuse_scan(grid, latest)
                buffer.advance_watermark(scan_id)
                trace.fusion.append([t, grid.stamp, scan_id, len(latest.points), secs * 1e3,
                                     buffer.watermark])
            snapshot = grid.snapshot()

        if step % n_replan == 0 and snapshot.stamp > 0:
            t_A = t + sim.delta_commit
            A = rstate.committed.sample(t_A)
            if not snapshot.contains(A.pos):
                continue
            view = buffer.view()
            out = replan(A, G_term, snapshot, view, cfg, rstate)
            metrics.n_replans += 1
            if out.ok:
                if sim.safety_audit:
                    if not primitive_clear(out.chosen_prim, snapshot, view, cfg.r_drone, True):
                        metrics.unsafe_commits += 1
                commit(out, rstate, t_A, t)
                for i, w in enumerate(out.jps.waypoints):
                    trace.paths.append([rstate.k, i, *w])
            else:
                metrics.n_replan_failures += 1
                rstate.committed.prune(t)
            if out.Bp is not None:
                d = out.Bp - pos
                if np.hypot(d[0], d[1]) > 0.3:
                    yaw_target = math.atan2(d[1], d[0])
            trace.jerk_ms.extend(out.jerk_solve_ms)
            trace.vel_ms.extend(out.vel_solve_ms)
            rec = {"k": rstate.k, "t": t, "ok": int(out.ok), **out.timings,
                   "J1": out.J1, "J2": out.J2, "branch": out.chosen_branch,
                   "angle_deg": math.degrees(out.angle) if not math.isnan(out.angle) else math.nan,
                   "r_a": out.r_a, "r_b": out.r_b, "n_qp_solves": out.n_qp_solves,
                   "gate_open": int(out.gate_open), "clouds_in_buffer": out.clouds_in_buffer,
                   "nn_queries": out.nn_queries, "failure": out.failure}
            trace.replan.append(rec)
            metrics.replan_records.append(rec)
    else:
        metrics.outcome = "timeout"
    metrics.flight_time = t
    return metrics, trace


# ------------------------------------------------------------ trace files

def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def write_trace(out_dir, metrics: RunMetrics, trace: Trace, extra: dict | None = None) -> Path:
    """Write replan/state/fusion/path CSVs and summary.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "replan.csv", REPLAN_COLUMNS,
               ([r[c] for c in REPLAN_COLUMNS] for r in trace.replan))
    _write_csv(out / "state.csv", STATE_COLUMNS, trace.state)
    _write_csv(out / "fusion.csv", FUSION_COLUMNS, trace.fusion)
    _write_csv(out / "paths.csv", PATH_COLUMNS, trace.paths)
    summary = metrics.summary()
    summary["jerk_solve_ms_mean"] = float(np.mean(trace.jerk_ms)) if trace.jerk_ms else 0.0
    summary["vel_solve_ms_mean"] = float(np.mean(trace.vel_ms)) if trace.vel_ms else 0.0
    summary["n_jerk_solves"] = len(trace.jerk_ms)
    summary["n_vel_solves"] = len(trace.vel_ms)
    if extra:
        summary.update(extra)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return out
