import csv
import json
import math

import numpy as np
import pytest

from mfplan.sim.episode import SimConfig, run_episode, write_trace
from mfplan.sim.oracle import oracle_grid, oracle_path, oracle_shortest_path
from mfplan.sim.scenarios import DEFAULT_OFFICE, gen_bugtrap, gen_forest, gen_office, room_visits
from mfplan.sim.sensor import SensorConfig, ray_directions, render_depth
from mfplan.sim.world import Box, Cylinder, World, load_world, save_world, segment_clearance
from oracles import dijkstra_length


# ------------------------------------------------------------------ worlds

def test_forest_count_and_determinism():
    w = gen_forest(3)
    assert len(w.shapes) == 250
    assert gen_forest(3).to_dict() == w.to_dict()
    assert gen_forest(4).to_dict() != w.to_dict()
    assert len(gen_forest(0, density=0.0).shapes) == 0
    for p in (w.start, w.goal):
        gap = min(math.dist(p[:2], c.center) - c.radius for c in w.shapes)
        assert gap >= 2.0 - 1e-9


def test_bugtrap_geometry():
    w = gen_bugtrap()
    # the straight segment start -> goal crosses the closed wall
    assert segment_clearance(w, w.start, w.goal) == 0.0
    ref = oracle_path(w, w.start, w.goal)
    assert ref.length > np.linalg.norm(np.subtract(w.goal, w.start))
    # the known-map path leaves through the opening on the -x side
    assert ref.waypoints[:, 0].min() < -4.0
    wide = gen_bugtrap(opening_width=20.0)
    assert len(wide.shapes) == 3


def test_office_validation_and_round_trip(tmp_path):
    w = gen_office()
    save_world(w, tmp_path / "office.json")
    back = load_world(tmp_path / "office.json")
    assert back.to_dict() == w.to_dict()
    assert len(w.rooms) >= 2
    bad = json.loads(json.dumps(DEFAULT_OFFICE))
    bad["walls"][4][4][0][1] = 0.5
    with pytest.raises(ValueError):
        gen_office(bad)
    assert math.isfinite(oracle_shortest_path(w))


def test_world_file_rejects_unknown_shape():
    with pytest.raises(ValueError):
        World.from_dict({"start": [0, 0, 1], "goal": [1, 0, 1], "shapes": [{"type": "cone"}]})


def test_room_visits_detects_turn_back():
    rooms = [(0.0, 0.0, 4.0, 4.0)]
    xy = np.array([(2.0, -1.0), (2.0, 1.0), (2.0, 2.0), (2.0, 1.0), (2.0, -1.0)])
    (v,) = room_visits(xy, rooms)
    assert v["turned_back"]
    xy = np.array([(2.0, -1.0), (2.0, 2.0), (2.0, 5.0)])
    (v,) = room_visits(xy, rooms)
    assert not v["turned_back"]


# ------------------------------------------------------------------ sensor

def ray_march(world, o, d, tmax, tol=1e-9):
    """Sphere tracing on the analytic distance field."""
    t = 0.0
    while t < tmax:
        dist = float(world.distance(o + t * d)[0])
        if dist < tol:
            return t
        t += dist
    return math.inf


def test_empty_world_all_max_range():
    w = World([], floor=False)
    scan = render_depth(w, (0, 0, 1.5), 0.0, SensorConfig(width=16, height=9))
    assert len(scan.points) == 0 and len(scan.max_range_dirs) == 16 * 9


def test_wall_at_five_metres():
    w = World([Box((5.0, -50.0, -50.0), (6.0, 50.0, 50.0))], floor=False)
    cfg = SensorConfig(width=32, height=18)
    scan = render_depth(w, (0, 0, 0), 0.0, cfg)
    assert len(scan.points) == 32 * 18
    np.testing.assert_allclose(scan.points[:, 0], 5.0, atol=1e-9)


def test_render_matches_ray_marching():
    w = gen_forest(1, side=20.0)
    pos = np.array([2.0, 10.0, 1.5])
    cfg = SensorConfig(width=40, height=12)
    dirs = ray_directions(cfg, 0.3)
    scan = render_depth(w, pos, 0.3, cfg)
    hit_d = np.linalg.norm(scan.points - pos, axis=1)
    dist_by_dir = {}
    for p, dd in zip(scan.points, hit_d):
        dist_by_dir[tuple(np.round((p - pos) / dd, 9))] = dd
    checked = 0
    for d in dirs[::7]:
        ref = ray_march(w, pos, d, cfg.max_range)
        key = tuple(np.round(d, 9))
        if math.isinf(ref):
            assert key not in dist_by_dir
        else:
            assert dist_by_dir[key] == pytest.approx(ref, abs=1e-6)
            checked += 1
    assert checked > 10


# ------------------------------------------------------------------ oracle

def test_oracle_matches_dijkstra():
    w = gen_forest(5, side=12.0, density=0.15, clear_radius=1.0)
    s = 0.2
    mask, origin = oracle_grid(w, s, 0.3, w.start[2])
    ref_path = oracle_path(w, w.start, w.goal, s)
    si = tuple(np.floor(np.asarray(w.start) / s + 1e-9).astype(int) - origin)
    gi = tuple(np.floor(np.array([w.goal[0], w.goal[1], w.start[2]]) / s + 1e-9).astype(int) - origin)
    assert ref_path.length == pytest.approx(dijkstra_length(mask, si, gi) * s, abs=1e-9)


def test_oracle_empty_corridor():
    w = World([], ((0, 0, 0), (20, 4, 4)), (1.0, 2.0, 1.5), (15.0, 2.0, 1.5), floor=False)
    assert oracle_shortest_path(w) == pytest.approx(14.0, abs=0.1)


# ------------------------------------------------------------------ episode

@pytest.fixture(scope="module")
def empty_run():
    w = World([], ((0, 0, 0), (12, 4, 6)), (0, 0, 1.5), (10, 0, 1.5))
    return w, run_episode(w, sim=SimConfig(timeout=30))


def test_empty_episode_straight(empty_run):
    _, (m, tr) = empty_run
    assert m.success and m.outcome == "success"
    assert m.path_length == pytest.approx(10.0, rel=0.05)
    assert m.collisions == 0 and m.unsafe_commits == 0
    st = np.array(tr.state)
    v = np.linalg.norm(st[:, 4:7], axis=1)
    ref = np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(st[:, 0]))
    assert m.path_length == pytest.approx(ref, rel=1e-9)


def test_episode_is_deterministic(empty_run):
    w, (m, tr) = empty_run
    m2, tr2 = run_episode(w, sim=SimConfig(timeout=30))
    assert np.array_equal(np.array(tr.state), np.array(tr2.state))
    strip = lambda recs: [{k: v for k, v in r.items() if not k.endswith("_ms")} for r in recs]
    assert strip(tr.replan) == strip(tr2.replan)
    assert m.path_length == m2.path_length


def test_write_trace(empty_run, tmp_path):
    _, (m, tr) = empty_run
    out = write_trace(tmp_path / "ep", m, tr, {"seed": 0})
    for name in ("replan.csv", "state.csv", "fusion.csv", "paths.csv", "summary.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 0 and summary["success"]
    with open(out / "replan.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == m.n_replans
    assert {"goal_ms", "jps_ms", "cvx_jerk_ms", "cvx_vel_ms", "collision_ms", "total_ms"} <= set(rows[0])


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(f_map=0)
