import csv
import json
import math

import numpy as np
import pytest

from mfplan.cli import aggregate, main, parse_seeds, parse_voxels, run_batch, timing_row
from mfplan.config import (DEFAULTS, ConfigError, apply_env, load_config, parse_text,
                           reference_config, validate)

FAST = """
scenario.kind = "empty"
empty.distance = 4.0
sim.timeout = 20.0
sensor.width = 64
sensor.height = 36
"""


@pytest.fixture
def fast_cfg(tmp_path):
    p = tmp_path / "fast.cfg"
    p.write_text(FAST)
    return p


# ------------------------------------------------------------------ config

def test_reference_config_round_trip():
    cfg = parse_text(reference_config())
    assert cfg.values == DEFAULTS
    validate(cfg)


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as e:
        parse_text("# c\nmap.voxel_size = 0.1\nbogus.key = 3\n", "x.cfg")
    assert e.value.line == 3 and "x.cfg:3" in str(e.value)
    with pytest.raises(ConfigError) as e:
        parse_text("map.voxel_size 0.1\n")
    assert e.value.line == 1
    with pytest.raises(ConfigError) as e:
        parse_text("map.voxel_size = 0.1\nmap.voxel_size = 0.2\n")
    assert e.value.line == 2
    with pytest.raises(ConfigError) as e:
        parse_text("\nsensor.width = 1.5\n")
    assert e.value.line == 2
    with pytest.raises(ConfigError) as e:
        parse_text("replan.alpha0_deg = [1,\n")
    assert e.value.line == 1


def test_cross_field_validation():
    with pytest.raises(ConfigError) as e:
        validate(parse_text("replan.R_a_min = 1.0\n\nreplan.R_a_max = 0.5\n"))
    assert e.value.line == 1
    with pytest.raises(ConfigError):
        validate(parse_text('scenario.kind = "moon"\n'))
    with pytest.raises(ConfigError):
        validate(parse_text('scenario.kind = "file"\nscenario.world_file = "missing.json"\n'))


def test_env_overrides(fast_cfg):
    cfg = load_config(fast_cfg, {"MFPLAN_MAP__VOXEL_SIZE": "0.15", "OTHER": "x"})
    assert cfg["map.voxel_size"] == 0.15
    assert cfg.sim_config().voxel_size == 0.15
    with pytest.raises(ConfigError):
        load_config(fast_cfg, {"MFPLAN_MAP__NOPE": "1"})
    cfg = apply_env(parse_text(""), {"mfplan_scenario__kind": "bugtrap"})
    assert cfg["scenario.kind"] == "bugtrap"


def test_builders_convert_units():
    cfg = parse_text("replan.alpha0_deg = 30\nreplan.z_band = null\n")
    rc = cfg.replan_config()
    assert rc.alpha0 == pytest.approx(math.pi / 6)
    assert rc.z_band is None


def test_seed_and_voxel_parsing():
    assert parse_seeds("0..3", 7) == [0, 1, 2, 3]
    assert parse_seeds("4,2", 7) == [4, 2]
    assert parse_seeds(None, 7) == [7]
    with pytest.raises(ConfigError):
        parse_seeds("5..2", 0)
    assert parse_voxels("0.10,0.15") == [0.10, 0.15]
    with pytest.raises(ConfigError):
        parse_voxels("0.1,-1")


# ------------------------------------------------------------------ commands

def test_run_writes_traces_and_aggregate(fast_cfg, tmp_path):
    out = tmp_path / "run"
    assert main(["run", str(fast_cfg), "--out", str(out), "--seeds", "0..1", "--oracle"]) == 0
    agg = json.loads((out / "aggregate.json").read_text())["aggregate"]
    assert agg["episodes"] == 2 and agg["successes"] == 2
    # recompute from the per-seed files
    dists, totals = [], []
    for s in (0, 1):
        summ = json.loads((out / f"seed_{s:04d}" / "summary.json").read_text())
        dists.append(summ["path_length"])
        with open(out / f"seed_{s:04d}" / "replan.csv") as f:
            totals += [float(r["total_ms"]) for r in csv.DictReader(f)]
        assert summ["ratio"] <= 1.08
    assert agg["distance_avg"] == pytest.approx(np.mean(dists), abs=1e-9)
    assert agg["distance_std"] == pytest.approx(np.std(dists), abs=1e-9)
    assert agg["distance_max"] == pytest.approx(max(dists), abs=1e-9)
    assert agg["distance_min"] == pytest.approx(min(dists), abs=1e-9)
    assert agg["total_ms_mean"] == pytest.approx(np.mean(totals), abs=1e-9)
    assert (out / "episodes.csv").exists()


def test_run_is_reproducible(fast_cfg):
    cfg = load_config(fast_cfg)
    a = run_batch(cfg, [0], None)[0]
    b = run_batch(cfg, [0], None)[0]
    assert a["path_length"] == b["path_length"] and a["n_replans"] == b["n_replans"]


def test_exit_codes(fast_cfg, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("map.voxel = 0.1\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert main(["run", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 3
    short = tmp_path / "short.cfg"
    short.write_text(FAST.replace("sim.timeout = 20.0", "sim.timeout = 0.5"))
    assert main(["run", str(short), "--out", str(tmp_path / "o2")]) == 2


def test_sweep_rows_and_stage_sums(fast_cfg, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep-voxel", str(fast_cfg), "--voxels", "0.10,0.20", "--out", str(out)]) == 0
    rows = json.loads((out / "sweep.json").read_text())
    assert [r["voxel_size"] for r in rows] == [0.10, 0.20]
    for r in rows:
        stages = sum(r[f"{s}_mean"] for s in ("goal_ms", "jps_ms", "cvx_jerk_ms", "cvx_vel_ms",
                                              "collision_ms"))
        assert stages == pytest.approx(r["total_ms_mean"], rel=0.05)
    assert (out / "sweep.csv").exists()


def test_timing_row_matches_raw():
    results = [{"timings": {s: [1.0, 3.0] for s in ("goal_ms", "jps_ms", "cvx_jerk_ms",
                                                       "cvx_vel_ms", "collision_ms")} | {"total_ms": [5.0, 15.0]}}]
    row = timing_row(results)
    assert row["jps_ms_mean"] == 2.0 and row["total_ms_median"] == 10.0
    assert row["jps_share"] == pytest.approx(0.2)
    assert row["n_replans"] == 2


def test_compare_known(fast_cfg, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare-known", str(fast_cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "compare.json").read_text())
    assert rep["ratio"] == pytest.approx(rep["executed_length"] / rep["oracle_length"])
    assert rep["ratio"] <= 1.08
    assert "ratio" in capsys.readouterr().out


def test_reference_config_command(tmp_path, capsys):
    assert main(["reference-config"]) == 0
    assert "map.voxel_size = 0.1" in capsys.readouterr().out
    p = tmp_path / "ref.cfg"
    assert main(["reference-config", str(p)]) == 0
    assert parse_text(p.read_text()).values == DEFAULTS
