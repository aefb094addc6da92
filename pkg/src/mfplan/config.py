"""Scenario configuration: flat ``section.key = value`` text files.

Values are JSON literals (numbers, strings in double quotes, lists, true,
false, null).  Lines starting with ``#`` are comments.  Any key may be
overridden through the environment as ``MFPLAN_SECTION__KEY`` (dots become
double underscores, case-insensitive), e.g. ``MFPLAN_MAP__VOXEL_SIZE=0.15``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .primitives import Limits, TerminalWeight
from .replan import ReplanConfig
from .sim.episode import SimConfig
from .sim.scenarios import gen_bugtrap, gen_forest, gen_office
from .sim.sensor import SensorConfig
from .sim.world import World, load_world

ENV_PREFIX = "MFPLAN_"
KINDS = ("forest", "bugtrap", "office", "file", "empty")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (``line`` is 1-based, 0 if none)."""

    def __init__(self, msg: str, line: int = 0, source: str = ""):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line else (f"{source}: " if source else "")
        super().__init__(where + msg)


# Every key with its default.  Angles are in degrees here, radians inside.
DEFAULTS: dict[str, object] = {
    "scenario.kind": "forest",
    "scenario.seed": 0,
    "scenario.world_file": None,
    "scenario.office_layout": None,
    "scenario.oracle_voxel": 0.1,

    "forest.side": 50.0,
    "forest.density": 0.1,
    "forest.radius_range": [0.2, 0.4],
    "forest.height": 6.0,
    "forest.clear_radius": 2.0,
    "forest.altitude": 1.5,

    "bugtrap.center": [0.0, 0.0],
    "bugtrap.opening_width": 2.0,
    "bugtrap.size": 8.0,
    "bugtrap.goal_distance": 22.0,

    "empty.distance": 10.0,

    "sensor.h_fov_deg": 90.0,
    "sensor.v_fov_deg": 60.0,
    "sensor.width": 160,
    "sensor.height": 90,
    "sensor.max_range": 10.0,

    "map.side": [20.0, 20.0, 6.0],
    "map.voxel_size": 0.1,
    "map.buffer_capacity": 4,

    "replan.R_a_min": 1.5,
    "replan.R_a_max": 4.0,
    "replan.R_b": 7.0,
    "replan.alpha0_deg": 15.0,
    "replan.samples_total": 30,
    "replan.arc_step_deg": 10.0,
    "replan.ring_offsets_deg": [10.0, 20.0],
    "replan.ring_points": 8,
    "replan.r_drone": 0.3,
    "replan.z_band": [1.0, 2.0],
    "replan.jps_max_jump": 32,
    "replan.goal_any_unknown": True,
    "replan.N_jerk": 10,
    "replan.N_vel": 10,
    "replan.v_max": 2.5,
    "replan.a_max": 4.0,
    "replan.j_max": 20.0,
    "replan.q_pos": 1e3,
    "replan.q_vel": 1e2,
    "replan.q_acc": 1e1,
    "replan.gamma_dt": 1.25,
    "replan.dt_min": 1e-3,
    "replan.max_dt_iter": 50,
    "replan.kkt_tol": 1e-6,
    "replan.term_tol": [0.05, 0.1, 0.5],

    "sim.dt": 0.005,
    "sim.f_sensor": 30.0,
    "sim.f_map": 10.0,
    "sim.f_replan": 20.0,
    "sim.delta_commit": 0.05,
    "sim.timeout": 120.0,
    "sim.success_radius": 0.5,
    "sim.yaw_rate": 2.0,
    "sim.body_radius": 0.2,
    "sim.safety_audit": True,
}

_COMMENTS = {
    "scenario": "world source: forest | bugtrap | office | file | empty",
    "forest": "random forest of vertical cylinders",
    "bugtrap": "C-shaped trap around the start, opening away from the goal",
    "empty": "open space, goal straight ahead along +x",
    "sensor": "depth camera (uniform angular lattice)",
    "map": "sliding occupancy window and unfused cloud buffer",
    "replan": "planner parameters; angles in degrees",
    "sim": "closed loop rates (Hz), step and episode limits",
}


@dataclass
class ScenarioConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))
    source: str = ""
    lines: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **kv) -> "ScenarioConfig":
        """Copy with ``section__key=value`` overrides applied and validated."""
        vals = dict(self.values)
        for k, v in kv.items():
            key = k.replace("__", ".")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key {key!r}")
            vals[key] = v
        out = ScenarioConfig(vals, self.source, dict(self.lines))
        validate(out)
        return out

    # -------------------------------------------------------------- builders

    def replan_config(self) -> ReplanConfig:
        v = self.values
        zb = v["replan.z_band"]
        return ReplanConfig(
            R_a_min=v["replan.R_a_min"], R_a_max=v["replan.R_a_max"], R_b=v["replan.R_b"],
            alpha0=math.radians(v["replan.alpha0_deg"]),
            samples_total=int(v["replan.samples_total"]),
            arc_step=math.radians(v["replan.arc_step_deg"]),
            ring_offsets=tuple(math.radians(a) for a in v["replan.ring_offsets_deg"]),
            ring_points=int(v["replan.ring_points"]),
            r_drone=v["replan.r_drone"],
            z_band=None if zb is None else (float(zb[0]), float(zb[1])),
            jps_max_jump=int(v["replan.jps_max_jump"]),
            goal_any_unknown=bool(v["replan.goal_any_unknown"]),
            N_jerk=int(v["replan.N_jerk"]), N_vel=int(v["replan.N_vel"]),
            limits=Limits(v["replan.v_max"], v["replan.a_max"], v["replan.j_max"]),
            Q=TerminalWeight(v["replan.q_pos"], v["replan.q_vel"], v["replan.q_acc"]),
            gamma_dt=v["replan.gamma_dt"], dt_min=v["replan.dt_min"],
            max_dt_iter=int(v["replan.max_dt_iter"]), kkt_tol=v["replan.kkt_tol"],
            term_tol=tuple(float(t) for t in v["replan.term_tol"]))

    def sim_config(self) -> SimConfig:
        v = self.values
        return SimConfig(
            dt=v["sim.dt"], f_sensor=v["sim.f_sensor"], f_map=v["sim.f_map"],
            f_replan=v["sim.f_replan"], delta_commit=v["sim.delta_commit"],
            timeout=v["sim.timeout"], success_radius=v["sim.success_radius"],
            map_side=tuple(float(x) for x in v["map.side"]), voxel_size=v["map.voxel_size"],
            buffer_capacity=int(v["map.buffer_capacity"]), yaw_rate=v["sim.yaw_rate"],
            body_radius=v["sim.body_radius"], safety_audit=bool(v["sim.safety_audit"]))

    def sensor_config(self) -> SensorConfig:
        v = self.values
        return SensorConfig(v["sensor.h_fov_deg"], v["sensor.v_fov_deg"], int(v["sensor.width"]),
                            int(v["sensor.height"]), v["sensor.max_range"])

    def world(self, seed: int | None = None) -> World:
        v = self.values
        kind = v["scenario.kind"]
        seed = v["scenario.seed"] if seed is None else seed
        if kind == "forest":
            return gen_forest(int(seed), v["forest.side"], v["forest.density"],
                              tuple(v["forest.radius_range"]), v["forest.height"],
                              v["forest.clear_radius"], v["forest.altitude"])
        if kind == "bugtrap":
            return gen_bugtrap(tuple(v["bugtrap.center"]), v["bugtrap.opening_width"],
                               v["bugtrap.size"], v["bugtrap.goal_distance"])
        if kind == "office":
            layout = None
            if v["scenario.office_layout"]:
                layout = json.loads(self._path(v["scenario.office_layout"]).read_text())
            return gen_office(layout, v["replan.r_drone"], v["map.voxel_size"])
        if kind == "file":
            return load_world(self._path(v["scenario.world_file"]))
        d = float(v["empty.distance"])
        return World([], ((-2.0, -2.0, 0.0), (d + 2.0, 2.0, 6.0)), (0.0, 0.0, 1.5), (d, 0.0, 1.5),
                     None, "empty")

    def _path(self, p) -> Path:
        p = Path(p)
        if not p.is_absolute() and self.source:
            p = Path(self.source).parent / p
        return p


# ------------------------------------------------------------------ parsing

def _check_type(key, value, line, source):
    ref = DEFAULTS[key]
    if ref is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key} must be a path string or null", line, source)
        return value
    if isinstance(ref, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false", line, source)
        return value
    if isinstance(ref, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer", line, source)
        return value
    if isinstance(ref, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number", line, source)
        return float(value)
    if isinstance(ref, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string", line, source)
        return value
    if isinstance(ref, list):
        if value is None and key == "replan.z_band":
            return None
        if not isinstance(value, list) or any(isinstance(x, bool) or not isinstance(x, (int, float))
                                              for x in value):
            raise ConfigError(f"{key} must be a list of numbers", line, source)
        if key != "replan.ring_offsets_deg" and len(value) != len(ref):
            raise ConfigError(f"{key} must have {len(ref)} entries", line, source)
        return [float(x) for x in value]
    return value


def parse_text(text: str, source: str = "") -> ScenarioConfig:
    cfg = ScenarioConfig(dict(DEFAULTS), source)
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", n, source)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", n, source)
        if key in cfg.lines:
            raise ConfigError(f"duplicate key {key!r} (first on line {cfg.lines[key]})", n, source)
        try:
            value = json.loads(val)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad value for {key}: {e.msg}", n, source) from None
        cfg.values[key] = _check_type(key, value, n, source)
        cfg.lines[key] = n
    return cfg


def apply_env(cfg: ScenarioConfig, environ=None) -> ScenarioConfig:
    environ = os.environ if environ is None else environ
    by_env = {ENV_PREFIX + k.replace(".", "__").upper(): k for k in DEFAULTS}
    for name, raw in environ.items():
        if not name.upper().startswith(ENV_PREFIX):
            continue
        key = by_env.get(name.upper())
        if key is None:
            raise ConfigError(f"unknown override {name}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg.values[key] = _check_type(key, value, 0, name)
        cfg.lines[key] = 0
    return cfg


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    """Cross-field checks; builds every sub-config once so their own checks run."""
    v = cfg.values

    def line(key):
        return cfg.lines.get(key, 0)

    if v["scenario.kind"] not in KINDS:
        raise ConfigError(f"scenario.kind must be one of {', '.join(KINDS)}",
                          line("scenario.kind"), cfg.source)
    if v["scenario.kind"] == "file":
        if not v["scenario.world_file"]:
            raise ConfigError("scenario.world_file is required for kind 'file'",
                              line("scenario.kind"), cfg.source)
    for key in ("scenario.world_file", "scenario.office_layout"):
        if v[key] and not cfg._path(v[key]).is_file():
            raise ConfigError(f"{key}: file not found: {v[key]}", line(key), cfg.source)
    positive = ["scenario.oracle_voxel", "forest.side", "forest.height", "bugtrap.size",
                "bugtrap.goal_distance", "empty.distance"]
    for key in positive:
        if not v[key] > 0:
            raise ConfigError(f"{key} must be positive", line(key), cfg.source)
    if v["forest.density"] < 0:
        raise ConfigError("forest.density must be non-negative", line("forest.density"), cfg.source)
    lo, hi = v["forest.radius_range"]
    if not 0 < lo <= hi:
        raise ConfigError("forest.radius_range must satisfy 0 < lo <= hi",
                          line("forest.radius_range"), cfg.source)
    zb = v["replan.z_band"]
    if zb is not None and not zb[0] < zb[1]:
        raise ConfigError("replan.z_band must be increasing", line("replan.z_band"), cfg.source)
    if v["replan.jps_max_jump"] < 0:
        raise ConfigError("replan.jps_max_jump must be >= 0", line("replan.jps_max_jump"), cfg.source)
    for build, section in ((cfg.replan_config, "replan"), (cfg.sim_config, "sim"),
                           (cfg.sensor_config, "sensor")):
        try:
            build()
        except (ValueError, TypeError) as e:
            keys = [k for k in cfg.lines if k.startswith(section + ".")]
            raise ConfigError(f"{section}: {e}", min((cfg.lines[k] for k in keys), default=0),
                              cfg.source) from None
    return cfg


def load_config(path, environ=None) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", 0, str(path)) from None
    cfg = parse_text(text, str(path))
    apply_env(cfg, environ)
    return validate(cfg)


def reference_config() -> str:
    """Text of a config file listing every key at its default."""
    out = ["# mfplan scenario configuration (all keys at their defaults)", ""]
    section = None
    for key, val in DEFAULTS.items():
        sec = key.split(".", 1)[0]
        if sec != section:
            if section is not None:
                out.append("")
            out.append(f"# {sec}: {_COMMENTS[sec]}" if sec in _COMMENTS else f"# {sec}")
            section = sec
        out.append(f"{key} = {json.dumps(val)}")
    return "\n".join(out) + "\n"
