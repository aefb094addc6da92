"""Simulated depth camera: analytic ray casting on a uniform angular lattice."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..occupancy import DepthScan
from .world import World, cast_rays


@dataclass(frozen=True)
class SensorConfig:
    h_fov_deg: float = 90.0
    v_fov_deg: float = 60.0
    width: int = 160
    height: int = 90
    max_range: float = 10.0

    def __post_init__(self):
        if not (0 < self.h_fov_deg < 360 and 0 < self.v_fov_deg < 180):
            raise ValueError("field of view out of range")
        if self.width < 1 or self.height < 1 or self.max_range <= 0:
            raise ValueError("sensor resolution and range must be positive")


def ray_directions(cfg: SensorConfig, yaw: float) -> np.ndarray:
    """Unit ray directions (height * width, 3), pixel centres, camera level."""
    hf = math.radians(cfg.h_fov_deg)
    vf = math.radians(cfg.v_fov_deg)
    az = -hf / 2 + (np.arange(cfg.width) + 0.5) * hf / cfg.width + yaw
    el = -vf / 2 + (np.arange(cfg.height) + 0.5) * vf / cfg.height
    A, E = np.meshgrid(az, el)
    d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
    return d.reshape(-1, 3)


def render_depth(world: World, pos, yaw: float, cfg: SensorConfig = SensorConfig()) -> DepthScan:
    """One depth frame from ``pos`` looking along ``yaw``."""
    pos = np.asarray(pos, float)
    dirs = ray_directions(cfg, yaw)
    t = cast_rays(world, pos, dirs, cfg.max_range)
    hit = np.isfinite(t)
    pts = pos + t[hit, None] * dirs[hit]
    return DepthScan(pos, pts, dirs[~hit], cfg.max_range)
