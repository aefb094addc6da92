"""World generators: random forest, bugtrap and office."""
from __future__ import annotations

import math

import numpy as np

from .world import Box, Cylinder, World

FLIGHT_Z = 1.5


def gen_forest(seed: int, side: float = 50.0, density: float = 0.1,
               radius_range: tuple[float, float] = (0.2, 0.4), height: float = 6.0,
               clear_radius: float = 2.0, z: float = FLIGHT_Z) -> World:
    """Square forest of vertical cylinders with start and goal on opposite edges.

    Exactly ``round(density * side**2)`` trunks are placed uniformly, rejecting
    any whose surface comes within ``clear_radius`` of the start or goal.
    """
    rng = np.random.default_rng(seed)
    start = np.array([0.0, side / 2, z])
    goal = np.array([side, side / 2, z])
    n = int(round(density * side * side))
    shapes = []
    while len(shapes) < n:
        c = rng.uniform(0.0, side, size=2)
        r = float(rng.uniform(*radius_range))
        if min(np.linalg.norm(c - start[:2]), np.linalg.norm(c - goal[:2])) < clear_radius + r:
            continue
        shapes.append(Cylinder((float(c[0]), float(c[1])), r, (0.0, height)))
    return World(shapes, ((0.0, 0.0, 0.0), (side, side, height)), tuple(start), tuple(goal),
                 seed, "forest")


def gen_bugtrap(center=(0.0, 0.0), opening_width: float = 2.0, size: float = 8.0,
                goal_distance: float = 22.0, thickness: float = 0.3, height: float = 5.0,
                z: float = FLIGHT_Z) -> World:
    """C-shaped enclosure around the start whose opening faces away from the goal.

    The goal lies ``goal_distance`` along +x from the centre, so the straight
    line start->goal crosses the closed +x wall.  The -x wall has a centred gap
    of ``opening_width``; when the gap is as wide as the trap the -x side
    vanishes and only the three other walls remain.
    """
    cx, cy = center
    h = size / 2
    t = thickness
    shapes = [
        Box((cx + h - t, cy - h, 0.0), (cx + h, cy + h, height)),        # +x, facing the goal
        Box((cx - h, cy + h - t, 0.0), (cx + h, cy + h, height)),        # +y
        Box((cx - h, cy - h, 0.0), (cx + h, cy - h + t, height)),        # -y
    ]
    gap = min(opening_width, size)
    stub = (size - gap) / 2
    if stub > 1e-9:
        shapes.append(Box((cx - h, cy + h - stub, 0.0), (cx - h + t, cy + h, height)))
        shapes.append(Box((cx - h, cy - h, 0.0), (cx - h + t, cy - h + stub, height)))
    start = (cx, cy, z)
    goal = (cx + goal_distance, cy, z)
    lo = (cx - h - 8.0, cy - h - 8.0, 0.0)
    hi = (cx + goal_distance + 4.0, cy + h + 8.0, height)
    return World(shapes, (lo, hi), start, goal, None, "bugtrap")


# Default office: a corridor along the south side, three dead-end rooms
# whose doors face the corridor, and the goal in an open hall north of the
# rooms reached around the east end.
DEFAULT_OFFICE = {
    "thickness": 0.2,
    "height": 4.0,
    "start": [1.5, 1.5, FLIGHT_Z],
    "goal": [10.0, 12.5, FLIGHT_Z],
    # (x0, y0, x1, y1, doors) with doors as (offset along the wall, width)
    "walls": [
        [0.0, 0.0, 26.0, 0.0, []],          # south outer wall
        [0.0, 0.0, 0.0, 16.0, []],          # west outer wall
        [0.0, 16.0, 26.0, 16.0, []],        # north outer wall
        [26.0, 0.0, 26.0, 16.0, []],        # east outer wall
        [0.0, 3.0, 20.0, 3.0, [[5.0, 1.4], [10.5, 1.4], [15.5, 1.4]]],   # corridor / rooms
        [0.0, 9.0, 20.0, 9.0, []],          # back wall of the rooms
        [3.0, 3.0, 3.0, 9.0, []],
        [8.0, 3.0, 8.0, 9.0, []],
        [13.0, 3.0, 13.0, 9.0, []],
        [20.0, 3.0, 20.0, 9.0, []],
    ],
    "rooms": [[3.0, 3.0, 8.0, 9.0], [8.0, 3.0, 13.0, 9.0], [13.0, 3.0, 20.0, 9.0]],
}


def _wall_boxes(x0, y0, x1, y1, doors, t, height):
    horizontal = abs(y1 - y0) < 1e-12
    if not horizontal and abs(x1 - x0) > 1e-12:
        raise ValueError("walls must be axis-aligned")
    a, b = (x0, x1) if horizontal else (y0, y1)
    lo_w, hi_w = min(a, b), max(a, b)
    cuts = sorted((lo_w + off - w / 2, lo_w + off + w / 2) for off, w in doors)
    pieces = []
    cur = lo_w
    for c0, c1 in cuts:
        if c0 > cur:
            pieces.append((cur, c0))
        cur = max(cur, c1)
    if cur < hi_w:
        pieces.append((cur, hi_w))
    out = []
    for p0, p1 in pieces:
        if horizontal:
            out.append(Box((p0 - t / 2, y0 - t / 2, 0.0), (p1 + t / 2, y0 + t / 2, height)))
        else:
            out.append(Box((x0 - t / 2, p0 - t / 2, 0.0), (x0 + t / 2, p1 + t / 2, height)))
    return out


def gen_office(layout: dict | None = None, r_drone: float = 0.3, voxel_size: float = 0.1) -> World:
    """Office built from a declarative wall list with door gaps.

    Every door must be at least ``2 * r_drone + 2 * voxel_size`` wide.
    """
    lay = DEFAULT_OFFICE if layout is None else layout
    t = float(lay.get("thickness", 0.2))
    height = float(lay.get("height", 4.0))
    min_door = 2 * r_drone + 2 * voxel_size
    shapes = []
    for i, w in enumerate(lay["walls"]):
        x0, y0, x1, y1 = (float(v) for v in w[:4])
        doors = [(float(o), float(d)) for o, d in (w[4] if len(w) > 4 else [])]
        for off, width in doors:
            if width + 1e-12 < min_door:
                raise ValueError(f"wall {i}: door width {width} below {min_door:.2f}")
        shapes.extend(_wall_boxes(x0, y0, x1, y1, doors, t, height))
    xs = [v for w in lay["walls"] for v in (w[0], w[2])]
    ys = [v for w in lay["walls"] for v in (w[1], w[3])]
    bounds = ((min(xs), min(ys), 0.0), (max(xs), max(ys), height))
    return World(shapes, bounds, tuple(lay["start"]), tuple(lay["goal"]), None, "office",
                 [tuple(r) for r in lay.get("rooms", [])])


def room_visits(xy: np.ndarray, rooms, min_depth: float = 0.5) -> list[dict]:
    """Entries into each room rectangle and whether the vehicle turned back.

    A visit is a maximal run of samples inside a room that gets at least
    ``min_depth`` past the room's boundary.  It counts as a dead-end visit
    when the exit crosses the same wall as the entry (heading reversal).
    """
    out = []
    xy = np.asarray(xy, float)[:, :2]
    for ri, (x0, y0, x1, y1) in enumerate(rooms):
        inside = (xy[:, 0] > x0) & (xy[:, 0] < x1) & (xy[:, 1] > y0) & (xy[:, 1] < y1)
        depth = np.minimum.reduce([xy[:, 0] - x0, x1 - xy[:, 0], xy[:, 1] - y0, y1 - xy[:, 1]])
        i = 0
        n = len(xy)
        while i < n:
            if not inside[i]:
                i += 1
                continue
            j = i
            while j + 1 < n and inside[j + 1]:
                j += 1
            if depth[i:j + 1].max() >= min_depth and i > 0 and j + 1 < n:
                side_in = _side(xy[i - 1], (x0, y0, x1, y1))
                side_out = _side(xy[j + 1], (x0, y0, x1, y1))
                out.append({"room": ri, "enter": i, "exit": j + 1,
                            "depth": float(depth[i:j + 1].max()),
                            "turned_back": side_in == side_out})
            i = j + 1
    return out


def _side(p, rect):
    x0, y0, x1, y1 = rect
    d = [x0 - p[0], p[0] - x1, y0 - p[1], p[1] - y1]
    return int(np.argmax(d))
