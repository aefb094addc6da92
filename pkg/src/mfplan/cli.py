"""Batch runner: ``run``, ``sweep-voxel``, ``compare-known``, ``reference-config``.

Exit codes: 0 when every episode reaches the goal, 2 when any episode ends
in a timeout or collision, 3 on a configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config, reference_config
from .replan import STAGES
from .sim.episode import run_episode, write_trace
from .sim.oracle import oracle_shortest_path

log = logging.getLogger("mfplan")

EXIT_OK, EXIT_PLANNER, EXIT_CONFIG = 0, 2, 3
TIMING_STAGES = STAGES + ("total_ms",)


def parse_seeds(text: str | None, default: int) -> list[int]:
    """``"a..b"`` (inclusive), ``"a,b,c"`` or a single integer."""
    if text is None:
        return [default]
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            a, b = int(a), int(b)
            if b < a:
                raise ValueError
            return list(range(a, b + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed range {text!r} (expected a..b)") from None


def parse_voxels(text: str) -> list[float]:
    try:
        vox = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad voxel list {text!r}") from None
    if not vox or min(vox) <= 0:
        raise ConfigError("voxel sizes must be positive")
    return vox


# ------------------------------------------------------------------ episodes

def run_one(cfg: ScenarioConfig, seed: int, out_dir: Path | None = None,
            with_oracle: bool = False, record_state: bool = True) -> dict:
    """Run one episode; optionally write its trace and compute the oracle ratio."""
    world = cfg.world(seed)
    metrics, trace = run_episode(world, cfg.replan_config(), cfg.sim_config(), cfg.sensor_config(),
                                 record_state=record_state)
    extra = {"seed": seed, "world": world.name, "voxel_size": cfg["map.voxel_size"]}
    if with_oracle:
        ref = oracle_shortest_path(world, cfg["scenario.oracle_voxel"],
                                   r_drone=cfg["replan.r_drone"])
        extra["oracle_length"] = ref
        extra["ratio"] = metrics.path_length / ref if ref > 0 else float("nan")
    if out_dir is not None:
        write_trace(out_dir, metrics, trace, extra)
    summary = metrics.summary()
    summary.update(extra)
    summary["jerk_solve_ms"] = list(trace.jerk_ms)
    summary["vel_solve_ms"] = list(trace.vel_ms)
    summary["timings"] = {st: [r[st] for r in trace.replan] for st in TIMING_STAGES}
    return summary


def _run_job(args):
    cfg, seed, out_dir, with_oracle, record_state = args
    return run_one(cfg, seed, out_dir, with_oracle, record_state)


def run_batch(cfg: ScenarioConfig, seeds, out_dir: Path | None, with_oracle=False,
              workers: int = 1, record_state: bool = True) -> list[dict]:
    """Episodes for each seed, returned in seed order whatever the worker count."""
    jobs = [(cfg, s, None if out_dir is None else out_dir / f"seed_{s:04d}", with_oracle,
             record_state) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def aggregate(results: list[dict]) -> dict:
    """Successes plus avg/std/max/min of executed distance over successful runs."""
    ok = [r for r in results if r["success"]]
    d = np.array([r["path_length"] for r in ok], float)
    agg = {
        "episodes": len(results),
        "successes": len(ok),
        "seeds": [r["seed"] for r in results],
        "distance_avg": float(d.mean()) if len(d) else float("nan"),
        "distance_std": float(d.std()) if len(d) else float("nan"),
        "distance_max": float(d.max()) if len(d) else float("nan"),
        "distance_min": float(d.min()) if len(d) else float("nan"),
        "collisions": int(sum(r["collisions"] for r in results)),
        "unsafe_commits": int(sum(r["unsafe_commits"] for r in results)),
    }
    if all("ratio" in r for r in results) and results:
        ratios = np.array([r["ratio"] for r in results], float)
        agg["ratio_mean"] = float(ratios.mean())
        agg["ratio_max"] = float(ratios.max())
    jerk = [t for r in results for t in r["jerk_solve_ms"]]
    vel = [t for r in results for t in r["vel_solve_ms"]]
    agg["jerk_solve_ms_mean"] = float(np.mean(jerk)) if jerk else float("nan")
    agg["vel_solve_ms_mean"] = float(np.mean(vel)) if vel else float("nan")
    agg.update(timing_row(results))
    return agg


def timing_row(results: list[dict]) -> dict:
    """Per-stage mean and median over every replan of every episode."""
    row = {}
    for st in TIMING_STAGES:
        vals = np.array([t for r in results for t in r["timings"][st]], float)
        row[f"{st}_mean"] = float(vals.mean()) if len(vals) else 0.0
        row[f"{st}_median"] = float(np.median(vals)) if len(vals) else 0.0
    tot = row["total_ms_mean"]
    row["jps_share"] = row["jps_ms_mean"] / tot if tot > 0 else 0.0
    row["n_replans"] = int(sum(len(r["timings"]["total_ms"]) for r in results))
    return row


def _strip(r: dict) -> dict:
    return {k: v for k, v in r.items() if k not in ("jerk_solve_ms", "vel_solve_ms", "timings")}


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=float))


def _exit_code(results) -> int:
    return EXIT_OK if all(r["success"] for r in results) else EXIT_PLANNER


# ------------------------------------------------------------------ commands

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds = parse_seeds(args.seeds, cfg["scenario.seed"])
    out = Path(args.out)
    results = run_batch(cfg, seeds, out, with_oracle=args.oracle, workers=args.workers)
    agg = aggregate(results)
    _write_json(out / "aggregate.json", {"aggregate": agg, "episodes": [_strip(r) for r in results]})
    with open(out / "episodes.csv", "w", newline="") as f:
        cols = ["seed", "success", "outcome", "path_length", "flight_time", "min_clearance",
                "n_replans", "n_replan_failures", "replan_ms_median"]
        w = csv.writer(f)
        w.writerow(cols)
        for r in results:
            w.writerow([r[c] for c in cols])
    print(f"{'seed':>6} {'outcome':>10} {'dist (m)':>10} {'time (s)':>9}")
    for r in results:
        print(f"{r['seed']:>6} {r['outcome']:>10} {r['path_length']:>10.2f} {r['flight_time']:>9.2f}")
    print(f"successes {agg['successes']}/{agg['episodes']}  distance avg {agg['distance_avg']:.2f} "
          f"std {agg['distance_std']:.2f} max {agg['distance_max']:.2f} min {agg['distance_min']:.2f}")
    return _exit_code(results)


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    seeds = parse_seeds(args.seeds, base["scenario.seed"])
    rows, all_results = [], []
    for v in parse_voxels(args.voxels):
        cfg = base.with_overrides(map__voxel_size=v)
        out = None if args.out is None else Path(args.out) / f"voxel_{v:.3f}"
        results = run_batch(cfg, seeds, out, workers=args.workers, record_state=False)
        all_results += results
        row = {"voxel_size": v, "successes": sum(r["success"] for r in results),
               "episodes": len(results), **timing_row(results)}
        rows.append(row)
    print(f"{'voxel':>6} " + " ".join(f"{s[:-3]:>10}" for s in TIMING_STAGES) + f" {'jps%':>6}")
    for row in rows:
        print(f"{row['voxel_size']:>6.3f} "
              + " ".join(f"{row[s + '_mean']:>10.2f}" for s in TIMING_STAGES)
              + f" {100 * row['jps_share']:>6.1f}")
    if args.out is not None:
        out = Path(args.out)
        _write_json(out / "sweep.json", rows)
        with open(out / "sweep.csv", "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return _exit_code(all_results)


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    seed = cfg["scenario.seed"] if args.seed is None else args.seed
    out = None if args.out is None else Path(args.out)
    r = run_one(cfg, seed, out, with_oracle=True)
    report = {"world": r["world"], "seed": seed, "outcome": r["outcome"],
              "executed_length": r["path_length"], "oracle_length": r["oracle_length"],
              "ratio": r["ratio"]}
    if out is not None:
        _write_json(out / "compare.json", report)
    print(f"{r['world']}: executed {r['path_length']:.2f} m, known-map oracle "
          f"{r['oracle_length']:.2f} m, ratio {r['ratio']:.3f} ({r['outcome']})")
    return _exit_code([r])


def cmd_reference(args) -> int:
    text = reference_config()
    if args.path:
        Path(args.path).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfplan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run episodes and write traces")
    r.add_argument("config")
    r.add_argument("--out", required=True)
    r.add_argument("--seeds", help="a..b inclusive, or a,b,c")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--oracle", action="store_true", help="also compute the known-map ratio")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep-voxel", help="per-stage replan timing for several voxel sizes")
    s.add_argument("config")
    s.add_argument("--voxels", default="0.10,0.15,0.20")
    s.add_argument("--seeds")
    s.add_argument("--out")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare-known", help="executed vs known-map path length")
    c.add_argument("config")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("reference-config", help="print every key at its default")
    g.add_argument("path", nargs="?")
    g.set_defaults(func=cmd_reference)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
