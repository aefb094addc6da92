"""
Closed-loop flight through a small forest
=========================================

Runs one episode and compares the flown distance with a known-map oracle.
Takes about a minute.
"""
import numpy as np

from mfplan.replan import STAGES
from mfplan.sim.episode import SimConfig, run_episode
from mfplan.sim.oracle import oracle_shortest_path
from mfplan.sim.scenarios import gen_forest

world = gen_forest(seed=4, side=30.0)
print(f"{len(world.shapes)} trunks, start {np.round(world.start, 1)}, goal {np.round(world.goal, 1)}")

metrics, trace = run_episode(world, sim=SimConfig(timeout=60.0))
ref = oracle_shortest_path(world)
print(f"{metrics.outcome}: flew {metrics.path_length:.1f} m, oracle {ref:.1f} m, "
      f"ratio {metrics.path_length / ref:.3f}")
print(f"{metrics.n_replans} replans, {metrics.n_replan_failures} failed, "
      f"min clearance {metrics.min_clearance:.2f} m")

summary = metrics.summary()
for st in STAGES:
    print(f"  {st:13s} {summary[st + '_mean']:6.2f} ms")
print(f"  {'total':13s} {summary['replan_ms_mean']:6.2f} ms (median {summary['replan_ms_median']:.2f})")

xy = np.array(trace.state)[:, 1:3]
print("final position", xy[-1].round(2))
