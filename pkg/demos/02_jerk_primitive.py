"""
Box-constrained jerk primitives
===============================

The step dt starts at a lower bound built from the velocity, acceleration
and jerk limits, then grows until the QP converges near the target.
"""
import numpy as np

from mfplan.primitives import (FlatState, Limits, TerminalWeight, axis_times, sample_primitive,
                               solve_jerk, solve_velocity_segment)

limits = Limits(v_max=2.5, a_max=4.0, j_max=20.0)
x0 = FlatState(np.zeros(3), vel=(1.0, 0.0, 0.0))
xf = FlatState(np.array([4.0, 2.0, 0.5]))

print("axis times [T_v, T_a, T_j] per axis:\n", axis_times(x0, xf, limits).round(3))

for Q in (TerminalWeight(), TerminalWeight(1e6, 1e5, 1e4)):
    p = solve_jerk(x0, xf, 10, limits, Q)
    print(f"Q=({Q.pos:g},{Q.vel:g},{Q.acc:g}): dt0 {p.dt0:.3f}  dt {p.dt:.3f}  "
          f"solves {p.n_solves}  |j| max {np.abs(p.inputs).max():.2f}  "
          f"terminal {p.terminal.pos.round(3)}")

# sample the stiff one at a few instants
for t in np.linspace(0, p.duration, 5):
    s = sample_primitive(p, t)
    print(f"  t={t:.2f}  pos {s.pos.round(3)}  vel {s.vel.round(3)}")

v = solve_velocity_segment((0, 0, 0), (3, 1, 0), 10, limits.v_max)
print(f"velocity primitive: {v.duration:.3f} s")
