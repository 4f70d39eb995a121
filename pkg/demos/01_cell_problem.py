"""Effective Hamiltonian of a one-dimensional eikonal problem.

For ``H(y, p) = |p| - V(y)`` with ``V = 2 + sin(2 pi y)`` the effective
Hamiltonian is known in closed form, ``max(-1, |p| - 2)``: below ``|p| = 1``
the optimal motion rests at the minimum of ``V``; above it, travelling pays.
The discounted cell problem recovers this as ``lambda -> 0``, and the
oscillation of ``lambda w`` over the torus (the flatness) shows when the
ergodic limit has been reached.

Run with ``python demos/01_cell_problem.py``.
"""

from __future__ import annotations

import numpy as np

from hjbhomog import CellProblem, ClosedFormSpec, MomentumGrid, PotentialSpec, ScaleSystem, TorusGrid
from hjbhomog import build_table, check_properties, effective_value

V = PotentialSpec.trig(1, [[[0, 1, 1.0, 0.0]]], offset=2.0)
H = ClosedFormSpec("eikonal", V)
grid = TorusGrid.uniform(1, 1, 256)

print("Flatness of lambda*w along the discount schedule at p = 0.5")
ev = effective_value(CellProblem(H, [0.0], [0.5], ScaleSystem.single(1)), grid)
for row in ev.history[::2]:
    print(f"  lambda = {row['lambda']:.4f}   -mean(lambda w) = {row['effective_value']:+.4f}   "
          f"flatness = {row['flatness']:.2e}")
print(f"  limit estimate {ev.hbar:+.4f}; closed form {max(-1.0, 0.5 - 2.0):+.4f}\n")

print("Table on [-4, 4] against the closed form")
table = build_table(H, [0.0], MomentumGrid.cube(1, 4.0, 17), grid=grid)
exact = np.maximum(-1.0, np.abs(table.grid.points()[:, 0]) - 2.0)
for p, v, e in zip(table.grid.points()[::2, 0], table.values[::2], exact[::2]):
    print(f"  p = {p:+.2f}   table {v:+.4f}   exact {e:+.4f}")
print(f"  sup error {np.max(np.abs(table.values - exact)):.2e}\n")

rep = check_properties(table)
print("Convexity, Lipschitz and coercivity checks")
print(f"  convexity violations: {len(rep.convexity_violations)}")
print(f"  Lipschitz estimate:   {rep.lipschitz_estimate:.3f}")
print(f"  coercivity exponent:  {rep.coercivity_fit:.3f} (expected 1)")
