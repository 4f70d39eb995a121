"""Oscillatory solutions converge to the effective solution.

The stationary problem ``u + |u'| - (2 + sin(2 pi x / eps)) = 0`` on (0, 1)
with ``u = 0`` at both ends is solved for a decreasing sequence of ``eps``
with eight cells per period, and compared with the solution of
``u + H_bar(u') = 0`` built from the cell-problem table. Entries whose error
is within three times the effective solver's own grid error are flagged as
the resolution floor.

Run with ``python demos/05_homogenization.py``.
"""

from __future__ import annotations

from hjbhomog import ClosedFormSpec, PotentialSpec, ScaleSystem, convergence_study

H = ClosedFormSpec("eikonal", PotentialSpec.trig(1, [[[0, 1, 1.0, 0.0]]], offset=2.0))
rep = convergence_study(H, ScaleSystem.single(1), [1 / 4, 1 / 8, 1 / 16, 1 / 32], mu=1.0)
print(f"effective solver grid error estimate: {rep.scheme_error:.2e}")
for eps, err, floor in zip(rep.eps, rep.errors, rep.h_floor):
    print(f"  eps = 1/{round(1 / eps):<3d} sup error {err:.4f}{'   (resolution floor)' if floor else ''}")
print(f"observed orders: {[round(o, 2) for o in rep.orders]}")
print(f"decreasing until the floor: {rep.decreasing_until_floor}")
