"""Non-resonance decides whether two fast scales mix.

With fast variables ``y1 = x/eps`` and ``y2 = gamma x/eps``, the diagonal
``t -> (t, gamma t)`` winds densely around the 2-torus exactly when ``gamma``
is irrational. A rational ratio confines the fast dynamics to a closed curve,
and the discounted cell solution then remembers where it started: its
flatness stays large as ``lambda`` decreases.

Run with ``python demos/02_resonance_and_flatness.py``.
"""

from __future__ import annotations

import math
from fractions import Fraction

from hjbhomog import CellProblem, ClosedFormSpec, PotentialSpec, ScaleSystem, TorusGrid
from hjbhomog import check_condition_a, effective_value, orbit_gap
from hjbhomog.cell import default_schedule

for gamma in (math.sqrt(2), Fraction(1, 2)):
    sc = ScaleSystem(((1,), (gamma,)))
    rep = check_condition_a(sc)
    orbit = orbit_gap([float(gamma) % 1.0], 1000)
    print(f"gamma = {gamma}: resonant = {rep.resonant[0]}, witness = {rep.witness[0]}, "
          f"orbit covering radius after 1000 steps = {orbit.covering_radius:.2e}")

V = PotentialSpec.trig(1, [[[0, 1, 0.5, 0.0]], [[0, 1, 0.5, 0.0]]], offset=2.0)
H = ClosedFormSpec("eikonal", V)
grid = TorusGrid.uniform(1, 2, 64)
print("\nFlatness of lambda*w on a 64 x 64 torus at p = 0")
for gamma in (math.sqrt(2), Fraction(1, 2)):
    ev = effective_value(CellProblem(H, [0.0], [0.0], ScaleSystem(((1,), (gamma,)))), grid, default_schedule(1e-2))
    print(f"  gamma = {str(gamma):>18}: H_bar = {ev.hbar:+.4f}, flatness = {ev.flatness:.3f}")
print("The non-resonant run is flat and sits at -min V = -1; the resonant run is not flat.")
