"""A compactly deformed potential: ray averages and the truncated box.

``V(y) = min(|y|, 1)`` equals 1 outside the unit ball. Every ray average of
``V`` tends to 1, so travelling far costs ``1`` per unit time and the
ray-average construction gives the effective Hamiltonian ``|p| - 1``.

The truncated-box cell problem tells a second story. Resting at the origin
costs ``V(0) = 0``, so at ``p = 0`` the discounted value there is 0, not 1.
The box solver reports that value faithfully; it differs from ``|p| - 1``
whenever ``|p| < 1``.

Run with ``python demos/04_compact_deformation.py``.
"""

from __future__ import annotations

from hjbhomog import ClosedFormSpec, MomentumGrid, PotentialSpec
from hjbhomog import b1_certificate, b1_limit_table, ray_average, solve_cell_unbounded

V = PotentialSpec.b1_well(1)
F = ClosedFormSpec("eikonal", V)

print("Ray averages from the origin")
for T in (10.0, 100.0, 1000.0):
    print(f"  T = {T:6.0f}: (1/T) int_0^T V(t) dt = {ray_average(V, [0.0], [0.0], [1.0], T):.4f}")

sample = [([0.0], [1.0]), ([0.0], [-1.0]), ([3.0], [1.0]), ([-0.5], [1.0])]
cert = b1_certificate(V, [0.0], sample, [100.0, 1000.0])
print(f"certificate: c = {cert.c:.4f}, deviation over the sample = {cert.deviation:.1e}\n")

table = b1_limit_table(F, [0.0], MomentumGrid.cube(1, 4.0, 9))
print("Ray-average table |p| - c")
for p, v in zip(table.grid.points()[:, 0], table.values):
    print(f"  p = {p:+.1f}: {v:+.4f}")

print("\nTruncated box, lambda = 0.01, R = 50, h = 1/32")
for p in (0.0, 0.5, 2.0):
    box = solve_cell_unbounded(F, [0.0], [p], 1e-2, 50.0, 1 / 32)
    print(f"  p = {p:.1f}: -lambda v(0) = {box.effective_value:+.4f} (|p| - 1 = {abs(p) - 1:+.1f}), "
          f"shell slopes nonincreasing beyond 1: {box.slopes_nonincreasing_beyond(1.0)}")
