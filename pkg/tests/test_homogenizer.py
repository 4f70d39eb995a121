from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbhomog.effective import EffectiveTable, MomentumGrid
from hjbhomog.errors import InvalidInputError, OutOfValidityError
from hjbhomog.hamiltonians import ClosedFormSpec, PotentialSpec
from hjbhomog.homogenizer import (
    OscillatoryProblem,
    SpatialGrid,
    convergence_study,
    solve_effective_evolution,
    solve_effective_stationary,
    solve_oscillatory_evolution,
    solve_oscillatory_stationary,
)
from hjbhomog.scales import ScaleSystem

SC1 = ScaleSystem.single(1)
FLAT = ClosedFormSpec("eikonal", PotentialSpec.constant(1, 1.0))
FREE = ClosedFormSpec("eikonal", PotentialSpec.constant(1, 0.0))
SINE = ClosedFormSpec("eikonal", PotentialSpec.trig(1, [[[0, 1, 1.0, 0.0]]], offset=2.0))


def _distance_solution(x):
    return 1.0 - np.exp(-np.minimum(x, 1.0 - x))


DT = 5e-3


def _wave(x, c1, c2, k):
    """Periodic datum with gradient at most |c1| + |c2|."""
    t = 2 * np.pi * x[..., 0]
    return c1 * np.cos(k * t) / (2 * np.pi * k) + c2 * np.sin(t) / (2 * np.pi)


def _cos(x):
    return np.cos(2 * np.pi * x[..., 0])


# --- examples -----------------------------------------------------------------


def test_stationary_closed_form():
    g = SpatialGrid.uniform(1, 64)
    u = solve_oscillatory_stationary(OscillatoryProblem(FLAT, SC1, 0.25, mu=1.0), g)
    assert np.max(np.abs(u - _distance_solution(g.points()[..., 0]))) <= g.h[0]


def test_eps_independent_solutions_coincide():
    g = SpatialGrid.uniform(1, 64)
    a = solve_oscillatory_stationary(OscillatoryProblem(FLAT, SC1, 0.25, mu=1.0), g)
    b = solve_oscillatory_stationary(OscillatoryProblem(FLAT, SC1, 0.125, mu=1.0), g)
    assert np.array_equal(a, b)


def test_resolution_rule_enforced():
    with pytest.raises(InvalidInputError):
        solve_oscillatory_stationary(OscillatoryProblem(FLAT, SC1, 0.01, mu=1.0), SpatialGrid.uniform(1, 64))


def test_problem_needs_mu_or_horizon():
    with pytest.raises(InvalidInputError):
        OscillatoryProblem(FLAT, SC1, 0.25)


def test_constant_datum_is_stationary_when_h_vanishes_at_zero():
    g = SpatialGrid.uniform(1, 128, "periodic")
    u = solve_oscillatory_evolution(
        OscillatoryProblem(FREE, SC1, 0.25, horizon=0.3, u0=lambda x: np.full(x.shape[:-1], 0.3)), g)
    assert np.max(np.abs(u - 0.3)) == 0.0


def test_cone_matches_hopf_lax():
    g = SpatialGrid.uniform(1, 128, "periodic")
    u = solve_oscillatory_evolution(
        OscillatoryProblem(FREE, SC1, 0.25, horizon=0.2, u0=lambda x: -np.abs(x[..., 0] - 0.5)), g)
    x = g.points()[..., 0]
    inner = np.abs(x - 0.5) < 0.25
    assert np.max(np.abs(u - (-(np.abs(x - 0.5) + 0.2)))[inner]) <= g.h[0]


def test_effective_stationary_examples():
    g = SpatialGrid.uniform(1, 64)
    x = g.points()[..., 0]
    eik = EffectiveTable.from_function(lambda p: np.abs(p[..., 0]) - 1, MomentumGrid.cube(1, 4, 33))
    assert np.max(np.abs(solve_effective_stationary(eik, 1.0, g) - _distance_solution(x))) <= g.h[0]
    const = EffectiveTable.from_function(lambda p: np.full(p.shape[:-1], -0.7), MomentumGrid.cube(1, 32, 9))
    u = solve_effective_stationary(const, 2.0, g)
    assert np.max(np.abs(u[1:-1] - 0.35)) <= 1e-9
    flat = EffectiveTable.from_function(lambda p: np.maximum(-1, np.abs(p[..., 0]) - 2), MomentumGrid.cube(1, 4, 33))
    u = solve_effective_stationary(flat, 1.0, g)
    assert np.min(u) >= 0.0
    assert np.max(np.abs(u - u[::-1])) <= 1e-12


def test_effective_gradient_outside_box_names_node():
    narrow = EffectiveTable.from_function(lambda p: np.abs(p[..., 0]) - 30, MomentumGrid.cube(1, 0.5, 5))
    with pytest.raises(OutOfValidityError, match="node"):
        solve_effective_stationary(narrow, 1.0, SpatialGrid.uniform(1, 64))


def test_eps_independent_oscillatory_equals_effective_on_same_grid():
    table = EffectiveTable.from_function(lambda p: np.abs(p[..., 0]) - 1, MomentumGrid.cube(1, 4, 33))
    for cells in (32, 64, 128):
        g = SpatialGrid.uniform(1, cells)
        u = solve_oscillatory_stationary(OscillatoryProblem(FLAT, SC1, 0.25, mu=1.0), g)
        assert np.max(np.abs(u - solve_effective_stationary(table, 1.0, g))) <= 1e-8
    rep = convergence_study(FLAT, SC1, [0.25, 0.125, 0.0625], mu=1.0, p_grid=MomentumGrid.cube(1, 4, 33))
    assert rep.errors[-1] <= 2e-9
    assert all(rep.h_floor)


def test_single_scale_eikonal_error_decreases():
    rep = convergence_study(SINE, SC1, [0.125, 0.0625], mu=1.0)
    assert rep.errors[1] <= rep.errors[0]
    assert rep.decreasing_until_floor


def test_compact_well_evolution_study():
    well = ClosedFormSpec("eikonal", PotentialSpec.b1_well(1))
    rep = convergence_study(well, SC1, [0.25, 0.125, 0.0625], u0=_cos, horizon=0.5, p_radius=8.0)
    assert rep.mode == "evolution"
    assert rep.decreasing_until_floor
    assert all(e >= 0 for e in rep.errors)


def test_schedule_must_decrease():
    with pytest.raises(InvalidInputError):
        convergence_study(FLAT, SC1, [0.25, 0.5], mu=1.0)


# --- properties ---------------------------------------------------------------

amp = st.floats(-1.0, 1.0)


@settings(max_examples=15)
@given(a=amp, phase=st.floats(0, 1), shift=st.floats(0, 2), mu=st.floats(0.5, 3))
def test_stationary_comparison(a, phase, shift, mu):
    g = SpatialGrid.uniform(1, 64)
    low = ClosedFormSpec("eikonal", PotentialSpec.trig(1, [[[0, 1, a, phase]]], offset=2.0))
    high = ClosedFormSpec("eikonal", PotentialSpec.trig(1, [[[0, 1, a, phase]]], offset=2.0 + shift))
    u_low = solve_oscillatory_stationary(OscillatoryProblem(low, SC1, 0.125, mu=mu), g)
    u_high = solve_oscillatory_stationary(OscillatoryProblem(high, SC1, 0.125, mu=mu), g)
    assert np.all(u_low <= u_high + 1e-9)


@settings(max_examples=15)
@given(a=amp, b=amp, phase=st.floats(0, 1), mu=st.floats(0.5, 3))
def test_stationary_bound(a, b, phase, mu):
    pot = PotentialSpec.trig(1, [[[0, 1, a, phase], [0, 2, b, 0.0]]], offset=2.0)
    g = SpatialGrid.uniform(1, 64)
    u = solve_oscillatory_stationary(OscillatoryProblem(ClosedFormSpec("eikonal", pot), SC1, 0.125, mu=mu), g)
    assert np.max(np.abs(u)) <= pot.sup_abs / mu + 1e-9


@settings(max_examples=15)
@given(c1=st.floats(-1, 1), c2=st.floats(-1, 1), k=st.integers(1, 3), bump=st.floats(0, 1))
def test_evolution_comparison(c1, c2, k, bump):
    g = SpatialGrid.uniform(1, 64, "periodic")
    f = lambda x: _wave(x, c1, c2, k)  # noqa: E731
    h = lambda x: f(x) + bump * (1 + np.sin(2 * np.pi * x[..., 0])) / 20  # noqa: E731
    u = solve_oscillatory_evolution(OscillatoryProblem(SINE, SC1, 0.125, horizon=0.1, u0=f), g, dt=DT)
    v = solve_oscillatory_evolution(OscillatoryProblem(SINE, SC1, 0.125, horizon=0.1, u0=h), g, dt=DT)
    assert np.all(u <= v + 1e-12)


@settings(max_examples=15)
@given(c1=st.floats(-1, 1), c2=st.floats(-1, 1), k=st.integers(1, 3))
def test_evolution_contraction_in_time(c1, c2, k):
    g = SpatialGrid.uniform(1, 64, "periodic")
    f = lambda x: _wave(x, 1.0, 0.0, 1)  # noqa: E731
    h = lambda x: _wave(x, c1, c2, k)  # noqa: E731
    gaps = [float(np.max(np.abs(f(g.points()) - h(g.points()))))]
    for T in (0.05, 0.1, 0.2):
        u = solve_oscillatory_evolution(OscillatoryProblem(SINE, SC1, 0.125, horizon=T, u0=f), g, dt=DT)
        v = solve_oscillatory_evolution(OscillatoryProblem(SINE, SC1, 0.125, horizon=T, u0=h), g, dt=DT)
        gaps.append(float(np.max(np.abs(u - v))))
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))


@settings(max_examples=15)
@given(c=st.floats(-1, 1), k=st.integers(1, 3))
def test_effective_evolution_contraction(c, k):
    g = SpatialGrid.uniform(1, 64, "periodic")
    table = EffectiveTable.from_function(lambda p: np.maximum(-1, np.abs(p[..., 0]) - 2), MomentumGrid.cube(1, 8, 33))
    f = lambda x: _wave(x, 1.0, 0.0, 1)  # noqa: E731
    h = lambda x: _wave(x, 0.0, c, k)  # noqa: E731
    u = solve_effective_evolution(table, f, 0.1, g, dt=DT)
    v = solve_effective_evolution(table, h, 0.1, g, dt=DT)
    x = g.points()
    assert np.max(np.abs(u - v)) <= np.max(np.abs(f(x) - h(x))) + 1e-12
