from __future__ import annotations

import functools
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjbhomog.cell import (
    BoxGrid,
    CellProblem,
    LaxFriedrichsOperator,
    TorusGrid,
    default_schedule,
    effective_value,
    make_operator,
    quasi_torus_consistency,
    restrict_diagonal,
    solve_cell,
    solve_cell_unbounded,
)
from hjbhomog.errors import InvalidInputError, NonConvergenceError
from hjbhomog.hamiltonians import ClosedFormSpec, PotentialSpec, QuasiPeriodicSpec
from hjbhomog.scales import ScaleSystem

log = logging.getLogger(__name__)

SC1 = ScaleSystem.single(1)
SINE = PotentialSpec.trig(1, [[[0, 1, 1.0, 0.0]]], offset=2.0)
EIKONAL = ClosedFormSpec("eikonal", SINE)
QUADRATIC = ClosedFormSpec("quadratic", SINE)


@functools.lru_cache(maxsize=None)
def _operators():
    g1 = TorusGrid.uniform(1, 1, 32)
    sl1 = make_operator(CellProblem(EIKONAL, [0.0], [0.0], SC1), g1, p_radius=3.0)
    two = PotentialSpec.trig(1, [[[0, 1, 0.5, 0.0]], [[0, 1, 0.5, 0.0]]], offset=2.0)
    sc2 = ScaleSystem([[1], [math.sqrt(2)]])
    sl2 = make_operator(CellProblem(ClosedFormSpec("quadratic", two), [0.0], [0.0], sc2),
                        TorusGrid.uniform(1, 2, 12), p_radius=2.0)
    lf1 = LaxFriedrichsOperator(EIKONAL, [0.0], SC1, g1, [[-8.0, 8.0]])
    return {"sl-1d": sl1, "sl-two-scale": sl2, "lf-1d": lf1}


def _map(op, w, p, lam):
    if isinstance(op, LaxFriedrichsOperator):
        return op.step(w.reshape(op.grid.shape), p, lam).reshape(-1)
    return op.apply(w, p, lam)


def _factor(op, lam):
    if isinstance(op, LaxFriedrichsOperator):
        return 1.0 / (1.0 + lam * op.tau)
    return math.exp(-lam * op.dt)


# --- examples -----------------------------------------------------------------


def test_y_independent_quadratic_constant_solution():
    spec = ClosedFormSpec("quadratic", PotentialSpec.constant(2, 0.0))
    sol = solve_cell(CellProblem(spec, [0, 0], [1, 1], ScaleSystem.single(2), 0.5), TorusGrid.uniform(2, 1, 8))
    assert np.allclose(sol.w, -4.0, atol=1e-12)
    assert sol.residual <= 1e-12
    assert sol.lam_w_mean == pytest.approx(-2.0, abs=1e-12)


@pytest.mark.parametrize("p,expected", [(0.0, -1.0), (4.0, 2.0)])
def test_one_dimensional_eikonal_discounted(p, expected):
    sol = solve_cell(CellProblem(EIKONAL, [0.0], [p], SC1, 0.01), TorusGrid.uniform(1, 1, 256))
    assert sol.residual <= 1e-6
    assert -sol.lam_w_mean == pytest.approx(expected, abs=3e-2)


def test_effective_value_flattens():
    ev = effective_value(CellProblem(EIKONAL, [0.0], [0.0], SC1), TorusGrid.uniform(1, 1, 256))
    assert ev.hbar == pytest.approx(-1.0, abs=3e-2)
    assert ev.flatness <= 5e-2
    assert ev.history[-1]["lambda"] == pytest.approx(1e-3)


def test_y_independent_flatness_is_zero():
    spec = ClosedFormSpec("quadratic", PotentialSpec.constant(2, 0.0))
    ev = effective_value(CellProblem(spec, [0, 0], [1.0, 2.0], ScaleSystem.single(2)), TorusGrid.uniform(2, 1, 8))
    assert ev.flatness == 0.0
    assert ev.hbar == pytest.approx(5.0, abs=1e-10)


def test_resonant_run_is_less_flat_than_non_resonant():
    two = PotentialSpec.trig(1, [[[0, 1, 0.5, 0.0]], [[0, 1, 0.5, 0.0]]], offset=2.0)
    spec = ClosedFormSpec("eikonal", two)
    grid = TorusGrid.uniform(1, 2, 32)
    sched = default_schedule(1e-2)
    good = effective_value(CellProblem(spec, [0.0], [0.0], ScaleSystem([[1], [math.sqrt(2)]])), grid, sched)
    bad = effective_value(CellProblem(spec, [0.0], [0.0], ScaleSystem([[1], ["1/2"]])), grid, sched)
    assert good.flatness < bad.flatness


def test_schedule_is_geometric():
    s = default_schedule(1e-3)
    assert s[0] == 1.0 and s[-1] == 1e-3
    assert all(a > b for a, b in zip(s, s[1:]))


def test_small_grids_and_bad_discounts_rejected():
    with pytest.raises(InvalidInputError):
        TorusGrid.uniform(1, 1, 4)
    with pytest.raises(InvalidInputError):
        CellProblem(EIKONAL, [0.0], [0.0], SC1, -1.0)


@pytest.mark.parametrize("scheme", ["semi-lagrangian", "lax-friedrichs"])
def test_iteration_cap_raises_with_residual(scheme):
    with pytest.raises(NonConvergenceError) as info:
        solve_cell(CellProblem(QUADRATIC, [0.0], [1.0], SC1, 0.01), TorusGrid.uniform(1, 1, 64),
                   max_iter=3, scheme=scheme)
    assert info.value.residual > 0


def test_constant_corrector_restricts_to_constant():
    spec = ClosedFormSpec("eikonal", PotentialSpec.constant(1, 1.0))
    sol = solve_cell(CellProblem(spec, [0.0], [0.5], SC1, 0.1), TorusGrid.uniform(1, 1, 16))
    cs = restrict_diagonal(sol, SC1, 10.0, 200)
    assert np.ptp(cs.values) <= 1e-12
    assert cs.residual_stats["max"] <= sol.residual + 1e-9


def test_single_scale_restriction_matches_corrector():
    sol = solve_cell(CellProblem(EIKONAL, [0.0], [0.5], SC1, 0.1), TorusGrid.uniform(1, 1, 64))
    cs = restrict_diagonal(sol, SC1, 10.0, 500)
    # v(y) equals the corrector at y mod 1 up to interpolation
    nodes = np.mod(cs.points[:, 0], 1.0) * 64
    i = np.floor(nodes).astype(int) % 64
    j = (i + 1) % 64
    t = nodes - np.floor(nodes)
    w = sol.w.reshape(-1)
    assert np.allclose(cs.values, (1 - t) * w[i] + t * w[j], atol=1e-12)
    assert cs.residual_stats["p95"] <= sol.lam_w_osc + 10 * sol.grid.spacing[0]


def test_constant_potential_box():
    spec = ClosedFormSpec("eikonal", PotentialSpec.constant(1, 1.5))
    box = solve_cell_unbounded(spec, [0.0], [0.0], 0.1, 4.0, 1 / 8)
    assert box.effective_value == pytest.approx(-1.5, abs=1e-12)
    assert np.max(np.abs(box.v)) <= 1e-12
    assert np.all(np.isfinite(box.shell_slopes))


def test_box_radius_must_cover_the_deformation():
    with pytest.raises(InvalidInputError):
        solve_cell_unbounded(ClosedFormSpec("eikonal", PotentialSpec.b1_well(1)), [0.0], [0.0], 0.1, 2.0, 1 / 8)


def test_single_component_consistency():
    pot = PotentialSpec.quasi_periodic(1, [[[0, 1, 1.0, 0.0]]], [[1]], 2.0)
    F = QuasiPeriodicSpec.from_closed_form(ClosedFormSpec("eikonal", pot), [[-3, 3]])
    rep = quasi_torus_consistency(F, [0.0], [0.5], TorusGrid.uniform(1, 1, 64), 40.0, 1 / 64,
                                  default_schedule(1e-2))
    assert rep.difference <= 1e-2
    assert not rep.resonant


def test_grid_refinement_rate_is_first_order():
    vals = []
    for n in (32, 64, 128, 256):
        vals.append(effective_value(CellProblem(EIKONAL, [0.0], [0.5], SC1), TorusGrid.uniform(1, 1, n)).hbar)
    C = max(abs(a - b) * n for a, b, n in zip(vals, vals[1:], (32, 64, 128)))
    log.info("grid refinement constant C = %.3g", C)
    assert C <= 1.0


def test_box_slopes_decrease_and_outer_slope_shrinks_with_radius():
    spec = ClosedFormSpec("eikonal", PotentialSpec.b1_well(1))
    outer = []
    for R in (25.0, 50.0, 100.0):
        box = solve_cell_unbounded(spec, [0.0], [0.0], 1e-2, R, 1 / 8)
        assert box.slopes_nonincreasing_beyond(1.0)
        outer.append(box.shell_slopes[-1])
    assert outer[0] > outer[1] > outer[2]


# --- properties ---------------------------------------------------------------

names = st.sampled_from(["sl-1d", "sl-two-scale", "lf-1d"])


@given(name=names, seed=st.integers(0, 2**31 - 1), loglam=st.floats(-3, 0), p=st.floats(-2, 2))
def test_discrete_comparison(name, seed, loglam, p):
    op = _operators()[name]
    rng = np.random.default_rng(seed)
    amp = 0.02 if name == "lf-1d" else 5.0
    w = amp * rng.standard_normal(op.grid.size)
    w2 = w + amp * rng.uniform(0, 1, op.grid.size)
    tw, tw2 = _map(op, w, [p], 10**loglam), _map(op, w2, [p], 10**loglam)
    assert np.all(tw <= tw2 + 1e-12 * (1 + np.max(np.abs(tw))))


@given(name=names, seed=st.integers(0, 2**31 - 1), loglam=st.floats(-3, 0), p=st.floats(-2, 2))
def test_contraction_factor(name, seed, loglam, p):
    op = _operators()[name]
    lam = 10**loglam
    rng = np.random.default_rng(seed)
    amp = 0.02 if name == "lf-1d" else 5.0
    w = amp * rng.standard_normal(op.grid.size)
    w2 = w + amp * rng.standard_normal(op.grid.size)
    num = np.max(np.abs(_map(op, w2, [p], lam) - _map(op, w, [p], lam)))
    den = np.max(np.abs(w2 - w))
    assert num <= _factor(op, lam) * den * (1 + 1e-9) + 1e-12


@given(seed=st.integers(0, 2**31 - 1), loglam=st.floats(-2, 0), p=st.floats(-2, 2))
def test_residual_ratio_in_linear_regime(seed, loglam, p):
    op = _operators()["lf-1d"]
    lam = 10**loglam
    w = 0.01 * np.random.default_rng(seed).standard_normal(op.grid.size)
    w1 = _map(op, w, [p], lam)
    w2 = _map(op, w1, [p], lam)
    r0 = np.max(np.abs(w1 - w))
    r1 = np.max(np.abs(w2 - w1))
    assert r1 <= _factor(op, lam) * r0 * (1 + 1e-9) + 1e-14


@given(name=st.sampled_from(["sl-1d", "sl-two-scale"]), loglam=st.floats(-3, 0), p=st.floats(-3, 3),
       sweeps=st.integers(1, 5))
def test_uniform_bound_from_zero(name, loglam, p, sweeps):
    op = _operators()[name]
    lam = 10**loglam
    bound = op.ham.sup_cost + abs(p) * op.ham.sup_drift
    w = np.zeros(op.grid.size)
    for _ in range(sweeps):
        w = op.apply(w, [p], lam)
        assert np.max(np.abs(lam * w)) <= bound * (1 + 1e-12)


@given(p=st.floats(-3, 3), loglam=st.floats(-2, 0))
def test_converged_solution_respects_bound(p, loglam):
    lam = 10**loglam
    sol = solve_cell(CellProblem(EIKONAL, [0.0], [p], SC1, lam), TorusGrid.uniform(1, 1, 32))
    assert sol.residual <= 1e-6
    assert np.max(np.abs(lam * sol.w)) <= 3.0 + abs(p) + 1e-9


def test_box_grid_origin_is_a_node():
    g = BoxGrid(4.0, 0.25)
    assert g.axis()[g.origin_index()] == 0.0
