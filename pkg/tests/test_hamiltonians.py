from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjbhomog.errors import InvalidInputError, OutOfValidityError
from hjbhomog.hamiltonians import (
    ClosedFormSpec,
    ControlHamiltonianSpec,
    ControlSet,
    NumericalHamiltonianParams,
    PotentialSpec,
    QuasiPeriodicSpec,
    check_periodicity,
    closed_to_control,
    diagonal_identity_defect,
    estimate_dissipation,
    eval_hamiltonian,
    lf_numerical_hamiltonian,
    lift_quasi_periodic,
)

SINE = PotentialSpec.trig(1, [[[0, 1, 1.0, 0.0]]], offset=2.0)


def _v(ys):
    return 2.0 + np.sin(2 * np.pi * ys[..., 0, 0])


def _moving(d, controls, cost):
    return ControlHamiltonianSpec(
        d, 1, lambda x, ys, a: np.broadcast_to(a, ys.shape[:-2] + (d,)), cost, controls, 1.0, 3.0
    )


# --- examples -----------------------------------------------------------------


def test_quadratic_zero_potential_value():
    spec = ClosedFormSpec("quadratic", PotentialSpec.constant(2, 0.0))
    assert eval_hamiltonian(spec, [0, 0], [[0, 0]], [3, 4]) == pytest.approx(25.0, abs=1e-12)


def test_one_dimensional_control_form_is_eikonal():
    spec = _moving(1, ControlSet.enumerated([[-1.0], [1.0]]), lambda x, ys, a: _v(ys))
    assert eval_hamiltonian(spec, [0.0], [[0.25]], [5.0]) == pytest.approx(2.0, abs=1e-12)


def test_eight_directions_bracket_the_norm():
    spec = _moving(2, ControlSet.unit_ball_directions(8, 2, include_origin=False),
                   lambda x, ys, a: np.zeros(ys.shape[:-2]))
    val = eval_hamiltonian(spec, [0, 0], [[0.1, 0.2]], [1.0, 0.0])
    assert math.cos(math.pi / 8) - 1e-12 <= val <= 1.0 + 1e-12


def test_unit_ball_directions_have_norm_at_most_one():
    cs = ControlSet.unit_ball_directions(16, 2)
    assert np.all(np.linalg.norm(cs.samples, axis=1) <= 1 + 1e-12)


def test_dimension_mismatch_is_rejected():
    spec = ClosedFormSpec("quadratic", PotentialSpec.constant(2, 0.0))
    with pytest.raises(InvalidInputError):
        eval_hamiltonian(spec, [0, 0], [[0, 0]], [1.0, 2.0, 3.0])


def test_eikonal_control_form_is_exact_in_one_dimension():
    spec = ClosedFormSpec("eikonal", SINE)
    ctrl, err = closed_to_control(spec, [[-3, 3]])
    assert err == 0.0
    for p in np.linspace(-3, 3, 13):
        for y in (0.0, 0.25, 0.6):
            assert eval_hamiltonian(ctrl, [0.0], [[y]], [p]) == pytest.approx(
                eval_hamiltonian(spec, [0.0], [[y]], [p]), abs=1e-12)


def test_quadratic_control_grid_error_bound():
    spec = ClosedFormSpec("quadratic", SINE)
    ctrl, err = closed_to_control(spec, [[-2, 2]])
    step = np.diff(np.unique(ctrl.controls.samples[:, 0])).max()
    assert err <= step**2 / 4 + 1e-15
    gap = max(abs(eval_hamiltonian(ctrl, [0.0], [[0.3]], [p]) - eval_hamiltonian(spec, [0.0], [[0.3]], [p]))
              for p in np.linspace(-2, 2, 41))
    assert gap <= err + 1e-12


def test_zero_potential_zero_momentum_agree():
    spec = ClosedFormSpec("quadratic", PotentialSpec.constant(1, 0.0))
    ctrl, _ = closed_to_control(spec, [[-1, 1]])
    assert eval_hamiltonian(ctrl, [0.0], [[0.0]], [0.0]) == pytest.approx(0.0, abs=1e-14)
    assert eval_hamiltonian(spec, [0.0], [[0.0]], [0.0]) == 0.0


def test_unbounded_momentum_box_is_rejected():
    with pytest.raises(InvalidInputError):
        closed_to_control(ClosedFormSpec("quadratic", SINE), [[-np.inf, 2]])


def test_lf_flux_consistency_and_formula():
    spec = ClosedFormSpec("eikonal", SINE)
    params = estimate_dissipation(spec, [[-3, 3]])
    for p in (-2.0, 0.0, 1.5):
        assert lf_numerical_hamiltonian(spec, params, [0.0], [[0.1]], [p], [p]) == pytest.approx(
            eval_hamiltonian(spec, [0.0], [[0.1]], [p]), abs=1e-12)
    flat = ClosedFormSpec("eikonal", PotentialSpec.constant(1, 0.0))
    unit = NumericalHamiltonianParams(np.array([1.0]), np.array([[-3.0, 3.0]]))
    assert lf_numerical_hamiltonian(flat, unit, [0.0], [[0.0]], [0.0], [2.0]) == pytest.approx(0.0, abs=1e-14)


def test_lf_flux_outside_box_is_out_of_validity():
    spec = ClosedFormSpec("eikonal", SINE)
    params = estimate_dissipation(spec, [[-3, 3]])
    with pytest.raises(OutOfValidityError):
        lf_numerical_hamiltonian(spec, params, [0.0], [[0.0]], [0.0], [5.0])


def test_dissipation_dominates_momentum_derivative():
    spec = ClosedFormSpec("quadratic", SINE)
    params = estimate_dissipation(spec, [[-2, 2]])
    assert params.dissipation[0] >= 4.0 - 1e-6


def test_single_component_lift_is_identity():
    pot = PotentialSpec.quasi_periodic(1, [[[0, 1, 1.0, 0.0]]], [[1]], 2.0)
    F = QuasiPeriodicSpec.from_closed_form(ClosedFormSpec("eikonal", pot), [[-2, 2]])
    H, sc = lift_quasi_periodic(F)
    assert sc.N == 1 and np.allclose(sc.as_array(), 1.0)
    ys = np.array([[0.0], [0.3], [1.7]])
    assert diagonal_identity_defect(F, H, sc, [0.0], ys) == 0.0


def test_two_component_lift_scales_and_diagonal():
    pot = PotentialSpec.quasi_periodic(1, [[[0, 1, 1.0, 0.0]], [[0, 1, 1.0, 0.0]]], [[1], [math.sqrt(2)]])
    F = QuasiPeriodicSpec.from_closed_form(ClosedFormSpec("eikonal", pot), [[-2, 2]])
    H, sc = lift_quasi_periodic(F)
    assert sc.as_array()[1, 0] == pytest.approx(1 / math.sqrt(2), rel=1e-15)
    assert diagonal_identity_defect(F, H, sc, [0.0], np.array([[0.0], [0.3], [1.7]])) == 0.0
    # lifted cost is sin(2 pi y1) + sin(2 pi y2) plus the offset
    b, g = H.fields(np.zeros(1), np.array([[[0.25], [0.25]]]))
    assert np.allclose(g, 2.0)


def test_resonant_periods_give_rational_scale():
    from fractions import Fraction

    from hjbhomog.scales import check_condition_a

    pot = PotentialSpec.quasi_periodic(1, [[[0, 1, 1.0, 0.0]], [[0, 1, 1.0, 0.0]]], [[1], [2]])
    F = QuasiPeriodicSpec.from_closed_form(ClosedFormSpec("eikonal", pot), [[-2, 2]])
    _, sc = lift_quasi_periodic(F)
    assert sc.gamma[1][0] == Fraction(1, 2)
    assert check_condition_a(sc).any_resonant


def test_non_positive_period_rejected():
    with pytest.raises(InvalidInputError):
        PotentialSpec.quasi_periodic(1, [[[0, 1, 1.0, 0.0]], [[0, 1, 1.0, 0.0]]], [[1], [-1]])


def test_b1_well_is_constant_outside_radius():
    V = PotentialSpec.b1_well(2, radius=1.0, level=1.0)
    ys = np.array([[[1.5, 0.0]], [[3.0, 4.0]], [[-2.0, 7.0]]])
    assert np.allclose(V(ys), 1.0)
    lo, hi = V.bounds()
    assert lo == 0.0 and hi == 1.0


# --- properties ---------------------------------------------------------------

coef = st.floats(-2.0, 2.0, allow_nan=False)


@given(a=coef, b=coef, phase=st.floats(0, 1), shift=st.integers(-3, 3))
def test_trig_potential_is_one_periodic(a, b, phase, shift):
    pot = PotentialSpec.trig(2, [[[0, 1, a, phase], [1, 2, b, 0.0]]], offset=1.0)
    y = np.array([[[0.13, 0.71]]])
    e0 = np.array([[[float(shift), 0.0]]])
    e1 = np.array([[[0.0, float(shift)]]])
    assert np.allclose(pot(y + e0), pot(y), atol=1e-12)
    assert np.allclose(pot(y + e1), pot(y), atol=1e-12)


@given(seed=st.integers(0, 2**31 - 1))
def test_closed_forms_are_periodic_in_fast_variables(seed):
    rng = np.random.default_rng(seed)
    for fam in ("quadratic", "eikonal"):
        assert check_periodicity(ClosedFormSpec(fam, SINE), rng, samples=32) <= 1e-12


@given(P=st.floats(1.0, 20.0), theta=st.sampled_from([1, 2]), y=st.floats(0, 1))
def test_sup_form_coercivity(P, theta, y):
    spec = ClosedFormSpec("power", SINE, theta=theta)
    h1 = eval_hamiltonian(spec, [0.0], [[y]], [P])
    h2 = eval_hamiltonian(spec, [0.0], [[y]], [2 * P])
    assert h2 >= h1 + spec.a0 * (2**theta - 1) * P**theta - 1e-9


@given(pm=st.floats(-3, 3), pp=st.floats(-3, 3), bump=st.floats(0, 1), y=st.floats(0, 1),
       fam=st.sampled_from(["eikonal", "quadratic"]))
def test_lf_flux_is_monotone(pm, pp, bump, y, fam):
    spec = ClosedFormSpec(fam, SINE)
    params = estimate_dissipation(spec, [[-4, 4]])
    base = lf_numerical_hamiltonian(spec, params, [0.0], [[y]], [pm], [pp])
    up_plus = lf_numerical_hamiltonian(spec, params, [0.0], [[y]], [pm], [pp + bump])
    up_minus = lf_numerical_hamiltonian(spec, params, [0.0], [[y]], [pm + bump], [pp])
    assert up_plus <= base + 1e-12
    assert up_minus >= base - 1e-12


@given(y=st.floats(-20, 20), T2=st.floats(1.1, 5.0))
def test_diagonal_identity_is_exact(y, T2):
    pot = PotentialSpec.quasi_periodic(1, [[[0, 1, 0.7, 0.1]], [[0, 2, 0.4, 0.3]]], [[1], [T2]], 1.0)
    F = QuasiPeriodicSpec.from_closed_form(ClosedFormSpec("quadratic", pot), [[-2, 2]])
    H, sc = lift_quasi_periodic(F)
    assert diagonal_identity_defect(F, H, sc, [0.0], np.array([[y]])) <= 1e-12
