from __future__ import annotations

import copy
import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from hjbhomog.cell import TorusGrid, default_schedule
from hjbhomog.effective import (
    EffectiveTable,
    MomentumGrid,
    b0_limit_table,
    b1_limit_table,
    build_table,
    check_properties,
    interpolate,
    load_table,
)
from hjbhomog.errors import InvalidInputError, OutOfValidityError
from hjbhomog.hamiltonians import ClosedFormSpec, PotentialSpec

SINE = PotentialSpec.trig(1, [[[0, 1, 1.0, 0.0]]], offset=2.0)


def _eikonal_oracle(p):
    return np.maximum(-1.0, np.abs(p[..., 0]) - 2.0)


def _quadratic_oracle(p):
    V = lambda y: 2 + np.sin(2 * np.pi * y)  # noqa: E731
    f = lambda c: quad(lambda y: np.sqrt(max(c + V(y), 0.0)), 0, 1, limit=200)[0] - abs(p)  # noqa: E731
    return -1.0 if f(-1.0) >= 0 else brentq(f, -1.0, 50.0)


@functools.lru_cache(maxsize=None)
def _sine_table(family):
    return build_table(ClosedFormSpec(family, SINE), [0.0], MomentumGrid.cube(1, 4, 33), default_schedule(1e-3),
                       TorusGrid.uniform(1, 1, 256))


# --- examples -----------------------------------------------------------------


def test_free_quadratic_table_is_exact():
    spec = ClosedFormSpec("quadratic", PotentialSpec.constant(1, 0.0))
    t = build_table(spec, [0.0], MomentumGrid.cube(1, 4, 33), [1.0], TorusGrid.uniform(1, 1, 8))
    assert np.allclose(t.values, t.grid.points()[:, 0] ** 2, atol=1e-10)
    assert np.max(t.flatness) <= 1e-12
    assert t.complete


def test_eikonal_table_matches_quadrature():
    assert _sine_table("eikonal").max_error(_eikonal_oracle) <= 3e-2


def test_quadratic_table_matches_quadrature():
    assert _sine_table("quadratic").max_error(lambda p: [_quadratic_oracle(float(q)) for q in p[..., 0]]) <= 5e-2


def test_interpolation_examples():
    lin = EffectiveTable.from_function(lambda p: 3 * p[..., 0] + 1, MomentumGrid.cube(1, 4, 9))
    sq = EffectiveTable.from_function(lambda p: p[..., 0] ** 2, MomentumGrid.cube(1, 4, 9))
    node = lin.grid.points()[3]
    assert interpolate(lin, node) == lin.values[3]
    assert interpolate(lin, [0.5]) == pytest.approx(2.5)
    # |p|^2 on a unit-step grid at p = 0.5: mean of 0 and 1
    assert interpolate(sq, [0.5]) == pytest.approx(0.5)
    with pytest.raises(OutOfValidityError):
        interpolate(sq, [5.0])


def test_property_examples():
    sq = EffectiveTable.from_function(lambda p: p[..., 0] ** 2, MomentumGrid.cube(1, 4, 33))
    rep = check_properties(sq, 1e-9)
    assert rep.passed and rep.convexity_violations == []
    assert rep.coercivity_fit == pytest.approx(2.0, abs=0.1)
    flat = EffectiveTable.from_function(lambda p: np.maximum(-1, np.abs(p[..., 0]) - 2), MomentumGrid.cube(1, 4, 33))
    rep = check_properties(flat, 1e-9)
    assert rep.passed
    assert rep.coercivity_fit == pytest.approx(1.0, abs=0.1)


def test_corrupted_table_is_flagged():
    sq = EffectiveTable.from_function(lambda p: p[..., 0] ** 2, MomentumGrid.cube(1, 4, 33))
    bad = copy.deepcopy(sq)
    bad.values[10] -= 1.0
    rep = check_properties(bad, 1e-9)
    assert rep.convexity_violations
    assert not rep.passed


def test_identical_sequence_has_zero_gaps():
    pot = PotentialSpec.quasi_periodic(1, [[[0, 1, 0.5, 0.0]], [[0, 1, 0.5, 0.0]]], [[1], [2**0.5]], 2.0)
    spec = ClosedFormSpec("eikonal", pot)
    res = b0_limit_table([spec, spec, spec], [0.0], MomentumGrid.cube(1, 2, 5), cells=16,
                         schedule=default_schedule(1e-2))
    assert res.cauchy_gaps == [0.0, 0.0]


def test_two_term_sequence_approaches_quadrature_limit():
    specs = []
    for N in (1, 2):
        pot = PotentialSpec.quasi_periodic(1, [[[0, 1, 1.0, 0.0]], [[0, 1, 2.0 ** -(4 * N), 0.0]]],
                                           [[1], [2**0.5]], 2.0)
        specs.append(ClosedFormSpec("eikonal", pot))
    res = b0_limit_table(specs, [0.0], MomentumGrid.cube(1, 4, 9), cells=64)
    assert res.table.max_error(_eikonal_oracle) <= 5e-2


def test_unbounded_sequence_rejected():
    specs = [ClosedFormSpec("eikonal", PotentialSpec.quasi_periodic(
        1, [[[0, 1, 1.0, 0.0]], [[0, 1, float(10**k), 0.0]]], [[1], [2**0.5]], 2.0)) for k in range(3)]
    with pytest.raises(InvalidInputError):
        b0_limit_table(specs, [0.0], MomentumGrid.cube(1, 2, 5), cells=16, bound=5.0)


def test_compact_well_limit_table():
    spec = ClosedFormSpec("eikonal", PotentialSpec.b1_well(1))
    t = b1_limit_table(spec, [0.0], MomentumGrid.cube(1, 4, 17))
    assert t.max_error(lambda p: np.abs(p[..., 0]) - 1.0) <= 5e-2
    assert t.provenance["source"] == "ray-average"


def test_csv_round_trip():
    t = _sine_table("eikonal")
    back = load_table(t.to_csv(), t.sidecar())
    assert np.array_equal(back.values, t.values)
    assert back.grid.counts == t.grid.counts


# --- properties ---------------------------------------------------------------

amp = st.floats(-1.0, 1.0)


def _table(family, V):
    return build_table(ClosedFormSpec(family, V), [0.0], MomentumGrid.cube(1, 2, 9), default_schedule(1e-2),
                       TorusGrid.uniform(1, 1, 32))


@settings(max_examples=10)
@given(a=amp, b=amp, phase=st.floats(0, 1), c=st.floats(-3, 3), family=st.sampled_from(["eikonal", "quadratic"]))
def test_constant_shift_moves_table_by_minus_c(a, b, phase, c, family):
    comps = [[[0, 1, a, phase], [0, 2, b, 0.0]]]
    base = _table(family, PotentialSpec.trig(1, comps, offset=2.0))
    moved = _table(family, PotentialSpec.trig(1, comps, offset=2.0 + c))
    assert np.max(np.abs(moved.values - (base.values - c))) <= 1e-8


@settings(max_examples=10)
@given(a=amp, b=amp, phase=st.floats(0, 1), family=st.sampled_from(["eikonal", "quadratic"]))
def test_radial_hamiltonians_give_even_tables(a, b, phase, family):
    t = _table(family, PotentialSpec.trig(1, [[[0, 1, a, phase], [0, 3, b, 0.2]]], offset=2.0))
    assert np.max(np.abs(t.values - t.values[::-1])) <= max(t.scheme_error, 1e-6)


@settings(max_examples=10)
@given(a=amp, b=amp, phase=st.floats(0, 1), family=st.sampled_from(["eikonal", "quadratic"]))
def test_tables_are_midpoint_convex(a, b, phase, family):
    t = _table(family, PotentialSpec.trig(1, [[[0, 1, a, phase], [0, 2, b, 0.5]]], offset=2.0))
    rep = check_properties(t)
    assert rep.convexity_violations == []
    assert np.isfinite(rep.lipschitz_estimate)


@given(s=st.floats(-4, 4))
def test_interpolation_is_exact_for_affine_tables(s):
    t = EffectiveTable.from_function(lambda p: 0.7 * p[..., 0] - 2.0, MomentumGrid.cube(1, 4, 17))
    assert interpolate(t, [s]) == pytest.approx(0.7 * s - 2.0, abs=1e-12)
