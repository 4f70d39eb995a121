from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from hjbhomog.errors import BudgetExceededError, InvalidInputError
from hjbhomog.scales import (
    ScaleSystem,
    check_condition_a,
    orbit_gap,
    parse_ratio,
    realize_epsilon,
    verify_witness,
)

SQRT2 = math.sqrt(2)


def _two(g):
    return ScaleSystem(((1,), (g,)))


# --- examples -----------------------------------------------------------------


def test_half_is_resonant_with_witness():
    rep = check_condition_a(_two(Fraction(1, 2)))
    assert rep.resonant == [True]
    assert tuple(rep.witness[0]) == (2, 1)
    assert rep.arithmetic == "exact"


def test_sqrt_two_is_non_resonant_up_to_bound():
    rep = check_condition_a(_two(SQRT2), bound=10_000, tol=1e-8)
    assert rep.resonant == [False]
    assert rep.search_bound == 10_000
    assert rep.arithmetic.startswith("floating")


def test_constructed_three_scale_relation():
    rep = check_condition_a(ScaleSystem(((1,), (SQRT2,), (SQRT2 + 3,))), bound=50, tol=1e-8)
    assert rep.resonant == [True]
    assert tuple(rep.witness[0]) == (1, -1, -3)


def test_budget_exceeded_carries_partial_report():
    sc = ScaleSystem(((1,), (SQRT2,), (math.sqrt(3),)))
    with pytest.raises(BudgetExceededError) as info:
        check_condition_a(sc, bound=10_000, tol=1e-8, budget=1000)
    assert info.value.partial is not None
    assert info.value.partial.searched_shell[0] < 10_000


def test_two_point_orbit():
    st_ = orbit_gap([0.5], 100)
    assert st_.max_gap == pytest.approx(0.5)
    assert st_.covering_radius == pytest.approx(0.25)


def test_golden_orbit_covers_finely():
    assert orbit_gap([0.6180339887], 1000).covering_radius <= 3 / 1000


def test_rational_axis_leaves_a_hole():
    assert orbit_gap([1 / 3, 0.41], 300).covering_radius >= 1 / 6 - 1e-9


def test_realize_epsilon():
    assert realize_epsilon(_two(2), 0.1)[1, 0] == pytest.approx(0.05)
    assert realize_epsilon(_two(SQRT2), 0.1)[0, 0] == 0.1
    assert realize_epsilon(_two(SQRT2), 1 / 16)[1, 0] == pytest.approx(0.0441941738, abs=1e-10)


@pytest.mark.parametrize("bad", [0, math.inf])
def test_degenerate_scales_rejected(bad):
    with pytest.raises(InvalidInputError):
        _two(bad)


def test_first_row_must_be_ones():
    with pytest.raises(InvalidInputError):
        ScaleSystem(((2,), (1,)))


def test_parse_ratio_forms():
    assert parse_ratio("3/4") == Fraction(3, 4)
    assert parse_ratio(2) == Fraction(2)
    assert parse_ratio(SQRT2) == SQRT2


# --- properties ---------------------------------------------------------------

fractions = st.builds(Fraction, st.integers(-40, 40), st.integers(1, 12)).filter(lambda f: f != 0)


@given(g2=fractions, g3=fractions)
def test_exact_and_floating_paths_agree(g2, g3):
    exact = check_condition_a(ScaleSystem(((1,), (g2,), (g3,))), bound=30)
    lcm = math.lcm(g2.denominator, g3.denominator)
    floating = check_condition_a(ScaleSystem(((1,), (float(g2),), (float(g3),))), bound=30,
                                 tol=min(1e-9, 1 / (2 * lcm)))
    assert exact.resonant == floating.resonant


@given(g=st.one_of(fractions, st.floats(0.1, 10.0)), extra=st.floats(0.1, 10.0))
def test_every_witness_reverifies(g, extra):
    sc = ScaleSystem(((1,), (g,), (extra,)))
    tol = 1e-8
    rep = check_condition_a(sc, bound=20, tol=tol)
    for axis, w in enumerate(rep.witness):
        if w is not None:
            assert any(w[:-1])
            exact = all(sc.is_exact(n, axis) for n in range(1, sc.N))
            assert verify_witness(sc, axis, w, 0.0 if exact else tol)


@given(omega=st.floats(0.01, 0.99), K=st.integers(2, 400), more=st.integers(1, 400))
def test_orbit_covering_radius_monotone_in_k(omega, K, more):
    assert orbit_gap([omega], K + more).covering_radius <= orbit_gap([omega], K).covering_radius + 1e-12


@given(w1=st.floats(0.01, 0.99), w2=st.floats(0.01, 0.99), K=st.integers(2, 300), more=st.integers(1, 300))
def test_orbit_covering_radius_monotone_in_k_2d(w1, w2, K, more):
    a = orbit_gap([w1, w2], K, probes_per_axis=16).covering_radius
    b = orbit_gap([w1, w2], K + more, probes_per_axis=16).covering_radius
    assert 0 < b <= a + 1e-12
    assert a <= math.sqrt(2) / 2 + 1e-12


@given(p=st.integers(1, 60), q=st.integers(1, 30))
def test_rational_orbit_has_q_points(p, q):
    assume(math.gcd(p, q) == 1)
    stats = orbit_gap([p / q], 10 * q + 5)
    assert stats.distinct == q
    if q > 1:
        assert stats.covering_radius == pytest.approx(1 / (2 * q), abs=1e-9)
