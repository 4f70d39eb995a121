"""Effective Hamiltonians for multiscale first-order HJB equations.

The package computes the effective Hamiltonian of an oscillating
Hamilton-Jacobi-Bellman operator by solving discounted cell problems on the
product torus of the fast variables, checks the non-resonance condition that
makes the fast dynamics ergodic, and compares solutions of oscillatory
problems with those of the effective problem.

Modules
-------
hamiltonians
    Closed-form and control-form Hamiltonians, quasi-periodic lifts and the
    Lax-Friedrichs numerical Hamiltonian.
scales
    Scale systems, the non-resonance search and orbit equidistribution.
cell
    Discounted cell problems on tori and truncated boxes.
average
    Trajectory oracles: discounted payoffs and ray averages.
effective
    Effective Hamiltonian tables, interpolation and property checks.
homogenizer
    Oscillatory and effective problems in the slow variable.
cli
    Command line interface ``hjbhomog``.
"""

from __future__ import annotations

import logging

from .average import b1_certificate, discounted_value, ray_average, simulate
from .cell import (
    BoxGrid,
    CellProblem,
    TorusGrid,
    effective_value,
    make_operator,
    quasi_torus_consistency,
    restrict_diagonal,
    solve_cell,
    solve_cell_unbounded,
)
from .effective import (
    EffectiveTable,
    MomentumGrid,
    b0_limit_table,
    b1_limit_table,
    build_table,
    check_properties,
    interpolate,
    load_table,
)
from .errors import (
    BudgetExceededError,
    HomogenizationError,
    InvalidInputError,
    NonConvergenceError,
    OutOfValidityError,
    PropertyViolationError,
)
from .hamiltonians import (
    ClosedFormSpec,
    ControlHamiltonianSpec,
    ControlSet,
    PotentialSpec,
    QuasiPeriodicSpec,
    as_control,
    lift_quasi_periodic,
    lf_numerical_hamiltonian,
)
from .homogenizer import convergence_study
from .scales import ScaleSystem, check_condition_a, orbit_gap, verify_witness

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "0.1.0"

__all__ = [
    "BoxGrid",
    "BudgetExceededError",
    "CellProblem",
    "ClosedFormSpec",
    "ControlHamiltonianSpec",
    "ControlSet",
    "EffectiveTable",
    "HomogenizationError",
    "InvalidInputError",
    "MomentumGrid",
    "NonConvergenceError",
    "OutOfValidityError",
    "PotentialSpec",
    "PropertyViolationError",
    "QuasiPeriodicSpec",
    "ScaleSystem",
    "TorusGrid",
    "as_control",
    "b0_limit_table",
    "b1_certificate",
    "b1_limit_table",
    "build_table",
    "check_condition_a",
    "check_properties",
    "convergence_study",
    "discounted_value",
    "effective_value",
    "interpolate",
    "lf_numerical_hamiltonian",
    "lift_quasi_periodic",
    "load_table",
    "make_operator",
    "orbit_gap",
    "quasi_torus_consistency",
    "ray_average",
    "restrict_diagonal",
    "simulate",
    "solve_cell",
    "solve_cell_unbounded",
    "verify_witness",
]
