"""Exception types shared by the solvers.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses without inspecting messages.
"""

from __future__ import annotations


class HomogenizationError(Exception):
    """Base class for all errors raised by :mod:`hjbhomog`."""

    exit_code = 1


class InvalidInputError(HomogenizationError, ValueError):
    """Inputs violate a documented precondition (shapes, signs, ranges)."""

    exit_code = 1


class OutOfValidityError(HomogenizationError):
    """An argument left the box on which a discretization is valid."""

    exit_code = 2


class NonConvergenceError(HomogenizationError):
    """An iterative solver hit its iteration cap.

    Attributes
    ----------
    residual : float
        Residual of the last iterate.
    iterations : int
        Number of iterations performed.
    """

    exit_code = 2

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BudgetExceededError(HomogenizationError):
    """An enumeration would exceed its configured work budget.

    ``partial`` holds whatever was computed before the budget ran out.
    """

    exit_code = 4

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class PropertyViolationError(HomogenizationError):
    """A checked structural property (monotonicity, convexity, ...) failed."""

    exit_code = 3
