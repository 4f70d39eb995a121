"""Discounted cell problems on the product torus and on truncated boxes.

The default discretization is semi-Lagrangian on the control form. For a
discount ``lam`` and time step ``dt`` the discrete problem reads::

    w(y) = min_a { (1 - beta)/lam * l(y, a) + beta * I[w](y + dt * B(y, a)) }

with ``beta = exp(-lam dt)``, running cost ``l = g + <b, p>``, torus velocity
``B = (gamma^n_i b_i)`` and multilinear interpolation ``I``. The map is a
monotone ``beta``-contraction, reproduces ``lam w = l`` exactly for constant
costs, and is solved by Gauss-Seidel sweeps in all ``2^D`` axis orderings
with an exact solve for the self-coupling of each node.

A Lax-Friedrichs pseudo-time iteration is available as
``scheme="lax-friedrichs"``; it is slow for small ``lam`` and mainly serves
cross-checks and the scheme property tests.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from . import _kernels as K
from .errors import InvalidInputError, NonConvergenceError, OutOfValidityError
from .hamiltonians import (
    ClosedFormSpec,
    ControlHamiltonianSpec,
    HamiltonianSpec,
    QuasiPeriodicSpec,
    as_control,
    corrector_momentum_radius,
    estimate_dissipation,
    hamiltonian_values,
    lift_quasi_periodic,
)
from .scales import ScaleSystem, check_condition_a

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA0 = 1.0
DEFAULT_LAMBDA_MIN = 1e-3
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200_000
CFL_SAFETY = 0.9
STEP_CELLS = 2
HOWARD_EVERY = 4
HOWARD_STEPS = 30


def default_schedule(lambda_min: float = DEFAULT_LAMBDA_MIN, lambda0: float = DEFAULT_LAMBDA0) -> list[float]:
    """Geometric schedule ``lambda0 * 0.5^k`` ending exactly at ``lambda_min``."""
    if not (0 < lambda_min <= lambda0):
        raise InvalidInputError("need 0 < lambda_min <= lambda0")
    out = []
    lam = lambda0
    while lam > lambda_min * (1 + 1e-12):
        out.append(lam)
        lam *= 0.5
    out.append(lambda_min)
    return out


def _check_schedule(schedule: Sequence[float]) -> list[float]:
    s = [float(v) for v in schedule]
    if not s or any(v <= 0 for v in s) or any(b >= a for a, b in zip(s, s[1:])):
        raise InvalidInputError("schedule must be a strictly decreasing list of positive discounts")
    return s


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on ``T^{d x N}``.

    Parameters
    ----------
    factor_dims : sequence of N tuples of d cell counts
    """

    factor_dims: tuple

    def __post_init__(self):
        fd = tuple(tuple(int(c) for c in f) for f in self.factor_dims)
        if not fd or any(len(f) != len(fd[0]) for f in fd):
            raise InvalidInputError("every factor needs the same number of axes")
        if any(c < 8 for f in fd for c in f):
            raise InvalidInputError("torus grids need at least 8 cells per axis")
        object.__setattr__(self, "factor_dims", fd)

    @classmethod
    def uniform(cls, d: int, N: int, cells: int) -> "TorusGrid":
        return cls(tuple((cells,) * d for _ in range(N)))

    @property
    def N(self) -> int:
        return len(self.factor_dims)

    @property
    def d(self) -> int:
        return len(self.factor_dims[0])

    @property
    def shape(self) -> tuple:
        return tuple(c for f in self.factor_dims for c in f)

    @property
    def spacing(self) -> np.ndarray:
        return 1.0 / np.array(self.shape, dtype=float)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def periodic(self) -> bool:
        return True

    def points(self) -> np.ndarray:
        """Node coordinates as fast variables, shape (P, N, d)."""
        axes = [np.arange(c) / c for c in self.shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)
        return flat.reshape(-1, self.N, self.d)


@dataclass(frozen=True)
class BoxGrid:
    """Uniform grid on ``[-R, R]^d`` with spacing ``h`` (``R/h`` integral)."""

    R: float
    h: float
    d: int = 1

    def __post_init__(self):
        if not (self.R > 0 and self.h > 0):
            raise InvalidInputError("box radius and spacing must be positive")
        n = self.R / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise InvalidInputError("R must be an integer multiple of h so that 0 is a node")

    @property
    def half(self) -> int:
        return int(round(self.R / self.h))

    @property
    def shape(self) -> tuple:
        return (2 * self.half + 1,) * self.d

    @property
    def spacing(self) -> np.ndarray:
        return np.full(self.d, self.h)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def N(self) -> int:
        return 1

    @property
    def periodic(self) -> bool:
        return False

    def axis(self) -> np.ndarray:
        return (np.arange(2 * self.half + 1) - self.half) * self.h

    def points(self) -> np.ndarray:
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)[:, None, :]

    def origin_index(self) -> int:
        return int(np.ravel_multi_index((self.half,) * self.d, self.shape))


# ---------------------------------------------------------------------------
# problem and solution types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellProblem:
    """Cell problem at frozen ``x`` and momentum ``p``.

    ``lam`` may be ``None`` when the problem is handed to
    :func:`effective_value`, which supplies its own schedule.
    """

    ham: HamiltonianSpec
    x: np.ndarray
    p: np.ndarray
    scales: ScaleSystem
    lam: float | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        d = self.ham.dim
        if x.shape != (d,) or p.shape != (d,):
            raise InvalidInputError(f"x and p must have length {d}")
        if self.scales.d != d or self.scales.N != self.ham.num_scales:
            raise InvalidInputError("scale system does not match the Hamiltonian dimensions")
        if self.lam is not None and not self.lam > 0:
            raise InvalidInputError("the discount must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)


@dataclass
class CellSolution:
    """Converged discrete cell solution.

    Attributes
    ----------
    w : ndarray
        Grid function with the grid's shape.
    lam, residual : float
        ``residual`` bounds ``max |lam w - lam w_exact|`` of the discrete
        problem (semi-Lagrangian) or is the max pointwise equation residual
        (Lax-Friedrichs).
    lam_w_mean, lam_w_osc : float
    iterations : int
    """

    w: np.ndarray
    lam: float
    residual: float
    lam_w_mean: float
    lam_w_osc: float
    iterations: int
    p: np.ndarray
    grid: TorusGrid | BoxGrid
    scheme: str
    dt: float | None = None
    operator: object = field(default=None, repr=False)

    @property
    def effective_value(self) -> float:
        return -self.lam_w_mean

    def diagnostics(self) -> dict:
        return {
            "lambda": self.lam,
            "residual": self.residual,
            "lam_w_mean": self.lam_w_mean,
            "lam_w_osc": self.lam_w_osc,
            "effective_value": self.effective_value,
            "iterations": self.iterations,
            "scheme": self.scheme,
            "dt": self.dt,
            "grid_shape": list(self.grid.shape),
            "p": [float(v) for v in self.p],
        }


def _summary(w, lam):
    lw = lam * w
    return float(lw.mean()), float(lw.max() - lw.min())


# ---------------------------------------------------------------------------
# semi-Lagrangian operator
# ---------------------------------------------------------------------------


class SemiLagrangianOperator:
    """Precomputed stencils for one Hamiltonian, frozen ``x`` and grid.

    The stencils do not depend on ``p`` or ``lam``, so a single operator
    serves a whole table of momenta and the entire discount schedule.

    Parameters
    ----------
    ham : ControlHamiltonianSpec
    x : array_like
    scales : ScaleSystem
    grid : TorusGrid or BoxGrid
    dt : float, optional
        Time step. By default the slowest moving axis advances exactly
        ``STEP_CELLS`` cells at its maximal speed, which keeps foot points on
        grid nodes whenever the speeds are commensurate with the grid.
    """

    def __init__(self, ham: ControlHamiltonianSpec, x, scales: ScaleSystem, grid, dt: float | None = None):
        if not isinstance(ham, ControlHamiltonianSpec):
            raise InvalidInputError("the semi-Lagrangian operator needs a control-form Hamiltonian")
        self.ham = ham
        self.x = np.asarray(x, dtype=float)
        self.scales = scales
        self.grid = grid
        ys = grid.points()
        self.points = ys
        if grid.periodic:
            if not ham.periodic:
                raise InvalidInputError("a torus grid needs a periodic Hamiltonian")
            if grid.N != ham.num_scales or grid.d != ham.dim:
                raise InvalidInputError("grid factors do not match the Hamiltonian")
            b, g = ham.fields(self.x, ys)
            gam = scales.as_array()
            vel = (b[:, :, None, :] * gam[None, None, :, :]).reshape(b.shape[0], b.shape[1], -1)
        else:
            if ham.num_scales != 1 or grid.d != ham.dim:
                raise InvalidInputError("box problems take a single fast variable")
            b, g = ham.fields(self.x, ys)
            vel = b.copy()
        self.b = np.ascontiguousarray(b)
        self.g = np.ascontiguousarray(g)
        h = grid.spacing
        vmax = np.max(np.abs(vel), axis=(0, 1))
        if dt is None:
            moving = vmax > 0
            dt = STEP_CELLS * (float(np.max(h[moving] / vmax[moving])) if np.any(moving) else float(np.min(h)))
        if not dt > 0:
            raise InvalidInputError("time step must be positive")
        self.dt = float(dt)
        disp = np.ascontiguousarray(self.dt * vel / h[None, None, :])
        dims = np.array(grid.shape, dtype=np.int64)
        self.dims = dims
        self.idx, self.wt = K.build_stencil(dims, bool(grid.periodic), disp)
        D = len(dims)
        base = np.arange(grid.size, dtype=np.int64).reshape(grid.shape)
        orders = []
        for mask in range(1 << D):
            sl = tuple(slice(None, None, -1) if (mask >> k) & 1 else slice(None) for k in range(D))
            orders.append(np.ascontiguousarray(base[sl].ravel()))
        self.orders = orders

    def running_cost(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.ascontiguousarray(self.g + np.sum(self.b * p, axis=-1))

    def bound(self, p) -> float:
        """A priori bound on ``|lam w|`` from the cost range."""
        ell = self.running_cost(p)
        return float(np.max(np.abs(ell)))

    def apply(self, w, p, lam) -> np.ndarray:
        """Jacobi application of the discrete map (used by property checks)."""
        beta = math.exp(-lam * self.dt)
        cost = np.ascontiguousarray(-math.expm1(-lam * self.dt) / lam * self.running_cost(p))
        return K.sl_apply(np.ascontiguousarray(np.asarray(w, dtype=float).reshape(-1)), self.idx, self.wt, cost, beta)

    def _policy_iteration(self, w, cost, beta, scale, tol, steps: int = HOWARD_STEPS):
        """Howard iterations started from the greedy policy of ``w``.

        Each step evaluates the current policy exactly by a sparse solve and
        switches to its greedy policy; the loop stops when the policy is
        stable or the residual is below ``tol``. Returns the iterate with the
        smallest residual and that residual, or ``None`` if a solve fails.
        """
        P = self.grid.size
        nodes = np.arange(P)
        rows = np.repeat(nodes, self.idx.shape[2])
        eye = sparse.identity(P, format="csc")
        pol = K.sl_policy(w, self.idx, self.wt, cost, beta)
        best, best_res = None, np.inf
        for _ in range(steps):
            A = eye - sparse.csc_matrix(
                (beta * self.wt[pol, nodes].reshape(-1), (rows, self.idx[pol, nodes].reshape(-1))),
                shape=(P, P),
            )
            try:
                out = spsolve(A, cost[pol, nodes])
            except RuntimeError:
                return None
            if not np.all(np.isfinite(out)):
                return None
            res = scale * float(np.max(np.abs(K.sl_apply(out, self.idx, self.wt, cost, beta) - out)))
            if res < best_res:
                best, best_res = out, res
            if res <= tol:
                break
            new = K.sl_policy(out, self.idx, self.wt, cost, beta)
            if np.array_equal(new, pol):
                break
            pol = new
        return None if best is None else (best, best_res)

    def solve(
        self,
        p,
        lam: float,
        w0: np.ndarray | None = None,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
        accelerate: bool = True,
    ) -> CellSolution:
        """Solve the discrete problem at one discount.

        The residual ``lam/(1 - beta) * max|T w - w|`` bounds the error of
        ``lam w`` against the exact discrete fixed point, so it is also the
        stopping test. Near ``lam -> 0`` the sweeps converge geometrically
        along a fixed direction at a rate close to one; when two successive
        updates are parallel the limit of that geometric sequence is
        jumped to directly, and the jump is undone if it increases the
        residual tenfold. Every few iterations a short run of exact policy
        iteration (sparse solves) is tried as well, which settles slow modes
        such as short cycles around a rest point. Without ``w0`` the
        iteration starts from the constant supersolution
        ``max_i min_a cost / (1 - beta)``.
        """
        if not lam > 0:
            raise InvalidInputError("the discount must be positive")
        if not tol > 0:
            raise InvalidInputError("tolerance must be positive")
        p = np.asarray(p, dtype=float)
        beta = math.exp(-lam * self.dt)
        onemb = -math.expm1(-lam * self.dt)
        cost = np.ascontiguousarray(onemb / lam * self.running_cost(p))
        if w0 is None:
            # the constant max_i min_a cost / (1 - beta) is a supersolution,
            # from which the sweeps decrease monotonically
            w = np.full(self.grid.size, float(np.max(np.min(cost, axis=0))) / onemb)
        else:
            w = np.array(w0, dtype=float).reshape(-1).copy()
        scale = lam / onemb
        res = np.inf
        it = 0
        prev_delta = None
        backup = None
        backup_res = np.inf
        while True:
            w_old = w.copy()
            for o in self.orders:
                K.sl_sweep(w, self.idx, self.wt, cost, beta, o)
            it += 1
            r = K.sl_apply(w, self.idx, self.wt, cost, beta) - w
            res = scale * float(np.max(np.abs(r)))
            if res <= tol:
                break
            if backup is not None:
                # reject an extrapolation that made things clearly worse
                if res > 10.0 * backup_res:
                    w = backup
                    res = backup_res
                    prev_delta = None
                backup = None
            if it >= max_iter:
                raise NonConvergenceError(
                    f"semi-Lagrangian solve did not converge at lambda={lam:g} (residual {res:.3g})",
                    residual=res,
                    iterations=it,
                )
            if not accelerate:
                continue
            if it % HOWARD_EVERY == 0:
                cand = self._policy_iteration(w, cost, beta, scale, tol)
                if cand is not None:
                    if cand[1] < res:
                        w, res = cand
                        prev_delta = None
                        if res <= tol:
                            break
                        continue
            delta = w - w_old
            if prev_delta is not None:
                n0 = float(np.dot(prev_delta, prev_delta))
                n1 = float(np.dot(delta, delta))
                if n0 > 0.0 and n1 > 0.0:
                    cosang = float(np.dot(delta, prev_delta)) / math.sqrt(n0 * n1)
                    rho = float(np.dot(delta, prev_delta)) / n0
                    if cosang > 1.0 - 1e-6 and rho < 1.0 - 1e-9:
                        backup = w.copy()
                        backup_res = res
                        w += delta * (rho / (1.0 - rho))
                        prev_delta = None
                        continue
            prev_delta = delta
        mean, osc = _summary(w, lam)
        return CellSolution(
            w.reshape(self.grid.shape), lam, res, mean, osc, it, p.copy(), self.grid,
            "semi-lagrangian", self.dt, self,
        )

    def continuation(
        self,
        p,
        schedule: Sequence[float],
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
        w0: np.ndarray | None = None,
        lam_w0: float | None = None,
    ) -> tuple[CellSolution, list[dict]]:
        """Run the discount schedule with warm starts ``w <- w * lam_old / lam``."""
        schedule = _check_schedule(schedule)
        w = None if w0 is None else np.asarray(w0, dtype=float).reshape(-1)
        prev = lam_w0
        history = []
        sol = None
        for lam in schedule:
            if w is not None and prev is not None:
                w = w * (prev / lam)
            sol = self.solve(p, lam, w, tol, max_iter)
            w = sol.w.reshape(-1)
            prev = lam
            history.append(
                {"lambda": lam, "iterations": sol.iterations, "residual": sol.residual,
                 "effective_value": sol.effective_value, "flatness": sol.lam_w_osc}
            )
            logger.debug("lam=%g it=%d res=%.2e H=%.6f osc=%.4g", lam, sol.iterations, sol.residual,
                         sol.effective_value, sol.lam_w_osc)
        return sol, history


# ---------------------------------------------------------------------------
# Lax-Friedrichs pseudo-time iteration
# ---------------------------------------------------------------------------


class LaxFriedrichsOperator:
    """Monotone Lax-Friedrichs discretization on a torus grid.

    The momentum argument is ``p + sum_n Gamma^n D_{y^n} w`` with centred
    differences, stabilized by ``sigma_a (D+ - D-)/2`` per torus axis where
    ``sigma_a = |gamma_a| sigma_i``.
    """

    def __init__(self, ham: HamiltonianSpec, x, scales: ScaleSystem, grid: TorusGrid, p_box, safety: float = 1.2):
        if not grid.periodic:
            raise InvalidInputError("the Lax-Friedrichs cell operator works on torus grids")
        self.ham = ham
        self.x = np.asarray(x, dtype=float)
        self.grid = grid
        self.scales = scales
        self.points = grid.points().reshape(grid.shape + (grid.N, grid.d))
        self.params = estimate_dissipation(ham, p_box, self.x, safety=safety)
        gam = scales.as_array().reshape(-1)
        self.gamma = gam
        self.sigma = np.abs(gam) * np.tile(self.params.dissipation, grid.N)
        self.h = grid.spacing
        self.tau = CFL_SAFETY / float(np.sum(self.sigma / self.h))
        self.d = grid.d
        if isinstance(ham, ControlHamiltonianSpec):
            self._b, self._g = ham.fields(self.x, self.points)
        else:
            self._b = None

    def _h_eval(self, q):
        if self._b is not None:
            return np.max(-np.sum(self._b * q, axis=-1) - self._g, axis=0)
        return hamiltonian_values(self.ham, self.x, self.points, q)

    def numerical_hamiltonian(self, w, p) -> np.ndarray:
        """``H_num`` at every node for the grid function ``w``."""
        D = w.ndim
        q = np.broadcast_to(np.asarray(p, dtype=float), w.shape + (self.d,)).copy()
        visc = np.zeros(w.shape)
        for a in range(D):
            dp = (np.roll(w, -1, axis=a) - w) / self.h[a]
            dm = (w - np.roll(w, 1, axis=a)) / self.h[a]
            q[..., a % self.d] += self.gamma[a] * 0.5 * (dp + dm)
            visc += self.sigma[a] * 0.5 * (dp - dm)
        box = self.params.p_box
        if np.any(q < box[:, 0]) or np.any(q > box[:, 1]):
            worst = float(np.max(np.maximum(box[:, 0] - q, q - box[:, 1])))
            raise OutOfValidityError(f"momentum argument leaves the validity box by {worst:.3g}")
        return self._h_eval(q) - visc

    def step(self, w, p, lam) -> np.ndarray:
        """One pseudo-time step ``(w - tau H_num) / (1 + lam tau)``."""
        return (w - self.tau * self.numerical_hamiltonian(w, p)) / (1.0 + lam * self.tau)

    def solve(self, p, lam, w0=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> CellSolution:
        w = np.zeros(self.grid.shape) if w0 is None else np.array(w0, dtype=float).reshape(self.grid.shape)
        res = np.inf
        for it in range(1, max_iter + 1):
            hn = self.numerical_hamiltonian(w, p)
            r = lam * w + hn
            res = float(np.max(np.abs(r)))
            if res <= tol:
                break
            w = (w - self.tau * hn) / (1.0 + lam * self.tau)
        else:
            raise NonConvergenceError(
                f"Lax-Friedrichs solve did not converge at lambda={lam:g} (residual {res:.3g})",
                residual=res,
                iterations=max_iter,
            )
        mean, osc = _summary(w, lam)
        return CellSolution(w, lam, res, mean, osc, it, np.asarray(p, dtype=float).copy(), self.grid,
                            "lax-friedrichs", None, self)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def make_operator(problem: CellProblem, grid, *, scheme: str = "semi-lagrangian", p_radius: float | None = None,
                  dt: float | None = None, **control_kw):
    """Build the discretization for ``problem`` on ``grid``.

    ``p_radius`` bounds the momenta the operator must handle (defaults to
    the problem's ``p``); closed forms are rewritten in control form on the
    box of corrector momenta this implies.
    """
    if p_radius is None:
        p_radius = float(np.max(np.abs(problem.p)))
    q = corrector_momentum_radius(problem.ham, np.full(problem.ham.dim, p_radius))
    box = [[-q, q]] * problem.ham.dim
    if scheme == "semi-lagrangian":
        ctrl, err = as_control(problem.ham, box, **control_kw)
        op = SemiLagrangianOperator(ctrl, problem.x, problem.scales, grid, dt)
        op.control_error = err
        return op
    if scheme == "lax-friedrichs":
        op = LaxFriedrichsOperator(problem.ham, problem.x, problem.scales, grid, box)
        op.control_error = 0.0
        return op
    raise InvalidInputError(f"unknown scheme {scheme!r}")


def solve_cell(
    problem: CellProblem,
    grid: TorusGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    scheme: str = "semi-lagrangian",
    w0: np.ndarray | None = None,
    dt: float | None = None,
) -> CellSolution:
    """Solve the discounted cell problem at ``problem.lam`` from ``w0`` (default 0).

    Raises
    ------
    NonConvergenceError
        When ``max_iter`` is reached; carries the last residual.
    OutOfValidityError
        When the Lax-Friedrichs momentum argument leaves its validity box.
    """
    if problem.lam is None:
        raise InvalidInputError("solve_cell needs a discount; use effective_value for a schedule")
    op = make_operator(problem, grid, scheme=scheme, dt=dt)
    return op.solve(problem.p, problem.lam, w0, tol, max_iter)


@dataclass
class EffectiveValue:
    """Result of a discount continuation; unpacks as ``(hbar, flatness)``."""

    hbar: float
    flatness: float
    solution: CellSolution
    history: list

    def __iter__(self):
        return iter((self.hbar, self.flatness))


def effective_value(
    problem: CellProblem,
    grid: TorusGrid,
    schedule: Sequence[float] | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    scheme: str = "semi-lagrangian",
    operator=None,
    dt: float | None = None,
) -> EffectiveValue:
    """Effective value ``-mean(lam_min w)`` and flatness ``osc(lam_min w)``.

    Parameters
    ----------
    problem : CellProblem
        ``problem.lam`` is ignored.
    schedule : list of float, optional
        Strictly decreasing discounts; default ``0.5^k`` down to ``1e-3``.
    operator : optional
        A prebuilt operator (reused across momenta by table builders).
    """
    schedule = _check_schedule(schedule if schedule is not None else default_schedule())
    op = operator if operator is not None else make_operator(problem, grid, scheme=scheme, dt=dt)
    if isinstance(op, SemiLagrangianOperator):
        sol, hist = op.continuation(problem.p, schedule, tol, max_iter)
    else:
        w = None
        prev = None
        hist = []
        for lam in schedule:
            if w is not None:
                w = w * (prev / lam)
            sol = op.solve(problem.p, lam, w, tol, max_iter)
            w, prev = sol.w, lam
            hist.append({"lambda": lam, "iterations": sol.iterations, "residual": sol.residual,
                         "effective_value": sol.effective_value, "flatness": sol.lam_w_osc})
    return EffectiveValue(sol.effective_value, sol.lam_w_osc, sol, hist)


# ---------------------------------------------------------------------------
# diagonal restriction
# ---------------------------------------------------------------------------


@dataclass
class CorrectorSample:
    """Diagonal restriction ``v(y) = w(Gamma^1 y, ..., Gamma^N y)`` on a sample."""

    points: np.ndarray
    values: np.ndarray
    residuals: np.ndarray
    delta: float
    residual_stats: dict
    bound_terms: dict

    def to_json(self) -> dict:
        return {"delta": self.delta, "residual_stats": self.residual_stats, "bound_terms": self.bound_terms}


def _torus_interp(sol: CellSolution, z: np.ndarray) -> np.ndarray:
    """Interpolate ``sol.w`` at torus points ``z`` of shape (Q, N, d)."""
    dims = np.array(sol.grid.shape, dtype=np.int64)
    coords = np.ascontiguousarray(np.mod(z.reshape(z.shape[0], -1), 1.0) * dims[None, :])
    return K.interp_periodic(np.ascontiguousarray(sol.w.reshape(-1)), dims, coords)


def restrict_diagonal(
    sol: CellSolution,
    scales: ScaleSystem,
    box_R: float,
    samples: int = 2000,
    delta: float | None = None,
    seed: int = 0,
) -> CorrectorSample:
    """Evaluate the corrector on the diagonal and measure its residual.

    The residual at ``y`` is ``|max_a {-l(y, a) - kappa (v(y + dt b) - v(y))} - H|``
    with ``kappa = beta lam/(1 - beta)`` (so ``kappa ~ 1/dt``) and ``H`` the
    effective value. At torus nodes it is at most ``lam osc(w)``; elsewhere
    an interpolation term of order ``h`` is added.

    Parameters
    ----------
    sol : CellSolution
        A semi-Lagrangian torus solution.
    box_R : float
        Sample points are uniform in ``[0, box_R]^d``.
    delta : float, optional
        Target accuracy; recorded in the bound terms.
    """
    op = sol.operator
    if not isinstance(op, SemiLagrangianOperator) or not sol.grid.periodic:
        raise InvalidInputError("restrict_diagonal needs a semi-Lagrangian torus solution")
    rng = np.random.default_rng(seed)
    d = scales.d
    y = rng.uniform(0.0, box_R, size=(samples, d))
    gam = scales.as_array()
    z = y[:, None, :] * gam[None, :, :]
    v = _torus_interp(sol, z)
    lam, dt = sol.lam, op.dt
    beta = math.exp(-lam * dt)
    kappa = beta * lam / (-math.expm1(-lam * dt))
    b, g = op.ham.fields(op.x, z)
    ell = g + np.sum(b * sol.p, axis=-1)
    best = np.full(samples, -np.inf)
    for a in range(b.shape[0]):
        foot = z + dt * b[a][:, None, :] * gam[None, :, :]
        va = _torus_interp(sol, foot)
        best = np.maximum(best, -ell[a] - kappa * (va - v))
    hbar = sol.effective_value
    res = np.abs(best - hbar)
    h = float(np.max(sol.grid.spacing))
    lam_osc = sol.lam_w_osc
    p95 = float(np.percentile(res, 95))
    stats = {
        "p50": float(np.percentile(res, 50)),
        "p95": p95,
        "max": float(res.max()),
        "mean": float(res.mean()),
    }
    bound_terms = {
        "lambda_osc": lam_osc,
        "h": h,
        "measured_C": max(0.0, p95 - lam_osc) / h,
        "target_delta": delta,
        "box_R": box_R,
    }
    return CorrectorSample(y, v, res, p95, stats, bound_terms)


# ---------------------------------------------------------------------------
# truncated boxes for Hamiltonians on R^d
# ---------------------------------------------------------------------------


@dataclass
class BoxCellSolution:
    """Discounted problem on ``[-R, R]^d`` with clamped (outflow) boundary.

    Attributes
    ----------
    v : ndarray
        ``v_raw - v_raw(0)``.
    effective_value : float
        ``-lam v_raw(0)``.
    shell_radii, shell_slopes : ndarray
        ``max |v(y)|/|y|`` over ``r_{k-1} < |y| <= r_k``.
    """

    R: float
    h: float
    lam: float
    v: np.ndarray
    effective_value: float
    residual: float
    iterations: int
    shell_radii: np.ndarray
    shell_slopes: np.ndarray
    grid: BoxGrid = field(repr=False, default=None)

    def slopes_nonincreasing_beyond(self, r0: float, tol: float = 1e-9) -> bool:
        s = self.shell_slopes[self.shell_radii > r0]
        return bool(np.all(np.diff(s) <= tol))

    def to_json(self) -> dict:
        return {
            "R": self.R,
            "h": self.h,
            "lambda": self.lam,
            "effective_value": self.effective_value,
            "residual": self.residual,
            "iterations": self.iterations,
            "shell_radii": self.shell_radii.tolist(),
            "shell_slopes": self.shell_slopes.tolist(),
        }


def _plane_spec(F) -> HamiltonianSpec:
    if isinstance(F, QuasiPeriodicSpec):
        return F.as_plane_spec()
    if F.num_scales != 1:
        raise InvalidInputError("box problems need a Hamiltonian of a single fast variable")
    return F


def solve_cell_unbounded(
    F,
    x,
    p,
    lam: float,
    R: float,
    h: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    shell_width: float = 1.0,
    dt: float | None = None,
) -> BoxCellSolution:
    """Discounted problem on a truncated box for Hamiltonians on ``R^d``.

    Foot points leaving the box are clamped to it; information then flows
    outward and the boundary influence at the origin is damped by
    ``exp(-lam * R / speed)``.

    Raises
    ------
    InvalidInputError
        If ``R < 4 R_V`` for a compactly deformed potential.
    """
    spec = _plane_spec(F)
    if isinstance(spec, ClosedFormSpec) and spec.potential.decay_radius is not None:
        if R < 4 * spec.potential.decay_radius:
            raise InvalidInputError("box radius must be at least four times the deformation radius")
    grid = BoxGrid(R, h, spec.dim)
    problem = CellProblem(spec, np.asarray(x, dtype=float), np.asarray(p, dtype=float), ScaleSystem.single(spec.dim), lam)
    op = make_operator(problem, grid, dt=dt)
    sol = op.solve(problem.p, lam, None, tol, max_iter)
    w = sol.w.reshape(-1)
    w0 = float(w[grid.origin_index()])
    v = (w - w0).reshape(grid.shape)
    pts = grid.points()[:, 0, :]
    r = np.sqrt(np.sum(pts * pts, axis=-1))
    nsh = int(math.floor(R / shell_width + 1e-9))
    radii = shell_width * np.arange(1, nsh + 1)
    slopes = np.zeros(nsh)
    vf = np.abs(v.reshape(-1))
    for k in range(nsh):
        m = (r > radii[k] - shell_width + 1e-12) & (r <= radii[k] + 1e-12)
        slopes[k] = float(np.max(vf[m] / r[m])) if np.any(m) else np.nan
    return BoxCellSolution(R, h, lam, v, -lam * w0, sol.residual, sol.iterations, radii, slopes, grid)


@dataclass
class ConsistencyReport:
    torus_value: float
    torus_flatness: float
    torus_origin_value: float
    box_value: float
    difference: float
    error_estimate: float
    resonant: bool
    note: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


def quasi_torus_consistency(
    F: QuasiPeriodicSpec,
    x,
    p,
    torus_grid: TorusGrid,
    box_R: float,
    box_h: float,
    schedule: Sequence[float] | None = None,
    tol: float = DEFAULT_TOL,
) -> ConsistencyReport:
    """Compare the lifted torus problem with the truncated-box problem.

    Both are solved at the final discount of ``schedule``; the box value is
    ``-lam v(0)`` and the torus value is ``-mean(lam w)``.
    """
    lifted, scales = lift_quasi_periodic(F)
    schedule = _check_schedule(schedule if schedule is not None else default_schedule())
    lam = schedule[-1]
    prob = CellProblem(lifted, x, p, scales)
    ev = effective_value(prob, torus_grid, schedule, tol)
    w = ev.solution.w.reshape(-1)
    origin = -lam * float(w[0])
    box = solve_cell_unbounded(F, x, p, lam, box_R, box_h, tol)
    resonant = check_condition_a(scales).any_resonant if scales.N > 1 else False
    note = (
        "periods are resonant: the lift is valid but the effective value carries no "
        "regularity guarantee in (x, p)" if resonant else "periods pass the non-resonance search"
    )
    # boundary influence at the origin is damped by exp(-lam R / max speed)
    ell_sup = F.sup_cost + float(np.max(np.abs(p))) * math.sqrt(F.dim) * F.sup_drift
    err = ev.flatness + ev.solution.residual + box.residual + 2 * ell_sup * math.exp(-lam * box_R / max(F.sup_drift, 1e-12))
    return ConsistencyReport(ev.hbar, ev.flatness, origin, box.effective_value,
                             abs(ev.hbar - box.effective_value), err, resonant, note)


def lift_and_solve(F: QuasiPeriodicSpec, x, p, grid: TorusGrid, schedule=None, tol: float = DEFAULT_TOL):
    """Convenience: effective value of a quasi-periodic spec via its torus lift."""
    lifted, scales = lift_quasi_periodic(F)
    return effective_value(CellProblem(lifted, x, p, scales), grid, schedule, tol)


def timed(fn, *args, **kw):
    """Call ``fn`` and return ``(result, seconds)``."""
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0
