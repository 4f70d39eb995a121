"""Oscillatory and effective Hamilton-Jacobi solvers and the convergence harness.

Stationary problems ``mu u + H(x, x/eps, Du) = 0`` on the unit box with
zero Dirichlet data and evolution problems ``u_t + H(x, x/eps, Du) = 0`` on
a periodic box are discretized with the monotone Lax-Friedrichs flux
``H(x, (D+u + D-u)/2) - sum_i sigma_i (D+_i u - D-_i u)/2``. The effective
problems use the same schemes with ``H`` replaced by an interpolated
effective table.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cell import TorusGrid
from .effective import EffectiveTable, MomentumGrid, b1_limit_table, build_table, interpolate
from .errors import HomogenizationError, InvalidInputError, NonConvergenceError, OutOfValidityError
from .hamiltonians import (
    ClosedFormSpec,
    ControlHamiltonianSpec,
    HamiltonianSpec,
    _coefficient_values,
    estimate_dissipation,
)
from .scales import ScaleSystem, diagonal_points, realize_epsilon

logger = logging.getLogger(__name__)

CFL_SAFETY = 0.9
CELLS_PER_EPS = 8
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 2_000_000
DEFAULT_P_RADIUS = 6.0
FLOOR_FACTOR = 3.0


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on ``[lo, lo + length]^d``.

    ``kind="dirichlet"`` includes both boundary nodes on every axis;
    ``kind="periodic"`` drops the right end point.
    """

    d: int
    cells: tuple
    kind: str = "dirichlet"
    lo: float = 0.0
    length: float = 1.0

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        if len(cells) != self.d or any(c < 2 for c in cells):
            raise InvalidInputError("need at least 2 cells on each of the d axes")
        if self.kind not in ("dirichlet", "periodic"):
            raise InvalidInputError("grid kind must be 'dirichlet' or 'periodic'")
        if not self.length > 0:
            raise InvalidInputError("domain length must be positive")
        object.__setattr__(self, "cells", cells)

    @classmethod
    def uniform(cls, d: int, cells: int, kind: str = "dirichlet", lo: float = 0.0, length: float = 1.0):
        return cls(d, (cells,) * d, kind, lo, length)

    @property
    def h(self) -> np.ndarray:
        return np.array([self.length / c for c in self.cells])

    @property
    def shape(self) -> tuple:
        return tuple(c + 1 if self.kind == "dirichlet" else c for c in self.cells)

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic"

    def axis(self, i: int) -> np.ndarray:
        return self.lo + np.arange(self.shape[i]) * self.h[i]

    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*[self.axis(i) for i in range(self.d)], indexing="ij"), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        if self.periodic:
            return m
        for i in range(self.d):
            sl = [slice(None)] * self.d
            sl[i] = 0
            m[tuple(sl)] = True
            sl[i] = -1
            m[tuple(sl)] = True
        return m


@dataclass
class OscillatoryProblem:
    """Oscillatory problem at scale ``eps1``.

    Give ``mu`` for the stationary problem or ``horizon`` and ``u0`` for the
    evolution problem. The fast variables are ``y^n = Gamma^n x / eps1``.
    """

    ham: HamiltonianSpec
    scales: ScaleSystem
    eps1: float
    mu: float | None = None
    horizon: float | None = None
    u0: Callable | None = None

    def __post_init__(self):
        if not self.eps1 > 0:
            raise InvalidInputError("eps1 must be positive")
        if self.mu is None and self.horizon is None:
            raise InvalidInputError("give mu (stationary) or horizon (evolution)")
        if self.mu is not None and not self.mu > 0:
            raise InvalidInputError("mu must be positive")
        if self.horizon is not None:
            if not self.horizon > 0:
                raise InvalidInputError("horizon must be positive")
            if self.u0 is None:
                raise InvalidInputError("evolution problems need an initial datum u0")
        if self.scales.d != self.ham.dim or self.scales.N != self.ham.num_scales:
            raise InvalidInputError("scale system does not match the Hamiltonian")

    @property
    def eps_min(self) -> float:
        return float(np.min(realize_epsilon(self.scales, self.eps1)))

    def fast_points(self, x: np.ndarray) -> np.ndarray:
        return diagonal_points(self.scales, np.asarray(x, dtype=float) / self.eps1)


# ---------------------------------------------------------------------------
# Lax-Friedrichs building blocks
# ---------------------------------------------------------------------------


class _Frozen:
    """``q -> H(x_j, y_j, q_j)`` with everything but ``q`` precomputed."""

    def __init__(self, ham: HamiltonianSpec, x: np.ndarray, ys: np.ndarray):
        self.ham = ham
        if isinstance(ham, ControlHamiltonianSpec):
            b, g = ham.fields(x, ys)
            self.b, self.g = np.ascontiguousarray(b), np.ascontiguousarray(g)
            self.kind = "control"
        elif isinstance(ham, ClosedFormSpec):
            self.a = _coefficient_values(ham.coefficient, x, ys)
            self.V = ham.potential(ys)
            self.theta = ham.theta
            self.kind = "closed"
        else:
            raise InvalidInputError("unsupported Hamiltonian type")

    def __call__(self, q: np.ndarray) -> np.ndarray:
        if self.kind == "control":
            return np.max(-np.einsum("m...i,...i->m...", self.b, q) - self.g, axis=0)
        n2 = np.sum(q * q, axis=-1)
        return self.a * (n2 if self.theta == 2 else np.sqrt(n2)) - self.V


def _differences(u: np.ndarray, h: np.ndarray):
    """One-sided differences along every axis (wrapping; callers mask boundaries)."""
    dp, dm = [], []
    for a in range(u.ndim):
        dp.append((np.roll(u, -1, axis=a) - u) / h[a])
        dm.append((u - np.roll(u, 1, axis=a)) / h[a])
    return np.stack(dp, axis=-1), np.stack(dm, axis=-1)


def _check_box(q_lo, q_hi, box, mask, grid: SpatialGrid):
    if box is None:
        return
    excess = np.maximum(np.max(box[:, 0] - q_lo, axis=-1), np.max(q_hi - box[:, 1], axis=-1))
    if mask is not None:
        excess = np.where(mask, -np.inf, excess)
    if np.any(excess > 0):
        j = np.unravel_index(int(np.argmax(excess)), excess.shape)
        node = grid.points()[j]
        raise OutOfValidityError(
            f"discrete gradient leaves the validity box by {float(excess[j]):.3g} at node {list(j)} "
            f"(x = {node.tolist()})"
        )


class _LFScheme:
    """Monotone Lax-Friedrichs flux on a spatial grid."""

    def __init__(self, hfun: Callable, sigma: np.ndarray, grid: SpatialGrid, box: np.ndarray | None):
        self.hfun = hfun
        self.sigma = np.asarray(sigma, dtype=float)
        self.grid = grid
        self.box = box
        self.h = grid.h
        self.mask = grid.boundary_mask() if not grid.periodic else None
        self.rate = float(np.sum(self.sigma / self.h))

    def flux(self, u: np.ndarray) -> np.ndarray:
        dp, dm = _differences(u, self.h)
        _check_box(np.minimum(dp, dm), np.maximum(dp, dm), self.box, self.mask, self.grid)
        visc = np.sum(self.sigma * (dp - dm), axis=-1) / 2.0
        out = self.hfun(0.5 * (dp + dm)) - visc
        if self.mask is not None:
            out = np.where(self.mask, 0.0, out)
        return out


def _stationary(scheme: _LFScheme, mu: float, tol: float, max_iter: int, u0=None):
    grid = scheme.grid
    tau = CFL_SAFETY / scheme.rate
    u = np.zeros(grid.shape) if u0 is None else np.array(u0, dtype=float).reshape(grid.shape)
    mask = scheme.mask
    res = math.inf
    for it in range(1, max_iter + 1):
        hn = scheme.flux(u)
        r = mu * u + hn
        if mask is not None:
            r = np.where(mask, 0.0, r)
        res = float(np.max(np.abs(r)))
        if res <= tol:
            return u, res, it
        u = (u - tau * hn) / (1.0 + mu * tau)
        if mask is not None:
            u[mask] = 0.0
    raise NonConvergenceError(f"stationary solve did not converge (residual {res:.3g})", residual=res,
                              iterations=max_iter)


def _max_dt(scheme: _LFScheme) -> float:
    return CFL_SAFETY / scheme.rate


def _evolve(scheme: _LFScheme, u0: np.ndarray, T: float, dt: float | None):
    limit = _max_dt(scheme)
    if dt is None:
        n = max(1, math.ceil(T / limit))
        dt = T / n
    else:
        if dt > limit * (1 + 1e-12):
            raise InvalidInputError(f"time step {dt:g} violates the CFL bound {limit:g}")
        n = max(1, math.ceil(T / dt - 1e-12))
        dt = T / n
    u = np.array(u0, dtype=float)
    for _ in range(n):
        u = u - dt * scheme.flux(u)
    return u, n, dt


# ---------------------------------------------------------------------------
# oscillatory solvers
# ---------------------------------------------------------------------------


def _check_resolution(prob: OscillatoryProblem, grid: SpatialGrid, cells_per_eps: int = CELLS_PER_EPS):
    hmax = float(np.max(grid.h))
    need = prob.eps_min / cells_per_eps
    if hmax > need * (1 + 1e-12):
        raise InvalidInputError(f"resolution rule violated: h = {hmax:g} > eps_min/{cells_per_eps} = {need:g}")


def _oscillatory_scheme(prob: OscillatoryProblem, grid: SpatialGrid, p_radius: float):
    if grid.d != prob.ham.dim:
        raise InvalidInputError("grid dimension does not match the Hamiltonian")
    x = grid.points()
    ys = prob.fast_points(x)
    hfun = _Frozen(prob.ham, x, ys)
    box = np.array([[-p_radius, p_radius]] * grid.d)
    params = estimate_dissipation(prob.ham, box, np.zeros(grid.d))
    sigma = params.dissipation
    if isinstance(prob.ham, ControlHamiltonianSpec):
        sigma = np.maximum(sigma, 1.2 * prob.ham.sup_drift)
    return _LFScheme(hfun, sigma, grid, box)


def solve_oscillatory_stationary(
    prob: OscillatoryProblem,
    grid: SpatialGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    p_radius: float = DEFAULT_P_RADIUS,
    check_resolution: bool = True,
) -> np.ndarray:
    """Fictitious-time iteration of ``mu u + H_num = 0`` with ``u = 0`` on the boundary.

    Raises
    ------
    InvalidInputError
        On a resolution-rule violation (``h <= eps_min / 8``).
    NonConvergenceError
    OutOfValidityError
        When a discrete gradient leaves ``[-p_radius, p_radius]^d``.
    """
    if prob.mu is None:
        raise InvalidInputError("stationary solves need mu")
    if grid.periodic:
        raise InvalidInputError("the stationary problem uses a Dirichlet grid")
    if check_resolution:
        _check_resolution(prob, grid)
    scheme = _oscillatory_scheme(prob, grid, p_radius)
    u, res, it = _stationary(scheme, prob.mu, tol, max_iter)
    logger.debug("stationary eps=%g cells=%s it=%d res=%.2e", prob.eps1, grid.cells, it, res)
    return u


def solve_oscillatory_evolution(
    prob: OscillatoryProblem,
    grid: SpatialGrid,
    dt: float | None = None,
    *,
    p_radius: float = DEFAULT_P_RADIUS,
    check_resolution: bool = True,
) -> np.ndarray:
    """Explicit monotone time stepping of ``u_t + H_num = 0`` to the horizon.

    The box is periodic; ``u0`` is evaluated on its nodes, i.e. extended
    periodically. By finite speed of propagation this matches the whole
    space problem as long as the horizon is shorter than the time the
    fastest characteristic needs to cross half the box, or exactly when
    ``u0`` and ``H`` share the box period.

    Raises
    ------
    InvalidInputError
        On a CFL or resolution-rule violation.
    """
    if prob.horizon is None:
        raise InvalidInputError("evolution solves need a horizon and u0")
    if not grid.periodic:
        raise InvalidInputError("the evolution problem uses a periodic grid")
    if check_resolution:
        _check_resolution(prob, grid)
    scheme = _oscillatory_scheme(prob, grid, p_radius)
    u0 = np.asarray(prob.u0(grid.points()), dtype=float).reshape(grid.shape)
    u, n, _ = _evolve(scheme, u0, prob.horizon, dt)
    logger.debug("evolution eps=%g cells=%s steps=%d", prob.eps1, grid.cells, n)
    return u


# ---------------------------------------------------------------------------
# effective solvers
# ---------------------------------------------------------------------------


def _table_scheme(table: EffectiveTable, grid: SpatialGrid) -> _LFScheme:
    if table.grid.d != grid.d:
        raise InvalidInputError("table dimension does not match the grid")
    if not table.complete:
        raise InvalidInputError("effective solves need a complete table")
    sigma = 1.2 * table.lipschitz_per_axis() + 1e-12
    box = np.array(table.grid.box)

    def hfun(q):
        return interpolate(table, q)

    return _LFScheme(hfun, sigma, grid, box)


def solve_effective_stationary(
    table: EffectiveTable,
    mu: float,
    grid: SpatialGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """``mu u + Hbar_num(Du) = 0`` with zero Dirichlet data.

    Raises
    ------
    OutOfValidityError
        When a discrete gradient leaves the table box; the message names
        the worst node.
    """
    if not mu > 0:
        raise InvalidInputError("mu must be positive")
    if grid.periodic:
        raise InvalidInputError("the stationary problem uses a Dirichlet grid")
    u, _, _ = _stationary(_table_scheme(table, grid), mu, tol, max_iter)
    return u


def solve_effective_evolution(
    table: EffectiveTable,
    u0: Callable,
    T: float,
    grid: SpatialGrid,
    dt: float | None = None,
) -> np.ndarray:
    """``u_t + Hbar_num(Du) = 0`` on a periodic box to time ``T``."""
    if not T > 0:
        raise InvalidInputError("horizon must be positive")
    if not grid.periodic:
        raise InvalidInputError("the evolution problem uses a periodic grid")
    u0v = np.asarray(u0(grid.points()), dtype=float).reshape(grid.shape)
    u, _, _ = _evolve(_table_scheme(table, grid), u0v, T, dt)
    return u


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Per-``eps`` sup errors against the effective solution.

    Attributes
    ----------
    eps : list of float
    errors : list of float
        ``max |u_eps - ubar|`` on the coarsest common node set.
    interior_errors, boundary_errors : list of float
        The same split into nodes farther than ``boundary_width`` from the
        Dirichlet boundary and the rest (stationary problems only).
    orders : list of float
        Observed orders ``log(e_k / e_{k+1}) / log(eps_k / eps_{k+1})``.
    scheme_error : float
        Richardson estimate ``max |ubar_h - ubar_{2h}|`` of the effective
        solve.
    h_floor : list of bool
        Entries with ``error <= 3 * scheme_error``.
    failures : dict
        ``eps -> message`` for solves that failed; the report is partial.
    """

    eps: list
    errors: list
    interior_errors: list
    boundary_errors: list
    orders: list
    scheme_error: float
    h_floor: list
    failures: dict = field(default_factory=dict)
    mode: str = "stationary"
    table_summary: dict = field(default_factory=dict)
    common_nodes: int = 0
    boundary_width: float = 0.0

    @property
    def decreasing_until_floor(self) -> bool:
        """Errors strictly decrease up to the first entry flagged at the h-floor."""
        errs = [e for e in self.errors if e is not None]
        if len(errs) != len(self.eps):
            return False
        for k in range(len(errs) - 1):
            if self.h_floor[k]:
                return True
            if not errs[k + 1] < errs[k]:
                return bool(self.h_floor[k + 1])
        return True

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "eps": self.eps,
            "errors": self.errors,
            "interior_errors": self.interior_errors,
            "boundary_errors": self.boundary_errors,
            "orders": self.orders,
            "scheme_error": self.scheme_error,
            "h_floor": self.h_floor,
            "decreasing_until_floor": self.decreasing_until_floor,
            "failures": {repr(k): v for k, v in self.failures.items()},
            "table": self.table_summary,
            "common_nodes": self.common_nodes,
            "boundary_width": self.boundary_width,
        }


def _restrict(u: np.ndarray, fine: SpatialGrid, coarse: SpatialGrid) -> np.ndarray:
    """Values of ``u`` at the nodes of ``coarse`` (which must be nodes of ``fine``)."""
    sl = []
    for i in range(fine.d):
        ratio = coarse.h[i] / fine.h[i]
        r = int(round(ratio))
        if abs(ratio - r) > 1e-9 or r < 1 or abs(coarse.lo - fine.lo) > 1e-12:
            raise InvalidInputError("grids are not nested; cannot compare on common nodes")
        sl.append(slice(0, None, r))
    out = u[tuple(sl)]
    if out.shape != coarse.shape:
        raise InvalidInputError("grids are not nested; cannot compare on common nodes")
    return out


def _cells_for(eps_min: float, length: float, cells_per_eps: int) -> int:
    return int(math.ceil(length * cells_per_eps / eps_min - 1e-9))


def convergence_study(
    ham: HamiltonianSpec,
    scales: ScaleSystem,
    eps_schedule: Sequence[float],
    *,
    mu: float | None = None,
    u0: Callable | None = None,
    horizon: float | None = None,
    table: EffectiveTable | None = None,
    x_ref=None,
    p_grid: MomentumGrid | None = None,
    cell_grid: TorusGrid | None = None,
    cells_per_eps: int = CELLS_PER_EPS,
    effective_cells: int | None = None,
    p_radius: float = DEFAULT_P_RADIUS,
    tol: float = DEFAULT_TOL,
    boundary_width: float = 0.125,
    workers: int = 1,
    table_kw: dict | None = None,
) -> ConvergenceReport:
    """Compare oscillatory solutions with the effective solution along ``eps``.

    The effective table is built once at ``x_ref`` (default the origin);
    pass ``table`` to reuse one. The effective problem is solved on the
    finest oscillatory grid and on a grid twice as coarse for the
    Richardson estimate. Cell counts are rounded up so that every grid
    refines the coarsest one; errors are measured on the coarsest nodes.
    """
    eps = [float(e) for e in eps_schedule]
    if len(eps) < 2 or any(not e > 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise InvalidInputError("eps schedule must be positive and strictly decreasing")
    if (mu is None) == (horizon is None):
        raise InvalidInputError("give exactly one of mu (stationary) or horizon with u0 (evolution)")
    mode = "stationary" if mu is not None else "evolution"
    d = ham.dim
    if table is None:
        tkw = dict(table_kw or {})
        x0 = np.zeros(d) if x_ref is None else np.asarray(x_ref, dtype=float)
        if isinstance(ham, ClosedFormSpec) and ham.potential.kind == "b1-well":
            table = b1_limit_table(ham, x0, p_grid or MomentumGrid.cube(d, p_radius))
        else:
            table = build_table(ham, x0, p_grid, None, cell_grid, scales, **tkw)
    kind = "dirichlet" if mode == "stationary" else "periodic"
    probs = [OscillatoryProblem(ham, scales, e, mu=mu, horizon=horizon, u0=u0) for e in eps]
    cells = [_cells_for(p.eps_min, 1.0, cells_per_eps) for p in probs]
    # refine each count to a multiple of the previous one so that all grids share the coarse nodes
    for k in range(1, len(cells)):
        cells[k] = cells[k - 1] * math.ceil(cells[k] / cells[k - 1])
    grids = [SpatialGrid.uniform(d, n, kind) for n in cells]
    coarse = grids[0]
    step = 2 * cells[0]
    fine_cells = step * math.ceil((effective_cells or cells[-1]) / step)
    g_eff = SpatialGrid.uniform(d, fine_cells, kind)
    g_half = SpatialGrid.uniform(d, fine_cells // 2, kind)
    if mode == "stationary":
        ubar = solve_effective_stationary(table, mu, g_eff, tol)
        ubar_half = solve_effective_stationary(table, mu, g_half, tol)
    else:
        ubar = solve_effective_evolution(table, u0, horizon, g_eff)
        ubar_half = solve_effective_evolution(table, u0, horizon, g_half)
    ref = _restrict(ubar, g_eff, coarse)
    scheme_error = float(np.max(np.abs(ref - _restrict(ubar_half, g_half, coarse))))

    def run(k):
        p, g = probs[k], grids[k]
        try:
            if mode == "stationary":
                u = solve_oscillatory_stationary(p, g, tol, p_radius=p_radius)
            else:
                u = solve_oscillatory_evolution(p, g, p_radius=p_radius)
            return _restrict(u, g, coarse), None
        except (NonConvergenceError, OutOfValidityError, InvalidInputError) as exc:
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run, range(len(eps))))
    else:
        outs = [run(k) for k in range(len(eps))]

    pts = coarse.points()
    if mode == "stationary":
        dist = np.min(np.minimum(pts - coarse.lo, coarse.lo + coarse.length - pts), axis=-1)
        interior = dist > boundary_width + 1e-12
    else:
        interior = np.ones(coarse.shape, dtype=bool)
    errors, ints, bnds, failures = [], [], [], {}
    for e, (u, err) in zip(eps, outs):
        if err is not None:
            failures[e] = err
            errors.append(None)
            ints.append(None)
            bnds.append(None)
            continue
        diff = np.abs(u - ref)
        errors.append(float(diff.max()))
        ints.append(float(diff[interior].max()) if np.any(interior) else None)
        bnds.append(float(diff[~interior].max()) if np.any(~interior) else None)
    orders = []
    for k in range(len(eps) - 1):
        a, b = errors[k], errors[k + 1]
        if a is None or b is None or a <= 0 or b <= 0:
            orders.append(None)
        else:
            orders.append(math.log(a / b) / math.log(eps[k] / eps[k + 1]))
    floor = [e is not None and e <= FLOOR_FACTOR * scheme_error for e in errors]
    if failures and len(failures) == len(eps):
        raise HomogenizationError("every oscillatory solve failed: " + next(iter(failures.values())))
    summary = {"scheme_error": table.scheme_error, "box": [list(r) for r in table.grid.box],
               "counts": list(table.grid.counts), "provenance": table.provenance}
    return ConvergenceReport(eps, errors, ints, bnds, orders, scheme_error, floor, failures, mode, summary,
                             int(np.prod(coarse.shape)), boundary_width if mode == "stationary" else 0.0)
