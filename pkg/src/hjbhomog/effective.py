"""Effective-Hamiltonian tables, interpolation and structural checks.

A table samples ``p -> Hbar(x, p)`` at a frozen ``x`` on a tensor grid of
momenta. Entries are computed by the discount continuation of
:mod:`hjbhomog.cell`; one discretization is shared by every entry.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .cell import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    CellProblem,
    SemiLagrangianOperator,
    TorusGrid,
    _check_schedule,
    default_schedule,
    make_operator,
)
from .errors import HomogenizationError, InvalidInputError, NonConvergenceError, OutOfValidityError
from .average import b1_certificate
from .hamiltonians import (
    ClosedFormSpec,
    PotentialSpec,
    ControlHamiltonianSpec,
    HamiltonianSpec,
    QuasiPeriodicSpec,
    as_control,
    corrector_momentum_radius,
    lift_quasi_periodic,
)
from .scales import ScaleSystem

logger = logging.getLogger(__name__)

DEFAULT_P_RADIUS = 4.0
DEFAULT_P_NODES = 33
COERCIVITY_SHELL = 2.0 / 3.0


@dataclass(frozen=True)
class MomentumGrid:
    """Tensor grid of momenta ``box[i, 0] + k * (box[i, 1] - box[i, 0]) / (counts[i] - 1)``."""

    box: tuple
    counts: tuple

    def __post_init__(self):
        box = tuple(tuple(float(v) for v in row) for row in self.box)
        counts = tuple(int(c) for c in self.counts)
        if len(box) != len(counts) or not box:
            raise InvalidInputError("momentum grid needs one interval and one count per axis")
        for (lo, hi), c in zip(box, counts):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise InvalidInputError("momentum intervals must be finite with lo < hi")
            if c < 2:
                raise InvalidInputError("each momentum axis needs at least 2 nodes")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def cube(cls, d: int, radius: float = DEFAULT_P_RADIUS, nodes: int = DEFAULT_P_NODES) -> "MomentumGrid":
        return cls(tuple((-radius, radius) for _ in range(d)), (nodes,) * d)

    @property
    def d(self) -> int:
        return len(self.counts)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, c) for (lo, hi), c in zip(self.box, self.counts)]

    @property
    def shape(self) -> tuple:
        return self.counts

    def points(self) -> np.ndarray:
        """All nodes, shape ``counts + (d,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def radius(self) -> float:
        return float(max(max(abs(lo), abs(hi)) for lo, hi in self.box))


@dataclass
class EffectiveTable:
    """Sampled effective Hamiltonian at a frozen ``x``.

    Attributes
    ----------
    x : ndarray
    grid : MomentumGrid
    values : ndarray
        ``Hbar`` at the nodes (NaN where the entry failed).
    flatness, residual : ndarray
        Per-entry ``osc(lam w)`` and final solver residual.
    failed : ndarray of bool
    errors : dict
        Failure message per failed multi-index.
    provenance : dict
        Schedule, grid and scheme used.
    control_error : float
        Bound on the control-sampling error of the Hamiltonian.
    """

    x: np.ndarray
    grid: MomentumGrid
    values: np.ndarray
    flatness: np.ndarray
    residual: np.ndarray
    failed: np.ndarray
    errors: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    control_error: float = 0.0

    @property
    def complete(self) -> bool:
        return not bool(np.any(self.failed))

    @property
    def scheme_error(self) -> float:
        """Per-entry uncertainty: solver residual plus flatness plus control sampling."""
        ok = ~self.failed
        if not np.any(ok):
            return math.inf
        return float(np.max(self.residual[ok] + self.flatness[ok])) + float(self.control_error)

    def max_error(self, exact) -> float:
        """Sup-norm distance to ``exact(p)`` (vectorized over nodes)."""
        ref = np.asarray(exact(self.grid.points()), dtype=float)
        ok = ~self.failed
        return float(np.max(np.abs(self.values[ok] - ref[ok])))

    def lipschitz_per_axis(self) -> np.ndarray:
        """Max adjacent-node slope along each axis."""
        out = []
        for i, ax in enumerate(self.grid.axes):
            dv = np.diff(self.values, axis=i)
            dp = np.diff(ax).reshape([-1 if k == i else 1 for k in range(self.grid.d)])
            s = np.abs(dv / dp)
            out.append(float(np.nanmax(s)) if np.any(np.isfinite(s)) else math.inf)
        return np.array(out)

    def shifted(self, c: float) -> "EffectiveTable":
        """Copy with every value shifted by ``c``."""
        return EffectiveTable(self.x.copy(), self.grid, self.values + c, self.flatness.copy(), self.residual.copy(),
                              self.failed.copy(), dict(self.errors), dict(self.provenance), self.control_error)

    # serialization -------------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        d = self.grid.d
        wr.writerow([f"p{i + 1}" for i in range(d)] + ["hbar", "flatness", "residual", "ok"])
        pts = self.grid.points().reshape(-1, d)
        for k, pt in enumerate(pts):
            idx = np.unravel_index(k, self.grid.shape)
            wr.writerow([_fmt(v) for v in pt] + [_fmt(self.values[idx]), _fmt(self.flatness[idx]),
                                                 _fmt(self.residual[idx]), int(not self.failed[idx])])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "box": [list(r) for r in self.grid.box],
            "counts": list(self.grid.counts),
            "complete": self.complete,
            "scheme_error": self.scheme_error,
            "control_error": self.control_error,
            "errors": {",".join(map(str, k)): v for k, v in sorted(self.errors.items())},
            "provenance": self.provenance,
        }

    @classmethod
    def from_function(cls, fn, grid: MomentumGrid, x=None, provenance: dict | None = None) -> "EffectiveTable":
        """Table of a known function ``fn(p)`` (vectorized over the last axis)."""
        vals = np.asarray(fn(grid.points()), dtype=float)
        if vals.shape != grid.shape:
            raise InvalidInputError("function must map (..., d) momenta to (...) values")
        z = np.zeros(grid.shape)
        x = np.zeros(grid.d) if x is None else np.asarray(x, dtype=float)
        return cls(x, grid, vals, z, z.copy(), np.zeros(grid.shape, dtype=bool), {},
                   provenance or {"source": "function"})


def _fmt(v) -> str:
    v = float(v)
    return repr(v) if math.isfinite(v) else str(v)


# ---------------------------------------------------------------------------
# table construction
# ---------------------------------------------------------------------------


def _line_indices(shape: tuple) -> list[list[tuple]]:
    """Multi-indices grouped into lines along the last axis."""
    if len(shape) == 1:
        return [[(k,) for k in range(shape[0])]]
    heads = np.ndindex(*shape[:-1])
    return [[tuple(h) + (k,) for k in range(shape[-1])] for h in heads]


def build_table(
    ham: HamiltonianSpec,
    x,
    p_grid: MomentumGrid | None = None,
    schedule: Sequence[float] | None = None,
    grid: TorusGrid | None = None,
    scales: ScaleSystem | None = None,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    scheme: str = "semi-lagrangian",
    warm_start: bool = True,
    workers: int = 1,
    dt: float | None = None,
    control_kw: dict | None = None,
) -> EffectiveTable:
    """Effective values on a momentum grid.

    Parameters
    ----------
    ham : HamiltonianSpec
        Torus-periodic Hamiltonian.
    p_grid : MomentumGrid, optional
        Default ``[-4, 4]^d`` with 33 nodes per axis.
    grid : TorusGrid, optional
        Default 256 cells per axis in 1D, 64 otherwise.
    scales : ScaleSystem, optional
        Default single scale.
    warm_start : bool
        Entries after the first on each line along the last momentum axis
        start from their neighbour's corrector at the smallest discount
        instead of running the whole schedule. The converged values agree
        within the solver tolerance either way.
    workers : int
        Lines are distributed over this many threads. Results do not
        depend on it.

    Raises
    ------
    HomogenizationError
        When every entry fails.
    """
    d = ham.dim
    x = np.asarray(x, dtype=float).reshape(-1)
    p_grid = p_grid or MomentumGrid.cube(d)
    if p_grid.d != d:
        raise InvalidInputError("momentum grid dimension does not match the Hamiltonian")
    scales = scales or ScaleSystem.single(d)
    grid = grid or TorusGrid.uniform(d, ham.num_scales, 256 if d * ham.num_scales == 1 else 64)
    schedule = _check_schedule(schedule if schedule is not None else default_schedule())
    probe = CellProblem(ham, x, np.zeros(d), scales)
    op = make_operator(probe, grid, scheme=scheme, p_radius=p_grid.radius, dt=dt, **(control_kw or {}))
    pts = p_grid.points()
    shape = p_grid.shape
    values = np.full(shape, np.nan)
    flat = np.full(shape, np.nan)
    resid = np.full(shape, np.nan)
    failed = np.zeros(shape, dtype=bool)
    errors: dict = {}

    def run_line(line):
        out = []
        w_prev = None
        for idx in line:
            p = pts[idx]
            try:
                if warm_start and w_prev is not None:
                    sol, _ = _continue(op, p, [schedule[-1]], tol, max_iter, w_prev)
                else:
                    sol, _ = _continue(op, p, schedule, tol, max_iter, None)
                w_prev = sol.w.reshape(-1)
                out.append((idx, sol.effective_value, sol.lam_w_osc, sol.residual, None))
            except (NonConvergenceError, OutOfValidityError) as exc:
                w_prev = None
                out.append((idx, math.nan, math.nan, math.nan, str(exc)))
        return out

    lines = _line_indices(shape)
    if workers > 1 and len(lines) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_line, lines))
    else:
        results = [run_line(line) for line in lines]
    for res in results:
        for idx, v, f, r, err in res:
            if err is not None:
                failed[idx] = True
                errors[idx] = err
            else:
                values[idx], flat[idx], resid[idx] = v, f, r
    if np.all(failed):
        raise HomogenizationError("every table entry failed: " + next(iter(errors.values())))
    if errors:
        logger.warning("%d of %d table entries failed", len(errors), failed.size)
    prov = {
        "schedule": list(schedule),
        "torus_shape": list(grid.shape),
        "scales": scales.to_json(),
        "scheme": scheme,
        "tol": tol,
        "dt": getattr(op, "dt", None),
        "warm_start": warm_start,
        "hamiltonian": getattr(ham, "name", type(ham).__name__),
    }
    return EffectiveTable(x, p_grid, values, flat, resid, failed, errors, prov,
                          float(getattr(op, "control_error", 0.0)))


def _continue(op, p, schedule, tol, max_iter, w0):
    if isinstance(op, SemiLagrangianOperator):
        lam_w0 = schedule[0] if w0 is not None else None
        return op.continuation(p, schedule, tol, max_iter, w0=w0, lam_w0=lam_w0)
    w = w0
    prev = schedule[0] if w0 is not None else None
    sol = None
    for lam in schedule:
        if w is not None and prev is not None:
            w = w * (prev / lam)
        sol = op.solve(p, lam, w, tol, max_iter)
        w, prev = sol.w, lam
    return sol, []


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def interpolate(table: EffectiveTable, p) -> float | np.ndarray:
    """Multilinear interpolation of the table, exact at nodes.

    ``p`` may be one momentum (d,) or an array (..., d).

    Raises
    ------
    OutOfValidityError
        For queries outside the table box (no extrapolation); the message
        names the worst query.
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    q = p.reshape(-1, table.grid.d)
    box = np.array(table.grid.box)
    slack = 1e-12 * np.maximum(1.0, np.abs(box).max(axis=1))
    out_lo = box[:, 0] - slack - q
    out_hi = q - box[:, 1] - slack
    excess = np.max(np.maximum(out_lo, out_hi), axis=1)
    if np.any(excess > 0):
        k = int(np.argmax(excess))
        raise OutOfValidityError(
            f"momentum {q[k].tolist()} lies outside the table box {box.tolist()} (extrapolation refused)"
        )
    if table.failed.any():
        raise OutOfValidityError("cannot interpolate an incomplete table")
    vals = table.values
    res = np.zeros(q.shape[0])
    base = []
    frac = []
    for i, ax in enumerate(table.grid.axes):
        qi = np.clip(q[:, i], ax[0], ax[-1])
        j = np.clip(np.searchsorted(ax, qi, side="right") - 1, 0, len(ax) - 2)
        t = (qi - ax[j]) / (ax[j + 1] - ax[j])
        base.append(j)
        frac.append(t)
    D = table.grid.d
    for corner in range(1 << D):
        wgt = np.ones(q.shape[0])
        idx = []
        for i in range(D):
            bit = (corner >> i) & 1
            wgt = wgt * (frac[i] if bit else 1.0 - frac[i])
            idx.append(base[i] + bit)
        nz = wgt != 0.0
        if np.any(nz):
            res[nz] += wgt[nz] * vals[tuple(ix[nz] for ix in idx)]
    return float(res[0]) if single else res.reshape(p.shape[:-1])


# ---------------------------------------------------------------------------
# structural properties
# ---------------------------------------------------------------------------


@dataclass
class PropertyReport:
    """Lipschitz, midpoint-convexity and coercivity diagnostics of a table.

    Attributes
    ----------
    lipschitz_estimate : float
        Max adjacent-node slope.
    convexity_violations : list of (p, p', margin)
        Pairs whose midpoint value exceeds the chord average by more than
        ``tol``.
    coercivity_fit : float
        Exponent ``theta`` of the least-squares fit ``A |p|^theta + B`` on
        the outer shell ``|p| >= 2/3`` of the box radius.
    loglog_slope : float
        Plain least-squares slope of ``log Hbar`` against ``log |p|`` on the
        same shell (NaN when some value there is not positive).
    """

    lipschitz_estimate: float
    convexity_violations: list
    coercivity_fit: float
    loglog_slope: float
    tol: float
    fit_amplitude: float = math.nan
    fit_offset: float = math.nan

    @property
    def passed(self) -> bool:
        return not self.convexity_violations and math.isfinite(self.lipschitz_estimate)

    def to_json(self) -> dict:
        return {
            "lipschitz_estimate": self.lipschitz_estimate,
            "convexity_violations": [[list(a), list(b), m] for a, b, m in self.convexity_violations],
            "coercivity_fit": self.coercivity_fit,
            "loglog_slope": self.loglog_slope,
            "fit_amplitude": self.fit_amplitude,
            "fit_offset": self.fit_offset,
            "tol": self.tol,
            "passed": self.passed,
        }


def _midpoint_violations(table: EffectiveTable, tol: float) -> list:
    out = []
    vals = table.values
    axes = table.grid.axes
    for i in range(table.grid.d):
        n = vals.shape[i]
        moved = np.moveaxis(vals, i, -1)
        others = moved.shape[:-1]
        for head in np.ndindex(*others):
            line = moved[head]
            for a in range(n):
                for b in range(a + 2, n, 2):
                    m = (a + b) // 2
                    margin = float(line[m] - 0.5 * (line[a] + line[b]))
                    if margin > tol:
                        pa = _node(axes, head, i, a)
                        pb = _node(axes, head, i, b)
                        out.append((pa, pb, margin))
    return out


def _node(axes, head, axis, k) -> tuple:
    idx = list(head)
    idx.insert(axis, k)
    return tuple(float(axes[j][idx[j]]) for j in range(len(axes)))


def _coercivity(table: EffectiveTable) -> tuple[float, float, float, float]:
    pts = table.grid.points().reshape(-1, table.grid.d)
    r = np.sqrt(np.sum(pts * pts, axis=1))
    v = table.values.reshape(-1)
    sel = (r >= COERCIVITY_SHELL * table.grid.radius) & np.isfinite(v)
    r, v = r[sel], v[sel]
    slope = math.nan
    if r.size >= 2 and np.all(v > 0) and np.ptp(np.log(r)) > 0:
        slope = float(np.polyfit(np.log(r), np.log(v), 1)[0])
    if r.size < 3 or np.ptp(r) == 0:
        return math.nan, slope, math.nan, math.nan

    def fit(theta):
        X = np.stack([r**theta, np.ones_like(r)], axis=1)
        coef, *_ = np.linalg.lstsq(X, v, rcond=None)
        return coef, float(np.sum((X @ coef - v) ** 2))

    best = minimize_scalar(lambda t: fit(t)[1], bounds=(0.25, 6.0), method="bounded",
                           options={"xatol": 1e-6})
    theta = float(best.x)
    coef, _ = fit(theta)
    return theta, slope, float(coef[0]), float(coef[1])


def check_properties(table: EffectiveTable, tol: float | None = None) -> PropertyReport:
    """Lipschitz, midpoint convexity and coercivity of a complete table.

    ``tol`` defaults to twice the table's scheme error.
    """
    if not table.complete:
        raise InvalidInputError("property checks need a complete table")
    if tol is None:
        tol = 2.0 * table.scheme_error
    lip = float(np.max(table.lipschitz_per_axis()))
    viol = _midpoint_violations(table, tol)
    theta, slope, A, B = _coercivity(table)
    return PropertyReport(lip, viol, theta, slope, float(tol), A, B)


# ---------------------------------------------------------------------------
# class B0 limits
# ---------------------------------------------------------------------------


@dataclass
class B0Result:
    """Tables of a Hamiltonian sequence and their successive sup-gaps."""

    table: EffectiveTable
    tables: list
    cauchy_gaps: list
    sampled_bounds: list

    def __iter__(self):
        return iter((self.table, self.cauchy_gaps))


def _as_torus(spec, p_radius: float):
    if isinstance(spec, tuple):
        return spec
    if isinstance(spec, ClosedFormSpec) and spec.potential.kind == "quasi-periodic":
        q = corrector_momentum_radius(spec, np.full(spec.dim, p_radius))
        spec = QuasiPeriodicSpec.from_closed_form(spec, [[-q, q]] * spec.dim)
    if isinstance(spec, QuasiPeriodicSpec):
        return lift_quasi_periodic(spec)
    if getattr(spec, "periodic", False):
        return spec, ScaleSystem([[1] * spec.dim] * spec.num_scales)
    raise InvalidInputError("B0 sequences need quasi-periodic or torus-periodic members")


def _sampled_sup(ham: ControlHamiltonianSpec, rng, samples: int = 512) -> float:
    ys = rng.uniform(0, 1, size=(samples, ham.num_scales, ham.dim))
    b, g = ham.fields(np.zeros(ham.dim), ys)
    return float(max(np.max(np.abs(g)), np.max(np.abs(b))))


def b0_limit_table(
    specs: Sequence,
    x,
    p_grid: MomentumGrid | None = None,
    *,
    cells: int = 32,
    schedule: Sequence[float] | None = None,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    bound: float | None = None,
    **kw,
) -> B0Result:
    """Tables of ``Fbar^N`` along a sequence and their sup-gaps.

    Members may be :class:`QuasiPeriodicSpec`, closed forms with a
    quasi-periodic potential, torus-periodic specs or ``(spec, scales)``
    pairs. Each member is solved on its own product torus with ``cells``
    cells per factor axis.

    Raises
    ------
    InvalidInputError
        When the sampled sup norms are not uniformly bounded by ``bound``
        (default: the first member's declared ``sup_drift + sup_cost``
        times 4).
    """
    if not specs:
        raise InvalidInputError("need at least one member")
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    d = specs[0][0].dim if isinstance(specs[0], tuple) else specs[0].dim
    p_grid = p_grid or MomentumGrid.cube(d, 2.0, 9)
    members = [_as_torus(s, p_grid.radius) for s in specs]
    sups = []
    for ham, _ in members:
        if not isinstance(ham, ControlHamiltonianSpec):
            q = corrector_momentum_radius(ham, np.full(d, p_grid.radius))
            ham, _ = as_control(ham, [[-q, q]] * d)
        sups.append(_sampled_sup(ham, rng))
    limit = bound if bound is not None else 4.0 * max(sups[0], 1.0)
    if not all(math.isfinite(s) and s <= limit for s in sups):
        raise InvalidInputError(f"sequence is not uniformly bounded by {limit:g}: sampled sups {sups}")
    tables = []
    for ham, sc in members:
        grid = TorusGrid.uniform(ham.dim, ham.num_scales, cells)
        tables.append(build_table(ham, x, p_grid, schedule, grid, sc, tol=tol, **kw))
    gaps = [float(np.max(np.abs(b.values - a.values))) for a, b in zip(tables, tables[1:])]
    return B0Result(tables[-1], tables, gaps, sups)


# ---------------------------------------------------------------------------
# class B1 limits
# ---------------------------------------------------------------------------


def b1_limit_table(
    spec: ClosedFormSpec,
    x,
    p_grid: MomentumGrid | None = None,
    *,
    sample=None,
    T_schedule: Sequence[float] = (1e2, 1e3),
    dt: float = 0.01,
    max_deviation: float = 5e-2,
) -> EffectiveTable:
    """Effective table of ``a|p|^theta - V`` for a compactly deformed ``V``.

    The ray averages of ``V`` share the limit ``c``; the effective
    Hamiltonian is the kinetic part minus ``c``, which is what the best
    constant control achieves. The table is built by the torus solver on
    the constant potential ``c`` (exact, zero flatness).

    Raises
    ------
    InvalidInputError
        If ``spec`` has no compactly deformed potential, or when the sampled
        ray averages deviate from their mean by more than ``max_deviation``
        (no common limit observed).
    """
    if not isinstance(spec, ClosedFormSpec) or spec.potential.kind != "b1-well":
        raise InvalidInputError("class B1 tables need a closed form with a compactly deformed potential")
    d = spec.dim
    p_grid = p_grid or MomentumGrid.cube(d)
    if sample is None:
        dirs = [np.eye(d)[i] for i in range(d)] + [-np.eye(d)[i] for i in range(d)]
        if d > 1:
            v = np.ones(d) / math.sqrt(d)
            dirs += [v, -v]
        sample = [(np.zeros(d), z) for z in dirs] + [(2.0 * spec.potential.radius * np.ones(d), z) for z in dirs]
    rep = b1_certificate(spec.potential, x, sample, T_schedule, dt=dt)
    if rep.deviation > max_deviation:
        raise InvalidInputError(f"ray averages do not share a limit: deviation {rep.deviation:.3g}")
    c = rep.c
    if len(rep.T_schedule) >= 2:
        # a compact deformation biases the average by O(1/T); remove it
        t1, t2 = rep.T_schedule[-2], rep.T_schedule[-1]
        a1, a2 = rep.averages[-2], rep.averages[-1]
        c = float(np.mean((t2 * a2 - t1 * a1) / (t2 - t1)))
    flat = ClosedFormSpec(spec.family, PotentialSpec.constant(d, c), spec.coefficient, spec.theta)
    table = build_table(flat, x, p_grid, [1.0], TorusGrid.uniform(d, 1, 8))
    table.provenance.update({"source": "ray-average", "c": c, "c_at_largest_T": rep.c, "ray_deviation": rep.deviation,
                             "T_schedule": list(rep.T_schedule)})
    table.control_error += rep.deviation
    return table


def load_table(csv_text: str, sidecar: dict) -> EffectiveTable:
    """Rebuild a table from its CSV text and JSON sidecar."""
    grid = MomentumGrid(tuple(tuple(r) for r in sidecar["box"]), tuple(sidecar["counts"]))
    rows = list(csv.reader(io.StringIO(csv_text)))[1:]
    d = grid.d
    vals = np.full(grid.shape, np.nan)
    flat = np.full(grid.shape, np.nan)
    res = np.full(grid.shape, np.nan)
    failed = np.zeros(grid.shape, dtype=bool)
    if len(rows) != int(np.prod(grid.shape)):
        raise InvalidInputError("table CSV does not match its sidecar")
    for k, row in enumerate(rows):
        idx = np.unravel_index(k, grid.shape)
        vals[idx], flat[idx], res[idx] = float(row[d]), float(row[d + 1]), float(row[d + 2])
        failed[idx] = row[d + 3] != "1"
    return EffectiveTable(np.asarray(sidecar["x"], dtype=float), grid, vals, flat, res, failed, {},
                          sidecar.get("provenance", {}), float(sidecar.get("control_error", 0.0)))


def table_to_json(table: EffectiveTable) -> str:
    return json.dumps(table.sidecar(), sort_keys=True, indent=2)
