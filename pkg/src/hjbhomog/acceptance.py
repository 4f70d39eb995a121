"""The acceptance suite: ten oracle and property checks with runtime budgets.

Each ``criterion_k`` function runs one check and returns a
:class:`CriterionResult`. Shared computations (the two-scale cell solves,
the tables) are cached so that later criteria reuse earlier runs, as the
checks that depend on them prescribe. Runtimes exclude the one-time JIT
compilation, which :func:`warm_up` triggers on a tiny problem.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .average import discounted_value
from .cell import (
    CellProblem,
    LaxFriedrichsOperator,
    TorusGrid,
    effective_value,
    make_operator,
    quasi_torus_consistency,
    restrict_diagonal,
    solve_cell_unbounded,
)
from .effective import MomentumGrid, b0_limit_table, build_table, check_properties
from .hamiltonians import (
    ClosedFormSpec,
    PotentialSpec,
    QuasiPeriodicSpec,
    estimate_dissipation,
    lf_numerical_hamiltonian,
)
from .homogenizer import convergence_study
from .scales import ScaleSystem

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240601
PROBES = 1000


@dataclass
class CriterionResult:
    """Outcome of one acceptance criterion.

    Attributes
    ----------
    number : int
    title : str
    passed : bool
    runtime : float
        Seconds spent in this criterion (cached shared work is charged to
        the criterion that first computed it).
    budget : float or None
        Runtime limit in seconds, if the criterion has one.
    details : dict
        Measured quantities.
    """

    number: int
    title: str
    passed: bool
    runtime: float
    budget: float | None = None
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lim = f" (limit {self.budget:.0f} s)" if self.budget else ""
        return f"criterion {self.number:2d} {status}  {self.title}  [{self.runtime:.1f} s{lim}]"

    def to_json(self) -> dict:
        return {
            "number": self.number,
            "title": self.title,
            "passed": self.passed,
            "runtime": self.runtime,
            "budget": self.budget,
            "details": _jsonable(self.details),
        }


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _timed(fn: Callable):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def warm_up() -> float:
    """Compile the numba kernels on a tiny problem; returns the seconds spent."""
    t0 = time.perf_counter()
    spec = ClosedFormSpec("eikonal", _sine_potential())
    effective_value(CellProblem(spec, [0.0], [0.5], ScaleSystem.single(1)), TorusGrid.uniform(1, 1, 8), [1.0, 0.5])
    return time.perf_counter() - t0


# ---------------------------------------------------------------------------
# shared problem data
# ---------------------------------------------------------------------------


def _sine_potential(d: int = 1) -> PotentialSpec:
    """``2 + sin(2 pi y_1)``."""
    return PotentialSpec.trig(d, [[[0, 1, 1.0, 0.0]]], offset=2.0)


def _two_scale_potential() -> PotentialSpec:
    """``2 + sin(2 pi y^1)/2 + sin(2 pi y^2)/2``."""
    return PotentialSpec.trig(1, [[[0, 1, 0.5, 0.0]], [[0, 1, 0.5, 0.0]]], offset=2.0)


def eikonal_oracle(p) -> np.ndarray:
    """``max(-1, |p| - 2)`` for ``|q| - (2 + sin 2 pi y)``."""
    return np.maximum(-1.0, np.abs(np.asarray(p, dtype=float)[..., 0]) - 2.0)


@functools.lru_cache(maxsize=None)
def quadratic_oracle_scalar(p: float) -> float:
    """Effective value of ``|q|^2 - (2 + sin 2 pi y)``.

    Flat at ``-min V = -1`` while ``int sqrt(V - 1) >= |p|``, otherwise the
    root ``c`` of ``int_0^1 sqrt(c + V(y)) dy = |p|``.
    """
    V = lambda y: 2.0 + math.sin(2.0 * math.pi * y)  # noqa: E731
    f = lambda c: quad(lambda y: math.sqrt(max(c + V(y), 0.0)), 0.0, 1.0, limit=200)[0] - abs(p)  # noqa: E731
    if f(-1.0) >= 0.0:
        return -1.0
    return brentq(f, -1.0, 10.0 + p * p, xtol=1e-12)


def quadratic_oracle(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)[..., 0]
    return np.vectorize(quadratic_oracle_scalar)(p)


@functools.lru_cache(maxsize=None)
def _constant_tables():
    out = {}
    for theta in (1, 2):
        spec = ClosedFormSpec("power", PotentialSpec.constant(1, 1.5), theta=theta)
        out[theta] = build_table(spec, [0.0], MomentumGrid.cube(1), grid=TorusGrid.uniform(1, 1, 8))
    return out


@functools.lru_cache(maxsize=None)
def _oracle_tables():
    out = {}
    for fam in ("eikonal", "quadratic"):
        spec = ClosedFormSpec(fam, _sine_potential())
        out[fam] = build_table(spec, [0.0], MomentumGrid.cube(1, 4.0, 33), grid=TorusGrid.uniform(1, 1, 256))
    return out


@functools.lru_cache(maxsize=None)
def _two_scale_runs(cells: int = 128):
    spec = ClosedFormSpec("eikonal", _two_scale_potential())
    grid = TorusGrid.uniform(1, 2, cells)
    runs = {}
    for tag, gamma in (("non-resonant", 2.0 ** 0.5), ("resonant", "1/2")):
        sc = ScaleSystem([[1], [gamma]])
        runs[tag] = (effective_value(CellProblem(spec, [0.0], [0.0], sc), grid), sc)
    return runs


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def criterion_1() -> CriterionResult:
    """Constant potential: exact values, zero flatness."""
    c0 = 1.5

    def run():
        rows = []
        for d in (1, 2):
            for theta in (1, 2):
                spec = ClosedFormSpec("power", PotentialSpec.constant(d, c0), theta=theta)
                for k in (0, 1, 2):
                    p = np.zeros(d)
                    p[0] = k
                    ev = effective_value(CellProblem(spec, np.zeros(d), p, ScaleSystem.single(d)),
                                         TorusGrid.uniform(d, 1, 8))
                    rows.append({"d": d, "theta": theta, "p": k, "hbar": ev.hbar,
                                 "error": abs(ev.hbar - (k ** theta - c0)), "flatness": ev.flatness})
        tables = _constant_tables()
        terr = {th: tables[th].max_error(lambda P, th=th: np.abs(P[..., 0]) ** th - c0) for th in (1, 2)}
        return rows, terr

    (rows, terr), t = _timed(run)
    max_err = max(r["error"] for r in rows)
    max_flat = max(r["flatness"] for r in rows)
    ok = max_err <= 1e-6 and max_flat <= 1e-8 and max(terr.values()) <= 1e-6 and t <= 5.0
    return CriterionResult(1, "constant potential exactness", ok, t, 5.0,
                           {"max_error": max_err, "max_flatness": max_flat, "table_errors": terr, "entries": rows})


def criterion_2() -> CriterionResult:
    """1D quadrature oracles for the eikonal and quadratic tables."""
    tables, t = _timed(_oracle_tables)
    e_eik = tables["eikonal"].max_error(eikonal_oracle)
    e_quad = tables["quadratic"].max_error(quadratic_oracle)
    ok = e_eik <= 3e-2 and e_quad <= 5e-2 and t <= 120.0
    return CriterionResult(2, "1D quadrature oracle tables", ok, t, 120.0,
                           {"eikonal_error": e_eik, "quadratic_error": e_quad,
                            "eikonal_scheme_error": tables["eikonal"].scheme_error,
                            "quadratic_scheme_error": tables["quadratic"].scheme_error})


def criterion_3(oracle_lambda: float = 1e-2) -> CriterionResult:
    """Two-scale flatness: non-resonant flattens, resonant does not.

    The trajectory oracle rests at the minimum ``(3/4, 3/4)`` of the lifted
    potential, the optimal policy at ``p = 0``; its payoff is exactly
    ``min V = 1`` for every discount.
    """

    def run():
        runs = _two_scale_runs()
        ev_n, sc_n = runs["non-resonant"]
        ev_r, _ = runs["resonant"]
        ctrl = ev_n.solution.operator.ham
        oracle = discounted_value(ctrl, [0.0], [0.0], [[0.75], [0.75]], oracle_lambda, scales=sc_n)
        return ev_n, ev_r, oracle

    (ev_n, ev_r, oracle), t = _timed(run)
    ok = (ev_n.flatness <= 0.5 * ev_r.flatness and abs(ev_n.hbar + 1.0) <= 5e-2
          and abs(-oracle - ev_n.hbar) <= 5e-2 and t <= 180.0)
    return CriterionResult(3, "two-scale ergodic flatness", ok, t, 180.0, {
        "non_resonant": {"hbar": ev_n.hbar, "flatness": ev_n.flatness},
        "resonant": {"hbar": ev_r.hbar, "flatness": ev_r.flatness},
        "oracle_value": -oracle,
        "oracle_lambda": oracle_lambda,
    })


def criterion_4(box_R: float = 100.0, samples: int = 2000, seed: int = DEFAULT_SEED) -> CriterionResult:
    """Diagonal restriction residual on the non-resonant two-scale run.

    ``box_R = 100`` makes the diagonal sample equidistribute over the
    product torus, so the percentile describes the whole restricted
    corrector rather than one segment of it.
    """

    def run():
        ev, sc = _two_scale_runs()["non-resonant"]
        return restrict_diagonal(ev.solution, sc, box_R, samples, seed=seed)

    cs, t = _timed(run)
    C = cs.bound_terms["measured_C"]
    ok = C <= 10.0
    return CriterionResult(4, "diagonal corrector residual", ok, t, None, {
        "p95": cs.residual_stats["p95"], "lambda_osc": cs.bound_terms["lambda_osc"], "h": cs.bound_terms["h"],
        "measured_C": C, "box_R": box_R, "samples": samples, "residual_stats": cs.residual_stats,
    })


def criterion_5() -> CriterionResult:
    """Structural properties of every table built above."""

    def run():
        out = {}
        const = _constant_tables()
        orc = _oracle_tables()
        for name, tab, theta in (("constant-theta1", const[1], 1), ("constant-theta2", const[2], 2),
                                 ("eikonal", orc["eikonal"], 1), ("quadratic", orc["quadratic"], 2)):
            rep = check_properties(tab)
            out[name] = {
                "theta": theta,
                "coercivity_fit": rep.coercivity_fit,
                "loglog_slope": rep.loglog_slope,
                "lipschitz": rep.lipschitz_estimate,
                "violations": len(rep.convexity_violations),
                "tol": rep.tol,
                "ok": (not rep.convexity_violations and math.isfinite(rep.lipschitz_estimate)
                       and abs(rep.coercivity_fit - theta) <= 0.15),
            }
        return out

    out, t = _timed(run)
    return CriterionResult(5, "effective Hamiltonian properties", all(v["ok"] for v in out.values()), t, None, out)


def criterion_6() -> CriterionResult:
    """Stationary 1D homogenization errors decrease until the h-floor."""

    def run():
        spec = ClosedFormSpec("eikonal", _sine_potential())
        return convergence_study(spec, ScaleSystem.single(1), [1 / 4, 1 / 8, 1 / 16, 1 / 32], mu=1.0)

    rep, t = _timed(run)
    ok = rep.decreasing_until_floor and not rep.failures and t <= 300.0
    return CriterionResult(6, "homogenization convergence", ok, t, 300.0, rep.to_json())


def criterion_7(box_R: float = 4000.0, box_h: float = 1 / 32, cells: int = 128) -> CriterionResult:
    """Quasi-periodic torus lift against the truncated box."""

    def run():
        pot = PotentialSpec.quasi_periodic(1, [[[0, 1, 0.5, 0.0]], [[0, 1, 0.5, 0.0]]], [[1], [2.0 ** 0.5]], 2.0)
        F = QuasiPeriodicSpec.from_closed_form(ClosedFormSpec("eikonal", pot), [[-4.0, 4.0]])
        grid = TorusGrid.uniform(1, 2, cells)
        return {p: quasi_torus_consistency(F, [0.0], [float(p)], grid, box_R, box_h) for p in (0, 1, 2)}

    reps, t = _timed(run)
    diffs = {p: r.difference for p, r in reps.items()}
    ok = max(diffs.values()) <= 5e-2 and t <= 180.0
    return CriterionResult(7, "quasi-periodic lift consistency", ok, t, 180.0,
                           {"differences": diffs, "reports": {p: r.to_json() for p, r in reps.items()}})


def criterion_8(lam: float = 1e-2, R: float = 50.0, h: float = 1 / 32) -> CriterionResult:
    """Compactly deformed well: box values and shell sublinearity."""

    def run():
        F = ClosedFormSpec("eikonal", PotentialSpec.b1_well(1))
        return {p: solve_cell_unbounded(F, [0.0], [p], lam, R, h) for p in (0.0, 0.5, 2.0)}

    sols, t = _timed(run)
    vals = {p: s.effective_value for p, s in sols.items()}
    errs = {p: abs(v - (abs(p) - 1.0)) for p, v in vals.items()}
    mono = {p: s.slopes_nonincreasing_beyond(1.0) for p, s in sols.items()}
    ok = max(errs.values()) <= 5e-2 and all(mono.values()) and t <= 120.0
    return CriterionResult(8, "class B1 truncated box", ok, t, 120.0,
                           {"values": vals, "errors": errs, "slopes_nonincreasing": mono,
                            "outer_slopes": {p: float(s.shell_slopes[-1]) for p, s in sols.items()}})


def criterion_9(levels: int = 5, cells: int = 32) -> CriterionResult:
    """Geometric perturbation sequence: Cauchy gaps within the sup-norm bound."""

    def run():
        specs = []
        for N in range(1, levels + 2):
            pot = PotentialSpec.quasi_periodic(1, [[[0, 1, 0.5, 0.0]], [[0, 1, 2.0 ** -N, 0.0]]],
                                               [[1], [2.0 ** 0.5]], 2.0)
            specs.append(ClosedFormSpec("eikonal", pot))
        return b0_limit_table(specs, [0.0], cells=cells)

    res, t = _timed(run)
    rows = []
    for N, gap in enumerate(res.cauchy_gaps, start=1):
        se = max(res.tables[N - 1].scheme_error, res.tables[N].scheme_error)
        bound = 2.0 ** -N + 2.0 * se
        rows.append({"N": N, "gap": gap, "bound": bound, "ok": gap <= bound})
    return CriterionResult(9, "class B0 Cauchy gaps", all(r["ok"] for r in rows), t, None, {"gaps": rows})


# ---------------------------------------------------------------------------
# criterion 10: randomized scheme properties
# ---------------------------------------------------------------------------


def probe_monotonicity(n: int = PROBES, seed: int = DEFAULT_SEED) -> dict:
    """Lax-Friedrichs flux is nonincreasing in ``p+`` and nondecreasing in ``p-``."""
    rng = np.random.default_rng(seed)
    specs = [ClosedFormSpec("eikonal", _sine_potential()), ClosedFormSpec("quadratic", _sine_potential()),
             ClosedFormSpec("quadratic", _sine_potential(2))]
    params = [estimate_dissipation(s, [[-4.0, 4.0]] * s.dim) for s in specs]
    viol = 0
    for k in range(n):
        j = k % len(specs)
        s, par = specs[j], params[j]
        d = s.dim
        ys = rng.uniform(0, 1, size=(1, d))
        pm = rng.uniform(-3.5, 3.5, size=d)
        pp = rng.uniform(-3.5, 3.5, size=d)
        i = rng.integers(d)
        step = np.zeros(d)
        step[i] = rng.uniform(1e-6, 0.5)
        base = lf_numerical_hamiltonian(s, par, [0.0] * d, ys, pm, pp)
        up_plus = lf_numerical_hamiltonian(s, par, [0.0] * d, ys, pm, pp + step)
        up_minus = lf_numerical_hamiltonian(s, par, [0.0] * d, ys, pm + step, pp)
        tol = 1e-12 * (1.0 + abs(base))
        viol += int(up_plus > base + tol) + int(up_minus < base - tol)
    return {"probes": n, "violations": viol}


def _probe_operators():
    spec1 = ClosedFormSpec("eikonal", _sine_potential())
    sc1 = ScaleSystem.single(1)
    g1 = TorusGrid.uniform(1, 1, 32)
    sl1 = make_operator(CellProblem(spec1, [0.0], [0.0], sc1), g1, p_radius=3.0)
    spec2 = ClosedFormSpec("eikonal", _two_scale_potential())
    sc2 = ScaleSystem([[1], [2.0 ** 0.5]])
    g2 = TorusGrid.uniform(1, 2, 16)
    sl2 = make_operator(CellProblem(spec2, [0.0], [0.0], sc2), g2, p_radius=3.0)
    lf1 = LaxFriedrichsOperator(spec1, [0.0], sc1, g1, [[-8.0, 8.0]])
    return [("sl-1d", sl1), ("sl-two-scale", sl2), ("lf-1d", lf1)]


def _map(op, w, p, lam):
    if isinstance(op, LaxFriedrichsOperator):
        return op.step(w.reshape(op.grid.shape), p, lam).reshape(-1)
    return op.apply(w, p, lam)


def _factor(op, lam) -> float:
    if isinstance(op, LaxFriedrichsOperator):
        return 1.0 / (1.0 + lam * op.tau)
    return math.exp(-lam * op.dt)


def probe_comparison_and_contraction(n: int = PROBES, seed: int = DEFAULT_SEED) -> dict:
    """Ordered inputs stay ordered and distances shrink by the scheme factor."""
    rng = np.random.default_rng(seed + 1)
    ops = _probe_operators()
    comp = contr = 0
    worst_ratio = 0.0
    for k in range(n):
        name, op = ops[k % len(ops)]
        P = op.grid.size
        lam = float(10 ** rng.uniform(-3, 0))
        p = rng.uniform(-2, 2, size=1)
        amp = 0.02 if name.startswith("lf") else rng.uniform(0.1, 10.0)
        w = amp * rng.standard_normal(P)
        w2 = w + amp * rng.uniform(0, 1, size=P) * (rng.uniform(size=P) < 0.7)
        tw, tw2 = _map(op, w, p, lam), _map(op, w2, p, lam)
        scale = 1e-12 * (1.0 + float(np.max(np.abs(tw))))
        comp += int(np.any(tw > tw2 + scale))
        dist = float(np.max(np.abs(w2 - w)))
        if dist > 0:
            ratio = float(np.max(np.abs(tw2 - tw))) / dist
            lim = _factor(op, lam)
            worst_ratio = max(worst_ratio, ratio / lim)
            contr += int(ratio > lim * (1 + 1e-9) + scale / dist)
    return {"probes": n, "comparison_violations": comp, "contraction_violations": contr,
            "worst_ratio_over_factor": worst_ratio}


def probe_uniform_bound(n: int = PROBES, seed: int = DEFAULT_SEED) -> dict:
    """``|lam w| <= sup|g| + |p| sup|b|`` along iterations from zero."""
    rng = np.random.default_rng(seed + 2)
    ops = [op for name, op in _probe_operators() if name.startswith("sl")]
    viol = 0
    worst = 0.0
    for k in range(n):
        op = ops[k % len(ops)]
        lam = float(10 ** rng.uniform(-3, 0))
        p = rng.uniform(-3, 3, size=1)
        bound = op.ham.sup_cost + float(np.abs(p).sum()) * op.ham.sup_drift
        w = np.zeros(op.grid.size)
        for _ in range(int(rng.integers(1, 6))):
            w = op.apply(w, p, lam)
            m = float(np.max(np.abs(lam * w)))
            worst = max(worst, m / bound)
            viol += int(m > bound * (1 + 1e-12))
    return {"probes": n, "violations": viol, "worst_fraction_of_bound": worst}


def criterion_10(n: int = PROBES, seed: int = DEFAULT_SEED) -> CriterionResult:
    """Randomized scheme property probes with zero tolerated violations."""

    def run():
        return {
            "monotonicity": probe_monotonicity(n, seed),
            "comparison_contraction": probe_comparison_and_contraction(n, seed),
            "uniform_bound": probe_uniform_bound(n, seed),
        }

    out, t = _timed(run)
    ok = (out["monotonicity"]["violations"] == 0
          and out["comparison_contraction"]["comparison_violations"] == 0
          and out["comparison_contraction"]["contraction_violations"] == 0
          and out["uniform_bound"]["violations"] == 0)
    return CriterionResult(10, "scheme property probes", ok, t, None, {"seed": seed, **out})


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}


def run_all(selected=None, seed: int = DEFAULT_SEED, echo: Callable[[str], None] | None = None) -> list[CriterionResult]:
    """Run the selected criteria (all by default) in order."""
    warm_up()
    out = []
    for k in sorted(selected or CRITERIA):
        fn = CRITERIA[k]
        res = fn(seed=seed) if k in (4, 10) else fn()
        out.append(res)
        if echo is not None:
            echo(res.line())
    return out
