"""Command line front end.

Every subcommand reads a TOML configuration, validates it, runs one module
pipeline and prints a JSON document (sorted keys) on standard output.
Errors are printed as JSON too, and the exit status encodes their kind:

===  ==========================================
0    success
1    invalid configuration or input
2    non-convergence or out-of-validity
3    property violation (or a failed criterion)
4    budget exceeded
===  ==========================================
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import HomogenizationError, PropertyViolationError

logger = logging.getLogger(__name__)

SHIPPED_CONFIGS = Path(__file__).resolve().parent / "configs"


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2)


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        v = float(v)
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    return v


def _floats(text: str | None):
    if text is None:
        return None
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError as exc:
        raise cfgmod.InvalidInputError(f"cannot parse number list {text!r}") from exc


def _out_dir(cfg: cfgmod.RunConfig, args) -> Path | None:
    d = getattr(args, "out", None) or cfg.section("output").get("dir")
    if not d:
        return None
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _formats(cfg: cfgmod.RunConfig) -> list:
    return cfg.section("output").get("formats", ["json", "csv"])


def _write(path: Path | None, name: str, text: str, written: list) -> None:
    if path is None:
        return
    target = path / name
    target.write_text(text)
    written.append(str(target))


def _grid_csv(arr: np.ndarray, value_name: str) -> str:
    lines = [",".join([f"i{k + 1}" for k in range(arr.ndim)] + [value_name])]
    for idx in np.ndindex(arr.shape):
        lines.append(",".join([str(i) for i in idx] + [repr(float(arr[idx]))]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_resonance(cfg: cfgmod.RunConfig, args) -> dict:
    from .scales import check_condition_a, orbit_gap

    res = cfg.section("resonance")
    sc = cfg.scales()
    rep = check_condition_a(sc, res.get("bound", 10_000), res.get("tol", 1e-8), res.get("budget", 10_000_000))
    out = {"scales": sc.to_json(), "report": rep.to_json()}
    if sc.N > 1:
        omega = sc.as_array()[1:, 0]
        out["orbit"] = orbit_gap(omega, 1000).to_json()
    return out


def _torus_grid(cfg: cfgmod.RunConfig, sc):
    from .cell import TorusGrid

    cells = cfg.solver_value("cells", 256 if cfg.dim * sc.N == 1 else 64)
    return TorusGrid.uniform(cfg.dim, sc.N, int(cells))


def cmd_cell(cfg: cfgmod.RunConfig, args) -> dict:
    from .cell import CellProblem, effective_value, solve_cell_unbounded

    p = np.asarray(cfg.solver_value("p", [0.0] * cfg.dim), dtype=float)
    tol = cfg.solver_value("tol", 1e-6)
    max_iter = cfg.solver_value("max_iter", 200_000)
    out_dir = _out_dir(cfg, args)
    written: list = []
    if cfg.potential_kind == "b1-well":
        box = cfg.solver_value("box", {})
        sol = solve_cell_unbounded(cfg.closed_form(), cfg.x, p, box.get("lambda", cfg.schedule()[-1]),
                                   box.get("R", 50.0), box.get("h", 1 / 32), tol, max_iter)
        out = {"kind": "box", "solution": sol.to_json()}
        if "csv" in _formats(cfg):
            _write(out_dir, "v.csv", _grid_csv(sol.v, "v"), written)
    else:
        ham, sc = cfg.torus_hamiltonian()
        grid = _torus_grid(cfg, sc)
        ev = effective_value(CellProblem(ham, cfg.x, p, sc), grid, cfg.schedule(), tol, max_iter,
                             scheme=cfg.solver_value("scheme", "semi-lagrangian"))
        out = {"kind": "torus", "effective_value": ev.hbar, "flatness": ev.flatness,
               "solution": ev.solution.diagnostics(), "history": ev.history,
               "ergodic_convergence_observed": bool(ev.flatness <= 5e-2)}
        if "csv" in _formats(cfg):
            _write(out_dir, "w.csv", _grid_csv(ev.solution.w, "w"), written)
    if written:
        out["artifacts"] = written
    if "json" in _formats(cfg):
        _write(out_dir, "cell.json", _dumps(out), [])
    return out


def _table(cfg: cfgmod.RunConfig):
    from .effective import MomentumGrid, b1_limit_table, build_table

    radius = cfg.solver_value("p_radius", 4.0)
    nodes = cfg.solver_value("p_nodes", 33)
    pg = MomentumGrid.cube(cfg.dim, radius, nodes)
    if cfg.potential_kind == "b1-well":
        return b1_limit_table(cfg.closed_form(), cfg.x, pg)
    ham, sc = cfg.torus_hamiltonian()
    return build_table(ham, cfg.x, pg, cfg.schedule(), _torus_grid(cfg, sc), sc,
                       tol=cfg.solver_value("tol", 1e-6), max_iter=cfg.solver_value("max_iter", 200_000),
                       scheme=cfg.solver_value("scheme", "semi-lagrangian"))


def cmd_table(cfg: cfgmod.RunConfig, args) -> dict:
    from .effective import check_properties

    table = _table(cfg)
    rep = check_properties(table)
    out_dir = _out_dir(cfg, args)
    written: list = []
    if "csv" in _formats(cfg):
        _write(out_dir, "table.csv", table.to_csv(), written)
    if "json" in _formats(cfg):
        _write(out_dir, "table.json", _dumps(table.sidecar()), written)
    out = {"table": table.sidecar(), "properties": rep.to_json(),
           "values": table.values, "artifacts": written}
    if not rep.passed:
        out["error"] = {"type": "PropertyViolationError", "message": "effective table violates a checked property"}
        return out, PropertyViolationError.exit_code
    return out


def _control_for(spec, p):
    from .hamiltonians import ControlHamiltonianSpec, as_control, corrector_momentum_radius

    if isinstance(spec, ControlHamiltonianSpec):
        return spec
    q = corrector_momentum_radius(spec, np.maximum(np.abs(p), 1e-3))
    return as_control(spec, [[-q, q]] * spec.dim)[0]


def cmd_average(cfg: cfgmod.RunConfig, args) -> dict:
    from .average import discounted_value
    from .cell import CellProblem, effective_value, default_schedule

    av = cfg.section("average")
    lam = av.get("lambda", 1e-2)
    policy = av.get("policy", "constant-controls")
    T = av.get("horizon")
    dt = av.get("dt")
    p = np.asarray(cfg.solver_value("p", [0.0] * cfg.dim), dtype=float)
    kw = {"dt": dt, "T": T}
    if cfg.potential_kind in ("b1-well", "quasi-periodic"):
        if policy != "constant-controls":
            raise cfgmod.InvalidInputError("/average/policy: greedy policies need a torus problem")
        spec = cfg.quasi_periodic().as_plane_spec() if cfg.potential_kind == "quasi-periodic" else cfg.closed_form()
        y0 = np.asarray(av.get("y0", [[0.0] * cfg.dim]), dtype=float)
        value = discounted_value(_control_for(spec, p), cfg.x, p, y0, lam, policy, **kw)
    else:
        ham, sc = cfg.torus_hamiltonian()
        y0 = np.asarray(av.get("y0", [[0.0] * cfg.dim] * sc.N), dtype=float)
        if policy == "constant-controls":
            # the control set only has to cover the optimum at this momentum
            value = discounted_value(_control_for(ham, p), cfg.x, p, y0, lam, policy, scales=sc, **kw)
        else:
            grid = _torus_grid(cfg, sc)
            prob = CellProblem(ham, cfg.x, p, sc)
            ev = effective_value(prob, grid, default_schedule(lam, max(lam, cfg.section("solver").get("lambda0", 1.0))),
                                 cfg.solver_value("tol", 1e-6))
            ctrl = ev.solution.operator.ham
            value = discounted_value(ctrl, cfg.x, p, y0, lam, policy, scales=sc, solution=ev.solution, **kw)
    return {"lambda": lam, "policy": policy, "y0": y0, "p": p, "discounted_value": value,
            "effective_value_estimate": -value}


def cmd_homogenize(cfg: cfgmod.RunConfig, args) -> dict:
    from .homogenizer import convergence_study
    from .scales import ScaleSystem

    hom = cfg.section("homogenize")
    eps = hom.get("eps_schedule", [0.25, 0.125, 0.0625, 0.03125])
    mu = hom.get("mu")
    horizon = hom.get("horizon")
    if mu is None and horizon is None:
        mu = 1.0
    u0 = cfgmod.INITIAL_DATA[hom.get("u0", "cos")] if horizon is not None else None
    p_radius = hom.get("p_radius", 6.0)
    kw = {"mu": mu, "u0": u0, "horizon": horizon, "cells_per_eps": hom.get("cells_per_eps", 8),
          "p_radius": p_radius, "boundary_width": hom.get("boundary_width", 0.125)}
    if cfg.potential_kind == "quasi-periodic":
        table = _table(cfg)
        rep = convergence_study(cfg.closed_form(), ScaleSystem.single(cfg.dim), eps, table=table, **kw)
    elif cfg.potential_kind == "b1-well":
        rep = convergence_study(cfg.closed_form(), ScaleSystem.single(cfg.dim), eps, **kw)
    else:
        ham, sc = cfg.torus_hamiltonian()
        rep = convergence_study(ham, sc, eps, table=_table(cfg), **kw)
    out = rep.to_json()
    report = getattr(args, "report", None)
    if report:
        Path(report).parent.mkdir(parents=True, exist_ok=True)
        Path(report).write_text(_dumps(out))
    return out


def cmd_verify(cfg_paths: list, args) -> tuple:
    from . import acceptance

    paths = [Path(p) for p in cfg_paths] or sorted(SHIPPED_CONFIGS.glob("*.toml"))
    seed = acceptance.DEFAULT_SEED
    checked = []
    for k, pth in enumerate(paths):
        c = cfgmod.load(pth)
        checked.append(str(pth))
        if k == 0 and "seed" in c.data:
            seed = c.seed
    selected = [int(v) for v in args.criteria.split(",")] if args.criteria else None
    results = acceptance.run_all(selected, seed=seed, echo=lambda s: print(s, file=sys.stderr, flush=True))
    out = {"seed": seed, "configs": checked, "criteria": [r.to_json() for r in results],
           "passed": all(r.passed for r in results)}
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(_dumps(out))
    return out, (0 if out["passed"] else PropertyViolationError.exit_code)


COMMANDS = {
    "resonance": cmd_resonance,
    "cell": cmd_cell,
    "table": cmd_table,
    "average": cmd_average,
    "homogenize": cmd_homogenize,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjbhomog", description="Effective Hamiltonians and homogenization checks.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="TOML configuration file")
        sp.add_argument("--out", help="directory for CSV/JSON artifacts (overrides [output].dir)")
        return sp

    sp = with_config("resonance", "non-resonance search and orbit density")
    sp.add_argument("--bound", type=int)
    sp.add_argument("--tol", type=float)

    sp = with_config("cell", "solve the cell problem along the discount schedule")
    sp.add_argument("--lambda-min", type=float, dest="lambda_min")
    sp.add_argument("--grid", type=int, help="cells per torus axis")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--p", help="momentum, comma separated")

    sp = with_config("table", "effective Hamiltonian table with property checks")
    sp.add_argument("--lambda-min", type=float, dest="lambda_min")
    sp.add_argument("--grid", type=int)
    sp.add_argument("--tol", type=float)

    sp = with_config("average", "trajectory oracle for the discounted value")
    sp.add_argument("--lambda", type=float, dest="lam")
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--policy", choices=["constant-controls", "greedy-from-cell-solution"])
    sp.add_argument("--p", help="momentum, comma separated")

    sp = with_config("homogenize", "convergence study of u_eps against the effective solution")
    sp.add_argument("--eps-schedule", dest="eps_schedule", help="comma separated, strictly decreasing")
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--mu", type=float)
    grp.add_argument("--horizon", type=float)
    sp.add_argument("--report", help="write the convergence report JSON here")

    sp = sub.add_parser("verify", help="run the acceptance suite")
    sp.add_argument("configs", nargs="*", help="configs to validate first (default: the shipped examples)")
    sp.add_argument("--criteria", help="comma separated criterion numbers (default: all)")
    sp.add_argument("--report", help="write the results JSON here")
    return ap


def _overrides(args) -> dict:
    c = args.command
    ov = {}
    if c == "resonance":
        ov = {"resonance__bound": args.bound, "resonance__tol": args.tol}
    elif c in ("cell", "table"):
        ov = {"solver__lambda_min": args.lambda_min, "solver__cells": args.grid, "solver__tol": args.tol}
        if c == "cell":
            ov["solver__p"] = _floats(args.p)
    elif c == "average":
        ov = {"average__lambda": args.lam, "average__horizon": args.horizon, "average__dt": args.dt,
              "average__policy": args.policy, "solver__p": _floats(args.p)}
    elif c == "homogenize":
        ov = {"homogenize__eps_schedule": _floats(args.eps_schedule), "homogenize__mu": args.mu,
              "homogenize__horizon": args.horizon}
    return ov


def run(argv=None) -> int:
    """Parse ``argv``, execute, print JSON and return the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            out, code = cmd_verify(args.configs, args)
        else:
            cfg = cfgmod.load(args.config)
            ov = _overrides(args)
            if args.command == "homogenize" and ov.get("homogenize__mu") is not None:
                cfg.data.get("homogenize", {}).pop("horizon", None)
            if args.command == "homogenize" and ov.get("homogenize__horizon") is not None:
                cfg.data.get("homogenize", {}).pop("mu", None)
            cfg = cfg.with_overrides(**ov)
            res = COMMANDS[args.command](cfg, args)
            out, code = res if isinstance(res, tuple) else (res, 0)
            out = {"command": args.command, "seed": cfg.seed, "config": cfg.source,
                   "overrides": cfg.overrides, "result": out}
    except HomogenizationError as exc:
        err = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}}
        ptr = getattr(exc, "pointer", None)
        if ptr is not None:
            err["error"]["pointer"] = ptr
        residual = getattr(exc, "residual", None)
        if residual is not None:
            err["error"]["residual"] = residual
        print(_dumps(err))
        return exc.exit_code
    print(_dumps(out))
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
