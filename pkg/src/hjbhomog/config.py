"""Run configuration: TOML files validated against a closed JSON schema.

A configuration has a ``[problem]`` section (Hamiltonian, potential and
scales), a ``[solver]`` section (grids, tolerances, discounts), optional
sections per command (``[resonance]``, ``[average]``, ``[homogenize]``) and
an ``[output]`` section. Unknown keys are rejected before any compute, and
validation errors name the offending key as a JSON pointer such as
``/solver/lambda_min``.

Ratios and periods accept exact rationals written ``"p/q"`` and square
roots written ``"sqrt(n)"``; anything else numeric is read as a float.
"""

from __future__ import annotations

import copy
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import InvalidInputError
from .hamiltonians import ClosedFormSpec, PotentialSpec, QuasiPeriodicSpec, corrector_momentum_radius, lift_quasi_periodic
from .scales import ScaleSystem

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240601

_NUMBER = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_RATIO = {
    "oneOf": [
        {"type": "number"},
        {"type": "string", "pattern": r"^\s*([+-]?\d+\s*/\s*\d+|[+-]?\d+|sqrt\(\s*\d+(\.\d+)?\s*\))\s*$"},
    ]
}
_TERM = {"type": "array", "items": _NUMBER, "minItems": 4, "maxItems": 4}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dim", "family", "potential"],
            "properties": {
                "name": {"type": "string"},
                "dim": {"type": "integer", "minimum": 1, "maximum": 3},
                "family": {"enum": ["quadratic", "eikonal", "power"]},
                "coefficient": _POS,
                "theta": {"enum": [1, 2]},
                "x": {"type": "array", "items": _NUMBER},
                "potential": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["trig", "quasi-periodic", "b1-well", "constant"]},
                        "offset": _NUMBER,
                        "value": _NUMBER,
                        "components": {"type": "array", "items": {"type": "array", "items": _TERM}},
                        "periods": {"type": "array", "items": {"type": "array", "items": _RATIO}},
                        "radius": _POS,
                        "level": _NUMBER,
                        "num_scales": {"type": "integer", "minimum": 1},
                    },
                },
                "scales": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["gamma"],
                    "properties": {"gamma": {"type": "array", "minItems": 1, "items": {"type": "array", "items": _RATIO}}},
                },
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda_min": _POS,
                "lambda0": _POS,
                "cells": {"type": "integer", "minimum": 8},
                "tol": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
                "scheme": {"enum": ["semi-lagrangian", "lax-friedrichs"]},
                "p_radius": _POS,
                "p_nodes": {"type": "integer", "minimum": 2},
                "p": {"type": "array", "items": _NUMBER},
                "box": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"R": _POS, "h": _POS, "lambda": _POS},
                },
            },
        },
        "resonance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bound": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "minimum": 0},
                "budget": {"type": "integer", "minimum": 1},
            },
        },
        "average": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "y0": {"type": "array", "items": {"type": "array", "items": _NUMBER}},
                "lambda": _POS,
                "horizon": _POS,
                "dt": _POS,
                "policy": {"enum": ["constant-controls", "greedy-from-cell-solution"]},
            },
        },
        "homogenize": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps_schedule": {"type": "array", "minItems": 2, "items": _POS},
                "mu": _POS,
                "horizon": _POS,
                "u0": {"enum": ["cos", "cone", "zero"]},
                "cells_per_eps": {"type": "integer", "minimum": 1},
                "p_radius": _POS,
                "boundary_width": {"type": "number", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["json", "csv"]}, "uniqueItems": True},
            },
        },
    },
}

INITIAL_DATA = {
    "cos": lambda x: np.cos(2.0 * np.pi * x[..., 0]),
    "cone": lambda x: -np.abs(x[..., 0] - 0.5),
    "zero": lambda x: np.zeros(x.shape[:-1]),
}

_SQRT = re.compile(r"^\s*sqrt\(\s*([0-9.]+)\s*\)\s*$")


def parse_value(v):
    """Expand ``"sqrt(n)"``; leave ``"p/q"`` strings and numbers to the scale parser."""
    if isinstance(v, str):
        m = _SQRT.match(v)
        if m:
            return math.sqrt(float(m.group(1)))
    return v


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate(data: dict) -> None:
    """Raise :class:`InvalidInputError` naming the first offending key."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(validator.iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errs:
        e = errs[0]
        ptr = _pointer(e.absolute_path)
        if e.validator == "additionalProperties":
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            if extra:
                ptr = _pointer(list(e.absolute_path) + [extra[0]])
        err = InvalidInputError(f"{ptr}: {e.message}")
        err.pointer = ptr
        raise err
    _semantic_checks(data)


def _fail(ptr: str, msg: str):
    err = InvalidInputError(f"{ptr}: {msg}")
    err.pointer = ptr
    raise err


def _semantic_checks(data: dict) -> None:
    prob = data["problem"]
    d = prob["dim"]
    if "x" in prob and len(prob["x"]) != d:
        _fail("/problem/x", f"needs {d} entries")
    pot = prob["potential"]
    kind = pot["kind"]
    if kind in ("trig", "quasi-periodic") and "components" not in pot:
        _fail("/problem/potential/components", f"required for kind {kind!r}")
    if kind == "quasi-periodic":
        if "periods" not in pot:
            _fail("/problem/potential/periods", "required for kind 'quasi-periodic'")
        if len(pot["periods"]) != len(pot["components"]):
            _fail("/problem/potential/periods", "needs one period vector per component")
    if kind == "constant" and "value" not in pot:
        _fail("/problem/potential/value", "required for kind 'constant'")
    if prob["family"] == "power" and "theta" not in prob:
        _fail("/problem/theta", "required for the power family")
    sol = data.get("solver", {})
    if "p" in sol and len(sol["p"]) != d:
        _fail("/solver/p", f"needs {d} entries")
    lam0, lmin = sol.get("lambda0", 1.0), sol.get("lambda_min", 1e-3)
    if lmin > lam0:
        _fail("/solver/lambda_min", "must not exceed lambda0")
    hom = data.get("homogenize", {})
    if hom:
        eps = hom.get("eps_schedule", [])
        if any(b >= a for a, b in zip(eps, eps[1:])):
            _fail("/homogenize/eps_schedule", "must be strictly decreasing")
        if ("mu" in hom) and ("horizon" in hom):
            _fail("/homogenize/horizon", "give either mu or horizon, not both")


def load_text(text: str, source: str = "<string>") -> "RunConfig":
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        err = InvalidInputError(f"{source}: not valid TOML ({exc})")
        err.pointer = "/"
        raise err from exc
    validate(data)
    return RunConfig(data, source)


def load(path) -> "RunConfig":
    """Read and validate a configuration file."""
    path = Path(path)
    if not path.is_file():
        err = InvalidInputError(f"config file {str(path)!r} does not exist")
        err.pointer = "/"
        raise err
    return load_text(path.read_text(), str(path))


def _set(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


@dataclass
class RunConfig:
    """A validated configuration.

    Attributes
    ----------
    data : dict
        Parsed TOML.
    source : str
        Where it came from (for messages).
    """

    data: dict
    source: str = "<string>"
    overrides: dict = field(default_factory=dict)

    def with_overrides(self, **dotted) -> "RunConfig":
        """Copy with ``section.key`` values replaced and revalidated.

        ``None`` values are ignored, so optional command line flags can be
        passed straight through.
        """
        data = copy.deepcopy(self.data)
        used = {}
        for k, v in dotted.items():
            if v is None:
                continue
            key = k.replace("__", ".")
            _set(data, key, v)
            used[key] = v
        validate(data)
        return RunConfig(data, self.source, {**self.overrides, **used})

    # sections --------------------------------------------------------------
    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", DEFAULT_SEED))

    @property
    def dim(self) -> int:
        return int(self.data["problem"]["dim"])

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.data["problem"].get("x", [0.0] * self.dim), dtype=float)

    @property
    def potential_kind(self) -> str:
        return self.data["problem"]["potential"]["kind"]

    # model objects ---------------------------------------------------------
    def potential(self) -> PotentialSpec:
        pot = self.data["problem"]["potential"]
        d = self.dim
        kind = pot["kind"]
        if kind == "trig":
            return PotentialSpec.trig(d, pot["components"], pot.get("offset", 0.0))
        if kind == "constant":
            return PotentialSpec.constant(d, pot["value"], pot.get("num_scales", 1))
        if kind == "quasi-periodic":
            periods = [[parse_value(t) for t in row] for row in pot["periods"]]
            return PotentialSpec.quasi_periodic(d, pot["components"], periods, pot.get("offset", 0.0))
        return PotentialSpec.b1_well(d, pot.get("radius", 1.0), pot.get("level", 1.0))

    def closed_form(self) -> ClosedFormSpec:
        prob = self.data["problem"]
        return ClosedFormSpec(prob["family"], self.potential(), prob.get("coefficient", 1.0), prob.get("theta"))

    @property
    def p_radius(self) -> float:
        return float(self.section("solver").get("p_radius", 4.0))

    def quasi_periodic(self) -> QuasiPeriodicSpec:
        spec = self.closed_form()
        q = corrector_momentum_radius(spec, np.full(self.dim, self.p_radius))
        return QuasiPeriodicSpec.from_closed_form(spec, [[-q, q]] * self.dim)

    def scales(self) -> ScaleSystem:
        """Scale system of the torus problem.

        Quasi-periodic potentials take theirs from the period lift;
        otherwise ``[problem.scales]`` or a single scale.
        """
        if self.potential_kind == "quasi-periodic":
            return lift_quasi_periodic(self.quasi_periodic())[1]
        sc = self.data["problem"].get("scales")
        if sc is None:
            n = self.closed_form().num_scales if self.potential_kind != "b1-well" else 1
            return ScaleSystem([[1] * self.dim] * n)
        return ScaleSystem([[parse_value(v) for v in row] for row in sc["gamma"]])

    def torus_hamiltonian(self):
        """``(hamiltonian, scales)`` on the product torus."""
        if self.potential_kind == "b1-well":
            raise InvalidInputError("compactly deformed potentials do not live on a torus")
        if self.potential_kind == "quasi-periodic":
            return lift_quasi_periodic(self.quasi_periodic())
        spec = self.closed_form()
        sc = self.scales()
        if sc.N != spec.num_scales:
            err = InvalidInputError(f"/problem/scales/gamma: potential has {spec.num_scales} scales, gamma {sc.N} rows")
            err.pointer = "/problem/scales/gamma"
            raise err
        return spec, sc

    def schedule(self) -> list[float]:
        from .cell import default_schedule

        s = self.section("solver")
        return default_schedule(s.get("lambda_min", 1e-3), s.get("lambda0", 1.0))

    def solver_value(self, key: str, default):
        return self.section("solver").get(key, default)

    def to_json(self) -> dict:
        return {"source": self.source, "seed": self.seed, "overrides": self.overrides, "config": self.data}
