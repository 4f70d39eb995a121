"""Hamiltonian data model, evaluation and monotone discretization.

Two representations are supported.

* Control form: ``H(x, y, p) = sup_a { -<b(x, y, a), p> - g(x, y, a) }`` over a
  finite sampled control set.
* Closed form: ``a |p|^2 - V``, ``a |p| - V`` and ``|p|^m - V`` with a
  potential described by :class:`PotentialSpec`.

Callables follow one broadcasting convention throughout the package::

    drift(x, ys, alpha) -> array (..., d)
    cost(x, ys, alpha)  -> array (...)

where ``x`` has shape ``(..., d)``, ``ys`` has shape ``(..., N, d)`` (one row
per fast scale) and ``alpha`` is a single control sample of shape ``(k,)``.
Implementations should index with ``x[..., i]`` and ``ys[..., n, i]`` so that
a frozen ``x`` of shape ``(d,)`` broadcasts against a grid of ``ys``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, OutOfValidityError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

FAMILIES = ("quadratic", "eikonal", "power")


# ---------------------------------------------------------------------------
# control sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlSet:
    """Finite sample of a control set.

    Parameters
    ----------
    samples : ndarray, shape (M, k)
        Control points. Order matters: ties in a supremum go to the first
        maximizer.
    description : str
        ``"enumerated"``, ``"unit-ball-directions(M)"`` or ``"box-grid(M)"``.
    """

    samples: np.ndarray
    description: str = "enumerated"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise InvalidInputError("control set must be a non-empty list of equal-length vectors")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("control samples must be finite")
        if self.description.startswith("unit-ball") and np.any(np.linalg.norm(s, axis=1) > 1.0 + 1e-12):
            raise InvalidInputError("unit-ball-directions samples must have norm <= 1")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def enumerated(cls, samples) -> "ControlSet":
        return cls(np.asarray(samples, dtype=float), "enumerated")

    @classmethod
    def unit_ball_directions(cls, M: int, d: int = 2, include_origin: bool = True) -> "ControlSet":
        """Unit directions plus (optionally) the origin.

        In 1D the directions are ``{-1, +1}``. In 2D they are ``M`` equally
        spaced angles starting at 0, so the coordinate axes are always hit
        when ``M`` is a multiple of 4.
        """
        if d == 1:
            dirs = np.array([[-1.0], [1.0]])
        elif d == 2:
            if M < 3:
                raise InvalidInputError("need at least 3 directions in 2D")
            ang = TWO_PI * np.arange(M) / M
            dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        else:
            raise InvalidInputError("unit-ball directions are implemented for d <= 2; use an enumerated set")
        if include_origin:
            dirs = np.vstack([np.zeros((1, d)), dirs])
        return cls(dirs, f"unit-ball-directions({M if d > 1 else 2})")

    @classmethod
    def box_grid(cls, M: int, radius: float, d: int = 1) -> "ControlSet":
        """Tensor grid with ``M`` nodes per axis on ``[-radius, radius]^d``."""
        if M < 2 or not np.isfinite(radius) or radius <= 0:
            raise InvalidInputError("box grid needs M >= 2 and a finite positive radius")
        axis = np.linspace(-radius, radius, M)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return cls(pts, f"box-grid({M})")


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


def _as_terms(terms) -> np.ndarray:
    t = np.asarray(terms, dtype=float).reshape(-1, 4) if len(terms) else np.zeros((0, 4))
    return t


def _trig_sum(u: np.ndarray, terms: np.ndarray) -> np.ndarray:
    """Sum of ``A sin(2 pi k u_axis + phase)`` over rows ``(axis, k, A, phase)``.

    Shared by the quasi-periodic potential and its torus lift so that both
    produce bit-identical values on the diagonal.
    """
    out = np.zeros(u.shape[:-1])
    for axis, k, amp, phase in terms:
        out = out + amp * np.sin((TWO_PI * k) * u[..., int(axis)] + phase)
    return out


def _parse_number(v) -> Fraction | float:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, str):
        try:
            return Fraction(v.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidInputError(f"cannot parse number {v!r}") from exc
    return float(v)


@dataclass(frozen=True)
class PotentialSpec:
    """Potential ``V`` entering the closed-form Hamiltonians.

    Kinds
    -----
    ``trig``
        Torus-periodic: ``offset + sum_n sum_terms A sin(2 pi k y^n_axis + phase)``
        with one term list per fast scale ``n`` and integer frequencies.
    ``quasi-periodic``
        Function on ``R^d``: a sum of components, component ``n`` periodic
        with periods ``T^n_i``. Terms act on the normalized phase ``y_i/T^n_i``.
    ``b1-well``
        ``level * min(|y| / radius, 1)``: bounded, constant outside ``radius``.

    Use the ``trig``, ``quasi_periodic`` and ``b1_well`` constructors.
    """

    kind: str
    dim: int
    offset: float = 0.0
    components: tuple = ()
    periods: tuple = ()
    radius: float = 1.0
    level: float = 1.0

    def __post_init__(self):
        if self.kind not in ("trig", "quasi-periodic", "b1-well"):
            raise InvalidInputError(f"unknown potential kind {self.kind!r}")
        if self.dim < 1:
            raise InvalidInputError("dimension must be positive")
        comps = tuple(_as_terms(c) for c in self.components)
        for c in comps:
            if c.size and (np.any(c[:, 0] < 0) or np.any(c[:, 0] >= self.dim)):
                raise InvalidInputError("trig term axis out of range")
            if c.size and np.any(c[:, 1] != np.round(c[:, 1])):
                raise InvalidInputError("trig terms need integer frequencies (on the normalized phase)")
        object.__setattr__(self, "components", comps)
        if self.kind == "quasi-periodic":
            per = tuple(tuple(_parse_number(t) for t in row) for row in self.periods)
            if len(per) != len(comps) or any(len(r) != self.dim for r in per):
                raise InvalidInputError("need one period vector of length d per component")
            if any(float(t) <= 0 or not math.isfinite(float(t)) for r in per for t in r):
                raise InvalidInputError("periods must be positive and finite")
            object.__setattr__(self, "periods", per)
        if self.kind == "b1-well" and not (self.radius > 0):
            raise InvalidInputError("well radius must be positive")

    # constructors ---------------------------------------------------------
    @classmethod
    def trig(cls, dim: int, components: Sequence, offset: float = 0.0) -> "PotentialSpec":
        """Torus potential; ``components[n]`` lists ``(axis, k, A, phase)`` rows."""
        return cls("trig", dim, float(offset), tuple(components))

    @classmethod
    def constant(cls, dim: int, value: float, num_scales: int = 1) -> "PotentialSpec":
        return cls("trig", dim, float(value), tuple([] for _ in range(num_scales)))

    @classmethod
    def quasi_periodic(cls, dim: int, components: Sequence, periods: Sequence, offset: float = 0.0) -> "PotentialSpec":
        return cls("quasi-periodic", dim, float(offset), tuple(components), tuple(periods))

    @classmethod
    def b1_well(cls, dim: int = 1, radius: float = 1.0, level: float = 1.0) -> "PotentialSpec":
        """The compact-deformation well ``level * min(|y|/radius, 1)``."""
        return cls("b1-well", dim, 0.0, (), (), float(radius), float(level))

    # metadata -------------------------------------------------------------
    @property
    def periodic(self) -> bool:
        """True when the potential lives on the product torus."""
        return self.kind == "trig"

    @property
    def num_scales(self) -> int:
        return max(len(self.components), 1) if self.kind == "trig" else 1

    @property
    def inverse_periods(self) -> np.ndarray:
        """Float array ``1/T^n_i`` of shape (N, d) for quasi-periodic kinds."""
        return np.array([[float(1 / t) if isinstance(t, Fraction) else 1.0 / t for t in row] for row in self.periods])

    def bounds(self) -> tuple[float, float]:
        """Rigorous ``(inf, sup)`` bounds from the coefficients."""
        if self.kind == "b1-well":
            return (min(0.0, self.level), max(0.0, self.level))
        amp = sum(float(np.abs(c[:, 2]).sum()) for c in self.components)
        return (self.offset - amp, self.offset + amp)

    @property
    def sup_abs(self) -> float:
        lo, hi = self.bounds()
        return max(abs(lo), abs(hi))

    @property
    def decay_radius(self) -> float | None:
        """Radius beyond which a ``b1-well`` potential is constant."""
        return self.radius if self.kind == "b1-well" else None

    # evaluation -----------------------------------------------------------
    def __call__(self, ys: np.ndarray) -> np.ndarray:
        """Evaluate at fast variables ``ys`` of shape (..., N, d)."""
        ys = np.asarray(ys, dtype=float)
        if ys.ndim < 2 or ys.shape[-1] != self.dim:
            raise InvalidInputError("ys must have shape (..., N, d)")
        if self.kind == "trig":
            if ys.shape[-2] != self.num_scales:
                raise InvalidInputError(f"expected {self.num_scales} fast scales, got {ys.shape[-2]}")
            out = np.full(ys.shape[:-2], self.offset)
            for n, terms in enumerate(self.components):
                out = out + _trig_sum(ys[..., n, :], terms)
            return out
        if ys.shape[-2] != 1:
            raise InvalidInputError("potentials on R^d take a single fast variable")
        y = ys[..., 0, :]
        if self.kind == "b1-well":
            r = np.sqrt(np.sum(y * y, axis=-1))
            return self.level * np.minimum(r / self.radius, 1.0)
        inv = self.inverse_periods
        out = np.full(y.shape[:-1], self.offset)
        for n, terms in enumerate(self.components):
            out = out + _trig_sum(y * inv[n], terms)
        return out

    def lifted(self) -> "PotentialSpec":
        """Torus potential on ``T^{d x N}`` whose diagonal restriction is ``self``.

        Factor ``n`` carries component ``n`` acting on its normalized phase,
        so the diagonal values agree bit for bit.
        """
        if self.kind != "quasi-periodic":
            raise InvalidInputError("only quasi-periodic potentials can be lifted")
        return PotentialSpec.trig(self.dim, self.components, self.offset)


# ---------------------------------------------------------------------------
# Hamiltonian specs
# ---------------------------------------------------------------------------


def _coefficient_values(coef, x, ys):
    if callable(coef):
        return np.asarray(coef(x, ys), dtype=float)
    return float(coef)


@dataclass(frozen=True)
class ClosedFormSpec:
    """Closed-form Hamiltonian.

    ``quadratic``: ``a |p|^2 - V``; ``eikonal``: ``a |p| - V``;
    ``power``: ``|p|^theta - V`` with ``theta`` in {1, 2}.

    Parameters
    ----------
    family : str
    potential : PotentialSpec
    coefficient : float or callable ``(x, ys) -> array``
        Must be bounded below by ``coefficient_bounds[0] > 0``.
    theta : int, optional
        Coercivity exponent; fixed by the family except for ``power``.
    coefficient_bounds : (float, float), optional
        Required when ``coefficient`` is callable.
    """

    family: str
    potential: PotentialSpec
    coefficient: float | Callable = 1.0
    theta: int | None = None
    coefficient_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        theta = {"quadratic": 2, "eikonal": 1}.get(self.family, self.theta)
        if theta not in (1, 2):
            raise InvalidInputError("coercivity exponent must be 1 or 2")
        if self.theta is not None and self.theta != theta:
            raise InvalidInputError(f"family {self.family} has exponent {theta}")
        object.__setattr__(self, "theta", theta)
        if self.family == "power" and not (not callable(self.coefficient) and float(self.coefficient) == 1.0):
            raise InvalidInputError("the power family has unit coefficient")
        if callable(self.coefficient):
            if self.coefficient_bounds is None:
                raise InvalidInputError("callable coefficients need coefficient_bounds=(a0, a1)")
            a0, a1 = self.coefficient_bounds
        else:
            a0 = a1 = float(self.coefficient)
        if not (a0 > 0) or a1 < a0:
            raise InvalidInputError("coefficient lower bound a0 must be positive")
        object.__setattr__(self, "coefficient_bounds", (float(a0), float(a1)))

    @property
    def dim(self) -> int:
        return self.potential.dim

    @property
    def num_scales(self) -> int:
        return self.potential.num_scales

    @property
    def periodic(self) -> bool:
        return self.potential.periodic

    @property
    def a0(self) -> float:
        return self.coefficient_bounds[0]

    def values(self, x, ys, p) -> np.ndarray:
        """Vectorized evaluation, ``p`` of shape (..., d)."""
        p = np.asarray(p, dtype=float)
        a = _coefficient_values(self.coefficient, x, ys)
        norm2 = np.sum(p * p, axis=-1)
        kin = norm2 if self.theta == 2 else np.sqrt(norm2)
        return a * kin - self.potential(ys)


@dataclass(frozen=True)
class ControlHamiltonianSpec:
    """Control-form Hamiltonian ``sup_a { -<b, p> - g }``.

    Parameters
    ----------
    dim, num_scales : int
    drift, cost : callable
        See the module docstring for the broadcasting convention.
    controls : ControlSet
    lipschitz_L : callable ``(x, alpha) -> float``, optional
        Lipschitz constant of ``b, g`` in the fast variables.
    sup_drift, sup_cost : float
        Bounds of ``|b|`` and ``|g|``; used for a-priori bounds.
    periodic : bool
        Whether ``b, g`` are 1-periodic in every fast variable.
    """

    dim: int
    num_scales: int
    drift: Callable
    cost: Callable
    controls: ControlSet
    sup_drift: float
    sup_cost: float
    lipschitz_L: Callable | None = None
    periodic: bool = True
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1 or self.num_scales < 1:
            raise InvalidInputError("dim and num_scales must be positive")
        if not isinstance(self.controls, ControlSet):
            raise InvalidInputError("controls must be a ControlSet")

    def fields(self, x, ys) -> tuple[np.ndarray, np.ndarray]:
        """Drift and cost for every control at every point.

        Returns arrays of shape (M, ..., d) and (M, ...).
        """
        ys = np.asarray(ys, dtype=float)
        bs, gs = [], []
        for a in self.controls.samples:
            b = np.broadcast_to(np.asarray(self.drift(x, ys, a), dtype=float), ys.shape[:-2] + (self.dim,))
            g = np.broadcast_to(np.asarray(self.cost(x, ys, a), dtype=float), ys.shape[:-2])
            bs.append(b)
            gs.append(g)
        return np.stack(bs), np.stack(gs)

    def values(self, x, ys, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        b, g = self.fields(x, ys)
        return np.max(-np.sum(b * p, axis=-1) - g, axis=0)


HamiltonianSpec = ControlHamiltonianSpec | ClosedFormSpec


def _check_dims(spec, x, ys, p):
    x = np.asarray(x, dtype=float).reshape(-1)
    ys = np.asarray(ys, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    if ys.ndim == 1 and spec.num_scales == 1:
        ys = ys[None, :]
    if x.shape != (spec.dim,) or p.shape != (spec.dim,) or ys.shape != (spec.num_scales, spec.dim):
        raise InvalidInputError(
            f"dimension mismatch: expected x, p of length {spec.dim} and {spec.num_scales} fast points"
        )
    return x, ys, p


def eval_hamiltonian(spec: HamiltonianSpec, x, ys, p) -> float:
    """Evaluate ``H(x, y^1..y^N, p)`` at a single point.

    Parameters
    ----------
    spec : ControlHamiltonianSpec or ClosedFormSpec
    x : array_like, shape (d,)
    ys : array_like, shape (N, d)
    p : array_like, shape (d,)

    Returns
    -------
    float
        The supremum over the sampled controls (control form) or the closed
        form value.
    """
    x, ys, p = _check_dims(spec, x, ys, p)
    return float(spec.values(x, ys, p))


def hamiltonian_values(spec: HamiltonianSpec, x, ys, p) -> np.ndarray:
    """Vectorized evaluation; ``ys`` is (..., N, d) and ``p`` broadcasts to (..., d)."""
    return np.asarray(spec.values(x, ys, p), dtype=float)


# ---------------------------------------------------------------------------
# closed form -> control form
# ---------------------------------------------------------------------------


def _box_radius(p_box) -> float:
    pb = np.asarray(p_box, dtype=float)
    if pb.ndim == 1:
        pb = pb.reshape(1, 2)
    if pb.shape[-1] != 2 or not np.all(np.isfinite(pb)):
        raise InvalidInputError("p_box must be a bounded box [[lo, hi], ...]")
    return float(np.max(np.abs(pb)))


def closed_to_control(
    spec: ClosedFormSpec,
    p_box,
    *,
    directions: int = 64,
    grid_nodes: int | None = None,
) -> tuple[ControlHamiltonianSpec, float]:
    """Rewrite a closed-form Hamiltonian in control form.

    Parameters
    ----------
    spec : ClosedFormSpec
    p_box : array_like, shape (d, 2)
        Momentum box on which the rewrite must be accurate.
    directions : int
        Number of unit directions for the eikonal family in 2D.
    grid_nodes : int, optional
        Nodes per axis of the quadratic control grid. By default the grid
        step is about 0.05 in 1D and 0.25 in 2D.

    Returns
    -------
    (ControlHamiltonianSpec, float)
        The control-form spec and a bound on ``|H_control - H_closed|`` over
        ``p_box``.
    """
    R = _box_radius(p_box)
    d = spec.dim
    pot = spec.potential
    coef = spec.coefficient
    a0, a1 = spec.coefficient_bounds
    vmax = pot.sup_abs

    if spec.theta == 1:
        controls = ControlSet.unit_ball_directions(directions, d)
        if d == 1:
            err = 0.0
        else:
            err = a1 * R * math.sqrt(d) * (1.0 - math.cos(math.pi / directions))

        def drift(x, ys, a, _c=coef):
            return _coefficient_values(_c, x, ys)[..., None] * a if callable(_c) else float(_c) * a

        def cost(x, ys, a, _p=pot):
            return _p(ys)

        sup_b = a1
        sup_g = vmax
    else:
        radius = 2.0 * a1 * R
        if radius == 0.0:
            radius = 1.0
        if grid_nodes is None:
            # round the radius up to a whole number of steps so that every
            # multiple of the step is a control sample
            step = 0.05 if d == 1 else 0.25
            grid_nodes = 2 * int(math.ceil(radius / step - 1e-9)) + 1
            radius = step * (grid_nodes - 1) / 2
        controls = ControlSet.box_grid(grid_nodes, radius, d)
        step = 2.0 * radius / (grid_nodes - 1)
        # per-axis loss of the best grid point is at most (step/2)^2/(4 a0)
        err = d * step * step / (16.0 * a0)

        def drift(x, ys, a):
            return a

        def cost(x, ys, a, _c=coef, _p=pot):
            return _p(ys) + np.sum(np.asarray(a) ** 2, axis=-1) / (4.0 * _coefficient_values(_c, x, ys))

        sup_b = radius * math.sqrt(d)
        sup_g = vmax + d * radius * radius / (4.0 * a0)

    ctrl = ControlHamiltonianSpec(
        dim=d,
        num_scales=spec.num_scales,
        drift=drift,
        cost=cost,
        controls=controls,
        sup_drift=sup_b,
        sup_cost=sup_g,
        lipschitz_L=None,
        periodic=spec.periodic,
        name=f"{spec.family}-control",
        meta={"source": spec, "discretization_error": err, "p_radius": R},
    )
    return ctrl, err


def as_control(spec: HamiltonianSpec, p_box=None, **kw) -> tuple[ControlHamiltonianSpec, float]:
    """Return a control-form spec (identity for control forms)."""
    if isinstance(spec, ControlHamiltonianSpec):
        return spec, 0.0
    if p_box is None:
        raise InvalidInputError("a momentum box is needed to discretize a closed-form Hamiltonian")
    return closed_to_control(spec, p_box, **kw)


def corrector_momentum_radius(spec: HamiltonianSpec, p) -> float:
    """A priori bound on ``|p + Dw|`` for a cell problem at momentum ``p``.

    For closed forms, ``a0 |q|^theta <= a1 |p|^theta + osc V``; control forms
    need no bound (their control set is fixed).
    """
    pn = float(np.max(np.abs(np.atleast_2d(np.asarray(p, dtype=float)))))
    pn *= math.sqrt(spec.dim)
    if isinstance(spec, ControlHamiltonianSpec):
        return pn
    lo, hi = spec.potential.bounds()
    a0, a1 = spec.coefficient_bounds
    q = ((a1 * pn**spec.theta + (hi - lo)) / a0) ** (1.0 / spec.theta)
    return 1.05 * q + 0.05


# ---------------------------------------------------------------------------
# quasi-periodic Hamiltonians and their lift
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuasiPeriodicComponent:
    """One periodic piece of a quasi-periodic Hamiltonian.

    ``drift`` and ``cost`` receive the normalized phase ``u = y / T``
    (1-periodic) in place of ``y``; the shape convention is otherwise the
    usual one with a single fast row.
    """

    periods: tuple
    drift: Callable
    cost: Callable


@dataclass(frozen=True)
class QuasiPeriodicSpec:
    """Sum of periodic Hamiltonians with different period lattices.

    The supremum is taken over the shared control set of the summed drift
    and cost. This coincides with the sum of the componentwise suprema when
    at most one component depends on the control, which is the case for the
    closed-form constructors; :meth:`separability_gap` measures the
    difference otherwise.
    """

    dim: int
    components: tuple
    controls: ControlSet
    sup_drift: float
    sup_cost: float

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidInputError("need at least one component")
        fixed = []
        for c in comps:
            per = tuple(_parse_number(t) for t in c.periods)
            if len(per) != self.dim:
                raise InvalidInputError("each component needs d periods")
            if any(float(t) <= 0 or not math.isfinite(float(t)) for t in per):
                raise InvalidInputError("periods must be positive and finite")
            fixed.append(QuasiPeriodicComponent(per, c.drift, c.cost))
        object.__setattr__(self, "components", tuple(fixed))

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def inverse_periods(self) -> np.ndarray:
        return np.array(
            [[float(1 / t) if isinstance(t, Fraction) else 1.0 / t for t in c.periods] for c in self.components]
        )

    @classmethod
    def from_closed_form(
        cls, spec: ClosedFormSpec, p_box=None, *, directions: int = 64, grid_nodes: int | None = None
    ) -> "QuasiPeriodicSpec":
        """Quasi-periodic spec for ``a|p|^theta - V`` with a quasi-periodic ``V``.

        The first component carries the kinetic part; every component
        carries its own slice of the potential.
        """
        pot = spec.potential
        if pot.kind != "quasi-periodic":
            raise InvalidInputError("need a quasi-periodic potential")
        if callable(spec.coefficient):
            raise InvalidInputError("quasi-periodic closed forms need a constant coefficient")
        if p_box is None:
            p_box = [[-1.0, 1.0]] * spec.dim
        # build the kinetic part on a dummy constant potential
        kin_spec = ClosedFormSpec(spec.family, PotentialSpec.constant(spec.dim, 0.0), spec.coefficient, spec.theta)
        kin, _ = closed_to_control(kin_spec, p_box, directions=directions, grid_nodes=grid_nodes)
        comps = []
        for n, terms in enumerate(pot.components):
            off = pot.offset if n == 0 else 0.0

            def cost(x, u, a, _t=terms, _off=off, _n=n, _kin=kin):
                base = _off + _trig_sum(u[..., 0, :], _t)
                if _n == 0:
                    base = base + _kin.cost(x, u, a)
                return base

            if n == 0:
                drift = kin.drift
            else:
                def drift(x, u, a, _d=spec.dim):
                    return np.zeros(u.shape[:-2] + (_d,))
            comps.append(QuasiPeriodicComponent(tuple(pot.periods[n]), drift, cost))
        return cls(spec.dim, tuple(comps), kin.controls, kin.sup_drift, kin.sup_cost + pot.sup_abs)

    def _plane_fields(self, x, y, a):
        inv = self.inverse_periods
        b = 0.0
        g = 0.0
        for n, c in enumerate(self.components):
            u = (y * inv[n])[..., None, :]
            b = b + np.asarray(c.drift(x, u, a), dtype=float)
            g = g + np.asarray(c.cost(x, u, a), dtype=float)
        return b, g

    def as_plane_spec(self) -> ControlHamiltonianSpec:
        """Control-form spec on ``R^d`` (single fast variable, not periodic)."""

        def drift(x, ys, a):
            b, _ = self._plane_fields(x, ys[..., 0, :], a)
            return np.broadcast_to(b, ys.shape[:-2] + (self.dim,))

        def cost(x, ys, a):
            _, g = self._plane_fields(x, ys[..., 0, :], a)
            return g

        return ControlHamiltonianSpec(
            self.dim, 1, drift, cost, self.controls, self.sup_drift, self.sup_cost,
            periodic=False, name="quasi-periodic", meta={"source": self},
        )

    def separability_gap(self, x, rng: np.random.Generator, samples: int = 64, p_scale: float = 2.0) -> float:
        """Max sampled ``|sum_n sup_a F^n - sup_a sum_n F^n|``."""
        x = np.asarray(x, dtype=float)
        y = rng.uniform(-10, 10, size=(samples, self.dim))
        p = rng.uniform(-p_scale, p_scale, size=(samples, self.dim))
        inv = self.inverse_periods
        total = np.full(samples, -np.inf)
        per_comp = np.full((self.num_components, samples), -np.inf)
        for a in self.controls.samples:
            acc = 0.0
            for n, c in enumerate(self.components):
                u = (y * inv[n])[:, None, :]
                v = -np.sum(np.broadcast_to(c.drift(x, u, a), p.shape) * p, axis=-1) - c.cost(x, u, a)
                per_comp[n] = np.maximum(per_comp[n], v)
                acc = acc + v
            total = np.maximum(total, acc)
        return float(np.max(np.abs(per_comp.sum(axis=0) - total)))


def lift_quasi_periodic(F: QuasiPeriodicSpec):
    """Lift a quasi-periodic Hamiltonian to the product torus.

    Component ``n`` becomes 1-periodic in its own factor ``y^n`` through the
    normalized phase, and the scale matrices are ``Gamma^n = diag(1/T^n)``.
    On the diagonal ``y^n = Gamma^n y`` the lifted drift and cost coincide
    bit for bit with the summed components.

    Returns
    -------
    (ControlHamiltonianSpec, ScaleSystem)
    """
    from .scales import ScaleSystem

    for i in range(F.dim):
        t1 = F.components[0].periods[i]
        if float(t1) != 1.0:
            raise InvalidInputError("the first component must have unit periods; rescale y first")
    gamma = []
    for c in F.components:
        gamma.append([(1 / t) if isinstance(t, Fraction) else 1.0 / t for t in c.periods])
    scales = ScaleSystem(gamma)
    N = F.num_components

    def drift(x, ys, a):
        b = 0.0
        for n, c in enumerate(F.components):
            b = b + np.asarray(c.drift(x, ys[..., n : n + 1, :], a), dtype=float)
        return np.broadcast_to(b, ys.shape[:-2] + (F.dim,))

    def cost(x, ys, a):
        g = 0.0
        for n, c in enumerate(F.components):
            g = g + np.asarray(c.cost(x, ys[..., n : n + 1, :], a), dtype=float)
        return g

    lifted = ControlHamiltonianSpec(
        F.dim, N, drift, cost, F.controls, F.sup_drift, F.sup_cost,
        periodic=True, name="quasi-periodic-lift", meta={"source": F},
    )
    if N > 1:
        gap = F.separability_gap(np.zeros(F.dim), np.random.default_rng(0))
        if gap > 1e-12:
            warnings.warn(
                f"components share the control non-separably (gap {gap:.3g}); "
                "the lift uses the supremum of the summed fields",
                stacklevel=2,
            )
    return lifted, scales


def diagonal_identity_defect(F: QuasiPeriodicSpec, lifted: ControlHamiltonianSpec, scales, x, ys_plane) -> float:
    """Max ``|lifted(Gamma y) - F(y)|`` over sample points and controls."""
    y = np.asarray(ys_plane, dtype=float).reshape(-1, F.dim)
    diag = y[:, None, :] * scales.as_array()[None, :, :]
    plane = F.as_plane_spec()
    bl, gl = lifted.fields(x, diag)
    bp, gp = plane.fields(x, y[:, None, :])
    return float(max(np.max(np.abs(bl - bp)), np.max(np.abs(gl - gp))))


# ---------------------------------------------------------------------------
# Lax-Friedrichs flux
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NumericalHamiltonianParams:
    """Artificial viscosity ``sigma_i`` valid on a momentum box.

    Parameters
    ----------
    dissipation : ndarray, shape (d,)
    p_box : ndarray, shape (d, 2)
    """

    dissipation: np.ndarray
    p_box: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.dissipation, dtype=float).reshape(-1)
        b = np.asarray(self.p_box, dtype=float).reshape(-1, 2)
        if np.any(s < 0) or b.shape[0] != s.shape[0] or np.any(b[:, 0] > b[:, 1]):
            raise InvalidInputError("dissipation must be nonnegative and p_box well formed")
        object.__setattr__(self, "dissipation", s)
        object.__setattr__(self, "p_box", b)


def estimate_dissipation(
    spec: HamiltonianSpec,
    p_box,
    x=None,
    *,
    samples: int = 2048,
    safety: float = 1.2,
    seed: int = 0,
    fd_step: float = 1e-5,
    gamma: np.ndarray | None = None,
) -> NumericalHamiltonianParams:
    """Estimate ``sigma_i >= sup |dH/dp_i|`` by central differences.

    Parameters
    ----------
    gamma : ndarray, optional
        Not used for the estimate itself; kept for symmetry with callers that
        scale the result per torus axis.
    """
    rng = np.random.default_rng(seed)
    d = spec.dim
    pb = np.asarray(p_box, dtype=float).reshape(d, 2)
    if x is None:
        x = np.zeros(d)
    x = np.asarray(x, dtype=float)
    if spec.periodic:
        ys = rng.uniform(0, 1, size=(samples, spec.num_scales, d))
    else:
        ys = rng.uniform(-8, 8, size=(samples, 1, d))
    p = rng.uniform(pb[:, 0], pb[:, 1], size=(samples, d))
    # include box corners and axes so extremes are probed
    sig = np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = fd_step
        hp = hamiltonian_values(spec, x, ys, p + e)
        hm = hamiltonian_values(spec, x, ys, p - e)
        sig[i] = np.max(np.abs(hp - hm)) / (2 * fd_step)
    if isinstance(spec, ClosedFormSpec):
        # exact bound: |dH/dp_i| <= a1 * theta * R^(theta-1)
        R = float(np.max(np.abs(pb))) * math.sqrt(d)
        sig = np.maximum(sig, spec.coefficient_bounds[1] * spec.theta * R ** (spec.theta - 1))
    elif isinstance(spec, ControlHamiltonianSpec):
        sig = np.maximum(sig, spec.sup_drift)
    return NumericalHamiltonianParams(safety * sig + 1e-12, pb)


def lf_numerical_hamiltonian(spec: HamiltonianSpec, params: NumericalHamiltonianParams, x, ys, p_minus, p_plus):
    """Lax-Friedrichs flux ``H(x, ys, (p- + p+)/2) - sum_i sigma_i (p+_i - p-_i)/2``.

    Works pointwise or vectorized (leading axes of ``ys``, ``p_minus`` and
    ``p_plus`` broadcast).

    Raises
    ------
    OutOfValidityError
        If any one-sided difference leaves ``params.p_box``.
    """
    pm = np.asarray(p_minus, dtype=float)
    pp = np.asarray(p_plus, dtype=float)
    box = params.p_box
    for arr, nm in ((pm, "p_minus"), (pp, "p_plus")):
        bad = (arr < box[:, 0]) | (arr > box[:, 1])
        if np.any(bad):
            worst = float(np.max(np.maximum(box[:, 0] - arr, arr - box[:, 1])))
            raise OutOfValidityError(f"{nm} leaves the validity box by {worst:.3g}")
    ys = np.asarray(ys, dtype=float)
    scalar = ys.ndim == 2 and pm.ndim == 1
    h = hamiltonian_values(spec, x, ys, 0.5 * (pm + pp))
    out = h - np.sum(params.dissipation * (pp - pm), axis=-1) / 2.0
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# sampled structural checks
# ---------------------------------------------------------------------------


def check_periodicity(spec: HamiltonianSpec, rng: np.random.Generator, samples: int = 256) -> float:
    """Max sampled ``|phi(y + e_i) - phi(y)|`` over drift, cost (or H)."""
    if not spec.periodic:
        raise InvalidInputError("spec is not torus-periodic")
    d, N = spec.dim, spec.num_scales
    x = rng.uniform(-1, 1, size=d)
    ys = rng.uniform(-3, 3, size=(samples, N, d))
    worst = 0.0
    for n in range(N):
        for i in range(d):
            shifted = ys.copy()
            shifted[:, n, i] += 1.0
            if isinstance(spec, ControlHamiltonianSpec):
                b0, g0 = spec.fields(x, ys)
                b1, g1 = spec.fields(x, shifted)
                worst = max(worst, float(np.max(np.abs(b1 - b0))), float(np.max(np.abs(g1 - g0))))
            else:
                p = rng.uniform(-2, 2, size=(samples, d))
                worst = max(worst, float(np.max(np.abs(spec.values(x, shifted, p) - spec.values(x, ys, p)))))
    return worst


def check_lipschitz(spec: ControlHamiltonianSpec, rng: np.random.Generator, samples: int = 256) -> float:
    """Smallest slack of the Lipschitz contract on sampled pairs (>= 0 means ok)."""
    if spec.lipschitz_L is None:
        raise InvalidInputError("spec has no Lipschitz function")
    d, N = spec.dim, spec.num_scales
    x = rng.uniform(-1, 1, size=d)
    ys = rng.uniform(0, 1, size=(samples, N, d))
    ys2 = ys + rng.normal(scale=1e-2, size=ys.shape)
    dist = np.sqrt(np.sum((ys - ys2) ** 2, axis=(-1, -2)))
    slack = np.inf
    for a in spec.controls.samples:
        L = float(spec.lipschitz_L(x, a))
        db = np.sqrt(np.sum((spec.drift(x, ys, a) - spec.drift(x, ys2, a)) ** 2, axis=-1))
        dg = np.abs(spec.cost(x, ys, a) - spec.cost(x, ys2, a))
        slack = min(slack, float(np.min(L * dist - np.maximum(db, dg))))
    return slack
