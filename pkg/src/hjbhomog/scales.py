"""Scale systems, the non-resonance test and orbit-density diagnostics.

A scale system stores the ratios ``gamma^n_i = lim eps^1_1 / eps^n_i`` as an
``N x d`` array with a unit first row, so that the fast variables satisfy
``y^n = Gamma^n y^1`` on the diagonal. Ratios are exact
:class:`fractions.Fraction` values or floats (treated as irrational
candidates).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetExceededError, InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_BOUND = 10_000
DEFAULT_TOL = 1e-8
DEFAULT_BUDGET = 10_000_000

INTERPRETATION_NOTE = (
    "non-resonance is tested as rational independence of {1} together with the "
    "ratios of scales n >= 2 on each axis; the trivial relation carried by the "
    "identity first scale is excluded"
)


def parse_ratio(v) -> Fraction | float:
    """Parse ``"p/q"`` strings and integers exactly, everything else as float."""
    if isinstance(v, Fraction):
        return v
    if isinstance(v, bool):
        raise InvalidInputError("booleans are not scale ratios")
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, str):
        txt = v.strip()
        try:
            return Fraction(txt) if "/" in txt or txt.lstrip("+-").isdigit() else float(txt)
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidInputError(f"cannot parse scale ratio {v!r}") from exc
    return float(v)


@dataclass(frozen=True)
class ScaleSystem:
    """Scale ratios ``gamma^n_i`` with unit first row.

    Parameters
    ----------
    gamma : sequence of N rows of d ratios
        Entries may be ``Fraction``, int, ``"p/q"`` strings or floats.
    """

    gamma: tuple

    def __post_init__(self):
        rows = tuple(tuple(parse_ratio(v) for v in row) for row in self.gamma)
        if not rows or not rows[0]:
            raise InvalidInputError("scale system needs at least one row")
        d = len(rows[0])
        if any(len(r) != d for r in rows):
            raise InvalidInputError("all scale rows must have the same length")
        for r in rows:
            for v in r:
                fv = float(v)
                if fv == 0.0 or not math.isfinite(fv):
                    raise InvalidInputError("scale ratios must be finite and nonzero")
        if any(float(v) != 1.0 for v in rows[0]):
            raise InvalidInputError("the first scale row must be all ones (normalization)")
        object.__setattr__(self, "gamma", rows)

    @classmethod
    def single(cls, d: int) -> "ScaleSystem":
        return cls([[1] * d])

    @property
    def N(self) -> int:
        return len(self.gamma)

    @property
    def d(self) -> int:
        return len(self.gamma[0])

    def as_array(self) -> np.ndarray:
        """Float array of shape (N, d)."""
        return np.array([[float(v) for v in r] for r in self.gamma])

    def is_exact(self, n: int, i: int) -> bool:
        return isinstance(self.gamma[n][i], Fraction)

    def epsilon_rule(self, eps1: float) -> np.ndarray:
        return realize_epsilon(self, eps1)

    def to_json(self) -> list:
        return [[str(v) if isinstance(v, Fraction) else float(v) for v in r] for r in self.gamma]


@dataclass
class ResonanceReport:
    """Outcome of the non-resonance search.

    Attributes
    ----------
    resonant : list of bool
        One flag per axis.
    witness : list
        ``(z^2, ..., z^N, m)`` per resonant axis, ``None`` otherwise.
    search_bound : int
    arithmetic : str
        ``"exact"`` or ``"floating(tol)"``.
    searched_shell : list of int
        Largest max-norm shell fully searched per axis.
    """

    resonant: list
    witness: list
    search_bound: int
    arithmetic: str
    searched_shell: list = field(default_factory=list)
    note: str = INTERPRETATION_NOTE

    @property
    def any_resonant(self) -> bool:
        return any(self.resonant)

    def to_json(self) -> dict:
        return {
            "resonant": list(self.resonant),
            "any_resonant": self.any_resonant,
            "witness": [list(w) if w is not None else None for w in self.witness],
            "search_bound": self.search_bound,
            "arithmetic": self.arithmetic,
            "searched_shell": list(self.searched_shell),
            "note": self.note,
        }


def _shell(k: int, s: int) -> np.ndarray:
    """Nonzero integer vectors of max-norm ``s`` in ``Z^k``, first nonzero entry positive."""
    if k == 1:
        return np.array([[s]])
    rng = np.arange(-s, s + 1)
    mesh = np.stack(np.meshgrid(*([rng] * k), indexing="ij"), axis=-1).reshape(-1, k)
    mesh = mesh[np.max(np.abs(mesh), axis=1) == s]
    first = mesh[np.arange(len(mesh)), np.argmax(mesh != 0, axis=1)]
    return mesh[first > 0]


def check_condition_a(
    scales: ScaleSystem,
    bound: int = DEFAULT_BOUND,
    tol: float = DEFAULT_TOL,
    budget: int = DEFAULT_BUDGET,
) -> ResonanceReport:
    """Search for integer relations among the scale ratios on each axis.

    For each axis ``i`` look for a nonzero ``(z^2, ..., z^N)`` with
    ``|z^n| <= bound`` such that ``sum_n gamma^n_i z^n`` is an integer ``m``.
    Exact rational ratios are decided exactly regardless of ``bound``.
    Floats are searched shell by shell in the max norm and the search stops
    at the first relation found.

    Raises
    ------
    BudgetExceededError
        When the float search would visit more than ``budget`` tuples; the
        partial report is attached.
    """
    if bound < 1:
        raise InvalidInputError("search bound must be at least 1")
    if tol < 0:
        raise InvalidInputError("tolerance must be nonnegative")
    N, d = scales.N, scales.d
    all_exact = all(scales.is_exact(n, i) for n in range(1, N) for i in range(d))
    if tol == 0 and not all_exact:
        raise InvalidInputError("tol = 0 is only allowed for exact rational ratios")
    arithmetic = "exact" if all_exact else f"floating({tol:g})"
    report = ResonanceReport([False] * d, [None] * d, bound, arithmetic, [0] * d)
    if N == 1:
        return report
    k = N - 1
    visited = 0
    for i in range(d):
        g = [scales.gamma[n][i] for n in range(1, N)]
        exact_idx = [j for j, v in enumerate(g) if isinstance(v, Fraction)]
        if exact_idx:
            # any rational ratio is dependent with 1: q * (p/q) = p
            j = exact_idx[0]
            z = [0] * k
            z[j] = g[j].denominator
            report.resonant[i] = True
            report.witness[i] = tuple(z) + (g[j].numerator,)
            report.searched_shell[i] = bound
            continue
        gv = np.array([float(v) for v in g])
        for s in range(1, bound + 1):
            cand = _shell(k, s)
            visited += len(cand)
            if visited > budget:
                raise BudgetExceededError(
                    f"resonance search exceeded the budget of {budget} tuples at shell {s} on axis {i}",
                    partial=report,
                )
            vals = cand @ gv
            dev = np.abs(vals - np.round(vals))
            hit = np.flatnonzero(dev <= tol)
            if hit.size:
                z = cand[hit[0]]
                report.resonant[i] = True
                report.witness[i] = tuple(int(v) for v in z) + (int(np.round(vals[hit[0]])),)
                report.searched_shell[i] = s
                break
            report.searched_shell[i] = s
    logger.info("condition A: resonant=%s (%s)", report.resonant, arithmetic)
    return report


def verify_witness(scales: ScaleSystem, axis: int, witness, tol: float = 0.0) -> bool:
    """Re-check ``sum_n gamma^n z^n == m`` (exactly or within ``tol``)."""
    *z, m = witness
    if not any(z):
        return False
    terms = [scales.gamma[n + 1][axis] * zn for n, zn in enumerate(z)]
    if all(isinstance(t, Fraction) for t in terms):
        return sum(terms, Fraction(0)) == m
    return abs(float(sum(float(t) for t in terms)) - m) <= tol


@dataclass
class OrbitStats:
    """Density statistics of ``{k omega mod 1 : 0 <= k < K}``.

    ``covering_radius`` in several dimensions is the larger of two lower
    bounds: the worst axis projection and the distance from a fixed probe
    lattice to the orbit. Both are nonincreasing in ``K``.
    """

    K: int
    covering_radius: float
    max_gap: float | None
    distinct: int
    probe_spacing: float | None = None

    def to_json(self) -> dict:
        return {
            "K": self.K,
            "covering_radius": self.covering_radius,
            "max_gap": self.max_gap,
            "distinct": self.distinct,
            "probe_spacing": self.probe_spacing,
        }


def _circle_gaps(pts: np.ndarray, merge: float = 1e-12) -> tuple[float, int]:
    s = np.sort(np.mod(pts, 1.0))
    s = s[np.concatenate([[True], np.diff(s) > merge])]
    if s.size > 1 and (s[0] + 1.0 - s[-1]) <= merge:
        s = s[:-1]
    gaps = np.diff(np.concatenate([s, [s[0] + 1.0]]))
    return float(gaps.max()), int(s.size)


def orbit_gap(omega, K: int, probes_per_axis: int | None = None) -> OrbitStats:
    """Orbit-density diagnostic for the translation by ``omega`` on the torus.

    Parameters
    ----------
    omega : float or array_like, shape (M,)
    K : int
        Number of orbit points ``k omega``, ``k = 0..K-1``.
    probes_per_axis : int, optional
        Side of the probe lattice in dimension ``M >= 2`` (default 64 for
        ``M = 2``, 16 above).
    """
    if K < 2:
        raise InvalidInputError("K must be at least 2")
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    M = om.size
    k = np.arange(K, dtype=float)
    orbit = np.mod(k[:, None] * om[None, :], 1.0)
    if M == 1:
        gap, n = _circle_gaps(orbit[:, 0])
        return OrbitStats(K, gap / 2.0, gap, n)
    proj = max(_circle_gaps(orbit[:, i])[0] / 2.0 for i in range(M))
    G = probes_per_axis or (64 if M == 2 else 16)
    axis = (np.arange(G) + 0.5) / G
    probes = np.stack(np.meshgrid(*([axis] * M), indexing="ij"), axis=-1).reshape(-1, M)
    uniq = np.unique(np.round(orbit, 12), axis=0)
    tree = cKDTree(np.mod(uniq, 1.0), boxsize=1.0 + 1e-15)
    dist, _ = tree.query(probes)
    radius = max(proj, float(dist.max()))
    return OrbitStats(K, radius, None, int(len(uniq)), 1.0 / G)


def realize_epsilon(scales: ScaleSystem, eps1: float) -> np.ndarray:
    """Constant-ratio realization ``eps^n_i = eps1 / gamma^n_i``."""
    if not eps1 > 0:
        raise InvalidInputError("eps1 must be positive")
    return eps1 / scales.as_array()


def diagonal_points(scales: ScaleSystem, y) -> np.ndarray:
    """Map ``y`` of shape (..., d) to fast variables ``Gamma^n y`` of shape (..., N, d)."""
    y = np.asarray(y, dtype=float)
    return y[..., None, :] * scales.as_array()


def torus_velocity_factors(scales: ScaleSystem) -> np.ndarray:
    """Flattened ``gamma^n_i`` in factor-major order (length ``N d``)."""
    return scales.as_array().reshape(-1)
