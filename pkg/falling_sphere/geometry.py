"""
Exterior domain, quadrature and solenoidal modal bases.

The liquid occupies |x| > 1 around the unit sphere. Velocity fields are
expanded in divergence-free members, each a short sum of terms
R(r) * P(x) where R is a polynomial in s = 1/r and P a polynomial vector
field built from a solid harmonic about the x1-axis. Members with a
homogeneous trace vanish on |x| = 1; lifting members carry the rigid
trace xi * e1 + omega x x.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from math import ceil, log, pi
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from numpy.polynomial import Legendre
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as npoly
from scipy.special import roots_legendre

from .exceptions import ValidationError
from .harmonics import COORDS, PolynomialField, harmonic_norm, polynomial_field


logger = logging.getLogger(__name__)

TOROIDAL = "toroidal"
POLOIDAL = "poloidal"
FAMILIES = (TOROIDAL, POLOIDAL)
SECTORS = ("full", "even", "odd")
TRACE_LABELS = ("xi", "omega1", "omega2", "omega3")
LIFT_KINDS = ("xi", "xi2", "xi3", "omega1", "omega2", "omega3")
INSIDE_TOLERANCE = 1e-12


# ---------------------------------------------------------------------------
# Radial grids and quadrature rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """
    Quadrature for radial integrals ``∫₁^∞ f(r) r² dr``.

    ``map_kind`` selects how (1, ∞) is reached:

    * ``inverse``: Gauss-Legendre in s = 1/r. Integrands that are
      polynomials in 1/r are integrated exactly: r^-k r² for
      4 <= k <= 2n + 3.
    * ``algebraic``: r = scale * (1 + t) / (1 - t) restricted to r >= 1.
    * ``truncation``: Gauss-Legendre in ln r on (1, r_max); the tail
      beyond r_max is dropped.
    * ``composite``: piecewise Gauss-Legendre in r over ``breaks``, for
      compactly supported integrands.
    """

    map_kind: str
    nodes: np.ndarray
    weights: np.ndarray
    order: int
    scale: float = 1.0
    r_max: float = float("inf")
    breaks: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if np.any(self.nodes <= 1.0):
            raise ValidationError("Radial nodes must lie outside the unit sphere")
        if np.any(self.weights <= 0):
            raise ValidationError("Radial weights must be positive")

    @classmethod
    def build(
        cls, kind: str = "inverse", n: int = 32, scale: float = 1.0, r_max: float = 50.0
    ) -> "RadialGrid":
        """
        Build a radial rule with ``n`` nodes.

        Raises:
            ValidationError: For unknown map kinds or invalid parameters
        """
        if n < 1:
            raise ValidationError(f"Radial rule needs at least one node, got {n}")
        t, w = roots_legendre(n)
        if kind == "inverse":
            s = 0.5 * (t + 1.0)
            r = 1.0 / s
            weights = 0.5 * w * s**-4
            return cls(kind, r, weights, n, 1.0, float("inf"))
        if kind == "algebraic":
            if scale <= 0:
                raise ValidationError("Algebraic map needs a positive scale")
            tau0 = (1.0 - scale) / (1.0 + scale)
            tau = tau0 + 0.5 * (1.0 - tau0) * (t + 1.0)
            r = scale * (1.0 + tau) / (1.0 - tau)
            drdtau = 2.0 * scale / (1.0 - tau) ** 2
            weights = 0.5 * (1.0 - tau0) * w * drdtau * r**2
            return cls(kind, r, weights, n, scale, float("inf"))
        if kind == "truncation":
            if r_max <= 1:
                raise ValidationError("Truncation radius must exceed 1")
            half = 0.5 * log(r_max)
            u = half * (t + 1.0)
            r = np.exp(u)
            weights = half * w * r**3
            return cls(kind, r, weights, n, 1.0, r_max)
        raise ValidationError(f"Unknown radial map kind '{kind}'")

    @classmethod
    def composite(cls, breaks: Sequence[float], n: int) -> "RadialGrid":
        """Piecewise Gauss-Legendre rule with ``n`` nodes on every interval."""
        breaks = tuple(float(b) for b in breaks)
        if len(breaks) < 2 or breaks[0] < 1 or any(b >= c for b, c in zip(breaks, breaks[1:])):
            raise ValidationError(f"Composite breaks must increase from >= 1, got {breaks}")
        t, w = roots_legendre(n)
        nodes, weights = [], []
        for a, b in zip(breaks, breaks[1:]):
            r = a + 0.5 * (b - a) * (t + 1.0)
            nodes.append(r)
            weights.append(0.5 * (b - a) * w * r**2)
        return cls("composite", np.concatenate(nodes), np.concatenate(weights), n,
                   1.0, breaks[-1], breaks)

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    @property
    def max_exact_power(self) -> Optional[int]:
        """Largest k for which r^-k r² is integrated exactly (inverse map only)."""
        if self.map_kind != "inverse":
            return None
        return 2 * self.order + 3

    def integrate(self, f: Callable[[np.ndarray], np.ndarray], measure: str = "r2") -> float:
        """
        Integrate ``f`` over (1, ∞).

        Args:
            f: Vectorized function of r
            measure: "r2" for ``∫ f r² dr`` or "dr" for ``∫ f dr``
        """
        values = np.asarray(f(self.nodes), dtype=float)
        if measure == "dr":
            values = values / self.nodes**2
        elif measure != "r2":
            raise ValidationError(f"Unknown radial measure '{measure}'")
        return float(np.dot(self.weights, values))

    def refined(self) -> "RadialGrid":
        if self.map_kind == "composite":
            return RadialGrid.composite(self.breaks, 2 * self.order)
        return RadialGrid.build(self.map_kind, 2 * self.order, self.scale, self.r_max)

    @property
    def key(self) -> Tuple[object, ...]:
        return (self.map_kind, self.order, self.scale, self.r_max, self.breaks)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """
    Tensor rule for volume integrals over the exterior domain.

    Gauss-Legendre in cos(theta) about the x1-axis and the trapezoid rule
    in the azimuth. A rule without a radial part integrates over the unit
    sphere with the surface measure.
    """

    points: np.ndarray
    weights: np.ndarray
    radial: Optional[RadialGrid]
    n_theta: int
    n_phi: int

    @classmethod
    def tensor(cls, radial: Optional[RadialGrid], n_theta: int, n_phi: int) -> "QuadratureRule":
        if n_theta < 1 or n_phi < 1:
            raise ValidationError("Angular rule needs at least one node per direction")
        c, wc = roots_legendre(n_theta)
        phi = 2.0 * pi * np.arange(n_phi) / n_phi
        r_nodes = radial.nodes if radial is not None else np.ones(1)
        r_weights = radial.weights if radial is not None else np.ones(1)
        R, C, PHI = np.meshgrid(r_nodes, c, phi, indexing="ij")
        W = r_weights[:, None, None] * wc[None, :, None] * np.full(n_phi, 2.0 * pi / n_phi)
        sin = np.sqrt(1.0 - C**2)
        points = np.stack([R * C, R * sin * np.cos(PHI), R * sin * np.sin(PHI)], axis=-1)
        return cls(points.reshape(-1, 3), W.reshape(-1), radial, n_theta, n_phi)

    @classmethod
    def for_resolution(
        cls,
        L: int,
        N: int,
        m: int,
        margin: int = 8,
        radial_map: Tuple[str, float, float] = ("inverse", 1.0, 50.0),
    ) -> "QuadratureRule":
        """
        Rule sized for the trilinear integrands of a basis of degree ``L``,
        radial resolution ``N`` and azimuthal order ``m``.

        With the inverse map and a non-negative margin, every Gram, skew
        and trilinear integrand is integrated exactly.
        """
        n_r = max(2, ceil((3 * N + 7) / 2) + margin)
        n_theta = max(2, ceil((3 * L + 5) / 2) + margin)
        n_phi = max(4, 8 * m + 4)
        kind, scale, r_max = radial_map
        return cls.tensor(RadialGrid.build(kind, n_r, scale, r_max), n_theta, n_phi)

    @classmethod
    def sphere(cls, n_theta: int = 16, n_phi: int = 16) -> "QuadratureRule":
        return cls.tensor(None, n_theta, n_phi)

    @classmethod
    def compact(
        cls, breaks: Sequence[float], n_r: int = 16, n_theta: int = 24, n_phi: int = 16
    ) -> "QuadratureRule":
        return cls.tensor(RadialGrid.composite(breaks, n_r), n_theta, n_phi)

    def refined(self) -> "QuadratureRule":
        """Rule with doubled radial and polar orders."""
        radial = self.radial.refined() if self.radial is not None else None
        return QuadratureRule.tensor(radial, 2 * self.n_theta, self.n_phi)

    @property
    def size(self) -> int:
        return int(self.weights.size)

    @property
    def key(self) -> Tuple[object, ...]:
        radial_key = self.radial.key if self.radial is not None else ("sphere",)
        return radial_key + (self.n_theta, self.n_phi)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


# ---------------------------------------------------------------------------
# Index and rigid-motion types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModalIndex:
    """Identity of a homogeneous-trace basis member."""

    m: int
    l: int
    n: int
    family: str
    phase: str = "cos"

    def __post_init__(self) -> None:
        if self.m < 0 or self.l < max(self.m, 1) or self.n < 0:
            raise ValidationError(f"Invalid modal index {self}")
        if self.family not in FAMILIES:
            raise ValidationError(f"Unknown family '{self.family}'")

    @property
    def label(self) -> str:
        tag = "T" if self.family == TOROIDAL else "P"
        return f"{tag}(m={self.m},l={self.l},n={self.n},{self.phase})"


@dataclass(frozen=True)
class RigidMotion:
    """Translational speed along e1 and angular velocity of the sphere."""

    xi: float = 0.0
    omega: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        values = np.array([self.xi, *self.omega], dtype=float)
        if values.shape != (4,) or not np.all(np.isfinite(values)):
            raise ValidationError(f"Rigid motion must be finite, got xi={self.xi}, omega={self.omega}")

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "RigidMotion":
        v = [float(x) for x in values]
        return cls(v[0], (v[1], v[2], v[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.xi, *self.omega], dtype=float)

    def trace(self, points: np.ndarray) -> np.ndarray:
        """Boundary velocity ``xi e1 + omega x x`` at the given points."""
        points = np.atleast_2d(points)
        values = np.cross(np.asarray(self.omega, dtype=float), points)
        values[:, 0] += self.xi
        return values

    @property
    def magnitude(self) -> float:
        return abs(self.xi) + float(np.linalg.norm(self.omega))


@dataclass(frozen=True)
class CutoffSpec:
    """
    Cutoff equal to 1 on 1 <= |x| <= r_a and 0 for |x| >= r_b.

    The transition is a fixed septic polynomial bump, so the profile is C³
    (not C^inf); the extension field and :func:`extension_bound` inherit that
    regularity.
    """

    r_a: float = 2.0
    r_b: float = 4.0

    def validate(self) -> None:
        if not (1.0 <= self.r_a < self.r_b):
            raise ValidationError(
                f"Cutoff needs 1 <= r_a < r_b, got r_a={self.r_a}, r_b={self.r_b}"
            )

    def profile(self, r: np.ndarray) -> np.ndarray:
        """Value of the cutoff at radius ``r`` (septic smoothstep, C³)."""
        t = np.clip((np.asarray(r, dtype=float) - self.r_a) / (self.r_b - self.r_a), 0.0, 1.0)
        return 1.0 - t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


# ---------------------------------------------------------------------------
# Field families
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldTerm:
    """One term R(r) P(x) with R a polynomial in s = 1/r (ascending coefficients)."""

    radial: np.ndarray
    field: PolynomialField

    def tabulate(self, points: np.ndarray, r: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        R = npoly.polyval(s, self.radial)
        R_r = -(s**2) * npoly.polyval(s, npoly.polyder(self.radial))
        P, J = self.field(points)
        values = R[:, None] * P
        grads = (R_r / r)[:, None, None] * P[:, :, None] * points[:, None, :]
        grads += R[:, None, None] * J
        return values, grads


@dataclass(frozen=True, eq=False)
class BasisMember:
    """A solenoidal field with a fixed rigid trace (zero for homogeneous members)."""

    label: str
    terms: Tuple[FieldTerm, ...]
    trace: RigidMotion = RigidMotion()
    index: Optional[ModalIndex] = None
    lift: Optional[str] = None

    def tabulate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        r = np.linalg.norm(points, axis=1)
        s = 1.0 / r
        values = np.zeros((points.shape[0], 3))
        grads = np.zeros((points.shape[0], 3, 3))
        for term in self.terms:
            v, g = term.tabulate(points, r, s)
            values += v
            grads += g
        return values, grads


class FieldFamily:
    """
    Ordered collection of solenoidal fields that coefficient vectors refer to.

    Subclasses provide :meth:`_tabulate_members`; tabulations on quadrature
    rules are cached by rule key.
    """

    m: Optional[int] = None

    def __init__(self, labels: Sequence[str], traces: np.ndarray, scale: float = 1.0):
        self.labels: Tuple[str, ...] = tuple(labels)
        self._traces = np.asarray(traces, dtype=float) * scale
        self.scale = float(scale)
        self._tabulations: Dict[Tuple[object, ...], Tuple[np.ndarray, np.ndarray]] = {}

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def traces(self) -> np.ndarray:
        """Rows ``(xi, omega1, omega2, omega3)`` of every member's trace."""
        return self._traces

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError as e:
            raise ValidationError(f"No member '{label}' in this family") from e

    def _tabulate_members(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def tabulate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Values ``(k, n, 3)`` and gradients ``(k, n, 3, 3)`` of every member.

        ``grads[k, q, i, j]`` is ``d_j u_i`` of member ``k`` at point ``q``.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        values, grads = self._tabulate_members(points)
        if self.scale != 1.0:
            values = values * self.scale
            grads = grads * self.scale
        return values, grads

    def default_rule(self) -> QuadratureRule:
        """Quadrature rule suited to integrands built from this family alone."""
        return QuadratureRule.for_resolution(1, 2, 1)

    def tabulation(self, rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
        key = rule.key
        if key not in self._tabulations:
            self._tabulations[key] = self.tabulate(rule.points)
        return self._tabulations[key]

    def field(self, coeffs: Sequence[complex]) -> "DiscreteField":
        return DiscreteField(self, np.asarray(coeffs))


class ModalBasis(FieldFamily):
    """
    Solenoidal basis of one azimuthal mode.

    The basis is hierarchical: a member is fully determined by its label,
    so a coarser basis embeds into a finer one by matching labels.
    """

    def __init__(
        self,
        m: int,
        sector: str,
        L: int,
        N: int,
        members: Sequence[BasisMember],
        scale: float = 1.0,
        radial_map: Tuple[str, float, float] = ("inverse", 1.0, 50.0),
        margin: int = 8,
    ):
        traces = np.array([member.trace.as_array() for member in members]).reshape(-1, 4)
        super().__init__([member.label for member in members], traces, scale)
        self.m = m
        self.sector = sector
        self.L = L
        self.N = N
        self.members: Tuple[BasisMember, ...] = tuple(members)
        self.radial_map = radial_map
        self.margin = margin
        self._rule: Optional[QuadratureRule] = None
        self.quadrature_checked = False

    def __repr__(self) -> str:
        return f"ModalBasis(m={self.m}, sector={self.sector}, L={self.L}, N={self.N}, size={self.size})"

    def _tabulate_members(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        values = np.empty((self.size, points.shape[0], 3))
        grads = np.empty((self.size, points.shape[0], 3, 3))
        for k, member in enumerate(self.members):
            values[k], grads[k] = member.tabulate(points)
        return values, grads

    def default_rule(self) -> QuadratureRule:
        return self.rule

    @property
    def rule(self) -> QuadratureRule:
        if self._rule is None:
            self._rule = QuadratureRule.for_resolution(
                self.L, self.N, self.m, self.margin, self.radial_map
            )
        return self._rule

    @property
    def lift_labels(self) -> Tuple[str, ...]:
        return tuple(m.label for m in self.members if m.lift is not None)

    @property
    def homogeneous(self) -> np.ndarray:
        """Indices of the members with a homogeneous trace."""
        return np.array([k for k, m in enumerate(self.members) if m.lift is None], dtype=int)

    def lift_index(self, kind: str) -> int:
        """
        Position of the lifting member carrying ``kind``.

        Raises:
            ValidationError: If the basis has no such lifting field
        """
        for k, member in enumerate(self.members):
            if member.lift == kind:
                return k
        raise ValidationError(f"Basis m={self.m} ({self.sector}) has no '{kind}' lifting field")

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "m": self.m,
                "sector": self.sector,
                "L": self.L,
                "N": self.N,
                "scale": self.scale,
                "radial_map": list(self.radial_map),
                "margin": self.margin,
                "labels": list(self.labels),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def embed(self, coeffs: np.ndarray, target: "ModalBasis") -> np.ndarray:
        """
        Zero-pad coefficients of this basis into a finer basis.

        Raises:
            ValidationError: If a member of this basis is missing from ``target``
        """
        if target.scale != self.scale or target.m != self.m:
            raise ValidationError("Embedding needs matching mode and scale")
        out = np.zeros(target.size, dtype=np.result_type(coeffs, float))
        for k, label in enumerate(self.labels):
            out[target.index(label)] = coeffs[k]
        return out


def _shifted_legendre(n: int) -> Polynomial:
    """sqrt(2n+1) * P_n(2s - 1) as a polynomial in s."""
    p = Legendre.basis(n, domain=[0.0, 1.0]).convert(kind=Polynomial)
    return Polynomial(p.coef * np.sqrt(2 * n + 1))


_S = Polynomial([0.0, 1.0])


def _toroidal_terms(l: int, m: int, phase: str, radial: Polynomial, norm: float) -> Tuple[FieldTerm, ...]:
    return (FieldTerm(radial.coef * norm, polynomial_field("curl", l, m, phase)),)


def _poloidal_terms(l: int, m: int, phase: str, g: Polynomial, norm: float) -> Tuple[FieldTerm, ...]:
    gs = g.deriv()
    a = l * _S**3 * gs
    b = -_S * gs + (l + 1) * g
    return (
        FieldTerm(a.coef * norm, polynomial_field("xh", l, m, phase)),
        FieldTerm(b.coef * norm, polynomial_field("grad", l, m, phase)),
    )


def _homogeneous_member(index: ModalIndex) -> BasisMember:
    l, m, n = index.l, index.m, index.n
    p = _shifted_legendre(n)
    norm = harmonic_norm(l, m)
    if index.family == TOROIDAL:
        radial = _S ** (l + 2) * (1 - _S) * p
        terms = _toroidal_terms(l, m, index.phase, radial, norm)
    else:
        # l = 1 keeps the 1/r (Stokeslet-like) decay, higher degrees decay as 1/r²
        e = 0 if l == 1 else 1
        g = _S ** (l + e) * (1 - _S) ** 2 * p
        terms = _poloidal_terms(l, m, index.phase, g, norm)
    return BasisMember(index.label, terms, RigidMotion(), index, None)


@lru_cache(maxsize=None)
def lifting_member(kind: str) -> BasisMember:
    """
    Exact Stokes lifting field with unit rigid trace.

    ``xi``, ``xi2`` and ``xi3`` are the translating-sphere Stokes flows along
    e1, e2, e3; ``omegaK`` is the rotlet ``e_K x x / |x|³``.
    """
    harmonic = {
        "xi": (0, "cos"), "xi2": (1, "cos"), "xi3": (1, "sin"),
        "omega1": (0, "cos"), "omega2": (1, "cos"), "omega3": (1, "sin"),
    }
    if kind not in harmonic:
        raise ValidationError(f"Unknown lifting field '{kind}'")
    m, phase = harmonic[kind]
    if kind.startswith("xi"):
        g = 0.75 * _S - 0.25 * _S**3
        terms = _poloidal_terms(1, m, phase, g, 1.0)
        direction = {"xi": 0, "xi2": 1, "xi3": 2}[kind]
        trace = RigidMotion(1.0) if direction == 0 else RigidMotion()
    else:
        terms = _toroidal_terms(1, m, phase, _S**3, 1.0)
        omega = [0.0, 0.0, 0.0]
        omega[int(kind[-1]) - 1] = 1.0
        trace = RigidMotion(0.0, (omega[0], omega[1], omega[2]))
    return BasisMember(f"lift:{kind}", terms, trace, None, kind)


def _sector_layout(m: int, sector: str) -> Tuple[List[str], List[Tuple[str, str]]]:
    """Lifting kinds and (family, phase) pairs of a sector."""
    if m == 0:
        even = (["xi"], [(POLOIDAL, "cos")])
        odd = (["omega1"], [(TOROIDAL, "cos")])
    else:
        even = (["omega3"] if m == 1 else [], [(POLOIDAL, "cos"), (TOROIDAL, "sin")])
        odd = (["omega2"] if m == 1 else [], [(POLOIDAL, "sin"), (TOROIDAL, "cos")])
    if sector == "even":
        return even
    if sector == "odd":
        return odd
    return even[0] + odd[0], even[1] + odd[1]


def build_basis(
    m: int,
    L: int,
    N: int,
    grid: Optional[RadialGrid] = None,
    sector: str = "full",
    scale: float = 1.0,
    margin: int = 8,
    radial_map: Optional[Tuple[str, float, float]] = None,
) -> ModalBasis:
    """
    Build the solenoidal basis of azimuthal mode ``m``.

    Args:
        m: Azimuthal wavenumber about the x1-axis
        L: Maximal meridional degree
        N: Number of radial functions per (l, family)
        grid: Radial grid whose map (kind, scale, r_max) the quadrature adopts
        sector: "even", "odd" or "full" (both reflection sectors)
        scale: Uniform factor applied to every member
        margin: Extra quadrature nodes beyond the exactness threshold
        radial_map: (kind, scale, r_max) of the radial quadrature map, used
            when no grid is given

    Returns:
        ModalBasis with lifting members first

    Raises:
        ValidationError: On an invalid resolution or sector
    """
    if m < 0 or L < max(m, 1) or N < 2:
        raise ValidationError(
            f"Invalid resolution: need m >= 0, L >= max(m, 1), N >= 2; got m={m}, L={L}, N={N}"
        )
    if sector not in SECTORS:
        raise ValidationError(f"Unknown sector '{sector}', expected one of {SECTORS}")
    if scale <= 0:
        raise ValidationError("Basis scale must be positive")
    lifts, families = _sector_layout(m, sector)
    members: List[BasisMember] = [lifting_member(kind) for kind in lifts]
    for family, phase in families:
        for l in range(max(m, 1), L + 1):
            for n in range(N):
                members.append(_homogeneous_member(ModalIndex(m, l, n, family, phase)))
    if grid is not None:
        radial_map = (grid.map_kind, grid.scale, grid.r_max)
    radial_map = radial_map or ("inverse", 1.0, 50.0)
    basis = ModalBasis(m, sector, L, N, members, scale, radial_map, margin)
    logger.debug(f"Built {basis!r}")
    return basis


class LiftFamily(FieldFamily):
    """Standalone lifting fields (used as test functions for forces and torques)."""

    def __init__(self, kinds: Sequence[str], scale: float = 1.0):
        self.members = tuple(lifting_member(kind) for kind in kinds)
        traces = np.array([member.trace.as_array() for member in self.members])
        super().__init__([member.label for member in self.members], traces, scale)

    def _tabulate_members(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pairs = [member.tabulate(points) for member in self.members]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def lifting_field(kind: str, amplitude: float = 1.0) -> "DiscreteField":
    """Single lifting field scaled by ``amplitude``."""
    return LiftFamily([kind]).field([amplitude])


def stokes_translation_field(xi: float) -> "DiscreteField":
    """Analytic Stokes flow of the sphere translating with speed ``xi`` along e1."""
    return lifting_field("xi", xi)


# ---------------------------------------------------------------------------
# Compactly supported rigid extension
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _extension_transition(r_a: float, r_b: float) -> Callable[..., List[object]]:
    """
    Lambdified extension fields on r_a < r < r_b for unit xi and unit omega_k.

    V = -1/2 [grad d1 f - (lap f) e1 + grad g x omega] with f = zeta xi x2²
    and g = zeta |x|².
    """
    x1, x2, x3 = COORDS
    r = sp.sqrt(x1**2 + x2**2 + x3**2)
    t = (r - r_a) / (r_b - r_a)
    zeta = 1 - (35 * t**4 - 84 * t**5 + 70 * t**6 - 20 * t**7)
    f = zeta * x2**2
    d1f = sp.diff(f, x1)
    lap = sum(sp.diff(f, x, 2) for x in COORDS)
    v_xi = [-sp.Rational(1, 2) * (sp.diff(d1f, x) - (lap if i == 0 else 0)) for i, x in enumerate(COORDS)]
    g = zeta * r**2
    grad_g = [sp.diff(g, x) for x in COORDS]
    fields: List[List[sp.Expr]] = [v_xi]
    for k in range(3):
        omega = [0, 0, 0]
        omega[k] = 1
        cross = [
            grad_g[1] * omega[2] - grad_g[2] * omega[1],
            grad_g[2] * omega[0] - grad_g[0] * omega[2],
            grad_g[0] * omega[1] - grad_g[1] * omega[0],
        ]
        fields.append([-sp.Rational(1, 2) * c for c in cross])
    exprs: List[sp.Expr] = []
    for comps in fields:
        exprs.extend(comps)
        exprs.extend(sp.diff(c, x) for c in comps for x in COORDS)
    logger.debug(f"Lambdifying rigid extension for r_a={r_a}, r_b={r_b}")
    return sp.lambdify(COORDS, exprs, modules="numpy", cse=True)


class ExtensionFamily(FieldFamily):
    """
    Compactly supported divergence-free extensions of the four rigid motions
    (xi, omega1, omega2, omega3), each with unit amplitude.
    """

    def __init__(self, cutoff: CutoffSpec):
        cutoff.validate()
        self.cutoff = cutoff
        super().__init__([f"ext:{t}" for t in TRACE_LABELS], np.eye(4))

    def _tabulate_members(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = points.shape[0]
        values = np.zeros((4, n, 3))
        grads = np.zeros((4, n, 3, 3))
        r = np.linalg.norm(points, axis=1)
        inner = r <= self.cutoff.r_a
        values[0, inner, 0] = 1.0
        for k in range(3):
            omega = np.zeros(3)
            omega[k] = 1.0
            values[k + 1, inner] = np.cross(omega, points[inner])
            # d_j (omega x x)_i = eps_ikj omega_k
            skew = np.array([[0.0, -omega[2], omega[1]], [omega[2], 0.0, -omega[0]], [-omega[1], omega[0], 0.0]])
            grads[k + 1, inner] = skew
        band = (r > self.cutoff.r_a) & (r < self.cutoff.r_b)
        if np.any(band):
            p = points[band]
            raw = _extension_transition(self.cutoff.r_a, self.cutoff.r_b)(p[:, 0], p[:, 1], p[:, 2])
            nb = p.shape[0]
            flat = np.empty((len(raw), nb))
            for row, value in enumerate(raw):
                flat[row] = np.broadcast_to(np.asarray(value, dtype=float), (nb,))
            for k in range(4):
                block = flat[12 * k: 12 * (k + 1)]
                values[k, band] = block[:3].T
                grads[k, band] = block[3:].T.reshape(nb, 3, 3)
        return values, grads

    def default_rule(self, n_r: int = 16, n_theta: int = 24, n_phi: int = 16) -> QuadratureRule:
        """Composite rule resolving the kinks of the cutoff at r_a and r_b."""
        return QuadratureRule.compact((1.0, self.cutoff.r_a, self.cutoff.r_b), n_r, n_theta, n_phi)


def rigid_extension(rigid: RigidMotion, cutoff: CutoffSpec = CutoffSpec()) -> "DiscreteField":
    """
    Compactly supported solenoidal field with boundary trace ``xi e1 + omega x x``.

    Raises:
        ValidationError: If ``cutoff.r_a >= cutoff.r_b``
    """
    return ExtensionFamily(cutoff).field(rigid.as_array())


def extension_bound(cutoff: CutoffSpec = CutoffSpec()) -> float:
    """
    Constant C in ``||V||_4 + ||grad V||_2 <= C (|xi| + |omega|)`` over the
    unit rigid motions.
    """
    family = ExtensionFamily(cutoff)
    rule = family.default_rule()
    values, grads = family.tabulation(rule)
    bound = 0.0
    for k in range(4):
        l4 = rule.integrate(np.sum(values[k] ** 2, axis=1) ** 2) ** 0.25
        h1 = rule.integrate(np.sum(grads[k] ** 2, axis=(1, 2))) ** 0.5
        bound = max(bound, l4 + h1)
    return bound


# ---------------------------------------------------------------------------
# Discrete fields
# ---------------------------------------------------------------------------


def _check_points(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValidationError(f"Points must have shape (n, 3), got {points.shape}")
    r = np.linalg.norm(points, axis=1)
    if np.any(r < 1.0 - INSIDE_TOLERANCE):
        raise ValidationError(
            f"{int(np.sum(r < 1.0 - INSIDE_TOLERANCE))} point(s) lie inside the sphere |x| < 1"
        )
    return points


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Coefficient vector over a field family."""

    family: FieldFamily
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        if self.coeffs.shape != (self.family.size,):
            raise ValidationError(
                f"Expected {self.family.size} coefficients, got shape {self.coeffs.shape}"
            )

    @property
    def mode(self) -> Optional[int]:
        return self.family.m

    @property
    def trace_vector(self) -> np.ndarray:
        return self.coeffs @ self.family.traces

    @property
    def rigid(self) -> RigidMotion:
        return RigidMotion.from_array(np.real(self.trace_vector))

    def on(self, rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
        """Values and gradients on the nodes of a quadrature rule."""
        values, grads = self.family.tabulation(rule)
        return (
            np.tensordot(self.coeffs, values, axes=1),
            np.tensordot(self.coeffs, grads, axes=1),
        )

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        values, _ = self.family.tabulate(_check_points(points))
        return np.tensordot(self.coeffs, values, axes=1)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        _, grads = self.family.tabulate(_check_points(points))
        return np.tensordot(self.coeffs, grads, axes=1)

    def divergence(self, points: np.ndarray) -> np.ndarray:
        return np.trace(self.gradient(points), axis1=1, axis2=2)

    def scaled(self, factor: complex) -> "DiscreteField":
        return DiscreteField(self.family, self.coeffs * factor)


def evaluate_field(f: DiscreteField, points: np.ndarray) -> np.ndarray:
    """
    Pointwise velocity of ``f``.

    Raises:
        ValidationError: If a point lies inside the sphere
    """
    return f.evaluate(points)


def random_points(rng: np.random.Generator, n: int, r_min: float = 1.0, r_max: float = 6.0) -> np.ndarray:
    """Random points in the shell r_min <= |x| <= r_max."""
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    radii = rng.uniform(r_min, r_max, size=n)
    return directions * radii[:, None]
