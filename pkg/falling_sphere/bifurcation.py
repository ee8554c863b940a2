"""
Critical Galilei number, simplicity, transversality and symmetry breaking.

The leading real eigenvalue mu(lam) is tracked along a bundle source by
eigenvector overlap, the crossing mu = 1 is located by a bracketed secant
iteration, and the eigenpair found there is checked for the conditions of a
steady bifurcation. For the m = 1 mode the rotlet H = e3 x x / |x|³ tests
whether the bifurcating state rotates.
"""

import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from math import pi
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import sympy as sp

from .baseflow import BaseFlow
from .config import EigenSpec, Tolerances
from .exceptions import ConvergenceError, FingerprintMismatchError, ValidationError
from .forms import recover_force_torque, select_rule, strain, strain_inner
from .geometry import DiscreteField, QuadratureRule, lifting_field, random_points
from .harmonics import COORDS
from .spectrum import (
    BranchBundleSource,
    BundleSource,
    EigenPair,
    OperatorBundle,
    assemble_bundle,
    leading_eigs,
)


logger = logging.getLogger(__name__)

STATUS_BIFURCATION = "bifurcation"
STATUS_NO_CRITICAL = "no critical point"
STATUS_NOT_SIMPLE = "simplicity not certified"
STATUS_NOT_TRANSVERSAL = "transversality failed"
STATUS_UNRESOLVED = "not resolved at this resolution"
STATUSES = (
    STATUS_BIFURCATION,
    STATUS_NO_CRITICAL,
    STATUS_NOT_SIMPLE,
    STATUS_NOT_TRANSVERSAL,
    STATUS_UNRESOLVED,
)

# Sign in front of the closed-form transversality expression; recorded in
# reports, not applied to mu_prime_formula.
FORMULA_SIGN = -1


def _complex_pair(z: complex) -> List[float]:
    return [float(np.real(z)), float(np.imag(z))]


# ---------------------------------------------------------------------------
# Rotlet
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def _rotlet_functions() -> Callable[..., List[object]]:
    x1, x2, x3 = COORDS
    r3 = (x1**2 + x2**2 + x3**2) ** sp.Rational(3, 2)
    H = [-x2 / r3, x1 / r3, sp.Integer(0)]
    grads = [sp.diff(h, x) for h in H for x in COORDS]
    laplacian = [sum(sp.diff(h, x, 2) for x in COORDS) for h in H]
    divergence = [sum(sp.diff(h, x) for h, x in zip(H, COORDS))]
    return sp.lambdify(COORDS, H + grads + laplacian + divergence, modules="numpy", cse=True)


class RotletField:
    """
    Closed-form rotlet ``H = e3 x x / |x|³`` with constant pressure.

    It is the exterior Stokes flow of the sphere rotating with unit angular
    velocity about e3; in the discrete spaces it coincides with the
    ``omega3`` lifting field.
    """

    def _raw(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        values = _rotlet_functions()(points[:, 0], points[:, 1], points[:, 2])
        n = points.shape[0]
        return np.array([np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in values])

    def evaluate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Values ``(n, 3)`` and gradients ``(n, 3, 3)`` with ``[q, i, j] = d_j H_i``."""
        raw = self._raw(points)
        return raw[:3].T.copy(), raw[3:12].T.reshape(-1, 3, 3)

    def strain(self, points: np.ndarray) -> np.ndarray:
        return strain(self.evaluate(points)[1])

    def stokes_residual(self, points: np.ndarray) -> float:
        """Largest ``|lap H|`` and ``|div H|`` at the points (the pressure is constant)."""
        raw = self._raw(points)
        return float(np.max(np.abs(raw[12:16])))

    def trace_defect(self, n_theta: int = 12, n_phi: int = 12) -> float:
        """Largest ``|H - e3 x x|`` on the unit sphere."""
        points = QuadratureRule.sphere(n_theta, n_phi).points
        values, _ = self.evaluate(points)
        expected = np.cross(np.array([0.0, 0.0, 1.0]), points)
        return float(np.max(np.abs(values - expected)))

    def as_field(self) -> DiscreteField:
        return lifting_field("omega3")

    def strain_energy(self) -> float:
        """``||D(H)||²``; equals 4 pi."""
        H = self.as_field()
        return strain_inner(H, H)

    def torque(self) -> np.ndarray:
        """Torque exerted by the liquid on the rotating sphere; equals -8 pi e3."""
        return recover_force_torque(self.as_field(), 0.0)[1]

    def field_agreement(self, rng: np.random.Generator, n: int = 64) -> float:
        """Largest pointwise difference between the closed form and the lifting field."""
        points = random_points(rng, n, 1.0, 8.0)
        values, _ = self.evaluate(points)
        return float(np.max(np.abs(values - self.as_field().evaluate(points))))


# ---------------------------------------------------------------------------
# Eigenvalue scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScanPoint:
    lam: float
    mu: complex
    gap: float
    residual: float
    overlap: Optional[float]
    pair: EigenPair


@dataclass(frozen=True)
class ComplexCrossing:
    """Complex eigenvalue whose modulus crosses 1 between two scan points."""

    lam_low: float
    lam_high: float
    mu: complex


@dataclass
class MuScan:
    """Tracked leading real eigenvalue of one mode along a Galilei range."""

    m: Optional[int]
    points: List[ScanPoint] = field(default_factory=list)
    path_breaks: List[float] = field(default_factory=list)
    complex_crossings: List[ComplexCrossing] = field(default_factory=list)
    source: str = "physical"

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def mus(self) -> np.ndarray:
        return np.array([float(np.real(p.mu)) for p in self.points])

    def sign_changes(self) -> List[Tuple[int, int]]:
        """Index pairs of adjacent points between which ``Re mu - 1`` changes sign."""
        f = self.mus - 1.0
        return [(i, i + 1) for i in range(len(f) - 1) if f[i] == 0 or f[i] * f[i + 1] < 0]

    def extrema(self) -> Tuple[float, float]:
        if not self.points:
            return (float("nan"), float("nan"))
        return float(np.min(self.mus)), float(np.max(self.mus))

    def rows(self) -> List[Tuple[float, int, float, float, float, float]]:
        """``(lam, m, Re mu, Im mu, gap, residual)`` per point."""
        m = -1 if self.m is None else self.m
        return [
            (p.lam, m, float(np.real(p.mu)), float(np.imag(p.mu)), p.gap, p.residual)
            for p in self.points
        ]


def _s_overlap(S: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    na = np.sqrt(abs(np.vdot(a, S @ a)))
    nb = np.sqrt(abs(np.vdot(b, S @ b)))
    return float(abs(np.vdot(a, S @ b)) / max(na * nb, np.finfo(float).tiny))


def _pick(pairs: Sequence[EigenPair], reference: Optional[EigenPair]) -> Tuple[EigenPair, Optional[float]]:
    """Pair continuing ``reference`` by overlap, or the real pair nearest the shift."""
    if reference is None:
        real = [p for p in pairs if p.is_real]
        return (real[0] if real else pairs[0]), None
    S = pairs[0].bundle.S if pairs[0].bundle is not None else np.eye(pairs[0].w1.size)
    overlaps = [_s_overlap(S, reference.w1, p.w1) for p in pairs]
    best = int(np.argmax(overlaps))
    return pairs[best], overlaps[best]


def _eigs(source: BundleSource, lam: float, eigen: EigenSpec, tolerance: float, shift: complex) -> List[EigenPair]:
    return leading_eigs(
        source.bundle(lam),
        shift=shift,
        count=eigen.count,
        method=eigen.method,
        tolerance=tolerance,
        dense_limit=eigen.dense_limit,
    )


def track_eigenvalue(
    source: BundleSource,
    lam: float,
    reference: EigenPair,
    eigen: EigenSpec = EigenSpec(),
    tolerance: float = 1e-8,
) -> Tuple[EigenPair, float]:
    """Eigenpair at ``lam`` with the largest S-overlap with ``reference``."""
    pairs = _eigs(source, lam, eigen, tolerance, complex(np.real(reference.mu)))
    pair, overlap = _pick(pairs, reference)
    return pair, float(overlap if overlap is not None else 1.0)


def scan_mu(
    source: BundleSource,
    lambdas: Optional[Sequence[float]] = None,
    eigen: EigenSpec = EigenSpec(),
    tolerances: Tolerances = Tolerances(),
) -> MuScan:
    """
    Track the leading real eigenvalue across ``lambdas``.

    Points with lam <= 0 are skipped (the operator vanishes there). A
    successor whose best eigenvector overlap falls below
    ``tolerances.overlap`` is recorded as a path break.

    Args:
        source: Bundle source of one mode
        lambdas: Galilei numbers; the branch of a branch source by default
        eigen: Eigen solver settings
        tolerances: Overlap and eigen tolerances

    Returns:
        MuScan with the tracked path
    """
    if lambdas is None:
        lambdas = getattr(source, "lambdas", None)
        if lambdas is None:
            raise ValidationError("scan_mu needs Galilei numbers for a source without a branch")
    scan = MuScan(source.m, source=source.label)
    previous: Optional[EigenPair] = None
    previous_modulus: Optional[float] = None
    for lam in sorted(float(x) for x in lambdas):
        if lam <= 0:
            logger.debug(f"Skipping lam={lam} in the eigenvalue scan")
            continue
        pairs = _eigs(source, lam, eigen, tolerances.eigen, complex(eigen.shift))
        pair, overlap = _pick(pairs, previous)
        if overlap is not None and overlap < tolerances.overlap:
            logger.warning(
                f"Eigenvalue path break at lam={lam:.6g} on mode {source.m}: "
                f"best overlap {overlap:.3f} < {tolerances.overlap}"
            )
            scan.path_breaks.append(lam)
            pair, _ = _pick(pairs, None)
        complex_pairs = [p for p in pairs if not p.is_real]
        modulus = max((abs(p.mu) for p in complex_pairs), default=None)
        if modulus is not None and previous_modulus is not None and (modulus - 1) * (previous_modulus - 1) < 0:
            leading = max(complex_pairs, key=lambda p: abs(p.mu))
            crossing = ComplexCrossing(scan.points[-1].lam, lam, complex(leading.mu))
            scan.complex_crossings.append(crossing)
            logger.warning(
                f"Complex eigenvalue {complex(leading.mu):.6g} crosses |mu| = 1 on mode {source.m} "
                f"between lam={crossing.lam_low:.6g} and {lam:.6g}; outside the steady scope"
            )
        previous_modulus = modulus
        scan.points.append(ScanPoint(lam, pair.mu, pair.gap, pair.residual, overlap, pair))
        previous = pair
        logger.info(f"Scan mode {source.m} lam={lam:.6g}: mu={complex(pair.mu):.10g}")
    return scan


# ---------------------------------------------------------------------------
# Critical point
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    status: str
    lam0: Optional[float] = None
    pair: Optional[EigenPair] = None
    iterations: int = 0
    history: Tuple[Tuple[float, float], ...] = ()
    mu_extrema: Tuple[float, float] = (float("nan"), float("nan"))


def find_critical(
    source: BundleSource,
    scan: Optional[MuScan] = None,
    bracket: Optional[Tuple[float, float]] = None,
    eigen: EigenSpec = EigenSpec(),
    tolerances: Tolerances = Tolerances(),
    max_iterations: int = 60,
) -> CriticalPoint:
    """
    Locate lam0 with ``mu(lam0) = 1`` by secant iteration inside a bracket.

    The bracket is the first sign change of ``mu - 1`` in ``scan`` unless
    given explicitly. Without a sign change the result has status
    "no critical point" and records the eigenvalue extrema.

    Raises:
        ValidationError: Without scan and bracket
        ConvergenceError: If the iteration does not reach the tolerance;
            a fold of the base branch inside the bracket propagates from
            the base-flow solver
    """
    if bracket is None and scan is None:
        raise ValidationError("find_critical needs a scan or a bracket")
    if bracket is None:
        assert scan is not None
        changes = scan.sign_changes()
        if not changes:
            logger.info(f"No crossing of mu = 1 on mode {scan.m}; extrema {scan.extrema()}")
            return CriticalPoint(STATUS_NO_CRITICAL, mu_extrema=scan.extrema())
        i, j = changes[0]
        lo, p_lo = scan.points[i].lam, scan.points[i].pair
        hi, p_hi = scan.points[j].lam, scan.points[j].pair
    else:
        lo, hi = float(bracket[0]), float(bracket[1])
        if not (0 < lo < hi):
            raise ValidationError(f"Bracket must satisfy 0 < lo < hi, got {bracket}")
        p_lo, _ = _pick(_eigs(source, lo, eigen, tolerances.eigen, complex(eigen.shift)), None)
        p_hi, _ = track_eigenvalue(source, hi, p_lo, eigen, tolerances.eigen)
    f_lo = float(np.real(p_lo.mu)) - 1.0
    f_hi = float(np.real(p_hi.mu)) - 1.0
    extrema = (min(f_lo, f_hi) + 1.0, max(f_lo, f_hi) + 1.0)
    if f_lo == 0:
        return CriticalPoint(STATUS_BIFURCATION, lo, p_lo, 0, ((lo, 1.0),), extrema)
    if f_hi == 0:
        return CriticalPoint(STATUS_BIFURCATION, hi, p_hi, 0, ((hi, 1.0),), extrema)
    if f_lo * f_hi > 0:
        logger.info(f"Bracket [{lo}, {hi}] holds no crossing of mu = 1")
        return CriticalPoint(STATUS_NO_CRITICAL, mu_extrema=extrema)

    x0, f0 = lo, f_lo
    x1, f1 = hi, f_hi
    history: List[Tuple[float, float]] = [(lo, f_lo + 1.0), (hi, f_hi + 1.0)]
    tolerance = tolerances.root
    for iteration in range(1, max_iterations + 1):
        x = x1 - f1 * (x1 - x0) / (f1 - f0) if f1 != f0 else 0.5 * (lo + hi)
        if not (lo < x < hi):
            x = 0.5 * (lo + hi)
        reference = p_lo if abs(x - lo) <= abs(hi - x) else p_hi
        pair, _ = track_eigenvalue(source, x, reference, eigen, tolerances.eigen)
        f = float(np.real(pair.mu)) - 1.0
        history.append((x, f + 1.0))
        logger.debug(f"Secant iteration {iteration}: lam={x:.12g}, mu-1={f:.3e}")
        if f * f_lo > 0:
            lo, f_lo, p_lo = x, f, pair
        else:
            hi, f_hi, p_hi = x, f, pair
        step = abs(x - x1)
        x0, f0, x1, f1 = x1, f1, x, f
        if f == 0 or step <= tolerance * abs(x) or (hi - lo) <= tolerance * abs(x):
            logger.info(f"Critical Galilei number lam0={x:.12g} on mode {source.m} ({iteration} iterations)")
            return CriticalPoint(STATUS_BIFURCATION, x, pair, iteration, tuple(history), extrema)
    raise ConvergenceError(
        f"Secant iteration for mu = 1 did not converge in {max_iterations} iterations "
        f"(bracket [{lo:.12g}, {hi:.12g}])",
        (lo, hi),
        [abs(h[1] - 1.0) for h in history],
    )


# ---------------------------------------------------------------------------
# Simplicity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimplicityDiagnostics:
    """
    ``multiplicity`` is the geometric multiplicity estimated from the small
    singular values of ``A - mu S`` in S-orthonormal coordinates; ``pairing``
    is ``|w1_star^H S w1|`` of the S-unit vectors (zero for a Jordan block).
    """

    multiplicity: int
    gap: float
    pairing: float
    normalized_pairing: complex
    outcome: str
    certified: bool


def certify_simplicity(
    pair: EigenPair,
    bundle: Optional[OperatorBundle] = None,
    gap_tolerance: float = 1e-6,
    rank_tolerance: Optional[float] = None,
) -> SimplicityDiagnostics:
    """
    Check that the eigenvalue is simple.

    Outcomes: "simple", "defective" (Jordan block), "multiple" (semisimple
    with geometric multiplicity > 1) and "cannot certify" (gap below
    ``gap_tolerance``).

    Raises:
        ValidationError: If no bundle is available
    """
    bundle = bundle or pair.bundle
    if bundle is None:
        raise ValidationError("certify_simplicity needs the bundle of the eigenpair")
    lower = scipy.linalg.cholesky(bundle.S, lower=True)
    shifted = bundle.A - pair.mu * bundle.S
    half = scipy.linalg.solve_triangular(lower, shifted, lower=True)
    scaled = scipy.linalg.solve_triangular(lower, half.T, lower=True).T
    singular = scipy.linalg.svd(scaled, compute_uv=False)
    reference = max(1.0, abs(pair.mu), float(singular[0]) if singular.size else 0.0)
    threshold = rank_tolerance if rank_tolerance is not None else max(1e-8, 100.0 * pair.residual) * reference
    multiplicity = int(np.sum(singular <= threshold))
    normalized = pair.normalized_pairing() if pair.bundle is not None else complex(pair.pairing)
    if pair.defective:
        outcome = "defective"
    elif multiplicity > 1:
        outcome = "multiple"
    elif pair.gap < gap_tolerance:
        outcome = "cannot certify"
    else:
        outcome = "simple"
    logger.debug(
        f"Simplicity at mu={complex(pair.mu):.10g}: multiplicity {multiplicity}, gap {pair.gap:.3e}, "
        f"pairing {abs(pair.pairing):.3e} -> {outcome}"
    )
    return SimplicityDiagnostics(
        multiplicity, float(pair.gap), float(abs(pair.pairing)), normalized, outcome, outcome == "simple"
    )


# ---------------------------------------------------------------------------
# Transversality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransversalityResult:
    mu_prime_fd: float
    mu_prime_formula: float
    delta: float
    mu_prime_fd_half: float
    richardson: float
    agreement: float
    flagged: bool
    transversal: bool
    constant_branch: bool
    formula_sign: int = FORMULA_SIGN


def default_delta(lam0: float) -> float:
    delta = max(1e-4, 1e-3 * lam0)
    return 0.5 * lam0 if delta >= lam0 else delta


def transversality(
    source: BundleSource,
    lam0: float,
    pair: EigenPair,
    delta: Optional[float] = None,
    eigen: EigenSpec = EigenSpec(),
    tolerances: Tolerances = Tolerances(),
    agreement_tolerance: float = 1e-2,
) -> TransversalityResult:
    """
    Derivative of the critical eigenvalue along the branch, twice.

    (a) central difference of the tracked eigenvalue, with a Richardson
    check at half the step; (b) the pairing ``w1_star^H (C + lam0 C') w1``
    with ``C = xi0 D1 + K`` and ``C'`` from central differences of bundles.

    Raises:
        FingerprintMismatchError: If the bundles do not share one basis
    """
    delta = delta or default_delta(lam0)

    def tracked(lam: float) -> float:
        p, _ = track_eigenvalue(source, lam, pair, eigen, tolerances.eigen)
        return float(np.real(p.mu))

    fd = (tracked(lam0 + delta) - tracked(lam0 - delta)) / (2.0 * delta)
    fd_half = (tracked(lam0 + 0.5 * delta) - tracked(lam0 - 0.5 * delta)) / delta
    richardson = (4.0 * fd_half - fd) / 3.0

    center = pair.bundle if pair.bundle is not None and pair.bundle.lam == lam0 else source.bundle(lam0)
    plus, minus = source.bundle(lam0 + delta), source.bundle(lam0 - delta)
    differences = [
        f"lam={b.lam}: {b.fingerprint} != {center.fingerprint}"
        for b in (plus, minus)
        if b.fingerprint != center.fingerprint
    ]
    if differences:
        raise FingerprintMismatchError("Bundles along the branch use different bases", differences)
    derivative = (plus.operator - minus.operator) / (2.0 * delta)
    w, z = pair.w1, pair.w1_star
    numerator = np.vdot(z, (center.operator + lam0 * derivative) @ w)
    formula = complex(numerator / np.vdot(z, center.S @ w))
    formula_value = float(np.real(formula))

    agreement = abs(fd - formula_value) / max(abs(fd), abs(formula_value), np.finfo(float).tiny)
    flagged = agreement > agreement_tolerance
    if flagged:
        logger.warning(
            f"mu' estimates disagree at lam0={lam0:.8g}: finite difference {fd:.6e}, "
            f"pairing {formula_value:.6e}; rerun with another step size"
        )
    scale = max(1.0, abs(pair.mu) / lam0)
    transversal = abs(formula_value) > tolerances.root * scale and abs(fd) > tolerances.root * scale
    return TransversalityResult(
        mu_prime_fd=fd,
        mu_prime_formula=formula_value,
        delta=delta,
        mu_prime_fd_half=fd_half,
        richardson=richardson,
        agreement=agreement,
        flagged=flagged,
        transversal=transversal,
        constant_branch=bool(source.constant),
    )


# ---------------------------------------------------------------------------
# Symmetry breaking
# ---------------------------------------------------------------------------


def sb_functional(w: DiscreteField, base: DiscreteField, rule: Optional[QuadratureRule] = None) -> float:
    """
    ``xi0 (d1 w, H) + 2 (w . D(H), v0) + xi_w (d1 v0, H)`` with the closed-form
    rotlet H, by quadrature.
    """
    rule = rule or select_rule(w.family, base.family)
    H, dH = RotletField().evaluate(rule.points)
    DH = strain(dH)
    w_values, w_grads = w.on(rule)
    v_values, v_grads = base.on(rule)
    xi0 = float(np.real(base.trace_vector[0]))
    xi_w = complex(w.trace_vector[0])
    weights = rule.weights
    term1 = xi0 * np.einsum("qa,qa,q->", w_grads[..., 0], H, weights)
    term2 = 2.0 * np.einsum("qa,qab,qb,q->", w_values, DH, v_values, weights)
    term3 = xi_w * np.einsum("qa,qa,q->", v_grads[..., 0], H, weights)
    return float(np.real(term1 + term2 + term3))


@dataclass(frozen=True)
class SymmetryBreaking:
    """
    ``functional`` of the critical eigenfunction, its rotational trace
    ``omega_e3`` and the torque route ``expected = -mu omega_e3 tau_H / (2 lam0)``.
    """

    functional: float
    omega_e3: float
    expected: float
    rotlet_torque: float
    consistency: float
    refinement: float
    flagged: bool

    @property
    def breaks_symmetry(self) -> bool:
        return abs(self.omega_e3) > 0 and abs(self.functional) > 0


def symmetry_breaking(
    pair: EigenPair,
    base: BaseFlow,
    lam0: float,
    tolerance: float = 1e-6,
) -> SymmetryBreaking:
    """
    Evaluate the symmetry-breaking functional at the critical eigenpair and
    cross-check it against the rotational trace of the eigenfunction.

    Raises:
        ValidationError: If the eigenpair is complex or its basis lacks the
            e3 rotational lifting field
    """
    if not pair.is_real:
        raise ValidationError("Symmetry breaking needs a real critical eigenpair")
    w = pair.field()
    if w.family.traces[:, 3].max(initial=0.0) == 0.0:
        raise ValidationError("The eigenfunction basis carries no e3 rotational lifting field")
    w = w.family.field(np.real(w.coeffs))
    rule = select_rule(w.family, base.field.family)
    functional = sb_functional(w, base.field, rule)
    refined = sb_functional(w, base.field, rule.refined())
    refinement = abs(refined - functional) / max(abs(refined), np.finfo(float).tiny)
    omega_e3 = float(np.real(w.trace_vector[3]))
    rotlet = RotletField()
    tau = float(rotlet.torque()[2])
    expected = -float(np.real(pair.mu)) * omega_e3 * tau / (2.0 * lam0)
    floor = 1e-12 * 4.0 * pi * float(np.max(np.abs(w.coeffs))) / lam0
    consistency = abs(functional - expected) / max(abs(functional), abs(expected), floor, np.finfo(float).tiny)
    flagged = consistency > tolerance or refinement > tolerance
    if flagged:
        logger.warning(
            f"Symmetry-breaking functional {functional:.10e} and torque route {expected:.10e} "
            f"disagree (consistency {consistency:.2e}, refinement {refinement:.2e})"
        )
    return SymmetryBreaking(functional, omega_e3, expected, tau, consistency, refinement, flagged)


def criticality_residual(pair: EigenPair) -> float:
    """Largest lifting-row entry of ``A w - S w`` relative to ``||S w||``."""
    bundle = pair.bundle
    if bundle is None or bundle.basis is None:
        raise ValidationError("Criticality residual needs the bundle basis")
    rows = [bundle.basis.lift_index(kind) for kind in
            (m.lift for m in bundle.basis.members if m.lift is not None)]
    if not rows:
        return 0.0
    Sw = bundle.S @ pair.w1
    r = bundle.A @ pair.w1 - Sw
    return float(np.max(np.abs(r[rows])) / max(np.linalg.norm(Sw), np.finfo(float).tiny))


@dataclass(frozen=True)
class DegeneracyCheck:
    """Spectra of the two real sub-blocks of one mode."""

    m: int
    mu_even: Tuple[complex, ...]
    mu_odd: Tuple[complex, ...]
    difference: float
    degenerate: bool

    @property
    def full_multiplicity(self) -> int:
        return 2 if self.degenerate else 1


def sub_block_degeneracy(
    base: BaseFlow,
    m: int,
    eigen: EigenSpec = EigenSpec(),
    tolerance: float = 1e-8,
) -> DegeneracyCheck:
    """
    Solve the reflection-even and reflection-odd blocks of mode ``m`` at the
    same base flow and compare the eigenvalues nearest the shift.
    """
    spectra: Dict[str, List[complex]] = {}
    for sector in ("even", "odd"):
        bundle = assemble_bundle(base, m, sector=sector)
        pairs = leading_eigs(bundle, eigen.shift, eigen.count, eigen.method, tolerance, eigen.dense_limit)
        spectra[sector] = [complex(p.mu) for p in pairs]
    even, odd = spectra["even"], spectra["odd"]
    difference = max(
        (min(abs(mu - other) for other in odd) for mu in even), default=float("inf")
    ) if odd else float("inf")
    scale = max([1.0] + [abs(mu) for mu in even])
    degenerate = difference <= 1e3 * tolerance * scale
    logger.debug(f"Sub-block spectra of mode {m}: even {even}, odd {odd}, difference {difference:.3e}")
    return DegeneracyCheck(m, tuple(even), tuple(odd), float(difference), degenerate)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class BifurcationReport:
    """Outcome of the bifurcation analysis of one mode."""

    m: Optional[int]
    status: str
    source: str
    lambda0: Optional[float] = None
    mu0: Optional[complex] = None
    mu_curve: List[Tuple[float, complex, float]] = field(default_factory=list)
    mu_extrema: Tuple[float, float] = (float("nan"), float("nan"))
    path_breaks: List[float] = field(default_factory=list)
    complex_crossings: List[ComplexCrossing] = field(default_factory=list)
    simplicity: Optional[SimplicityDiagnostics] = None
    transversality: Optional[TransversalityResult] = None
    symmetry: Optional[SymmetryBreaking] = None
    degeneracy: Optional[DegeneracyCheck] = None
    criticality_residual: Optional[float] = None
    secant_iterations: int = 0
    tolerances: Dict[str, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    pair: Optional[EigenPair] = None

    @property
    def mu_prime(self) -> Optional[Tuple[float, float]]:
        if self.transversality is None:
            return None
        return self.transversality.mu_prime_fd, self.transversality.mu_prime_formula

    @property
    def sb_functional(self) -> Optional[float]:
        return self.symmetry.functional if self.symmetry is not None else None

    @property
    def omega_e3(self) -> Optional[float]:
        return self.symmetry.omega_e3 if self.symmetry is not None else None

    def to_dict(self) -> Dict[str, Any]:
        """Nested plain values; complex numbers become ``[re, im]``."""
        data: Dict[str, Any] = {
            "m": self.m,
            "status": self.status,
            "source": self.source,
            "lambda0": self.lambda0,
            "mu0": _complex_pair(self.mu0) if self.mu0 is not None else None,
            "mu_curve": [[lam, _complex_pair(mu), gap] for lam, mu, gap in self.mu_curve],
            "mu_extrema": list(self.mu_extrema),
            "path_breaks": list(self.path_breaks),
            "complex_crossings": [
                {"lam_low": c.lam_low, "lam_high": c.lam_high, "mu": _complex_pair(c.mu)}
                for c in self.complex_crossings
            ],
            "simplicity": None,
            "mu_prime": None,
            "transversality": None,
            "symmetry": asdict(self.symmetry) if self.symmetry is not None else None,
            "sb_functional": self.sb_functional,
            "omega_e3": self.omega_e3,
            "degeneracy": None,
            "criticality_residual": self.criticality_residual,
            "secant_iterations": self.secant_iterations,
            "tolerances": dict(self.tolerances),
            "notes": list(self.notes),
        }
        if self.simplicity is not None:
            s = asdict(self.simplicity)
            s["normalized_pairing"] = _complex_pair(self.simplicity.normalized_pairing)
            data["simplicity"] = s
        if self.transversality is not None:
            data["transversality"] = asdict(self.transversality)
            data["mu_prime"] = list(self.mu_prime or ())
        if self.degeneracy is not None:
            d = self.degeneracy
            data["degeneracy"] = {
                "m": d.m,
                "mu_even": [_complex_pair(mu) for mu in d.mu_even],
                "mu_odd": [_complex_pair(mu) for mu in d.mu_odd],
                "difference": d.difference,
                "degenerate": d.degenerate,
                "full_multiplicity": d.full_multiplicity,
            }
        return data


def analyse(
    source: BundleSource,
    lambdas: Optional[Sequence[float]] = None,
    eigen: EigenSpec = EigenSpec(),
    tolerances: Tolerances = Tolerances(),
    bracket: Optional[Tuple[float, float]] = None,
) -> BifurcationReport:
    """
    Scan, locate lam0 and check every condition of a steady bifurcation.

    The report states "bifurcation" only when a crossing is found, the
    eigenvalue is simple within its real sub-block and it crosses with
    nonzero speed; otherwise it names the failed condition.
    """
    scan = scan_mu(source, lambdas, eigen, tolerances)
    report = BifurcationReport(
        m=source.m,
        status=STATUS_NO_CRITICAL,
        source=source.label,
        mu_curve=[(p.lam, p.mu, p.gap) for p in scan.points],
        mu_extrema=scan.extrema(),
        path_breaks=list(scan.path_breaks),
        complex_crossings=list(scan.complex_crossings),
        tolerances=asdict(tolerances),
    )
    if scan.complex_crossings:
        report.notes.append("complex eigenvalues cross |mu| = 1; outside the steady-bifurcation scope")
    critical = find_critical(source, scan, bracket, eigen, tolerances)
    report.mu_extrema = critical.mu_extrema if bracket is not None else report.mu_extrema
    if critical.status == STATUS_NO_CRITICAL or critical.pair is None or critical.lam0 is None:
        return report

    pair, lam0 = critical.pair, critical.lam0
    report.lambda0 = lam0
    report.mu0 = complex(pair.mu)
    report.pair = pair
    report.secant_iterations = critical.iterations
    report.simplicity = certify_simplicity(pair, gap_tolerance=tolerances.gap)
    report.transversality = transversality(source, lam0, pair, eigen=eigen, tolerances=tolerances)
    if report.transversality.constant_branch:
        report.notes.append("operator family is independent of lam: transversality reduces to mu(lam0)/lam0")
    if pair.bundle is not None and pair.bundle.basis is not None:
        report.criticality_residual = criticality_residual(pair)
    physical = isinstance(source, BranchBundleSource) and pair.bundle is not None and pair.bundle.base is not None
    if physical and pair.is_real and source.m == 1:
        report.symmetry = symmetry_breaking(pair, pair.bundle.base, lam0, tolerance=1e-6)
    if physical and source.m is not None and source.m >= 1:
        report.degeneracy = sub_block_degeneracy(pair.bundle.base, source.m, eigen, tolerances.eigen)

    if not report.simplicity.certified:
        report.status = STATUS_NOT_SIMPLE
    elif not report.transversality.transversal:
        report.status = STATUS_NOT_TRANSVERSAL
    else:
        report.status = STATUS_BIFURCATION
    logger.info(f"Mode {source.m}: {report.status} at lam0={lam0:.12g}")
    return report


def eigenfunction_slice(
    pair: EigenPair, extent: float = 6.0, n1: int = 49, n2: int = 25
) -> np.ndarray:
    """
    Velocity of the eigenfunction on a meridional grid of the plane x3 = 0.

    Returns:
        Rows ``(x1, x2, u1, u2, u3)`` for the grid points with ``|x| >= 1``;
        complex eigenfunctions contribute their real part
    """
    x1 = np.linspace(-extent, extent, n1)
    x2 = np.linspace(0.0, extent, n2)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    points = np.stack([X1.ravel(), X2.ravel(), np.zeros(X1.size)], axis=1)
    points = points[np.linalg.norm(points, axis=1) >= 1.0]
    values = np.real(pair.field().evaluate(points))
    return np.column_stack([points[:, 0], points[:, 1], values])
