"""
Bilinear, trilinear and dual-pairing forms of the weak problem.

For a field family {phi_k} and quadrature rule Q:

* ``S[k, j]  = (D(phi_j), D(phi_k))`` strain Gram matrix,
* ``D1[k, l] = (d1 phi_l, phi_k)`` made exactly skew,
* ``K(v)[k, j] = 2 (phi_j . D(phi_k), v) + xi(phi_j) (d1 v, phi_k)``,
* ``N(u)[k] = (u . D(phi_k), u) + xi(u) (d1 u, phi_k)``,
* ``g[k] = xi(phi_k)``.

Row blocks are filled by a thread pool sized from the physical core
count; every row is written by exactly one worker.
"""

import hashlib
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import psutil
import scipy.linalg
from scipy.optimize import minimize

from .exceptions import (
    AssemblyError,
    ModeCouplingError,
    QuadratureError,
    ValidationError,
)
from .geometry import (
    DiscreteField,
    ExtensionFamily,
    FieldFamily,
    LiftFamily,
    ModalBasis,
    QuadratureRule,
)


logger = logging.getLogger(__name__)

ROW_BLOCK = 16
FORCE_LIFTS = ("xi", "xi2", "xi3")
TORQUE_LIFTS = ("omega1", "omega2", "omega3")


@dataclass(frozen=True, eq=False)
class FormMatrix:
    """Assembled matrix of one form over one field family."""

    kind: str
    m: Optional[int]
    matrix: np.ndarray
    fingerprint: str
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.matrix.shape)


@dataclass(frozen=True, eq=False)
class GVector:
    """Entries ``<g, phi_k> = xi(phi_k)``."""

    m: Optional[int]
    vector: np.ndarray
    fingerprint: str


def family_fingerprint(family: FieldFamily) -> str:
    if isinstance(family, ModalBasis):
        return family.fingerprint
    payload = "|".join(family.labels) + f"|{family.scale}"
    if isinstance(family, ExtensionFamily):
        payload += f"|{family.cutoff.r_a}|{family.cutoff.r_b}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def worker_count() -> int:
    """Assembly workers: one per physical core."""
    return psutil.cpu_count(logical=False) or 1


def _blocked_product(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """``left @ right.T`` filled in independent row blocks."""
    out = np.empty((left.shape[0], right.shape[0]), dtype=np.result_type(left, right))
    blocks = [slice(i, min(i + ROW_BLOCK, left.shape[0])) for i in range(0, left.shape[0], ROW_BLOCK)]

    def fill(rows: slice) -> None:
        out[rows] = left[rows] @ right.T

    workers = min(worker_count(), len(blocks))
    if workers <= 1:
        for rows in blocks:
            fill(rows)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    return out


def strain(grads: np.ndarray) -> np.ndarray:
    """Symmetric part of gradient tensors over the last two axes."""
    return 0.5 * (grads + np.swapaxes(grads, -1, -2))


def _strains(family: FieldFamily, rule: QuadratureRule) -> np.ndarray:
    key = rule.key + ("strain",)
    cache = family._tabulations
    if key not in cache:
        _, grads = family.tabulation(rule)
        cache[key] = (strain(grads), np.empty(0))
    return cache[key][0]


def select_rule(*families: FieldFamily) -> QuadratureRule:
    """
    Quadrature rule exact for trilinear integrands built from the families.

    Modal bases and lifting fields use the inverse-map tensor rule sized by
    the largest degree, radial resolution and azimuthal order involved;
    families of compactly supported fields alone use their own rule.
    """
    modal = [f for f in families if isinstance(f, (ModalBasis, LiftFamily))]
    if not modal:
        return families[0].default_rule()
    bases = [f for f in modal if isinstance(f, ModalBasis)]
    L = max(f.L if isinstance(f, ModalBasis) else 1 for f in modal)
    N = max(f.N if isinstance(f, ModalBasis) else 0 for f in modal)
    m = max(f.m if isinstance(f, ModalBasis) else 1 for f in modal)
    margin = min((b.margin for b in bases), default=8)
    radial_map = bases[0].radial_map if bases else ("inverse", 1.0, 50.0)
    for b in bases:
        if (b.L, b.N, b.m, b.margin, b.radial_map) == (L, N, m, margin, radial_map):
            return b.rule
    return QuadratureRule.for_resolution(L, N, m, margin, radial_map)


# ---------------------------------------------------------------------------
# Quadrature verification
# ---------------------------------------------------------------------------


def _gram_row(family: FieldFamily, rule: QuadratureRule, k: int, chunk: int = 4096) -> np.ndarray:
    """Row k of the strain Gram matrix and of the d1 pairing, streamed over points."""
    row = np.zeros(2 * family.size)
    for start in range(0, rule.size, chunk):
        pts = rule.points[start:start + chunk]
        w = rule.weights[start:start + chunk]
        values, grads = family.tabulate(pts)
        d = strain(grads)
        row[: family.size] += np.einsum("jqab,qab,q->j", d, d[k], w)
        row[family.size:] += np.einsum("jqa,qa,q->j", grads[..., 0], values[k], w)
    return row


def check_quadrature(
    basis: ModalBasis,
    rule: Optional[QuadratureRule] = None,
    tolerance: float = 1e-8,
    seed: int = 0,
) -> float:
    """
    Recompute a random matrix row with doubled radial and polar orders.

    Returns:
        Relative disagreement between the two rules

    Raises:
        QuadratureError: If the disagreement exceeds ``tolerance``
    """
    rule = rule or basis.rule
    k = int(np.random.default_rng(seed).integers(basis.size))
    coarse = _gram_row(basis, rule, k)
    fine = _gram_row(basis, rule.refined(), k)
    scale = max(float(np.max(np.abs(fine))), np.finfo(float).tiny)
    disagreement = float(np.max(np.abs(coarse - fine)) / scale)
    logger.debug(f"Quadrature check on {basis!r}, row {k}: disagreement {disagreement:.3e}")
    if disagreement > tolerance:
        raise QuadratureError(
            f"Quadrature underresolved for {basis!r}: doubled-order recomputation of row {k} "
            f"disagrees by {disagreement:.3e} (> {tolerance:.1e})",
            disagreement,
        )
    if rule is basis.rule:
        basis.quadrature_checked = True
    return disagreement


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------


def assemble_S(
    basis: FieldFamily,
    rule: Optional[QuadratureRule] = None,
    check: bool = True,
    tolerance: float = 1e-8,
) -> FormMatrix:
    """
    Gram matrix of the strain inner product ``(D(u), D(w))``.

    Raises:
        QuadratureError: If the quadrature check flags underresolution
        AssemblyError: If the matrix is not positive definite
    """
    rule = rule or select_rule(basis)
    if check and isinstance(basis, ModalBasis) and rule is basis.rule and not basis.quadrature_checked:
        check_quadrature(basis, rule, tolerance)
    d = _strains(basis, rule)
    root_w = np.sqrt(rule.weights)[None, :, None, None]
    flat = (d * root_w).reshape(basis.size, -1)
    raw = _blocked_product(flat, flat)
    asymmetry = float(np.max(np.abs(raw - raw.T))) if raw.size else 0.0
    S = 0.5 * (raw + raw.T)
    smallest = float(scipy.linalg.eigvalsh(S, subset_by_index=[0, 0])[0]) if S.size else 0.0
    if smallest <= 0:
        raise AssemblyError(f"Strain Gram matrix is not positive definite (min eigenvalue {smallest:.3e})")
    return FormMatrix(
        "S", basis.m, S, family_fingerprint(basis),
        {"asymmetry": asymmetry, "min_eigenvalue": smallest},
    )


def gradient_gram(basis: FieldFamily, rule: Optional[QuadratureRule] = None) -> np.ndarray:
    """Matrix of ``(grad phi_j, grad phi_k)``."""
    rule = rule or select_rule(basis)
    _, grads = basis.tabulation(rule)
    flat = (grads * np.sqrt(rule.weights)[None, :, None, None]).reshape(basis.size, -1)
    G = _blocked_product(flat, flat)
    return 0.5 * (G + G.T)


def assemble_D1(basis: FieldFamily, rule: Optional[QuadratureRule] = None) -> FormMatrix:
    """
    Skew matrix of ``(d1 phi_l, phi_k)``.

    The surface term ``∫ e1.n phi_l.phi_k`` vanishes for rigid traces, so the
    assembled pairing is skew up to quadrature error; its symmetric part is
    reported as ``boundary_correction`` and dropped.
    """
    rule = rule or select_rule(basis)
    values, grads = basis.tabulation(rule)
    weighted = (values * rule.weights[None, :, None]).reshape(basis.size, -1)
    A = _blocked_product(weighted, grads[..., 0].reshape(basis.size, -1))
    correction = float(np.max(np.abs(A + A.T))) if A.size else 0.0
    D1 = 0.5 * (A - A.T)
    return FormMatrix("D1", basis.m, D1, family_fingerprint(basis), {"boundary_correction": correction})


def _check_modes(basis: FieldFamily, v: DiscreteField) -> None:
    m, mv = basis.m, v.mode
    if m is None or mv is None:
        return
    if mv not in (0, 2 * m):
        raise ModeCouplingError(
            f"Trilinear block for mode {m} with a mode-{mv} field violates the Fourier "
            f"selection rule (allowed field modes: 0 or {2 * m})"
        )


def coupling_block(
    test: FieldFamily, trial: FieldFamily, v: DiscreteField, rule: Optional[QuadratureRule] = None
) -> np.ndarray:
    """
    ``2 (phi_j . D(psi_k), v) + xi(phi_j) (d1 v, psi_k)`` for test fields psi
    and trial fields phi, without any selection-rule check.
    """
    rule = rule or select_rule(test, trial, v.family)
    test_values, _ = test.tabulation(rule)
    trial_values, _ = trial.tabulation(rule)
    d = _strains(test, rule)
    v_values, v_grads = v.on(rule)
    v_values = np.real(v_values)
    v_grads = np.real(v_grads)
    w = rule.weights
    t = np.einsum("kqab,qb->kqa", d, v_values) * w[None, :, None]
    K = 2.0 * _blocked_product(t.reshape(test.size, -1), trial_values.reshape(trial.size, -1))
    a = np.einsum("kqa,qa,q->k", test_values, v_grads[..., 0], w)
    K += np.outer(a, trial.traces[:, 0])
    return K


def assemble_trilinear(
    basis: FieldFamily, v: DiscreteField, rule: Optional[QuadratureRule] = None
) -> FormMatrix:
    """
    Matrix ``K(v)`` with ``(K(v) u)_k = 2 (u . D(phi_k), v) + xi(u) (d1 v, phi_k)``.

    Raises:
        ModeCouplingError: If ``v`` cannot couple mode ``basis.m`` to itself
    """
    _check_modes(basis, v)
    K = coupling_block(basis, basis, v, rule)
    return FormMatrix("K", basis.m, K, family_fingerprint(basis))


def nonlinear_map(
    basis: FieldFamily,
    coeffs: np.ndarray,
    D1: Optional[FormMatrix] = None,
    rule: Optional[QuadratureRule] = None,
) -> np.ndarray:
    """
    Quadratic map ``N(u)_k = (u . D(phi_k), u) + xi(u) (d1 u, phi_k)``.

    With ``D1`` given, the second term uses the skew matrix, so that
    ``u . N(u)`` reduces to the volume form of the vanishing surface integral.
    """
    rule = rule or select_rule(basis)
    u = basis.field(coeffs)
    u_values, u_grads = u.on(rule)
    d = _strains(basis, rule)
    w = rule.weights
    out = np.einsum("kqab,qa,qb,q->k", d, u_values, u_values, w)
    xi = float(np.real(u.trace_vector[0]))
    if D1 is not None:
        out = out + xi * (D1.matrix @ coeffs)
    else:
        values, _ = basis.tabulation(rule)
        out = out + xi * np.einsum("kqa,qa,q->k", values, u_grads[..., 0], w)
    return out


def assemble_g(basis: FieldFamily) -> GVector:
    """
    Vector ``xi(phi_k)``.

    Raises:
        ValidationError: If the family has no translational lifting field
    """
    xi = basis.traces[:, 0]
    if not np.any(xi != 0):
        raise ValidationError(
            f"Family {basis!r} has no translational lifting field; <g, phi> needs the m = 0 even sector"
        )
    return GVector(basis.m, xi.copy(), family_fingerprint(basis))


# ---------------------------------------------------------------------------
# Residuals, forces and torques
# ---------------------------------------------------------------------------


def weak_residual(
    test: FieldFamily,
    fields: Sequence[DiscreteField],
    lam: float,
    rule: Optional[QuadratureRule] = None,
) -> np.ndarray:
    """
    Residual ``(D(v), D(phi)) - lam xi(phi) - lam [(v . D(phi), v) + xi(v) (d1 v, phi)]``
    of ``v = sum(fields)`` tested with every member of ``test``.
    """
    rule = rule or select_rule(test, *(f.family for f in fields))
    values, _ = test.tabulation(rule)
    d = _strains(test, rule)
    v_values = np.zeros((rule.size, 3))
    v_grads = np.zeros((rule.size, 3, 3))
    xi = 0.0
    for f in fields:
        fv, fg = f.on(rule)
        v_values += np.real(fv)
        v_grads += np.real(fg)
        xi += float(np.real(f.trace_vector[0]))
    w = rule.weights
    viscous = np.einsum("kqab,qab,q->k", d, strain(v_grads), w)
    convective = np.einsum("kqab,qa,qb,q->k", d, v_values, v_values, w)
    convective += xi * np.einsum("kqa,qa,q->k", values, v_grads[..., 0], w)
    return viscous - lam * test.traces[:, 0] - lam * convective


def recover_force_torque(
    v: DiscreteField,
    lam: float,
    residual_norm: Optional[float] = None,
    tolerance: float = 1e-8,
    rule: Optional[QuadratureRule] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Force and torque exerted by the liquid on the sphere, recovered weakly.

    The momentum residual is tested with the Stokes lifting fields of unit
    translation and rotation; no traction is formed pointwise. The traction
    form carries 2 D(v), hence the factor 2 against the weak-form parameter.

    Args:
        v: Velocity field
        lam: Galilei parameter of the weak equation
        residual_norm: Residual of ``v`` as a solution; a warning is logged
            when it exceeds ``tolerance``
        tolerance: Convergence threshold for the warning
        rule: Optional quadrature rule

    Returns:
        (force, torque) as 3-vectors
    """
    if residual_norm is not None and residual_norm > tolerance:
        logger.warning(
            f"Recovering force/torque from a non-converged field (residual {residual_norm:.3e})"
        )
    lifts = LiftFamily(FORCE_LIFTS + TORQUE_LIFTS)
    rule = rule or select_rule(lifts, v.family)
    # weak_residual carries -lam xi(phi) for the body force; remove it here
    tested = weak_residual(lifts, [v], lam, rule) + lam * lifts.traces[:, 0]
    wrench = -2.0 * tested
    return wrench[:3].copy(), wrench[3:].copy()


def strain_inner(u: DiscreteField, w: DiscreteField, rule: Optional[QuadratureRule] = None) -> float:
    """``(D(u), D(w))`` by quadrature."""
    rule = rule or select_rule(u.family, w.family)
    _, gu = u.on(rule)
    _, gw = w.on(rule)
    return float(np.real(np.einsum("qab,qab,q->", strain(gu), strain(gw), rule.weights)))


# ---------------------------------------------------------------------------
# Identity checks
# ---------------------------------------------------------------------------


def surface_coupling(basis: FieldFamily, samples: int = 20, seed: int = 0,
                     n_theta: int = 16, n_phi: int = 16) -> float:
    """
    Largest ``|∫_{|x|=1} (u.n)(u.phi)|`` over members u, random combinations
    u, and all members phi.
    """
    rule = QuadratureRule.sphere(n_theta, n_phi)
    values, _ = basis.tabulate(rule.points)
    normal = rule.points
    rng = np.random.default_rng(seed)
    combos = np.vstack([np.eye(basis.size), rng.normal(size=(samples, basis.size))])
    worst = 0.0
    for c in combos:
        u = np.tensordot(c, values, axes=1)
        un = np.sum(u * normal, axis=1)
        pairing = np.einsum("kqa,qa,q,q->k", values, u, un, rule.weights)
        worst = max(worst, float(np.max(np.abs(pairing))))
    return worst


def korn_identity(
    basis: ModalBasis,
    S: Optional[FormMatrix] = None,
    samples: int = 20,
    seed: int = 0,
) -> float:
    """
    Largest relative defect of ``||grad w||² = 2 ||D(w)||²`` over random
    homogeneous-trace fields.
    """
    S = S or assemble_S(basis)
    G = gradient_gram(basis)
    idx = basis.homogeneous
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        c = np.zeros(basis.size)
        c[idx] = rng.normal(size=idx.size)
        strain_energy = c @ S.matrix @ c
        worst = max(worst, abs(c @ G @ c - 2.0 * strain_energy) / (2.0 * strain_energy))
    return float(worst)


def korn_ratio(basis: FieldFamily, coeffs: np.ndarray, S: Optional[FormMatrix] = None) -> float:
    """``||grad u|| / ||D(u)||``; lies in [1/sqrt(2), sqrt(2)] on the whole space."""
    S = S or assemble_S(basis, check=False)
    G = gradient_gram(basis)
    return float(np.sqrt((coeffs @ G @ coeffs) / (coeffs @ S.matrix @ coeffs)))


def _lp_norm(values: np.ndarray, rule: QuadratureRule, p: int) -> float:
    return float(rule.integrate(np.sum(values**2, axis=-1) ** (p / 2.0)) ** (1.0 / p))


def lp_norms(basis: FieldFamily, coeffs: np.ndarray, p: int) -> np.ndarray:
    """``||u||_p`` for every row of ``coeffs``, on the refined rule of the basis."""
    rule = select_rule(basis).refined()
    values, _ = basis.tabulate(rule.points)
    fields = np.tensordot(np.atleast_2d(coeffs), values, axes=1)
    return np.array([_lp_norm(u, rule, p) for u in fields])


def _span_maximum(
    ratio: Callable[[np.ndarray], float], size: int, seed: int, samples: int, starts: int
) -> float:
    """
    Largest value of a scale-invariant ``ratio`` found on the span.

    Candidates are the members and seeded random combinations; the best
    ``starts`` of them are then climbed with L-BFGS-B.
    """
    rng = np.random.default_rng(seed)
    candidates = np.vstack([np.eye(size), rng.normal(size=(samples, size))])
    values = np.array([ratio(c) for c in candidates])
    best = float(values.max())
    for k in np.argsort(values)[::-1][:starts]:
        res = minimize(lambda c: -ratio(c), candidates[k], method="L-BFGS-B")
        if np.isfinite(res.fun):
            best = max(best, -float(res.fun))
    logger.debug("span maximum %.6e from %d candidates", best, len(candidates))
    return best


def sobolev_constant(
    basis: FieldFamily,
    S: Optional[FormMatrix] = None,
    seed: int = 0,
    samples: int = 256,
    starts: int = 4,
) -> float:
    """
    Recorded constant ``c0 = sup ||u||_6 / ||D(u)||_2`` over the span.

    ``||.||_6`` is not a quadratic form, so the supremum is searched over
    members, random combinations and local ascent from the best of them.
    """
    S = S or assemble_S(basis, check=False)
    rule = select_rule(basis).refined()
    values, _ = basis.tabulate(rule.points)
    A = S.matrix

    def ratio(c: np.ndarray) -> float:
        energy = float(c @ A @ c)
        if energy <= 0.0:
            return 0.0
        return _lp_norm(np.tensordot(c, values, axes=1), rule, 6) / np.sqrt(energy)

    return _span_maximum(ratio, basis.size, seed, samples, starts)


def trace_constant(basis: FieldFamily, S: Optional[FormMatrix] = None) -> float:
    """
    Smallest c1 with ``|xi(u)| + |omega(u)|_2 <= c1 ||D(u)||`` on the span,
    where ``|omega|_2`` is the Euclidean norm of the angular velocity.

    Computed from the 4x4 matrix ``T^T S^-1 T`` of trace functionals.
    """
    S = S or assemble_S(basis, check=False)
    T = basis.traces
    G = T.T @ scipy.linalg.solve(S.matrix, T, assume_a="pos")
    g00, g, H = G[0, 0], G[0, 1:], G[1:, 1:]
    if np.linalg.norm(g) <= 1e-12 * max(1.0, float(np.max(np.abs(G)))):
        return float(np.sqrt(g00 + max(0.0, float(np.linalg.eigvalsh(H)[-1]))))

    def negative(angles: np.ndarray, sign: float) -> float:
        th, ph = angles
        b = np.array([np.cos(th), np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph)])
        z = np.concatenate([[sign], b])
        return -float(z @ G @ z)

    best = 0.0
    for sign, start in itertools.product((1.0, -1.0), itertools.product((0.3, 1.5, 2.8), (0.0, 2.0, 4.0))):
        res = minimize(negative, np.array(start), args=(sign,), method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        best = max(best, -res.fun)
    return float(np.sqrt(best))


def l4_interpolation_constant(
    basis: FieldFamily,
    S: Optional[FormMatrix] = None,
    D1: Optional[FormMatrix] = None,
    seed: int = 0,
    samples: int = 256,
    starts: int = 4,
) -> float:
    """
    Recorded constant c with
    ``||u||_4 <= c (||d1 u||_-1^(1/4) ||D(u)||^(3/4) + ||D(u)||)`` over the span,
    where the dual norm is taken through the S-Riesz representative.
    """
    S = S or assemble_S(basis, check=False)
    D1 = D1 or assemble_D1(basis)
    rule = select_rule(basis).refined()
    values, _ = basis.tabulate(rule.points)
    factor = scipy.linalg.cho_factor(S.matrix)
    A, B = S.matrix, D1.matrix

    def ratio(c: np.ndarray) -> float:
        energy = float(np.sqrt(max(c @ A @ c, 0.0)))
        if energy == 0.0:
            return 0.0
        a = B @ c
        dual = float(np.sqrt(max(a @ scipy.linalg.cho_solve(factor, a), 0.0)))
        norm4 = _lp_norm(np.tensordot(c, values, axes=1), rule, 4)
        return norm4 / (dual**0.25 * energy**0.75 + energy)

    return _span_maximum(ratio, basis.size, seed, samples, starts)


def l4_interpolation_bound(
    basis: FieldFamily, coeffs: np.ndarray, S: FormMatrix, D1: FormMatrix
) -> np.ndarray:
    """Right-hand side factor ``||d1 u||_-1^(1/4) ||D(u)||^(3/4) + ||D(u)||`` per row."""
    factor = scipy.linalg.cho_factor(S.matrix)
    out = []
    for c in np.atleast_2d(coeffs):
        energy = float(np.sqrt(max(c @ S.matrix @ c, 0.0)))
        a = D1.matrix @ c
        dual = float(np.sqrt(max(a @ scipy.linalg.cho_solve(factor, a), 0.0)))
        out.append(dual**0.25 * energy**0.75 + energy)
    return np.array(out)


# ---------------------------------------------------------------------------
# Matrix dumps
# ---------------------------------------------------------------------------


def dump_matrix(form: FormMatrix, path: Union[str, Path]) -> Path:
    """
    Write a matrix as row-major CSV with a header line carrying the
    basis fingerprint.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = form.matrix.shape
    header = f"# fingerprint={form.fingerprint} kind={form.kind} m={form.m} rows={rows} cols={cols}"
    with path.open("w", encoding="utf-8") as f:
        f.write(header + "\n")
        for row in np.real(form.matrix):
            f.write(",".join(f"{x:.17g}" for x in row) + "\n")
    return path


def load_matrix(path: Union[str, Path]) -> Tuple[Dict[str, str], np.ndarray]:
    """Read a dump written by :func:`dump_matrix`."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        header = f.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in header)
        rows: List[List[float]] = [[float(x) for x in line.split(",")] for line in f if line.strip()]
    return meta, np.array(rows)
