"""
Real solid harmonics about the x1-axis and the polynomial vector fields
generated from them.

A solid harmonic of degree ``l`` and azimuthal order ``m`` is

    h = Re/Im((x2 + i x3)^m) * r^(l-m) * P_l^(m)(x1 / r)

which is a homogeneous harmonic polynomial in (x1, x2, x3). Every modal
basis member is a sum of terms R(r) * P(x) where P is one of the vector
fields below.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, pi, sqrt
from typing import Callable, List, Tuple

import numpy as np
import sympy as sp

from .exceptions import ValidationError


logger = logging.getLogger(__name__)

X1, X2, X3 = sp.symbols("x1 x2 x3", real=True)
COORDS = (X1, X2, X3)

# grad h x x (toroidal), x h and grad h (poloidal)
FIELD_KINDS = ("curl", "xh", "grad")
PHASES = ("cos", "sin")


def _check(l: int, m: int, phase: str) -> None:
    if m < 0 or l < m or l < 0:
        raise ValidationError(f"Solid harmonic needs 0 <= m <= l, got l={l}, m={m}")
    if phase not in PHASES:
        raise ValidationError(f"Unknown azimuthal phase '{phase}'")
    if m == 0 and phase == "sin":
        raise ValidationError("The m = 0 harmonic has no sine part")


def harmonic_norm(l: int, m: int) -> float:
    """Factor that makes the harmonic unit in L2 over the unit sphere."""
    integral = (2.0 / (2 * l + 1)) * factorial(l + m) / factorial(l - m)
    integral *= 2 * pi if m == 0 else pi
    return 1.0 / sqrt(integral)


@lru_cache(maxsize=None)
def solid_harmonic(l: int, m: int, phase: str = "cos") -> sp.Expr:
    """
    Return the unnormalized solid harmonic as an expanded sympy polynomial.

    Args:
        l: Degree
        m: Azimuthal order about the x1-axis
        phase: "cos" or "sin" azimuthal dependence

    Returns:
        Homogeneous harmonic polynomial of degree ``l``
    """
    _check(l, m, phase)
    t = sp.Symbol("t")
    legendre = sp.legendre(l, t)
    if m:
        legendre = sp.diff(legendre, t, m)
    rho2 = X1**2 + X2**2 + X3**2
    axial = sp.Integer(0)
    for (k,), coeff in sp.Poly(legendre, t).terms():
        axial += coeff * X1**k * rho2 ** ((l - m - k) // 2)
    azimuthal = sp.expand((X2 + sp.I * X3) ** m)
    part = sp.re(azimuthal) if phase == "cos" else sp.im(azimuthal)
    return sp.expand(part * axial)


def _vector_expr(kind: str, h: sp.Expr) -> List[sp.Expr]:
    grad = [sp.diff(h, x) for x in COORDS]
    if kind == "grad":
        return grad
    if kind == "xh":
        return [x * h for x in COORDS]
    g1, g2, g3 = grad
    return [g2 * X3 - g3 * X2, g3 * X1 - g1 * X3, g1 * X2 - g2 * X1]


@dataclass(frozen=True)
class PolynomialField:
    """
    Homogeneous polynomial vector field built from a solid harmonic.

    Calling the field on an ``(n, 3)`` array of points returns the values
    ``(n, 3)`` and the Jacobian ``(n, 3, 3)`` with ``jac[:, i, j] = d_j P_i``.
    """

    kind: str
    l: int
    m: int
    phase: str
    degree: int
    _evaluate: Callable[..., List[object]] = field(compare=False, repr=False)

    def __call__(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        raw = self._evaluate(points[:, 0], points[:, 1], points[:, 2])
        flat = np.empty((12, n))
        for row, value in enumerate(raw):
            flat[row] = np.broadcast_to(np.asarray(value, dtype=float), (n,))
        values = flat[:3].T
        jac = flat[3:].T.reshape(n, 3, 3)
        return values, jac


@lru_cache(maxsize=None)
def polynomial_field(kind: str, l: int, m: int, phase: str = "cos") -> PolynomialField:
    """
    Build (and cache) the lambdified polynomial field of the given kind.

    Args:
        kind: "curl" for grad(h) x x, "xh" for x h, "grad" for grad(h)
        l: Harmonic degree
        m: Harmonic azimuthal order
        phase: "cos" or "sin"

    Returns:
        PolynomialField evaluator
    """
    if kind not in FIELD_KINDS:
        raise ValidationError(f"Unknown polynomial field kind '{kind}'")
    h = solid_harmonic(l, m, phase)
    components = [sp.expand(c) for c in _vector_expr(kind, h)]
    jacobian = [sp.diff(c, x) for c in components for x in COORDS]
    evaluate = sp.lambdify(COORDS, components + jacobian, modules="numpy")
    degree = {"curl": l, "xh": l + 1, "grad": l - 1}[kind]
    logger.debug(f"Built polynomial field {kind}(l={l}, m={m}, {phase})")
    return PolynomialField(kind, l, m, phase, degree, evaluate)
