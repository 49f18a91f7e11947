"""Shared numerical kernels.

Adaptive quadrature and the tridiagonal eigensolver wrap SciPy behind the
error reporting the rest of the package relies on; the fixed-contour Laplace
inversion and the overflow-safe hyperbolic ratios are implemented here.
All kernels are pure functions and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate as _quadpack
from scipy import linalg as _linalg
from scipy.special import erfc, erfcx  # noqa: F401  (re-exported for callers)


class NumericsError(RuntimeError):
    """Base class for numerical-kernel failures."""


class QuadratureError(NumericsError):
    """Adaptive quadrature did not converge to the requested tolerance."""


class InversionError(NumericsError):
    """Numerical Laplace inversion did not converge."""


class EigenError(NumericsError):
    """Eigendecomposition failed or exceeded its residual budget."""


@dataclass(frozen=True)
class QuadratureResult:
    """Value of an integral together with its reported error bound."""

    value: float
    error: float
    neval: int


def integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
    limit: int = 200,
) -> QuadratureResult:
    """Adaptive quadrature of ``f`` over [a, b]; b may be ``numpy.inf``.

    Semi-infinite ranges are handled by the integrator's internal variable
    substitution mapping the tail onto a finite interval. Raises
    :class:`QuadratureError` if the subdivision limit is hit or the reported
    error exceeds ``max(tol, 1e-6 * |value|)``.
    """
    out = _quadpack.quad(f, a, b, epsabs=tol, epsrel=tol, limit=limit, full_output=1)
    value, error, info = out[0], out[1], out[2]
    if len(out) > 3:
        raise QuadratureError(f"quadrature failed on [{a}, {b}]: {out[3]}")
    if not math.isfinite(value) or error > max(tol * 100.0, 1e-6 * abs(value)):
        raise QuadratureError(
            f"quadrature error {error:.3g} exceeds budget on [{a}, {b}]"
        )
    return QuadratureResult(value=value, error=error, neval=int(info["neval"]))


def compensated_sum(values) -> float:
    """Exactly rounded sum of a 1-D collection of floats."""
    return math.fsum(np.asarray(values, dtype=float).ravel())


# ---------------------------------------------------------------------------
# Laplace inversion on a fixed deformed contour
# ---------------------------------------------------------------------------


def _talbot_once(F: Callable, tau: float, m: int) -> float:
    # Contour s(theta) = r*theta*(cot(theta) + i), theta in (-pi, pi),
    # with the customary radius r = 2m/(5 tau).
    r = 2.0 * m / (5.0 * tau)
    theta = np.arange(1, m) * (np.pi / m)
    cot = 1.0 / np.tan(theta)
    s = r * theta * (cot + 1j)
    sigma = theta + (theta * cot - 1.0) * cot
    fs = np.asarray(F(s), dtype=complex)
    terms = np.exp(s * tau) * fs * (1.0 + 1j * sigma)
    head = 0.5 * math.exp(r * tau) * complex(F(complex(r, 0.0))).real
    return (r / m) * (head + compensated_sum(terms.real))


def laplace_invert(
    F: Callable,
    tau: float,
    nodes: int = 48,
) -> tuple[float, float]:
    """Invert a Laplace transform at time ``tau`` on a fixed deformed contour.

    ``F`` must be analytic to the right of (and off) the negative real axis
    and accept a complex ndarray. Returns ``(value, error_estimate)`` where
    the estimate is the difference against a coarser contour. Raises
    :class:`InversionError` on non-finite node values.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if nodes < 12:
        raise ValueError("need at least 12 contour nodes")
    v1 = _talbot_once(F, tau, nodes)
    v2 = _talbot_once(F, tau, nodes - max(6, nodes // 6))
    if not (math.isfinite(v1) and math.isfinite(v2)):
        raise InversionError(f"non-finite inversion at tau={tau} with {nodes} nodes")
    return v1, abs(v1 - v2)


# ---------------------------------------------------------------------------
# Symmetric tridiagonal eigensolve
# ---------------------------------------------------------------------------


def tridiag_eigen(
    diag: np.ndarray,
    offdiag: np.ndarray,
    residual_tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric tridiagonal matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted in
    descending order and eigenvectors in the matching columns. Every pair is
    checked against the residual budget ``|A v - lambda v| <= tol * |A|``.
    """
    diag = np.asarray(diag, dtype=float)
    offdiag = np.asarray(offdiag, dtype=float)
    if offdiag.size != diag.size - 1:
        raise ValueError("offdiag must have one fewer entry than diag")
    if diag.size == 1:
        return diag.copy(), np.ones((1, 1))
    try:
        vals, vecs = _linalg.eigh_tridiagonal(diag, offdiag)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy rarely fails
        raise EigenError(f"tridiagonal eigensolve failed: {exc}") from exc

    av = diag[:, None] * vecs
    av[:-1] += offdiag[:, None] * vecs[1:]
    av[1:] += offdiag[:, None] * vecs[:-1]
    residual = np.abs(av - vecs * vals[None, :]).max(axis=0)
    scale = max(np.abs(vals).max(), 1e-300)
    worst = int(np.argmax(residual))
    if residual[worst] > residual_tol * scale:
        raise EigenError(
            f"eigenpair {worst} residual {residual[worst]:.3g} exceeds "
            f"{residual_tol:.1g} * |A|"
        )
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


# ---------------------------------------------------------------------------
# Overflow-safe special-function helpers
# ---------------------------------------------------------------------------


def cosh_ratio(kappa, a):
    """cosh(kappa * a) / sinh(kappa) for |a| <= 1 without overflow.

    Valid for real or complex ``kappa`` with Re(kappa) >= 0; every exponent
    in the shifted form is non-positive. A short series covers |kappa| -> 0.
    """
    if abs(kappa) < 1e-4:
        ka2 = (kappa * a) ** 2
        k2 = kappa * kappa
        return (1.0 + ka2 / 2.0 + ka2 * ka2 / 24.0) / (
            kappa * (1.0 + k2 / 6.0 + k2 * k2 / 120.0)
        )
    num = np.exp(kappa * (a - 1.0)) + np.exp(-kappa * (a + 1.0))
    den = 1.0 - np.exp(-2.0 * kappa)
    return num / den


def sinh_ratio(kappa, a):
    """sinh(kappa * a) / sinh(kappa) for |a| <= 1 without overflow."""
    if abs(kappa) < 1e-4:
        ka2 = (kappa * a) ** 2
        k2 = kappa * kappa
        return a * (1.0 + ka2 / 6.0) / (1.0 + k2 / 6.0)
    num = np.exp(kappa * (a - 1.0)) - np.exp(-kappa * (a + 1.0))
    den = 1.0 - np.exp(-2.0 * kappa)
    return num / den


def coth(z):
    """Hyperbolic cotangent, stable for large |Re z| and accurate near 0."""
    z = complex(z) if np.iscomplexobj(z) or isinstance(z, complex) else float(z)
    re = z.real if isinstance(z, complex) else z
    if re < 0:
        return -coth(-z)
    if abs(z) < 1e-4:
        return 1.0 / z + z / 3.0 - z**3 / 45.0
    e = np.exp(-2.0 * z)
    return (1.0 + e) / (1.0 - e)
