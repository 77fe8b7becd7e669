"""Complex 2x2 unitary algebra.

Angle parametrization of U(2), Haar sampling, global-phase handling and
Bloch/Poincare sphere geometry. All matrices are dense complex128 numpy
arrays of shape (2, 2); equality of unitaries is always understood up to
a global phase.

The parametrization used throughout is

    U = e^{i alpha} [[ e^{-i(beta+delta)/2} cos(gamma/2),
                      -e^{-i(beta-delta)/2} sin(gamma/2) ],
                     [ e^{ i(beta-delta)/2} sin(gamma/2),
                       e^{ i(beta+delta)/2} cos(gamma/2) ]]

with gamma restricted to [0, pi] on recovery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ALGEBRA_TOL",
    "VALIDATION_TOL",
    "IDENTITY",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "NotUnitary",
    "SU2Params",
    "is_unitary",
    "require_unitary",
    "su2_from_params",
    "params_from_unitary",
    "haar_random_unitary",
    "bloch_vector_of",
    "sphere_angle",
    "phase_equal",
    "phase_distance",
    "canonical_phase",
    "rotation_about",
]

# Default tolerances; algebraic identities should hold to ALGEBRA_TOL,
# input validation uses the looser VALIDATION_TOL.
ALGEBRA_TOL = 1e-12
VALIDATION_TOL = 1e-9

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class NotUnitary(ValueError):
    """Raised when a matrix fails the unitarity check."""


@dataclass(frozen=True)
class SU2Params:
    """Angle parametrization (alpha, beta, gamma, delta) of a 2x2 unitary.

    alpha is the global phase; gamma is kept in [0, pi] by
    params_from_unitary. zeta/eta are the half-sum/half-difference
    combinations that show up in aligned-channel calculations.
    """

    alpha: float
    beta: float
    gamma: float
    delta: float

    @property
    def zeta(self) -> float:
        return 0.5 * (self.beta + self.delta)

    @property
    def eta(self) -> float:
        return 0.5 * (self.beta - self.delta)

    def replace(self, **kw) -> "SU2Params":
        d = {"alpha": self.alpha, "beta": self.beta,
             "gamma": self.gamma, "delta": self.delta}
        d.update(kw)
        return SU2Params(**d)


def is_unitary(u: np.ndarray, tol: float = VALIDATION_TOL) -> bool:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        return False
    return np.linalg.norm(u @ u.conj().T - IDENTITY) <= tol


def require_unitary(u: np.ndarray, tol: float = VALIDATION_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise NotUnitary(f"expected shape (2, 2), got {u.shape}")
    resid = np.linalg.norm(u @ u.conj().T - IDENTITY)
    if resid > tol:
        raise NotUnitary(f"unitarity residual {resid:.3e} exceeds {tol:.1e}")
    return u


def su2_from_params(p: SU2Params) -> np.ndarray:
    """Build the unitary of the standard angle parametrization."""
    c = np.cos(0.5 * p.gamma)
    s = np.sin(0.5 * p.gamma)
    zp = np.exp(-0.5j * (p.beta + p.delta))
    zm = np.exp(-0.5j * (p.beta - p.delta))
    u = np.array([[zp * c, -zm * s],
                  [np.conj(zm) * s, np.conj(zp) * c]], dtype=complex)
    return np.exp(1j * p.alpha) * u


def params_from_unitary(u: np.ndarray) -> SU2Params:
    """Recover (alpha, beta, gamma, delta) from a unitary.

    gamma = 2 arccos(|u00|) in [0, pi]. At the degenerate branches
    gamma in {0, pi} the pair (beta, delta) collapses to a single phase:
    delta is set to 0 and the phase absorbed into beta.
    """
    u = require_unitary(u)
    det = u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0]
    alpha = 0.5 * np.angle(det)
    su = u * np.exp(-1j * alpha)  # det(su) = 1
    c = min(abs(su[0, 0]), 1.0)
    gamma = 2.0 * np.arccos(c)
    s = abs(su[1, 0])
    if c <= ALGEBRA_TOL:  # gamma = pi
        beta, delta = 2.0 * np.angle(su[1, 0]), 0.0
    elif s <= ALGEBRA_TOL:  # gamma = 0
        beta, delta = -2.0 * np.angle(su[0, 0]), 0.0
    else:
        zeta = -np.angle(su[0, 0])
        eta = np.angle(su[1, 0])
        beta, delta = zeta + eta, zeta - eta
    return SU2Params(alpha=float(alpha), beta=float(beta),
                     gamma=float(gamma), delta=float(delta))


def haar_random_unitary(rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed 2x2 unitary (QR of a complex Ginibre matrix)."""
    z = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def bloch_vector_of(u: np.ndarray) -> np.ndarray:
    """Bloch vector of the state u^dag |H>.

    The measurement basis {u^dag|H>, u^dag|V>} maps to the antipodal
    pair +/- of the returned vector.
    """
    u = require_unitary(u)
    v = u.conj().T @ np.array([1.0, 0.0], dtype=complex)
    x = 2.0 * np.real(np.conj(v[0]) * v[1])
    y = 2.0 * np.imag(np.conj(v[0]) * v[1])
    z = abs(v[0]) ** 2 - abs(v[1]) ** 2
    return np.array([x, y, z])


def sphere_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle in [0, pi] between two unit vectors."""
    return float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0)))


def phase_equal(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """True iff a = e^{i phi} b for some real phi (entrywise to tol)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        return False
    return phase_distance(a, b) <= tol


def phase_distance(a: np.ndarray, b: np.ndarray) -> float:
    """min over phi of ||e^{i phi} a - b|| (Frobenius/2-norm)."""
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    ov = np.vdot(a, b)
    if abs(ov) < 1e-300:
        # Orthogonal; no phase helps.
        return float(np.sqrt(np.vdot(a, a).real + np.vdot(b, b).real))
    phase = ov / abs(ov)
    return float(np.linalg.norm(a * phase - b))


def canonical_phase(u: np.ndarray) -> np.ndarray:
    """Phase-fixed representative: u00 real non-negative (u10 if u00 = 0)."""
    u = np.asarray(u, dtype=complex)
    pivot = u[0, 0] if abs(u[0, 0]) > ALGEBRA_TOL else u[1, 0]
    if abs(pivot) <= ALGEBRA_TOL:
        return u.copy()
    return u * (np.conj(pivot) / abs(pivot))


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """SU(2) element rotating the Bloch sphere by `angle` about `axis`."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    half = 0.5 * angle
    return (np.cos(half) * IDENTITY
            - 1j * np.sin(half) * (n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z))
