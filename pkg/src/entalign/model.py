"""Analytic two-qubit model of the entanglement-based alignment setup.

Shared pure states, effective states after the six-unitary channel stack,
Pauli-ZZ expectation values (= ideal visibilities), the singlet
decomposition of maximally entangled states, the effective difference
unitary governing each basis pair, mutual-unbiasedness overlaps, and the
constructive solution of the alignment constraints.

State amplitudes are complex128 vectors of length 4 over the ordered
basis (HH, HV, VH, VV), Alice first.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .su2 import (
    ALGEBRA_TOL,
    IDENTITY,
    SU2Params,
    canonical_phase,
    haar_random_unitary,
    params_from_unitary,
    require_unitary,
    su2_from_params,
)

__all__ = [
    "SINGLET",
    "NotMaximallyEntangled",
    "BasisPair",
    "BASIS_PAIRS",
    "SourceModel",
    "ChannelStack",
    "make_source",
    "effective_state",
    "expectation_zz",
    "concurrence",
    "singlet_decompose",
    "u_delta",
    "gamma_of",
    "mub_overlap_matrix",
    "predicted_visibility",
    "solve_aligned_channels",
    "cross_corr_residual",
]

SINGLET = np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / np.sqrt(2.0)

# Default photon pair rate (pairs/s) used for simulation bookkeeping.
DEFAULT_PAIR_RATE = 21900.0


class NotMaximallyEntangled(ValueError):
    """Raised when a state lacks the entanglement an operation requires."""


class BasisPair(NamedTuple):
    i: int  # Alice's basis, 1 or 2
    j: int  # Bob's basis, 1 or 2


BASIS_PAIRS = (BasisPair(1, 1), BasisPair(1, 2), BasisPair(2, 1), BasisPair(2, 2))


@dataclass(frozen=True)
class SourceModel:
    """Photon-pair source description.

    kind is one of 'singlet', 'sagnac', 'general', 'product'. sagnac takes
    a relative phase phi; general takes the unitary v of the singlet
    decomposition; product takes two unitaries whose daggers prepare the
    local states.
    """

    kind: str
    phi: float = 0.0
    v: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    pair_rate: float = DEFAULT_PAIR_RATE

    @classmethod
    def singlet(cls, pair_rate: float = DEFAULT_PAIR_RATE) -> "SourceModel":
        return cls(kind="singlet", pair_rate=pair_rate)

    @classmethod
    def sagnac(cls, phi: float, pair_rate: float = DEFAULT_PAIR_RATE) -> "SourceModel":
        return cls(kind="sagnac", phi=phi, pair_rate=pair_rate)

    @classmethod
    def general(cls, v: np.ndarray, pair_rate: float = DEFAULT_PAIR_RATE) -> "SourceModel":
        return cls(kind="general", v=require_unitary(v), pair_rate=pair_rate)

    @classmethod
    def product(cls, a: np.ndarray, b: np.ndarray,
                pair_rate: float = DEFAULT_PAIR_RATE) -> "SourceModel":
        return cls(kind="product", a=require_unitary(a), b=require_unitary(b),
                   pair_rate=pair_rate)


@dataclass(frozen=True)
class ChannelStack:
    """The six unitaries between the source and the analyzers."""

    u_a: np.ndarray
    u_b: np.ndarray
    u_a1: np.ndarray
    u_a2: np.ndarray
    u_b1: np.ndarray
    u_b2: np.ndarray

    def __post_init__(self):
        for name in ("u_a", "u_b", "u_a1", "u_a2", "u_b1", "u_b2"):
            require_unitary(getattr(self, name))

    @classmethod
    def identity(cls) -> "ChannelStack":
        return cls(*(IDENTITY.copy() for _ in range(6)))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "ChannelStack":
        return cls(*(haar_random_unitary(rng) for _ in range(6)))

    def a_bar(self, i: int) -> np.ndarray:
        """Composite Alice channel for basis i: U_Ai . U_A."""
        return (self.u_a1 if i == 1 else self.u_a2) @ self.u_a

    def b_bar(self, j: int) -> np.ndarray:
        """Composite Bob channel for basis j: U_Bj . U_B."""
        return (self.u_b1 if j == 1 else self.u_b2) @ self.u_b

    def with_(self, **kw) -> "ChannelStack":
        return replace(self, **kw)


def make_source(m: SourceModel) -> np.ndarray:
    """Normalized shared state emitted by the source model."""
    if m.kind == "singlet":
        return SINGLET.copy()
    if m.kind == "sagnac":
        psi = np.array([0.0, 1.0, np.exp(1j * m.phi), 0.0], dtype=complex)
        return psi / np.sqrt(2.0)
    if m.kind == "general":
        v = require_unitary(m.v)
        mat = SINGLET.reshape(2, 2) @ v.T
        return mat.reshape(4)
    if m.kind == "product":
        a = require_unitary(m.a).conj().T @ np.array([1.0, 0.0], dtype=complex)
        b = require_unitary(m.b).conj().T @ np.array([1.0, 0.0], dtype=complex)
        return np.kron(a, b)
    raise ValueError(f"unknown source kind {m.kind!r}")


def effective_state(psi: np.ndarray, stack: ChannelStack, bp: BasisPair) -> np.ndarray:
    """(U_Ai U_A (x) U_Bj U_B) |psi> for the selected basis pair."""
    mat = np.asarray(psi, dtype=complex).reshape(2, 2)
    out = stack.a_bar(bp.i) @ mat @ stack.b_bar(bp.j).T
    return out.reshape(4)


def expectation_zz(psi: np.ndarray) -> float:
    """<psi| sigma_z (x) sigma_z |psi> for a normalized state."""
    p = np.abs(np.asarray(psi, dtype=complex)) ** 2
    return float(p[0] - p[1] - p[2] + p[3])


def concurrence(psi: np.ndarray) -> float:
    """Pure-state concurrence 2 |a_HH a_VV - a_HV a_VH|."""
    a = np.asarray(psi, dtype=complex)
    return float(2.0 * abs(a[0] * a[3] - a[1] * a[2]))


def singlet_decompose(psi: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Unitary V with (I (x) V) |psi-> phase-equal to psi.

    Requires psi maximally entangled (concurrence >= 1 - tol).
    """
    psi = np.asarray(psi, dtype=complex)
    c = concurrence(psi)
    if c < 1.0 - tol:
        raise NotMaximallyEntangled(f"concurrence {c:.6f} < {1.0 - tol:.6f}")
    mat = psi.reshape(2, 2)
    # psi = (I (x) V)|psi-> means mat = M_singlet V^T with
    # M_singlet = [[0, 1], [-1, 0]] / sqrt(2).
    ms_inv = np.sqrt(2.0) * np.array([[0.0, -1.0], [1.0, 0.0]], dtype=complex)
    v = (ms_inv @ mat).T
    return canonical_phase(v)


def u_delta(stack: ChannelStack, v: np.ndarray, bp: BasisPair) -> np.ndarray:
    """Effective difference unitary U_Bj_bar . V . U_Ai_bar^dag."""
    return stack.b_bar(bp.j) @ require_unitary(v) @ stack.a_bar(bp.i).conj().T


def gamma_of(u: np.ndarray) -> float:
    """The gamma angle of the parametrization; E = -cos(gamma)."""
    u = require_unitary(u)
    return 2.0 * float(np.arccos(min(abs(u[0, 0]), 1.0)))


def mub_overlap_matrix(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Overlap matrix |<k| u1 u2^dag |l>|^2 between the two bases."""
    w = require_unitary(u1) @ require_unitary(u2).conj().T
    return np.abs(w) ** 2


def predicted_visibility(psi: np.ndarray, stack: ChannelStack, bp: BasisPair) -> float:
    """Noiseless visibility of the basis pair: ZZ expectation of the
    effective state."""
    return expectation_zz(effective_state(psi, stack, bp))


def _phase_like(gamma: float, rng: np.random.Generator) -> np.ndarray:
    """Unitary of the parametrization with the given gamma and all free
    phases drawn uniformly in [0, 2 pi)."""
    alpha, beta, delta = rng.uniform(0.0, 2.0 * np.pi, size=3)
    return su2_from_params(SU2Params(alpha=alpha, beta=beta, gamma=gamma, delta=delta))


def solve_aligned_channels(u_a: np.ndarray, u_b: np.ndarray, u_a1: np.ndarray,
                           v: np.ndarray, rng: np.random.Generator,
                           sign: int = -1) -> ChannelStack:
    """Construct U_B1, U_B2, U_A2 satisfying the alignment constraints.

    With sign = -1 (singlet convention) the constructed stack satisfies
    E(1,1) = E(2,2) = -1 and E(1,2) = 0 exactly; sign = +1 targets +1 on
    the correlated pairs instead. E(2,1) = 0 follows in either case
    without being imposed. The free phases of the difference unitaries
    are drawn uniformly at random.
    """
    u_a = require_unitary(u_a)
    u_b = require_unitary(u_b)
    u_a1 = require_unitary(u_a1)
    v = require_unitary(v)
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    gamma_corr = 0.0 if sign == -1 else np.pi
    ud11 = _phase_like(gamma_corr, rng)
    ud22 = _phase_like(gamma_corr, rng)
    ud12 = _phase_like(0.5 * np.pi, rng)
    ua1_bar = u_a1 @ u_a
    ub1_bar = ud11 @ ua1_bar @ v.conj().T
    ub2_bar = ud12 @ ua1_bar @ v.conj().T
    ua2_bar = ud22.conj().T @ ud12 @ ua1_bar
    return ChannelStack(
        u_a=u_a, u_b=u_b, u_a1=u_a1,
        u_a2=ua2_bar @ u_a.conj().T,
        u_b1=ub1_bar @ u_b.conj().T,
        u_b2=ub2_bar @ u_b.conj().T,
    )


def cross_corr_residual(stack: ChannelStack, v: np.ndarray) -> float:
    """|E(2,1)| computed analytically from the difference unitary."""
    return abs(-np.cos(gamma_of(u_delta(stack, v, BasisPair(2, 1)))))
