"""Unit tests for the analytic two-qubit model."""

import numpy as np
import pytest

from entalign.model import (
    BASIS_PAIRS,
    SINGLET,
    BasisPair,
    ChannelStack,
    NotMaximallyEntangled,
    SourceModel,
    concurrence,
    cross_corr_residual,
    effective_state,
    expectation_zz,
    gamma_of,
    make_source,
    mub_overlap_matrix,
    predicted_visibility,
    singlet_decompose,
    solve_aligned_channels,
    u_delta,
)
from entalign.su2 import haar_random_unitary, phase_equal


def test_singlet_normalized_and_antisymmetric():
    assert np.vdot(SINGLET, SINGLET).real == pytest.approx(1.0)
    swapped = SINGLET.reshape(2, 2).T.reshape(4)
    assert np.allclose(swapped, -SINGLET)


def test_singlet_rotationally_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = haar_random_unitary(rng)
        rotated = np.kron(u, u) @ SINGLET
        assert phase_equal(rotated, SINGLET, tol=1e-9)


def test_sagnac_source_is_maximally_entangled():
    rng = np.random.default_rng(1)
    for phi in rng.uniform(0, 2 * np.pi, size=20):
        psi = make_source(SourceModel.sagnac(phi))
        assert np.vdot(psi, psi).real == pytest.approx(1.0)
        assert concurrence(psi) == pytest.approx(1.0)


def test_product_source_has_zero_concurrence():
    rng = np.random.default_rng(2)
    psi = make_source(SourceModel.product(haar_random_unitary(rng),
                                          haar_random_unitary(rng)))
    assert np.vdot(psi, psi).real == pytest.approx(1.0)
    assert concurrence(psi) == pytest.approx(0.0, abs=1e-12)


def test_unknown_source_kind_rejected():
    with pytest.raises(ValueError):
        make_source(SourceModel(kind="thermal"))


def test_expectation_zz_basis_states():
    assert expectation_zz(np.array([1, 0, 0, 0], complex)) == pytest.approx(1.0)
    assert expectation_zz(np.array([0, 1, 0, 0], complex)) == pytest.approx(-1.0)
    assert expectation_zz(SINGLET) == pytest.approx(-1.0)


def test_singlet_decompose_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        v = haar_random_unitary(rng)
        psi = make_source(SourceModel.general(v))
        w = singlet_decompose(psi)
        rebuilt = (SINGLET.reshape(2, 2) @ w.T).reshape(4)
        assert phase_equal(rebuilt, psi, tol=1e-9)


def test_singlet_decompose_rejects_product_state():
    psi = np.array([1, 0, 0, 0], complex)
    with pytest.raises(NotMaximallyEntangled):
        singlet_decompose(psi)


def test_visibility_equals_minus_cos_gamma_of_difference_unitary():
    # The ZZ expectation of any basis pair only depends on the single
    # effective unitary of that pair, through its gamma angle.
    rng = np.random.default_rng(4)
    for _ in range(100):
        stack = ChannelStack.random(rng)
        v = haar_random_unitary(rng)
        psi = make_source(SourceModel.general(v))
        for bp in BASIS_PAIRS:
            lhs = predicted_visibility(psi, stack, bp)
            rhs = -np.cos(gamma_of(u_delta(stack, v, bp)))
            assert lhs == pytest.approx(rhs, abs=1e-12)


def test_effective_state_identity_stack_is_noop():
    stack = ChannelStack.identity()
    psi = make_source(SourceModel.sagnac(0.4))
    for bp in BASIS_PAIRS:
        assert np.allclose(effective_state(psi, stack, bp), psi)


def test_solve_aligned_channels_exact_constraints():
    rng = np.random.default_rng(5)
    for sign in (-1, 1):
        for _ in range(50):
            v = haar_random_unitary(rng)
            stack = solve_aligned_channels(haar_random_unitary(rng),
                                           haar_random_unitary(rng),
                                           haar_random_unitary(rng), v, rng,
                                           sign=sign)
            psi = make_source(SourceModel.general(v))
            assert predicted_visibility(psi, stack, BasisPair(1, 1)) == \
                pytest.approx(sign * 1.0, abs=1e-10)
            assert predicted_visibility(psi, stack, BasisPair(2, 2)) == \
                pytest.approx(sign * 1.0, abs=1e-10)
            assert predicted_visibility(psi, stack, BasisPair(1, 2)) == \
                pytest.approx(0.0, abs=1e-10)


def test_solve_aligned_channels_rejects_bad_sign():
    rng = np.random.default_rng(6)
    u = haar_random_unitary(rng)
    with pytest.raises(ValueError):
        solve_aligned_channels(u, u, u, u, rng, sign=0)


def test_cross_corr_residual_zero_for_constructed_stacks():
    rng = np.random.default_rng(7)
    v = haar_random_unitary(rng)
    stack = solve_aligned_channels(haar_random_unitary(rng),
                                   haar_random_unitary(rng),
                                   haar_random_unitary(rng), v, rng)
    assert cross_corr_residual(stack, v) == pytest.approx(0.0, abs=1e-12)


def test_mub_overlap_matrix_rows_sum_to_one():
    rng = np.random.default_rng(8)
    m = mub_overlap_matrix(haar_random_unitary(rng), haar_random_unitary(rng))
    assert np.allclose(m.sum(axis=0), 1.0)
    assert np.allclose(m.sum(axis=1), 1.0)


def test_channel_stack_composites():
    rng = np.random.default_rng(9)
    stack = ChannelStack.random(rng)
    assert np.allclose(stack.a_bar(1), stack.u_a1 @ stack.u_a)
    assert np.allclose(stack.a_bar(2), stack.u_a2 @ stack.u_a)
    assert np.allclose(stack.b_bar(1), stack.u_b1 @ stack.u_b)
    assert np.allclose(stack.b_bar(2), stack.u_b2 @ stack.u_b)


def test_channel_stack_validates_entries():
    with pytest.raises(ValueError):
        ChannelStack(*(np.ones((2, 2), complex) for _ in range(6)))
