"""Unit tests for the 2x2 unitary algebra."""

import numpy as np
import pytest

from entalign.su2 import (
    ALGEBRA_TOL,
    IDENTITY,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    NotUnitary,
    SU2Params,
    bloch_vector_of,
    canonical_phase,
    haar_random_unitary,
    is_unitary,
    params_from_unitary,
    phase_distance,
    phase_equal,
    require_unitary,
    rotation_about,
    sphere_angle,
    su2_from_params,
)


def test_pauli_matrices_square_to_identity():
    for sigma in (SIGMA_X, SIGMA_Y, SIGMA_Z):
        assert np.allclose(sigma @ sigma, IDENTITY)


def test_is_unitary_accepts_haar_samples():
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert is_unitary(haar_random_unitary(rng))


def test_is_unitary_rejects_scaled_matrix():
    assert not is_unitary(2.0 * IDENTITY)
    assert not is_unitary(np.eye(3))


def test_require_unitary_raises_with_residual():
    with pytest.raises(NotUnitary):
        require_unitary(np.ones((2, 2)))
    with pytest.raises(NotUnitary):
        require_unitary(np.eye(4))


def test_params_roundtrip_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        u = haar_random_unitary(rng)
        p = params_from_unitary(u)
        assert 0.0 <= p.gamma <= np.pi
        assert np.allclose(su2_from_params(p), u, atol=1e-12)


def test_params_roundtrip_degenerate_branches():
    # gamma = 0 and gamma = pi collapse (beta, delta) to one phase.
    for u in (IDENTITY, 1j * IDENTITY, SIGMA_X, 1j * SIGMA_Y,
              np.diag([np.exp(0.7j), np.exp(-0.7j)])):
        p = params_from_unitary(u)
        assert p.delta == 0.0
        assert np.allclose(su2_from_params(p), u, atol=1e-12)


def test_zeta_eta_combinations():
    p = SU2Params(alpha=0.1, beta=0.8, gamma=1.0, delta=0.2)
    assert p.zeta == pytest.approx(0.5)
    assert p.eta == pytest.approx(0.3)
    assert p.replace(beta=0.0).beta == 0.0
    assert p.replace(beta=0.0).gamma == p.gamma


def test_haar_first_column_phase_invariant_statistics():
    # |u00|^2 of a Haar sample is uniform on [0, 1].
    rng = np.random.default_rng(2)
    vals = np.array([abs(haar_random_unitary(rng)[0, 0]) ** 2
                     for _ in range(4000)])
    assert abs(vals.mean() - 0.5) < 0.03
    assert abs(np.mean(vals < 0.25) - 0.25) < 0.03


def test_bloch_vector_is_unit_and_tracks_gamma_delta():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = SU2Params(alpha=rng.uniform(0, 2 * np.pi),
                      beta=rng.uniform(0, 2 * np.pi),
                      gamma=rng.uniform(0.1, np.pi - 0.1),
                      delta=rng.uniform(0, 2 * np.pi))
        n = bloch_vector_of(su2_from_params(p))
        assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
        # Polar angle equals gamma; azimuth equals pi - delta.
        assert np.arccos(np.clip(n[2], -1, 1)) == pytest.approx(p.gamma, abs=1e-9)
        azim = np.arctan2(n[1], n[0])
        assert np.cos(azim) == pytest.approx(np.cos(np.pi - p.delta), abs=1e-9)
        assert np.sin(azim) == pytest.approx(np.sin(np.pi - p.delta), abs=1e-9)


def test_bloch_vector_insensitive_to_alpha_beta():
    p = SU2Params(alpha=0.0, beta=0.0, gamma=1.1, delta=2.2)
    base = bloch_vector_of(su2_from_params(p))
    for alpha, beta in ((0.4, 0.0), (0.0, 1.9), (2.2, 5.0)):
        n = bloch_vector_of(su2_from_params(p.replace(alpha=alpha, beta=beta)))
        assert np.allclose(n, base, atol=1e-12)


def test_sphere_angle_endpoints():
    ez = np.array([0.0, 0.0, 1.0])
    assert sphere_angle(ez, ez) == pytest.approx(0.0)
    assert sphere_angle(ez, -ez) == pytest.approx(np.pi)
    assert sphere_angle(ez, np.array([1.0, 0.0, 0.0])) == pytest.approx(np.pi / 2)


def test_phase_equal_and_distance():
    rng = np.random.default_rng(4)
    u = haar_random_unitary(rng)
    assert phase_equal(u, np.exp(0.73j) * u)
    assert not phase_equal(u, SIGMA_X @ u)
    assert phase_distance(u, np.exp(-1.2j) * u) == pytest.approx(0.0, abs=1e-12)


def test_canonical_phase_pivot_real():
    rng = np.random.default_rng(5)
    u = haar_random_unitary(rng)
    c = canonical_phase(u)
    assert c[0, 0].imag == pytest.approx(0.0, abs=1e-12)
    assert c[0, 0].real >= 0.0
    assert phase_equal(c, u)


def test_rotation_about_moves_bloch_vector_by_angle():
    rng = np.random.default_rng(6)
    for _ in range(50):
        axis = rng.standard_normal(3)
        angle = rng.uniform(0.1, np.pi)
        r = rotation_about(axis, angle)
        assert is_unitary(r, tol=ALGEBRA_TOL * 10)
        # A vector orthogonal to the axis rotates by exactly `angle`.
        n = axis / np.linalg.norm(axis)
        v = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(v) < 1e-6:
            v = np.cross(n, [0.0, 1.0, 0.0])
        v /= np.linalg.norm(v)
        sigma = v[0] * SIGMA_X + v[1] * SIGMA_Y + v[2] * SIGMA_Z
        rotated = r @ sigma @ r.conj().T
        w = np.array([np.trace(rotated @ s).real / 2 for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)])
        assert sphere_angle(v, w) == pytest.approx(angle, abs=1e-9)
