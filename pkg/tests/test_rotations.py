import numpy as np
import pytest

from evio.rotations import (
    apply_small_rotation,
    quat_exp,
    quat_identity,
    quat_mul,
    quat_normalize,
    quat_to_rot,
    rot_to_quat,
    rotation_error,
    skew,
    so3_exp,
    so3_log,
    so3_right_jacobian,
    yaw_of,
)


def random_quats(n, seed=0):
    rng = np.random.default_rng(seed)
    return [quat_normalize(rng.normal(size=4)) for _ in range(n)]


def test_skew_is_cross_product():
    a, b = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.7, -1.1])
    assert np.allclose(skew(a) @ b, np.cross(a, b))


def test_quat_mul_matches_rotation_composition():
    for a, b in zip(random_quats(20, 1), random_quats(20, 2)):
        assert np.allclose(quat_to_rot(quat_mul(a, b)),
                           quat_to_rot(a) @ quat_to_rot(b), atol=1e-12)


def test_rot_quat_round_trip():
    for q in random_quats(50, 3):
        r = quat_to_rot(q)
        assert np.allclose(quat_to_rot(rot_to_quat(r)), r, atol=1e-10)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_exp_log_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(50):
        phi = rng.normal(size=3)
        phi = phi / np.linalg.norm(phi) * rng.uniform(1e-9, 3.0)
        assert np.allclose(so3_log(so3_exp(phi)), phi, atol=1e-9)
    assert np.allclose(so3_exp(np.zeros(3)), np.eye(3))


def test_quat_exp_matches_matrix_exp():
    rng = np.random.default_rng(5)
    for _ in range(20):
        phi = rng.normal(size=3)
        assert np.allclose(quat_to_rot(quat_exp(phi)), so3_exp(phi), atol=1e-12)


def test_right_jacobian_first_order():
    rng = np.random.default_rng(6)
    for _ in range(20):
        phi = rng.normal(size=3)
        d = rng.normal(size=3) * 1e-6
        lhs = so3_exp(phi + d)
        rhs = so3_exp(phi) @ so3_exp(so3_right_jacobian(phi) @ d)
        assert np.allclose(lhs, rhs, atol=1e-11)


def test_error_retraction_round_trip():
    rng = np.random.default_rng(7)
    for q in random_quats(20, 8):
        dtheta = rng.normal(size=3) * 0.2
        q2 = apply_small_rotation(q, dtheta)
        assert np.allclose(rotation_error(q2, q), dtheta, atol=1e-12)
    assert np.allclose(apply_small_rotation(quat_identity(), np.zeros(3)),
                       quat_identity())


def test_yaw_of():
    r = so3_exp(np.array([0.0, 0.0, 0.4]))
    assert yaw_of(r) == pytest.approx(0.4, abs=1e-12)
