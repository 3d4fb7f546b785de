"""Quaternion and SO(3) helpers shared by the filter, simulator and evaluation.

Conventions used throughout the package:

- Quaternions are stored as ``[x, y, z, w]`` (scalar last), unit norm.
- ``quat_to_rot(q)`` returns the rotation matrix R with
  ``R = I + 2*w*skew(v) + 2*skew(v)^2``, so ``rot_to_quat`` is its inverse and
  ``quat_to_rot(quat_mul(a, b)) == quat_to_rot(a) @ quat_to_rot(b)``.
- ``so3_exp(phi)`` is the matrix exponential of ``skew(phi)``.
- The filter stores the global-to-body rotation ``R_ig``; a body->world
  quaternion (TUM files, ground truth) is the conjugate.

Attitude error convention (used by the error-state filter): a small error
``dtheta`` perturbs a rotation as ``R = so3_exp(-dtheta) @ R_hat``, applied
with :func:`apply_small_rotation`.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(a) @ b == cross(a, b)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_identity() -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, 1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n < _EPS:
        raise ValueError("cannot normalize a zero quaternion")
    q = q / n
    # Fix the sign for a canonical representative (w >= 0).
    return -q if q[3] < 0.0 else q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product with R(a*b) = R(a) @ R(b)."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    v = np.array([x, y, z])
    s = skew(v)
    return np.eye(3) + 2.0 * w * s + 2.0 * (s @ s)


def rot_to_quat(r: np.ndarray) -> np.ndarray:
    """Inverse of quat_to_rot, robust to all trace signs (Shepperd's method)."""
    m = r
    tr = np.trace(m)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    return quat_normalize(np.array([x, y, z, w]))


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Matrix exponential of skew(phi) (Rodrigues)."""
    theta = np.linalg.norm(phi)
    s = skew(phi)
    if theta < 1e-8:
        return np.eye(3) + s + 0.5 * (s @ s)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * s + b * (s @ s)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation vector phi with so3_exp(phi) == r."""
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-8:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # Near pi: use the symmetric part.
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        # Fix signs from off-diagonals relative to the largest component.
        k = int(np.argmax(axis))
        if axis[k] < _EPS:
            raise ValueError("degenerate rotation in so3_log")
        for i in range(3):
            if i != k and m[k, i] < 0.0:
                axis[i] = -axis[i]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta / (2.0 * np.sin(theta)) * axis


def quat_exp(phi: np.ndarray) -> np.ndarray:
    """Unit quaternion with quat_to_rot(quat_exp(phi)) == so3_exp(phi)."""
    theta = np.linalg.norm(phi)
    if theta < 1e-10:
        q = np.array([phi[0] / 2.0, phi[1] / 2.0, phi[2] / 2.0, 1.0])
        return quat_normalize(q)
    axis = phi / theta
    half = theta / 2.0
    return np.concatenate([np.sin(half) * axis, [np.cos(half)]])


def so3_right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r with exp(skew(phi + d)) ~= exp(skew(phi)) exp(skew(J_r d))."""
    theta = np.linalg.norm(phi)
    s = skew(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * s + (s @ s) / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) - a * s + b * (s @ s)


def apply_small_rotation(q: np.ndarray, dtheta: np.ndarray) -> np.ndarray:
    """Retract an attitude error: R(q') = so3_exp(-dtheta) @ R(q).

    This is the single place that fixes the error-state attitude convention;
    the filter and all finite-difference tests go through it.
    """
    return quat_normalize(quat_mul(quat_exp(-dtheta), q))


def rotation_error(q: np.ndarray, q_hat: np.ndarray) -> np.ndarray:
    """Inverse of apply_small_rotation: dtheta with q == q_hat 'plus' dtheta."""
    return -so3_log(quat_to_rot(q) @ quat_to_rot(q_hat).T)


def yaw_of(r: np.ndarray) -> float:
    """Heading of a body->world rotation matrix (ZYX convention)."""
    return float(np.arctan2(r[1, 0], r[0, 0]))
