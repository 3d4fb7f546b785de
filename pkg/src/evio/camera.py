"""Pinhole projection with radial-tangential distortion.

Normalized image-plane coordinates are (x, y) = (p_x / p_z, p_y / p_z) for a
camera-frame point p; distortion applies in that plane before the intrinsic
matrix. Back-projection inverts the distortion with Newton iterations.
"""

from __future__ import annotations

import numpy as np

from .events import CameraIntrinsics


def distort(n: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Apply radtan distortion to (..., 2) normalized coordinates."""
    k1, k2, p1, p2 = dist
    x, y = n[..., 0], n[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def distort_jacobian(n: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """d(distorted)/d(normalized) for a single (2,) point -> (2, 2)."""
    k1, k2, p1, p2 = dist
    x, y = n
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    dr = k1 + 2.0 * k2 * r2  # d(radial)/d(r2) so d(radial)/dx = 2x*dr
    j = np.empty((2, 2))
    j[0, 0] = radial + 2.0 * x * x * dr + 2.0 * p1 * y + 6.0 * p2 * x
    j[0, 1] = 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y
    j[1, 0] = 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y
    j[1, 1] = radial + 2.0 * y * y * dr + 6.0 * p1 * y + 2.0 * p2 * x
    return j


def project_points(p_c: np.ndarray, intr: CameraIntrinsics,
                   margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Project (N, 3) camera-frame points; returns pixels and an in-image mask.

    Points with non-positive depth are masked out (their pixels are NaN).
    """
    p_c = np.atleast_2d(p_c)
    z = p_c[:, 2]
    good = z > 1e-9
    n = np.full((len(p_c), 2), np.nan)
    n[good] = p_c[good, :2] / z[good, None]
    d = np.full_like(n, np.nan)
    d[good] = distort(n[good], intr.distortion)
    px = np.full_like(n, np.nan)
    px[good, 0] = intr.fx * d[good, 0] + intr.cx
    px[good, 1] = intr.fy * d[good, 1] + intr.cy
    inside = good.copy()
    inside[good] = ((px[good, 0] >= margin) & (px[good, 0] <= intr.width - 1 - margin)
                    & (px[good, 1] >= margin) & (px[good, 1] <= intr.height - 1 - margin))
    return px, inside


def project(p_c: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    px, _ = project_points(p_c.reshape(1, 3), intr)
    return px[0]


def projection_jacobian(p_c: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """d(pixel)/d(camera point) for one point -> (2, 3)."""
    x, y, z = p_c
    if z <= 0:
        raise ValueError("point behind the camera")
    n = np.array([x / z, y / z])
    dn_dp = np.array([[1.0 / z, 0.0, -x / z**2], [0.0, 1.0 / z, -y / z**2]])
    dd_dn = distort_jacobian(n, intr.distortion)
    k = np.array([[intr.fx, 0.0], [0.0, intr.fy]])
    return k @ dd_dn @ dn_dp


def back_project(px: np.ndarray, intr: CameraIntrinsics, iterations: int = 8) -> np.ndarray:
    """Pixels (..., 2) -> undistorted normalized coordinates (..., 2)."""
    px = np.asarray(px, dtype=float)
    nd = np.stack([(px[..., 0] - intr.cx) / intr.fx,
                   (px[..., 1] - intr.cy) / intr.fy], axis=-1)
    if not intr.distortion.any():
        return nd
    n = nd.copy()
    flat = n.reshape(-1, 2)
    target = nd.reshape(-1, 2)
    for _ in range(iterations):
        for i in range(flat.shape[0]):
            err = distort(flat[i], intr.distortion) - target[i]
            j = distort_jacobian(flat[i], intr.distortion)
            flat[i] -= np.linalg.solve(j, err)
    return n


def bearing(px: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pixel -> unit-depth camera ray [x, y, 1]."""
    n = back_project(np.asarray(px, dtype=float), intr)
    return np.concatenate([n, np.ones(n.shape[:-1] + (1,))], axis=-1)
