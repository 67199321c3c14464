"""Quaternion and small rigid-transform helpers.

Quaternions are stored (w, x, y, z). All functions broadcast over a
leading batch dimension when given (N, 4) / (N, 3) arrays.
"""

import numpy as np

from .errors import InvariantError

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise InvariantError("zero-norm quaternion")
    return q / n


def check_unit(q, tol, what="quaternion"):
    n = np.linalg.norm(np.asarray(q, dtype=np.float64), axis=-1)
    err = np.max(np.abs(n - 1.0)) if n.size else 0.0
    if err > tol:
        raise InvariantError(f"{what} norm deviates from 1 by {err:.3e} (tol {tol:g})")


def mul(a, b):
    """Hamilton product a*b, batched."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def to_matrix(q):
    """Rotation matrix of a unit quaternion; (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def from_axis_angle(v):
    """Axis-angle vector(s) (...,3) -> unit quaternion(s) (...,4)."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sinc form is stable at angle -> 0
    small = angle < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    w = np.cos(half)
    xyz = v * scale
    return np.concatenate([w, xyz], axis=-1)


def to_axis_angle(q):
    """Unit quaternion(s) (...,4) -> axis-angle vector(s) (...,3)."""
    q = normalize(q)
    # force w >= 0 so the angle is in [0, pi]
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    angle = 2.0 * np.arccos(w)
    s = np.sqrt(np.maximum(1.0 - w * w, 0.0))
    small = s < 1e-12
    axis = np.where(small[..., None], 0.0, q[..., 1:] / np.where(small[..., None], 1.0, s[..., None]))
    return axis * angle[..., None]


def from_matrix(m):
    """Rotation matrix (3,3) -> unit quaternion (4,). Shepperd's method."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def rigid_matrix(rotation_q, translation):
    """Unit quaternion + translation -> 4x4 homogeneous transform."""
    out = np.eye(4)
    out[:3, :3] = to_matrix(rotation_q)
    out[:3, 3] = np.asarray(translation, dtype=np.float64)
    return out


def translation_matrix(t):
    out = np.eye(4)
    out[:3, 3] = np.asarray(t, dtype=np.float64)
    return out


def polar_rotation(m):
    """Closest rotation (polar factor) of a 3x3 matrix, det forced to +1."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r
