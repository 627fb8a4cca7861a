"""Quaternion and yaw-frame helpers, vectorized over leading batch dimensions.

Quaternions are scalar-first (w, x, y, z) and map body to world.
"""

from __future__ import annotations

import numpy as np


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product on the last axis; avoids np.cross's moveaxis overhead."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate body-frame vectors into the world frame."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    uv = cross3(u, v)
    uuv = cross3(u, uv)
    return v + 2.0 * (w * uv + uuv)


def quat_rotate_inverse(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate world-frame vectors into the body frame."""
    q = np.asarray(q, dtype=np.float64)
    conj = np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)
    return quat_rotate(conj, v)


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to quaternion."""
    rv = np.asarray(rv, dtype=np.float64)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < 1e-12
    k = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), k * rv], axis=-1)


def quat_yaw(q: np.ndarray) -> np.ndarray:
    """Heading angle of the body x-axis about world z."""
    w, x, y, z = (q[..., i] for i in range(4))
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def yaw_rotate_inverse(yaw: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Express world-frame vectors in the yaw-aligned (heading) frame."""
    c, s = np.cos(yaw), np.sin(yaw)
    vx = c * v[..., 0] + s * v[..., 1]
    vy = -s * v[..., 0] + c * v[..., 1]
    if v.shape[-1] == 2:
        return np.stack([vx, vy], axis=-1)
    return np.stack([vx, vy, v[..., 2]], axis=-1)


def rpy_to_quat(roll: np.ndarray, pitch: np.ndarray, yaw: np.ndarray) -> np.ndarray:
    """Intrinsic roll-pitch-yaw to quaternion (z-y-x composition)."""
    roll, pitch, yaw = np.broadcast_arrays(roll, pitch, yaw)
    zero = np.zeros_like(np.asarray(roll, dtype=np.float64))
    qr = quat_from_rotvec(np.stack([roll, zero, zero], axis=-1))
    qp = quat_from_rotvec(np.stack([zero, pitch, zero], axis=-1))
    qy = quat_from_rotvec(np.stack([zero, zero, yaw], axis=-1))
    return quat_mul(qy, quat_mul(qp, qr))
