"""Small rotation / transform helpers used by the model loader and the tasks."""

from __future__ import annotations

import math

import numpy as np


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    x, y, z = (float(a) for a in axis)
    c = math.cos(angle)
    s = math.sin(angle)
    onemc = 1.0 - c
    return np.array(
        [
            [c + x * x * onemc, x * y * onemc - z * s, x * z * onemc + y * s],
            [y * x * onemc + z * s, c + y * y * onemc, y * z * onemc - x * s],
            [z * x * onemc - y * s, z * y * onemc + x * s, c + z * z * onemc],
        ]
    )


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic XYZ roll-pitch-yaw to rotation matrix (R = Rz @ Ry @ Rx)."""
    rx = rotation_about_axis((1.0, 0.0, 0.0), roll)
    ry = rotation_about_axis((0.0, 1.0, 0.0), pitch)
    rz = rotation_about_axis((0.0, 0.0, 1.0), yaw)
    return rz @ ry @ rx


def quat_about_axis(axis, angle: float) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation about a unit axis."""
    half = 0.5 * angle
    s = math.sin(half)
    x, y, z = (float(a) for a in axis)
    return np.array([math.cos(half), x * s, y * s, z * s])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(np.dot(q, q)))
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_yaw(q) -> float:
    """Yaw (rotation about +z) of a quaternion; valid for planar rotations."""
    w, x, y, z = (float(v) for v in q)
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
