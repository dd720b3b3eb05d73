"""Small linear-algebra helpers: quaternions, TRS matrices, look-at.

Quaternions are stored as (w, x, y, z) float64 arrays.
"""

from __future__ import annotations

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Unit quaternion (w, x, y, z) rotating by `angle` radians around `axis`."""
    axis = np.asarray(axis, dtype=np.float64)
    n = float(np.linalg.norm(axis))
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = 0.5 * float(angle)
    return np.concatenate(([np.cos(half)], np.sin(half) * axis / n))


def quat_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix for a unit quaternion (w, x, y, z)."""
    w, x, y, z = (float(v) for v in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a 3x3 rotation matrix."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def trs_matrix(translation, rotation_quat, scale) -> np.ndarray:
    """4x4 matrix applying scale, then rotation, then translation to column vectors."""
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(rotation_quat) * np.asarray(scale, dtype=np.float64)[None, :]
    m[:3, 3] = np.asarray(translation, dtype=np.float64)
    return m


def look_at_rotation(position, target, up) -> np.ndarray:
    """3x3 camera rotation: camera looks down its local -Z toward `target`."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    fn = np.linalg.norm(forward)
    if fn == 0.0:
        raise ValueError("camera position equals target")
    forward = forward / fn
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rn = np.linalg.norm(right)
    if rn == 0.0:
        raise ValueError("up vector parallel to view direction")
    right = right / rn
    true_up = np.cross(right, forward)
    m = np.empty((3, 3))
    m[:, 0] = right
    m[:, 1] = true_up
    m[:, 2] = -forward
    return m


def rotation_part(world_matrix) -> np.ndarray:
    """Orthonormal rotation columns of an affine TRS matrix (scale divided out)."""
    r = np.array(world_matrix[:3, :3], dtype=np.float64)
    norms = np.linalg.norm(r, axis=0)
    norms[norms == 0.0] = 1.0
    return r / norms[None, :]
