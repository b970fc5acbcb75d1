"""Quaternion and rotation helpers plus the flat quadrotor state layout.

Quaternions are (w, x, y, z) unit vectors. The quadrotor state is a flat
10-vector [p(3), q(4), v(3)]. Attitude perturbations use a body-frame
tangent 3-vector: apply as R <- R @ expm(hat(t)), recover with the log map.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

POS = slice(0, 3)
QUAT = slice(3, 7)
VEL = slice(7, 10)
QUAD_STATE_DIM = 10
QUAD_TANGENT_DIM = 9

E_Z = np.array([0.0, 0.0, 1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_check_unit(q: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise DimensionError(f"quaternion must have shape (4,), got {q.shape}")
    if abs(np.linalg.norm(q) - 1.0) > tol:
        raise ValueError(f"quaternion norm deviates from 1 by more than {tol}")
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(vec: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to unit quaternion."""
    vec = np.asarray(vec, dtype=np.float64)
    angle = np.linalg.norm(vec)
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * vec[0], 0.5 * vec[1], 0.5 * vec[2]])
        return quat_normalize(q)
    axis = vec / angle
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    """Log map: unit quaternion to rotation vector (inverse of the exp map)."""
    q = np.asarray(q, dtype=np.float64)
    if q[0] < 0.0:
        q = -q
    sin_half = np.linalg.norm(q[1:])
    if sin_half < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(sin_half, q[0])
    return (angle / sin_half) * q[1:]


def hat(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def body_z_axis(q: np.ndarray) -> np.ndarray:
    """World-frame direction of the body z-axis, R(q) e_z."""
    w, x, y, z = q
    return np.array([2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)])


def tilt_cosine(q: np.ndarray) -> float:
    """e_z^T R(q) e_z: 1 when level, 0 at 90 deg tilt, -1 inverted."""
    return float(body_z_axis(q)[2])


def apply_tangent(state: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Perturb a flat quadrotor state by a 9-vector (dp, dtheta, dv).

    Position and velocity add; the attitude tangent applies as a body-frame
    rotation q <- q * exp(dtheta), renormalized.
    """
    state = np.asarray(state, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if state.shape != (QUAD_STATE_DIM,) or delta.shape != (QUAD_TANGENT_DIM,):
        raise DimensionError(
            f"apply_tangent: state {state.shape}, delta {delta.shape}")
    out = state.copy()
    out[POS] += delta[0:3]
    out[QUAT] = quat_normalize(quat_mul(state[QUAT], quat_from_axis_angle(delta[3:6])))
    out[VEL] += delta[6:9]
    return out


def tangent_between(base: np.ndarray, perturbed: np.ndarray) -> np.ndarray:
    """Recover the 9-vector t with perturbed == apply_tangent(base, t)."""
    dq = quat_mul(quat_conj(base[QUAT]), perturbed[QUAT])
    return np.concatenate([
        perturbed[POS] - base[POS],
        rotvec_from_quat(quat_normalize(dq)),
        perturbed[VEL] - base[VEL],
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])
