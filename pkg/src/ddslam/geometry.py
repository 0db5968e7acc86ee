"""Shared geometry primitives: rotations, spherical coordinates, frame transforms.

Conventions used throughout the package:
  - vectors are float ndarrays of shape (3,), angles in radians
  - Euler angles are (roll, pitch, yaw), composed intrinsically Z-Y-X,
    i.e. R = Rz(yaw) @ Ry(pitch) @ Rx(roll)
  - spherical triples are (azimuth, elevation, radius) with azimuth in
    (-pi, pi], elevation in [-pi/2, pi/2]
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, TWO_PI) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(a) == 0 else w


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix for the rotation vector w (Rodrigues formula)."""
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3) + hat(w)
    k = hat(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_log(rot: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (inverse of :func:`rotation_exp`)."""
    cos_theta = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-10:
        return 0.5 * np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    if np.pi - theta < 1e-6:
        # Near pi the skew part vanishes; recover the axis from the symmetric part.
        sym = 0.5 * (rot + np.eye(3))
        axis = np.sqrt(np.maximum(np.diag(sym), 0.0))
        k = int(np.argmax(axis))
        axis = sym[:, k] / axis[k]
        axis /= np.linalg.norm(axis)
        skew = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
        if skew @ axis < 0:
            axis = -axis
        return theta * axis
    factor = theta / (2.0 * np.sin(theta))
    return factor * np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])


def euler_to_rotation(euler) -> np.ndarray:
    """Rotation matrix from (roll, pitch, yaw), intrinsic Z-Y-X order."""
    roll, pitch, yaw = np.asarray(euler, dtype=float)
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def rotation_to_euler(rot: np.ndarray) -> np.ndarray:
    """Invert :func:`euler_to_rotation`; returns (roll, pitch, yaw).

    At gimbal lock (|pitch| = pi/2 within ~1e-9) the roll/yaw split is not
    unique; the canonical branch roll = 0 is returned.
    """
    s = -rot[2, 0]
    if abs(s) >= 1.0 - 1e-9:
        pitch = np.pi / 2.0 if s > 0 else -np.pi / 2.0
        if s > 0:
            yaw = -np.arctan2(rot[0, 1], rot[1, 1])
        else:
            yaw = np.arctan2(-rot[0, 1], rot[1, 1])
        return np.array([0.0, pitch, wrap_angle(yaw)])
    pitch = np.arcsin(s)
    roll = np.arctan2(rot[2, 1], rot[2, 2])
    yaw = np.arctan2(rot[1, 0], rot[0, 0])
    return np.array([wrap_angle(roll), pitch, wrap_angle(yaw)])


def cartesian_to_spherical(v) -> np.ndarray:
    """(azimuth, elevation, radius) of a vector; the zero vector maps to zeros."""
    v = np.asarray(v, dtype=float)
    r = float(np.linalg.norm(v))
    if r == 0.0:
        return np.zeros(3)
    az = np.arctan2(v[1], v[0])
    el = np.arcsin(np.clip(v[2] / r, -1.0, 1.0))
    return np.array([az, el, r])


def spherical_to_cartesian(az: float, el: float, r: float = 1.0) -> np.ndarray:
    ce = np.cos(el)
    return r * np.array([ce * np.cos(az), ce * np.sin(az), np.sin(el)])


def direction_angle(a, b) -> float:
    """Great-circle angle between two (az, el) directions."""
    ua = spherical_to_cartesian(a[0], a[1])
    ub = spherical_to_cartesian(b[0], b[1])
    return float(np.arccos(np.clip(ua @ ub, -1.0, 1.0)))


def world_to_robot(s_world, robot_pos, rot: np.ndarray) -> np.ndarray:
    """Express a world point in the robot frame: rot @ (s_world - robot_pos).

    `rot` is the world-to-robot rotation; pass the transpose of a stored
    body-to-world attitude matrix.
    """
    return rot @ (np.asarray(s_world, dtype=float) - np.asarray(robot_pos, dtype=float))


def robot_to_world(s_robot, robot_pos, rot: np.ndarray) -> np.ndarray:
    """Inverse of :func:`world_to_robot` for the same `rot`."""
    return rot.T @ np.asarray(s_robot, dtype=float) + np.asarray(robot_pos, dtype=float)


def euclidean_error(gt, est) -> float:
    """Euclidean distance between a ground-truth and an estimated position."""
    return float(np.linalg.norm(np.asarray(gt, dtype=float) - np.asarray(est, dtype=float)))
