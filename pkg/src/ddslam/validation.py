"""Input validation helpers shared by the library and the estimator facade."""

from __future__ import annotations

import numpy as np


def check_vec3(v, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite, got {v}")
    return v


def check_rotation(rot, name: str = "rotation", tol: float = 1e-9) -> np.ndarray:
    rot = np.asarray(rot, dtype=float)
    if rot.shape != (3, 3):
        raise ValueError(f"{name} must have shape (3, 3), got {rot.shape}")
    if not np.allclose(rot.T @ rot, np.eye(3), atol=tol):
        raise ValueError(f"{name} is not orthonormal")
    if abs(np.linalg.det(rot) - 1.0) > tol:
        raise ValueError(f"{name} must have determinant +1")
    return rot


def check_psd(mat, name: str = "covariance", tol: float = 1e-12) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (3, 3):
        raise ValueError(f"{name} must have shape (3, 3), got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-9):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat).min() < -tol:
        raise ValueError(f"{name} must be positive semi-definite")
    return mat


def check_frames(frames, name: str = "frames"):
    """Validate a sequence of measurement frames: non-empty, monotone timestamps."""
    frames = list(frames)
    if not frames:
        raise ValueError(f"{name} must contain at least one frame")
    t_prev = -np.inf
    for i, frame in enumerate(frames):
        if frame.t <= t_prev:
            raise ValueError(f"{name}[{i}]: timestamps must be strictly increasing")
        t_prev = frame.t
    return frames
