"""IMU preintegration, dead reckoning, and process-noise propagation.

A batch of inertial samples between two fusion frames is summarized into a
relative motion increment (dR, dV, dX) expressed in the body frame at batch
start, together with the accumulated accelerometer-noise covariances. Gravity
is not removed here; dead reckoning applies it when composing the absolute
state.

Accelerometers report specific force (gravity-reactive): a stationary, level
sensor reads +g on the body z axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import rotation_exp
from .validation import check_psd

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class RobotState:
    """Absolute robot state: world-frame position/velocity and body-to-world attitude."""

    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray

    def copy(self) -> "RobotState":
        return RobotState(self.position.copy(), self.velocity.copy(), self.rotation.copy())


@dataclass
class ImuBatch:
    """Inertial samples covering one fusion interval.

    t: (n,) sample times in seconds, strictly increasing.
    specific_force: (n, 3) body-frame specific force, m/s^2.
    angular_rate: (n, 3) body-frame angular rate, rad/s.
    """

    t: np.ndarray
    specific_force: np.ndarray
    angular_rate: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.specific_force = np.asarray(self.specific_force, dtype=float)
        self.angular_rate = np.asarray(self.angular_rate, dtype=float)
        n = self.t.shape[0]
        if self.specific_force.shape != (n, 3) or self.angular_rate.shape != (n, 3):
            raise ValueError("specific_force and angular_rate must have shape (n, 3)")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("sample timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.t.shape[0]


@dataclass
class ImuNoiseConfig:
    """Per-sample white-noise variances and the gravity vector."""

    accel_variance: float = 1e-3
    gyro_variance: float = 1e-2
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        if self.accel_variance < 0 or self.gyro_variance < 0:
            raise ValueError("noise variances must be >= 0")
        self.gravity = np.asarray(self.gravity, dtype=float)


@dataclass
class Preintegrated:
    """Relative motion increment over one batch, in the batch-start body frame."""

    dR: np.ndarray
    dV: np.ndarray
    dX: np.ndarray
    dQ_V: np.ndarray
    dQ_X: np.ndarray
    dt_total: float
    dQ_XV: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))


def preintegrate(batch: ImuBatch, r_start: np.ndarray | None = None,
                 noise: ImuNoiseConfig | None = None) -> Preintegrated:
    """Midpoint (trapezoid) integration of a sample batch into a motion increment.

    The increments are expressed in the body frame at batch start, so r_start
    does not enter the arithmetic; accelerometer noise is isotropic, so the
    accumulated covariances need no rotation either.
    """
    if len(batch) == 0:
        raise ValueError("no samples")
    if len(batch) < 2:
        raise ValueError("need at least two samples to span an interval")
    noise = noise or ImuNoiseConfig()

    d_rot = np.eye(3)
    d_vel = np.zeros(3)
    d_pos = np.zeros(3)
    # First-order scalar noise chain: gyro noise integrates into a tilt random
    # walk that rotates the (gravity-dominated) specific force into the
    # velocity channel; with the configured variances this leak exceeds the
    # direct accelerometer term by more than an order of magnitude, so the
    # covariances must carry it for downstream weights to be calibrated.
    qx = 0.0      # position noise
    c_xv = 0.0    # position-velocity covariance
    c_xt = 0.0    # tilt-position covariance
    qv = 0.0      # velocity noise
    c_tv = 0.0    # tilt-velocity covariance
    q_theta = 0.0  # tilt noise
    dt = np.diff(batch.t)
    w_mid = 0.5 * (batch.angular_rate[:-1] + batch.angular_rate[1:])
    for k in range(len(batch) - 1):
        h = dt[k]
        rot_next = d_rot @ rotation_exp(w_mid[k] * h)
        # Trapezoid on the start-frame-rotated specific force: exact for
        # piecewise-constant world acceleration under a constant body rate.
        a_rel = 0.5 * (d_rot @ batch.specific_force[k]
                       + rot_next @ batch.specific_force[k + 1])
        d_pos = d_pos + d_vel * h + 0.5 * a_rel * h * h
        d_vel = d_vel + a_rel * h
        d_rot = rot_next
        f_mag = float(np.linalg.norm(batch.specific_force[k]))
        qx, c_xv, c_xt, qv, c_tv, q_theta = (
            qx + 2.0 * h * c_xv + h * h * qv + 0.25 * noise.accel_variance * h ** 4,
            c_xv + h * qv + h * f_mag * c_xt,
            c_xt + h * c_tv,
            qv + 2.0 * h * f_mag * c_tv + h * h * f_mag * f_mag * q_theta
            + noise.accel_variance * h * h,
            c_tv + h * f_mag * q_theta,
            q_theta + noise.gyro_variance * h * h,
        )

    return Preintegrated(
        dR=d_rot,
        dV=d_vel,
        dX=d_pos,
        dQ_V=qv * np.eye(3),
        dQ_X=qx * np.eye(3),
        dt_total=float(batch.t[-1] - batch.t[0]),
        dQ_XV=c_xv * np.eye(3),
    )


def dead_reckon(prev: RobotState, pre: Preintegrated, gravity: np.ndarray = GRAVITY,
                use_end_rotation: bool = False) -> RobotState:
    """Compose an absolute state with a preintegrated increment.

    The increment is rotated with the interval-start attitude by default;
    use_end_rotation switches to the end-of-interval attitude for comparison.
    """
    dt = pre.dt_total
    rot_new = prev.rotation @ pre.dR
    rot_inc = rot_new if use_end_rotation else prev.rotation
    vel = prev.velocity + gravity * dt + rot_inc @ pre.dV
    pos = prev.position + prev.velocity * dt + 0.5 * gravity * dt * dt + rot_inc @ pre.dX
    return RobotState(position=pos, velocity=vel, rotation=rot_new)


def propagate_noise(q_x_prev: np.ndarray, q_v_prev: np.ndarray,
                    pre: Preintegrated) -> tuple[np.ndarray, np.ndarray]:
    """Advance the position/velocity process-noise accumulators over one batch."""
    q_x_prev = check_psd(q_x_prev, "Q_X")
    q_v_prev = check_psd(q_v_prev, "Q_V")
    dt = pre.dt_total
    q_v = q_v_prev + pre.dQ_V
    q_x = q_x_prev + dt * q_v_prev * dt + pre.dQ_X
    q_x = 0.5 * (q_x + q_x.T)
    q_v = 0.5 * (q_v + q_v.T)
    return q_x, q_v
