"""Synthetic scenario generator: trajectory, IMU, bearings, and DRR windows.

The continuous-time model keeps every frame exactly integrable: velocity is
linear within a frame (constant acceleration), attitude follows a constant
body rate, and ground-truth states are the closed-form integrals. Trapezoid
preintegration of the emitted samples therefore reproduces the trajectory to
numerical precision when noise is off, which is the round-trip oracle the
tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acoustics import DrrWindowSet, RoomAcoustics, critical_distance
from .geometry import (
    cartesian_to_spherical,
    euler_to_rotation,
    rotation_exp,
    rotation_log,
    spherical_to_cartesian,
    world_to_robot,
    wrap_angle,
)
from .imu import GRAVITY, ImuBatch, RobotState


@dataclass
class ScenarioConfig:
    """Experiment definition; defaults follow the desk-scale simulation study."""

    room: tuple = (6.0, 6.0, 3.0)
    sources: tuple = ((3.0, 3.0, 1.5),)
    t60: float = 0.15
    source_directivity: float = 1.0
    receiver_directivity: float = 1.0
    speed: float = 2.0
    trajectory_mode: str = "random_heading"  # random_heading | waypoint | stationary_segment
    dt: float = 1.0
    imu_rate_hz: float = 100.0
    accel_noise_var: float = 1e-3
    gyro_noise_var: float = 1e-2
    doa_noise_std: float = np.radians(1.0)
    p_detect: float = 0.95
    clutter_rate: float = 0.5
    range_noise_std: float = 0.35
    n_windows: int = 5
    n_steps: int = 105
    seed: int = 0
    heading_change_every: int = 5
    start_position: tuple = (1.0, 1.0, 0.5)
    wall_margin: float = 0.3
    stationary_start: int = 0
    stationary_steps: int = 0
    waypoints: tuple = ()

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.speed <= 0:
            raise ValueError("speed must be > 0")
        if self.imu_rate_hz * self.dt < 1:
            raise ValueError("need at least one IMU sample per frame")
        for s in self.sources:
            if not all(0 < s[i] < self.room[i] for i in range(3)):
                raise ValueError(f"source {s} outside room {self.room}")

    def room_acoustics(self) -> RoomAcoustics:
        return RoomAcoustics(
            volume=float(np.prod(self.room)),
            t60=self.t60,
            source_directivity=self.source_directivity,
            receiver_directivity=self.receiver_directivity,
        )

    def critical_distance(self) -> float:
        return critical_distance(self.room_acoustics())


@dataclass
class MeasurementFrame:
    """One fusion step's inputs: IMU batch, bearing set, DRR windows."""

    t: float
    imu: ImuBatch
    doas: np.ndarray           # (m, 2) azimuth/elevation pairs, robot frame
    drr: DrrWindowSet          # rows aligned with doas
    gt: RobotState | None = None
    gt_sources: np.ndarray | None = None

    def __post_init__(self):
        self.doas = np.asarray(self.doas, dtype=float).reshape(-1, 2)
        if len(self.imu) == 0:
            raise ValueError("frame must carry IMU samples")


def _stationary_boundary(cfg: ScenarioConfig, t: int) -> bool:
    if cfg.trajectory_mode != "stationary_segment":
        return False
    return cfg.stationary_start <= t <= cfg.stationary_start + cfg.stationary_steps


def generate_trajectory(cfg: ScenarioConfig, rng) -> list[RobotState]:
    """Ground-truth states at the N+1 frame boundaries.

    Headings redraw every heading_change_every frames and reflect off the
    walls; velocity ramps linearly across the frame preceding each change, so
    constant-heading frames advance exactly speed*dt.
    """
    n = cfg.n_steps
    room = np.asarray(cfg.room, dtype=float)
    lo = np.array([cfg.wall_margin, cfg.wall_margin, 0.0])
    hi = room - np.array([cfg.wall_margin, cfg.wall_margin, 0.0])

    positions = np.zeros((n + 1, 3))
    velocities = np.zeros((n + 1, 3))
    yaws = np.zeros(n + 1)
    positions[0] = np.asarray(cfg.start_position, dtype=float)

    if cfg.trajectory_mode == "waypoint" and not cfg.waypoints:
        raise ValueError("waypoint mode needs waypoints")
    wp_index = 0

    # The robot starts at rest with zero yaw (known initial state); the first
    # frame ramps into the drawn heading.
    heading = float(rng.uniform(-np.pi, np.pi))

    for t in range(n):
        if cfg.trajectory_mode == "waypoint":
            wp = np.asarray(cfg.waypoints[wp_index % len(cfg.waypoints)], dtype=float)
            if np.linalg.norm(wp - positions[t]) < cfg.speed * cfg.dt:
                wp_index += 1
                wp = np.asarray(cfg.waypoints[wp_index % len(cfg.waypoints)], dtype=float)
            direction = wp - positions[t]
            u_next = cfg.speed * direction / max(np.linalg.norm(direction), 1e-9)
            heading = float(np.arctan2(u_next[1], u_next[0]))
        elif _stationary_boundary(cfg, t + 1):
            u_next = np.zeros(3)
            heading = yaws[t]
        else:
            if (t + 1) % cfg.heading_change_every == 0:
                heading = float(rng.uniform(-np.pi, np.pi))
            u_next = cfg.speed * spherical_to_cartesian(heading, 0.0)

        cand = positions[t] + 0.5 * (velocities[t] + u_next) * cfg.dt
        moving = np.linalg.norm(u_next) > 0 and cfg.trajectory_mode != "waypoint"
        if moving and not (np.all(cand[:2] >= lo[:2]) and np.all(cand[:2] <= hi[:2])):
            # Reflect off the violated wall; if the carried momentum still
            # exits (corner hit), head for the room center instead.
            if cand[0] < lo[0] or cand[0] > hi[0]:
                heading = wrap_angle(np.pi - heading)
            if cand[1] < lo[1] or cand[1] > hi[1]:
                heading = wrap_angle(-heading)
            u_next = cfg.speed * spherical_to_cartesian(heading, 0.0)
            cand = positions[t] + 0.5 * (velocities[t] + u_next) * cfg.dt
            if not (np.all(cand[:2] >= lo[:2]) and np.all(cand[:2] <= hi[:2])):
                center = np.array([room[0] / 2, room[1] / 2, positions[t][2]])
                direction = center - positions[t]
                heading = float(np.arctan2(direction[1], direction[0]))
                u_next = cfg.speed * spherical_to_cartesian(heading, 0.0)
                cand = positions[t] + 0.5 * (velocities[t] + u_next) * cfg.dt

        positions[t + 1] = cand
        velocities[t + 1] = u_next
        yaws[t + 1] = heading

    return [
        RobotState(positions[t], velocities[t], euler_to_rotation((0.0, 0.0, yaws[t])))
        for t in range(n + 1)
    ]


def synthesize_imu(traj: list[RobotState], cfg: ScenarioConfig, rng) -> list[ImuBatch]:
    """Per-frame IMU batches consistent with the trajectory kinematics.

    Acceleration and body rate come from finite differences of consecutive
    states; samples cover the frame inclusive of both boundaries with
    frame-local values, and white noise of the configured per-sample variances
    is added on top.
    """
    n_sub = int(round(cfg.imu_rate_hz * cfg.dt))
    h = cfg.dt / n_sub
    sigma_a = np.sqrt(cfg.accel_noise_var)
    sigma_w = np.sqrt(cfg.gyro_noise_var)
    batches = []
    for t in range(len(traj) - 1):
        a_world = 2.0 * (traj[t + 1].position - traj[t].position
                         - traj[t].velocity * cfg.dt) / cfg.dt ** 2
        w_body = rotation_log(traj[t].rotation.T @ traj[t + 1].rotation) / cfg.dt
        times = t * cfg.dt + h * np.arange(n_sub + 1)
        force = np.empty((n_sub + 1, 3))
        for j in range(n_sub + 1):
            rot_j = traj[t].rotation @ rotation_exp(w_body * (j * h))
            force[j] = rot_j.T @ (a_world - GRAVITY)
        rate = np.tile(w_body, (n_sub + 1, 1))
        if sigma_a > 0:
            force = force + rng.normal(0.0, sigma_a, size=force.shape)
        if sigma_w > 0:
            rate = rate + rng.normal(0.0, sigma_w, size=rate.shape)
        batches.append(ImuBatch(t=times, specific_force=force, angular_rate=rate))
    return batches


def synthesize_doas(traj: list[RobotState], sources, cfg: ScenarioConfig, rng):
    """Per-frame bearing sets: detected true bearings plus uniform clutter.

    Returns (doas, origins): origins[k][i] is the source index behind row i of
    frame k, or -1 for clutter; the DRR synthesizer uses it to pick the true
    distance of each row.
    """
    doas_all, origins_all = [], []
    for t in range(1, len(traj)):
        state = traj[t]
        rows, origins = [], []
        for s_idx, src in enumerate(np.asarray(sources, dtype=float)):
            if rng.uniform() >= cfg.p_detect:
                continue
            v = world_to_robot(src, state.position, state.rotation.T)
            sph = cartesian_to_spherical(v)
            az = wrap_angle(sph[0] + rng.normal(0.0, cfg.doa_noise_std))
            el = float(np.clip(sph[1] + rng.normal(0.0, cfg.doa_noise_std),
                               -np.pi / 2, np.pi / 2))
            rows.append((az, el))
            origins.append(s_idx)
        for _ in range(rng.poisson(cfg.clutter_rate)):
            az = float(rng.uniform(-np.pi, np.pi))
            el = float(np.arcsin(rng.uniform(-1.0, 1.0)))
            rows.append((az, el))
            origins.append(-1)
        doas_all.append(np.asarray(rows, dtype=float).reshape(-1, 2))
        origins_all.append(origins)
    return doas_all, origins_all


def synthesize_drr(traj: list[RobotState], sources, origins_all, cfg: ScenarioConfig,
                   rng) -> list[DrrWindowSet]:
    """Per-frame DRR windows by inverting the distance model around the true d_c.

    Window distances are the true row distance plus Gaussian noise (clamped to
    0.01 m); clutter rows get a distance drawn uniformly up to the room
    diagonal, since a false bearing still produces some ratio estimate.
    """
    d_c = cfg.critical_distance()
    diag = float(np.linalg.norm(cfg.room))
    sources = np.asarray(sources, dtype=float)
    out = []
    for t, origins in enumerate(origins_all, start=1):
        state = traj[t]
        eta = np.empty((len(origins), cfg.n_windows))
        for i, origin in enumerate(origins):
            if origin >= 0:
                d_true = float(np.linalg.norm(sources[origin] - state.position))
            else:
                d_true = float(rng.uniform(0.3, diag))
            d_noisy = d_true + rng.normal(0.0, cfg.range_noise_std, size=cfg.n_windows)
            d_noisy = np.maximum(d_noisy, 0.01)
            eta[i] = (d_c / d_noisy) ** 2
        out.append(DrrWindowSet(eta=eta.reshape(-1, cfg.n_windows)))
    return out


def generate_frames(cfg: ScenarioConfig) -> list[MeasurementFrame]:
    """Full scenario: deterministic function of the config (including its seed)."""
    rng = np.random.default_rng(cfg.seed)
    traj = generate_trajectory(cfg, rng)
    imu = synthesize_imu(traj, cfg, rng)
    doas, origins = synthesize_doas(traj, cfg.sources, cfg, rng)
    drr = synthesize_drr(traj, cfg.sources, origins, cfg, rng)
    gt_sources = np.asarray(cfg.sources, dtype=float)
    frames = []
    for k in range(cfg.n_steps):
        frames.append(MeasurementFrame(
            t=(k + 1) * cfg.dt,
            imu=imu[k],
            doas=doas[k],
            drr=drr[k],
            gt=traj[k + 1],
            gt_sources=gt_sources.copy(),
        ))
    return frames
