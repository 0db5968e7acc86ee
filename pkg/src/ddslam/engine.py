"""Marginalized particle filter over the critical distance with EKF substates.

Each particle carries one critical-distance hypothesis, an EKF over the robot
position/velocity conditioned on it, and its own source map. A frame is
processed per particle (dead reckoning, keyframe gate, EKF corrections, map
update, evidence); particle weights then combine prediction agreement with
bearing evidence, and systematic resampling triggers on low effective sample
size.

Per-slot RNG streams derived from (run seed, slot index) keep results
byte-identical for any worker count; the DDSLAM_THREADS environment variable
caps the per-particle worker pool.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .acoustics import distance_samples
from .geometry import direction_angle, euler_to_rotation, wrap_angle
from .imu import GRAVITY, ImuNoiseConfig, RobotState, preintegrate
from .locating import (
    EkfState,
    LocatingConfig,
    ekf_observe,
    ekf_predict,
    ekf_update,
    gmm_fuse,
    innovation_log_likelihood,
    sample_dc,
)
from .mapping import (
    KeyframeState,
    MapConfig,
    SourceMap,
    birth_components,
    doa_log_evidence,
    estimate_sources,
    keyframe_check,
    limiting_filter,
    merge_components,
    reduce_map,
    update_weights,
)
from .sim import MeasurementFrame


@dataclass
class SlamConfig:
    n_particles: int = 10
    seed: int = 0
    map: MapConfig = field(default_factory=MapConfig)
    locating: LocatingConfig = field(default_factory=LocatingConfig)
    accel_noise_var: float = 1e-3
    gyro_noise_var: float = 1e-2
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    v_max: float = 2.0
    rate_limit_margin: float = 0.5
    keyframes_enabled: bool = True
    orientation_source: str = "ground_truth"  # or "preintegrated"
    orientation_noise_std: float = 0.0
    velocity_feedback: bool = True
    use_end_rotation: bool = False
    resample_jitter: float = 0.0
    ess_fraction: float = 0.5
    # Optional exponential forgetting on the accumulated log weights
    # (1.0 keeps full memory).
    weight_fading: float = 1.0
    limit_patience: int = 3
    # Reported sources are static landmarks; first-order smoothing of the
    # report suppresses transient excursions of the per-frame cluster centroid,
    # hysteresis keeps the report on one particle lineage until another clearly
    # outweighs it, and slots unmatched for report_staleness steps are dropped.
    report_smoothing: float = 0.7
    report_hysteresis: float = 1.5
    report_staleness: int = 10
    assoc_gate_chi2: float = 9.21  # 99% chi-square gate, 2 dof
    outage_cov_growth: float = 1.5
    initial_position: tuple = (1.0, 1.0, 0.5)
    initial_velocity: tuple = (0.0, 0.0, 0.0)
    initial_cov: float = 0.0
    start_time: float = 0.0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if self.orientation_source not in ("ground_truth", "preintegrated"):
            raise ValueError(f"unknown orientation_source {self.orientation_source!r}")
        self.gravity = np.asarray(self.gravity, dtype=float)

    def imu_noise(self) -> ImuNoiseConfig:
        return ImuNoiseConfig(self.accel_noise_var, self.gyro_noise_var, self.gravity)


@dataclass
class Particle:
    """One critical-distance hypothesis with its EKF substate and source map."""

    dc: float
    state: EkfState
    rotation: np.ndarray
    map: SourceMap
    kf: KeyframeState | None = None
    x_last_kf: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_last_kf: float = 0.0
    x_last_corr: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_last_corr: float = 0.0
    prev_distances: dict = field(default_factory=dict)
    source_covs: dict = field(default_factory=dict)
    source_estimates: list = field(default_factory=list)
    log_alpha: float = 0.0
    log_evidence: float = 0.0
    log_weight: float = 0.0
    failed: bool = False

    def copy(self) -> "Particle":
        return Particle(
            dc=self.dc,
            state=self.state.copy(),
            rotation=self.rotation.copy(),
            map=self.map.copy(),
            kf=None if self.kf is None else KeyframeState(
                self.kf.position.copy(), self.kf.doas.copy(), self.kf.rotation.copy()),
            x_last_kf=self.x_last_kf.copy(),
            t_last_kf=self.t_last_kf,
            x_last_corr=self.x_last_corr.copy(),
            t_last_corr=self.t_last_corr,
            prev_distances=dict(self.prev_distances),
            source_covs={k: v.copy() for k, v in self.source_covs.items()},
            source_estimates=[s.copy() for s in self.source_estimates],
            log_alpha=self.log_alpha,
            log_evidence=self.log_evidence,
            log_weight=self.log_weight,
            failed=self.failed,
        )


@dataclass
class SlamEstimate:
    """Per-step output: fused robot state, critical distance, and source map extract."""

    t: float
    position: np.ndarray
    velocity: np.ndarray
    dc_mean: float
    sources: list
    ess: float
    keyframe_fraction: float
    log_evidence: float
    n_failed: int = 0
    degenerate: bool = False


def init_particles(config: SlamConfig, streams) -> list[Particle]:
    """Equal-weight particles with uniform critical-distance draws.

    streams: one RNG per particle slot; the first draw of each stream is that
    slot's critical distance, so identical seeds give bit-identical particles.
    """
    particles = []
    for i in range(config.n_particles):
        state = EkfState(
            x=np.asarray(config.initial_position, dtype=float),
            v=np.asarray(config.initial_velocity, dtype=float),
            cov=config.initial_cov * np.eye(3),
        )
        particles.append(Particle(
            dc=sample_dc(config.locating, streams[i]),
            state=state,
            rotation=np.eye(3),
            map=SourceMap.empty(config.map),
            x_last_kf=state.x.copy(),
            t_last_kf=config.start_time,
            x_last_corr=state.x.copy(),
            t_last_corr=config.start_time,
        ))
    return particles


def systematic_resample(weights: np.ndarray, rng) -> np.ndarray:
    """Systematic resampling: offspring counts match expected weight*N within one."""
    n = len(weights)
    positions = (rng.uniform() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def _normalized_log_weights(particles) -> tuple[np.ndarray, bool]:
    """Softmax of the accumulated log weights.

    Weights accumulate alpha * evidence across keyframes between resampling
    events; resampling with every iteration would make that identical to a
    fresh per-keyframe softmax, but with an ESS trigger the accumulation is
    what keeps a diverged particle from being forgiven at the next keyframe.
    """
    logw = np.array([p.log_weight for p in particles])
    finite = np.isfinite(logw)
    if not finite.any():
        return np.full(len(particles), 1.0 / len(particles)), True
    shifted = logw - logw[finite].max()
    w = np.where(finite, np.exp(np.where(finite, shifted, 0.0)), 0.0)
    return w / w.sum(), False


class SlamFilter:
    """Stateful runner folding measurement frames into per-step estimates."""

    def __init__(self, config: SlamConfig):
        self.config = config
        seq = np.random.SeedSequence(config.seed)
        children = seq.spawn(config.n_particles + 1)
        self.streams = [np.random.default_rng(c) for c in children[:-1]]
        self.rng = np.random.default_rng(children[-1])
        self.particles = init_particles(config, self.streams)
        self.betas = np.full(config.n_particles, 1.0 / config.n_particles)
        self.reported_sources: list = []
        self._limit_rejects: dict = {}
        self._slot_stale: dict = {}
        self._report_idx: int | None = None
        self.t_prev = config.start_time
        self._frame_index = 0
        self._workers = max(1, int(os.environ.get("DDSLAM_THREADS", "1")))

    # ---------------------------------------------------------------- step

    def step(self, frame: MeasurementFrame) -> SlamEstimate:
        cfg = self.config
        if frame.t <= self.t_prev:
            raise ValueError(f"frame timestamp {frame.t} not after {self.t_prev}")
        if len(frame.imu) == 0:
            raise ValueError("empty frame")
        dt_frame = frame.t - self.t_prev

        # The attitude report (9-axis channel) pins the frame-boundary rotation;
        # within a frame the raw gyro still drives the integration, so its
        # gravity leak stays in both the data and the noise accumulators.
        pre = preintegrate(frame.imu, noise=cfg.imu_noise())
        rot_report = None
        if cfg.orientation_source == "ground_truth" and frame.gt is not None:
            rot_report = frame.gt.rotation
            if cfg.orientation_noise_std > 0:
                noise = self.rng.normal(0.0, cfg.orientation_noise_std, size=3)
                rot_report = rot_report @ euler_to_rotation(noise)

        # Per-slot, per-frame birth streams: distinct across slots so particle
        # maps stay diverse (clones after resampling drift apart and a
        # trapped hypothesis can be out-competed), yet seeded by (run seed,
        # frame, slot) so results are identical for any worker count.
        def work(i: int) -> bool:
            rng = np.random.default_rng((self.config.seed, self._frame_index, i))
            return self._step_particle(self.particles[i], frame, pre, rot_report,
                                       dt_frame, rng)

        if self._workers > 1 and cfg.n_particles > 1:
            with ThreadPoolExecutor(max_workers=self._workers) as pool:
                kf_flags = list(pool.map(work, range(cfg.n_particles)))
        else:
            kf_flags = [work(i) for i in range(cfg.n_particles)]

        self.betas, degenerate = _normalized_log_weights(self.particles)
        ess = 1.0 / float(np.sum(self.betas ** 2))
        estimate = self._extract(frame.t, ess, kf_flags, degenerate)

        # Before the first correction, particle weights only carry map birth
        # noise (the poses are still clones); resampling then would be a pure
        # lottery over the critical-distance hypotheses.
        informed = any(p.t_last_corr > cfg.start_time for p in self.particles)
        if informed and ess < cfg.ess_fraction * cfg.n_particles:
            self._resample()

        self.t_prev = frame.t
        self._frame_index += 1
        return estimate

    def _step_particle(self, particle: Particle, frame: MeasurementFrame, pre,
                       rot_report, dt_frame: float, rng) -> bool:
        cfg = self.config
        rot_prev = particle.rotation
        state = ekf_predict(particle.state, pre, rot_prev, cfg.gravity, cfg.use_end_rotation)
        rot_new = rot_report if rot_report is not None else rot_prev @ pre.dR
        particle.rotation = rot_new
        x_pred = state.x.copy()
        q_x = state.q_x

        current = RobotState(state.x, state.v, rot_new)
        if not cfg.keyframes_enabled or particle.kf is None:
            is_kf = True
        else:
            is_kf = keyframe_check(current, frame.doas, particle.kf, cfg.map)

        if is_kf:
            self._keyframe_update(particle, state, frame, rot_new, x_pred, q_x,
                                  dt_frame, rng)
            particle.log_weight = (cfg.weight_fading * particle.log_weight
                                   + particle.log_alpha + particle.log_evidence)

        particle.map = reduce_map(particle.map)
        if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.v))):
            particle.failed = True
            particle.log_weight = -np.inf
        particle.state = state
        return is_kf

    def _keyframe_update(self, particle: Particle, state: EkfState,
                         frame: MeasurementFrame, rot_new, x_pred, q_x,
                         dt_frame: float, rng) -> None:
        cfg = self.config
        loc = cfg.locating
        # Corrections anchor the implied-velocity channel: after an outage the
        # position difference spreads over the whole gap, so a re-acquisition
        # jump cannot slam into the velocity.
        dt_corr = frame.t - particle.t_last_corr
        # Velocity smoothing blends against the IMU-transported (predicted)
        # velocity: the raw previous velocity is stale across a heading change
        # and would lag every turn by the smoothing factor.
        v_pred = state.v.copy()
        # The EKF consumes raw cluster estimates; the limiting filter applies
        # only to reported outputs, so a rejected jump cannot lock the filter
        # onto a stale source. Each estimate carries its cluster covariance:
        # treating the landmark as exact would let early, still-uncertain map
        # ranges steer the trajectory into a rigidly shifted solution.
        confirmed = estimate_sources(particle.map, None, cfg.map, with_cov=True)
        estimates = [c[0] for c in confirmed]
        est_covs = [c[1] for c in confirmed]

        # Per-row weight floor: a row unexplained by this particle's map is
        # clutter, and claiming that costs its density (per steradian, and per
        # meter of the birth range for the distance dimension). Blindness is
        # never free, or a diverged particle would outscore a tracking one.
        floor = cfg.map.clutter_rate / (4.0 * np.pi)
        if loc.use_distance:
            floor /= max(cfg.map.r_max - cfg.map.r_min, 1e-9)
        log_floor = np.log(floor) if floor > 0 else -50.0

        candidates: list = []
        cand_src: list = []
        log_alpha = len(frame.doas) * log_floor
        if estimates and len(frame.doas) > 0:
            rot_w2r = rot_new.T
            bearings = []
            predictions = []
            for est in estimates:
                try:
                    pred, jac = ekf_observe(x_pred, rot_w2r, est)
                except ValueError:
                    pred, jac = None, None
                predictions.append((pred, jac))
                bearings.append(None if pred is None else (pred[0], pred[1]))

            # Per-source covariances predict with the process noise accumulated
            # since this particle's last correction (the accumulators reset
            # there); a source first seen now starts from the running state
            # covariance, which already carries that growth.
            cov_pred = [particle.source_covs[j] + q_x if j in particle.source_covs
                        else state.cov.copy() for j in range(len(estimates))]

            # Nearest-bearing association with a chi-square validation gate on
            # the bearing innovation: clutter rows fail it, while a correction
            # outage grows the predicted covariance until the gate reopens and
            # the filter re-acquires instead of dead-reckoning forever. The
            # distance channel stays ungated: a particle must be allowed to
            # correct toward its own critical-distance hypothesis and pay for
            # the bias through its weight instead of being locked out.
            assoc = []
            for doa in frame.doas:
                angles = [np.inf if b is None else direction_angle(doa, b)
                          for b in bearings]
                j = int(np.argmin(angles))
                if not np.isfinite(angles[j]):
                    assoc.append(None)
                    continue
                pred, jac = predictions[j]
                innov = np.array([wrap_angle(doa[0] - pred[0]),
                                  wrap_angle(doa[1] - pred[1])])
                s = (jac[:2] @ (cov_pred[j] + est_covs[j]) @ jac[:2].T
                     + np.diag([loc.doa_var, loc.doa_var]))
                maha = float(innov @ np.linalg.solve(s, innov))
                assoc.append(j if maha <= cfg.assoc_gate_chi2 else None)

            dists = None
            if loc.use_distance:
                prev_rows = [None if j is None else particle.prev_distances.get(j)
                             for j in assoc]
                dists = distance_samples(frame.drr, particle.dc, prev_rows,
                                         cfg.v_max, dt_frame, cfg.rate_limit_margin)

            n_windows = frame.drr.n_windows
            for m, doa in enumerate(frame.doas):
                j = assoc[m]
                if j is None:
                    continue
                pred, jac = predictions[j]
                state_j = replace(state, cov=cov_pred[j])
                # The landmark's own covariance projects into measurement space
                # through the same Jacobian (up to sign), inflating R.
                land_cov = jac @ est_covs[j] @ jac.T
                # Marginal weight: likelihood of the window-averaged innovation
                # under this particle's prediction, mixed with the clutter
                # floor. A wrong critical distance is a range-innovation bias;
                # a drifted pose is a bearing bias.
                innovation = [wrap_angle(doa[0] - pred[0]), wrap_angle(doa[1] - pred[1])]
                meas_cov = np.diag([loc.doa_var, loc.doa_var, loc.range_var / n_windows]) \
                    + land_cov
                if dists is not None:
                    innovation.append(float(np.mean(dists[m])) - pred[2])
                row_ll = innovation_log_likelihood(
                    np.array(innovation), cov_pred[j], jac, meas_cov)
                log_alpha += np.logaddexp(
                    np.log(cfg.map.p_detect) + row_ll, log_floor) - log_floor
                for mu in range(n_windows if dists is not None else 1):
                    dist = float(dists[m, mu]) if dists is not None else 0.0
                    x_hat, v_hat, cov_upd = ekf_update(
                        state_j, (pred, jac), (doa[0], doa[1], dist),
                        particle.x_last_corr, dt_corr, loc,
                        source_est=estimates[j], rot_w2r=rot_w2r)
                    candidates.append((x_hat, v_hat, cov_upd))
                    cand_src.append(j)
                if dists is not None:
                    particle.prev_distances[j] = float(np.mean(dists[m]))

        if candidates:
            fus = gmm_fuse(candidates, x_pred, q_x, v_pred, loc.smoothing)
            # Bound the per-frame correction at the platform's reachable
            # displacement; a larger apparent correction is applied over
            # several frames, each re-gated against fresh measurements.
            step_vec = fus.x - x_pred
            step_len = float(np.linalg.norm(step_vec))
            cap = cfg.v_max * (1.0 + cfg.rate_limit_margin) * dt_frame
            if step_len > cap:
                fus.x = x_pred + step_vec * (cap / step_len)
            state.x = fus.x
            if cfg.velocity_feedback:
                # Conditional velocity update from the position correction: the
                # gain is the tracked position-velocity noise correlation, so a
                # steady-state correction shares ~q_v*dt/q_x of itself with the
                # velocity while a re-acquisition jump after a long outage
                # (position error = integrated velocity error) transfers at
                # ~1/gap, never slamming the velocity.
                prior = state.cov + 1e-9 * np.eye(3)
                gain_v = np.linalg.solve(prior.T, state.q_xv.T).T
                state.v = v_pred + gain_v @ (fus.x - x_pred)
                reduced = state.q_v - gain_v @ state.q_xv.T
                reduced = 0.5 * (reduced + reduced.T)
                eigvals, eigvecs = np.linalg.eigh(reduced)
                reduced = (eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T
                state.q_v = reduced + gain_v @ fus.cov @ gain_v.T
            src_idx = np.array(cand_src)
            covs = np.array([c[2] for c in candidates])
            for j in set(cand_src):
                mask = src_idx == j
                wsub = fus.weights[mask]
                total = wsub.sum()
                if total > 0:
                    particle.source_covs[j] = np.einsum(
                        "k,kij->ij", wsub / total, covs[mask])
            if 0 in particle.source_covs:
                state.cov = particle.source_covs[0].copy()
            # A correction restarts the position-noise accumulators.
            state.q_x = np.zeros((3, 3))
            state.q_xv = np.zeros((3, 3))
            particle.x_last_corr = state.x.copy()
            particle.t_last_corr = frame.t
        elif estimates and len(frame.doas) > 0:
            # Confirmed sources and bearings, yet every row failed the gate:
            # the state is inconsistent in some weakly observed direction and
            # the honest covariance may take dozens of frames to reopen the
            # gate. Inflate it instead (fading memory). Reopening then corrects
            # with an honestly large position gain, while the velocity share
            # shrinks because the grown covariance divides the transfer.
            state.cov = state.cov * cfg.outage_cov_growth \
                + 1e-4 * cfg.outage_cov_growth * np.eye(3)

        particle.log_alpha = log_alpha

        if cfg.velocity_feedback:
            # The platform cannot exceed its physical speed bound (the same
            # bound the distance rate limiter uses), so neither may the state.
            speed = float(np.linalg.norm(state.v))
            v_cap = cfg.v_max * (1.0 + cfg.rate_limit_margin)
            if speed > v_cap:
                state.v = state.v * (v_cap / speed)

        for doa in frame.doas:
            particle.map.components.extend(
                birth_components(state.x, rot_new, doa, cfg.map, rng))
        if cfg.map.triangulation_update:
            particle.map, particle.log_evidence = update_weights(
                particle.map, frame.doas, state.x, rot_new, cfg.map)
        else:
            particle.log_evidence = doa_log_evidence(
                frame.doas, state.x, rot_new, particle.map, cfg.map)
        if len(frame.doas) > 0:
            particle.map = merge_components(particle.map)

        particle.source_estimates = estimates
        particle.kf = KeyframeState(state.x.copy(), frame.doas.copy(), rot_new.copy())
        particle.x_last_kf = state.x.copy()
        particle.t_last_kf = frame.t

    # ------------------------------------------------------------- outputs

    def _extract(self, t: float, ess: float, kf_flags, degenerate: bool) -> SlamEstimate:
        betas = self.betas
        position = sum(b * p.state.x for b, p in zip(betas, self.particles))
        velocity = sum(b * p.state.v for b, p in zip(betas, self.particles))
        dc_mean = float(sum(b * p.dc for b, p in zip(betas, self.particles)))
        # Hysteresis on the map-source particle: switch lineages only when
        # another particle clearly outweighs the incumbent, so near-parity
        # weight noise cannot flap the reported map between lineages.
        champion = int(np.argmax(betas))
        if (self._report_idx is not None
                and betas[champion] < self.config.report_hysteresis
                * betas[self._report_idx]):
            champion = self._report_idx
        self._report_idx = champion
        best = self.particles[champion]

        # Report the best particle's confirmed sources, each slot rate-limited
        # against the nearest previous report (slot identity follows
        # proximity, not cluster weight rank, which reorders freely); keep the
        # old report when a step confirms nothing, since sources are static
        # landmarks. A jump the limiter rejects limit_patience times in a row
        # is no longer an accident and is accepted.
        new_sources = best.source_estimates
        if new_sources:
            merged = list(self.reported_sources)
            free = set(range(len(merged)))
            matched = set()
            for src in new_sources:
                src = np.asarray(src, dtype=float)
                slot = None
                if free:
                    slot = min(free, key=lambda i: np.linalg.norm(merged[i] - src))
                if slot is None:
                    merged.append(src)
                    matched.add(len(merged) - 1)
                    continue
                free.discard(slot)
                matched.add(slot)
                limited = limiting_filter(src, merged[slot], self.config.map.limit_step)
                if np.any(limited != src):
                    self._limit_rejects[slot] = self._limit_rejects.get(slot, 0) + 1
                    if self._limit_rejects[slot] >= self.config.limit_patience:
                        limited = src
                        self._limit_rejects[slot] = 0
                else:
                    self._limit_rejects[slot] = 0
                a_r = self.config.report_smoothing
                merged[slot] = a_r * merged[slot] + (1.0 - a_r) * limited
            keep_rows = []
            new_stale = {}
            new_rejects = {}
            for i, src in enumerate(merged):
                age = 0 if i in matched else self._slot_stale.get(i, 0) + 1
                if age <= self.config.report_staleness:
                    new_i = len(keep_rows)
                    keep_rows.append(src)
                    new_stale[new_i] = age
                    if i in self._limit_rejects:
                        new_rejects[new_i] = self._limit_rejects[i]
            self.reported_sources = keep_rows
            self._slot_stale = new_stale
            self._limit_rejects = new_rejects

        return SlamEstimate(
            t=t,
            position=np.asarray(position, dtype=float),
            velocity=np.asarray(velocity, dtype=float),
            dc_mean=dc_mean,
            sources=[s.copy() for s in self.reported_sources],
            ess=ess,
            keyframe_fraction=float(np.mean(kf_flags)),
            log_evidence=best.log_evidence,
            n_failed=sum(p.failed for p in self.particles),
            degenerate=degenerate,
        )

    def _resample(self) -> None:
        idx = systematic_resample(self.betas, self.rng)
        self.particles = [self.particles[j].copy() for j in idx]
        if self.config.resample_jitter > 0:
            for p in self.particles:
                p.dc = float(np.clip(
                    p.dc + self.rng.normal(0.0, self.config.resample_jitter),
                    self.config.locating.dc_min, self.config.locating.dc_max))
        for p in self.particles:
            p.log_weight = 0.0
        self.betas = np.full(len(self.particles), 1.0 / len(self.particles))

    def run(self, frames) -> list[SlamEstimate]:
        out = []
        for k, frame in enumerate(frames):
            try:
                out.append(self.step(frame))
            except ValueError as exc:
                raise ValueError(f"frame {k}: {exc}") from exc
        if not out:
            raise ValueError("no frames")
        return out


def run(frames, config: SlamConfig) -> list[SlamEstimate]:
    """Fold a frame sequence through a fresh filter."""
    return SlamFilter(config).run(frames)
