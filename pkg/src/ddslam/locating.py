"""Per-particle robot-position EKF with bearing/distance observations and GMM fusion.

Each critical-distance particle carries a conditionally near-linear substate
(robot position/velocity) filtered by an EKF. One EKF update runs per
(bearing, DRR-window) pair, all branching from the same prediction; the
candidate corrections are then fused as a Gaussian mixture whose weights score
agreement with the dead-reckoned prediction, which is also what the particle
weight measures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import cartesian_to_spherical, wrap_angle
from .imu import Preintegrated, propagate_noise


def gaussian_logpdf(x, mean, cov) -> float:
    """Log density of a 3-D Gaussian; near-singular covariances are regularized."""
    d = np.asarray(x, dtype=float) - np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(cov + 1e-9 * np.eye(3))
    sol = np.linalg.solve(chol, d)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (sol @ sol) - 0.5 * logdet - 1.5 * np.log(2.0 * np.pi))


@dataclass
class EkfState:
    """Robot position/velocity with covariance and process-noise accumulators.

    q_xv tracks the position-velocity noise correlation: after an outage the
    position error is mostly integrated velocity error, and the correlation is
    what sizes the velocity share of a position correction.
    """

    x: np.ndarray
    v: np.ndarray
    cov: np.ndarray
    q_x: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    q_v: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    q_xv: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def copy(self) -> "EkfState":
        return EkfState(self.x.copy(), self.v.copy(), self.cov.copy(),
                        self.q_x.copy(), self.q_v.copy(), self.q_xv.copy())


@dataclass
class LocatingConfig:
    doa_var: float = np.radians(2.0) ** 2     # bearing measurement variance, rad^2
    range_var: float = 0.35 ** 2              # distance measurement variance, m^2
    smoothing: float = 0.7                    # velocity smoothing factor in [0, 1)
    dc_min: float = 0.5
    dc_max: float = 10.0
    use_distance: bool = True                 # False = bearing-only ablation

    def __post_init__(self):
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must be in [0, 1)")
        if self.dc_min > self.dc_max or self.dc_min <= 0:
            raise ValueError("critical-distance range must be positive and non-empty")

    def measurement_cov(self) -> np.ndarray:
        if self.use_distance:
            return np.diag([self.doa_var, self.doa_var, self.range_var])
        return np.diag([self.doa_var, self.doa_var])


def sample_dc(cfg: LocatingConfig, rng) -> float:
    """Draw a critical-distance hypothesis from the uniform prior."""
    return float(rng.uniform(cfg.dc_min, cfg.dc_max))


def ekf_predict(state: EkfState, pre: Preintegrated, rot_prev: np.ndarray,
                gravity: np.ndarray, use_end_rotation: bool = False) -> EkfState:
    """Dead-reckon the state through one preintegrated increment.

    Advances position and velocity, accumulates process noise (the
    accumulators are never reset: uncorrected inertial noise keeps growing,
    which is also what fades the particle-weight discrimination over time),
    and inflates the covariance by this interval's position-noise increment
    (the state transition is the identity).
    """
    dt = pre.dt_total
    rot_inc = rot_prev @ pre.dR if use_end_rotation else rot_prev
    x = state.x + state.v * dt + 0.5 * gravity * dt * dt + rot_inc @ pre.dX
    v = state.v + gravity * dt + rot_inc @ pre.dV
    q_x, q_v = propagate_noise(state.q_x, state.q_v, pre)
    q_xv = state.q_xv + dt * state.q_v + pre.dQ_XV
    cov = state.cov + (q_x - state.q_x)
    return EkfState(x=x, v=v, cov=0.5 * (cov + cov.T), q_x=q_x, q_v=q_v, q_xv=q_xv)


def ekf_observe(x, rot_w2r: np.ndarray, source_est) -> tuple[np.ndarray, np.ndarray]:
    """Predicted (az, el, r) of a source and the Jacobian w.r.t. robot position.

    rot_w2r is the world-to-robot rotation (transpose of the stored attitude).
    """
    u = rot_w2r @ (np.asarray(source_est, dtype=float) - np.asarray(x, dtype=float))
    r = float(np.linalg.norm(u))
    rho2 = float(u[0] * u[0] + u[1] * u[1])
    if r < 1e-9 or rho2 < 1e-18:
        raise ValueError("degenerate bearing")
    rho = np.sqrt(rho2)
    pred = cartesian_to_spherical(u)
    d_az = np.array([-u[1] / rho2, u[0] / rho2, 0.0])
    d_el = np.array([-u[0] * u[2] / (rho * r * r), -u[1] * u[2] / (rho * r * r), rho / (r * r)])
    d_r = u / r
    jac = np.vstack([d_az, d_el, d_r]) @ (-rot_w2r)
    return pred, jac


def kalman_gain(cov: np.ndarray, jac: np.ndarray, meas_cov: np.ndarray) -> np.ndarray:
    s = jac @ cov @ jac.T + meas_cov
    try:
        return np.linalg.solve(s.T, (cov @ jac.T).T).T
    except np.linalg.LinAlgError:
        s = s + 1e-9 * np.eye(s.shape[0])
        return np.linalg.solve(s.T, (cov @ jac.T).T).T


def ekf_update(state: EkfState, predicted, measured, x_prev_kf, dt_kf: float,
               cfg: LocatingConfig, source_est=None, rot_w2r=None,
               meas_cov=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One EKF correction from a (bearing, distance) measurement.

    predicted: (pred, jac) from :func:`ekf_observe`. measured: (az, el, dist);
    dist is ignored when the distance channel is disabled. Angle innovations
    wrap to (-pi, pi]. Returns the corrected position, the implied velocity
    over the keyframe gap, and the updated covariance.

    When source_est and rot_w2r are given, the update iterates once with the
    observation re-linearized at the corrected position (iterated EKF): large
    innovations evaluated at a wrong state otherwise split the correction
    across axes badly, which is what poisons the weakly observed direction on
    re-acquisition. meas_cov overrides the configured measurement covariance
    (a landmark's own uncertainty belongs there).
    """
    if dt_kf <= 0:
        raise ValueError("dt_kf must be > 0")
    az, el, dist = measured
    if meas_cov is None:
        meas_cov = cfg.measurement_cov()

    def innovation_at(pred):
        innov = [wrap_angle(az - pred[0]), wrap_angle(el - pred[1])]
        if cfg.use_distance:
            innov.append(dist - pred[2])
        return np.array(innov)

    pred, jac = predicted
    k = 3 if cfg.use_distance else 2
    gain = kalman_gain(state.cov, jac[:k], meas_cov)
    x_hat = state.x + gain @ innovation_at(pred)
    jac_used = jac
    if source_est is not None and rot_w2r is not None:
        try:
            pred_i, jac_i = ekf_observe(x_hat, rot_w2r, source_est)
        except ValueError:
            pred_i, jac_i = None, None
        if pred_i is not None:
            gain = kalman_gain(state.cov, jac_i[:k], meas_cov)
            residual = innovation_at(pred_i) - jac_i[:k] @ (state.x - x_hat)
            x_hat = state.x + gain @ residual
            jac_used = jac_i
    v_hat = (x_hat - np.asarray(x_prev_kf, dtype=float)) / dt_kf
    cov = (np.eye(3) - gain @ jac_used[:k]) @ state.cov
    return x_hat, v_hat, 0.5 * (cov + cov.T)


@dataclass
class FusionResult:
    x: np.ndarray
    v: np.ndarray
    cov: np.ndarray
    weights: np.ndarray
    degenerate: bool = False


def gmm_fuse(candidates, x_pred, q_x, v_prev, a_p: float) -> FusionResult:
    """Fuse EKF candidates with prediction-agreement weights.

    candidates: sequence of (x_hat, v_hat, cov). Raw weights are Gaussian
    densities of each candidate under the dead-reckoned prediction, normalized
    to a probability vector; if every density underflows the weights fall back
    to uniform and the result is flagged. The fused velocity is first-order
    smoothed against v_prev.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    xs = np.array([c[0] for c in candidates])
    vs = np.array([c[1] for c in candidates])
    covs = np.array([c[2] for c in candidates])
    logw = np.array([gaussian_logpdf(x, x_pred, q_x) for x in xs])
    finite = np.isfinite(logw)
    # every raw density underflows to zero in double precision
    degenerate = not finite.any() or float(logw[finite].max()) < -745.0
    if degenerate:
        w = np.full(len(candidates), 1.0 / len(candidates))
    else:
        logw = logw - logw.max()
        w = np.exp(logw)
        w /= w.sum()
    x = w @ xs
    v = a_p * np.asarray(v_prev, dtype=float) + (1.0 - a_p) * (w @ vs)
    cov = np.einsum("k,kij->ij", w, covs)
    return FusionResult(x=x, v=v, cov=cov, weights=w, degenerate=degenerate)


def particle_log_alpha(x_fused, x_pred, q_x) -> float:
    """Log agreement between the fused position and the dead-reckoned prediction."""
    return gaussian_logpdf(x_fused, x_pred, q_x)


def particle_alpha(x_fused, x_pred, q_x) -> float:
    return float(np.exp(particle_log_alpha(x_fused, x_pred, q_x)))


def innovation_log_likelihood(innovation, cov_pred, jac, meas_cov) -> float:
    """Log density of one innovation under the predicted state.

    This is the marginal particle-filter weight contribution of a measurement
    conditioned on the particle's hypothesis: a wrong critical distance shows
    up directly as a range innovation bias, scored against S = H P H^T + R.
    """
    innovation = np.asarray(innovation, dtype=float)
    k = len(innovation)
    s = jac[:k] @ cov_pred @ jac[:k].T + meas_cov[:k, :k]
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(s + 1e-9 * np.eye(k))
    sol = np.linalg.solve(chol, innovation)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (sol @ sol) - 0.5 * logdet - 0.5 * k * np.log(2.0 * np.pi))
