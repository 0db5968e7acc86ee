import numpy as np
import pytest

from ddslam.geometry import cartesian_to_spherical, euler_to_rotation
from ddslam.imu import ImuBatch, ImuNoiseConfig, preintegrate
from ddslam.locating import (
    EkfState,
    FusionResult,
    LocatingConfig,
    ekf_observe,
    ekf_predict,
    ekf_update,
    gaussian_logpdf,
    gmm_fuse,
    innovation_log_likelihood,
    kalman_gain,
    particle_alpha,
    sample_dc,
)

NO_NOISE = ImuNoiseConfig(0.0, 0.0)


def still_batch(duration=1.0, rate=50.0):
    n = int(duration * rate)
    t = np.arange(n + 1) / rate
    return ImuBatch(t=t, specific_force=np.tile([0.0, 0.0, 9.81], (n + 1, 1)),
                    angular_rate=np.zeros((n + 1, 3)))


# ---------------------------------------------------------------- sampling

def test_sample_dc_degenerate_range():
    cfg = LocatingConfig(dc_min=2.0, dc_max=2.0)
    assert sample_dc(cfg, np.random.default_rng(0)) == pytest.approx(2.0)


def test_sample_dc_uniform_mean_and_bounds():
    cfg = LocatingConfig(dc_min=1.0, dc_max=5.0)
    rng = np.random.default_rng(1)
    draws = np.array([sample_dc(cfg, rng) for _ in range(100000)])
    assert draws.mean() == pytest.approx(3.0, rel=0.01)
    assert draws.min() >= 1.0 and draws.max() <= 5.0


# ----------------------------------------------------------------- predict

def test_ekf_predict_zero_motion_zero_noise():
    state = EkfState(x=np.array([1.0, 2.0, 0.5]), v=np.zeros(3), cov=np.zeros((3, 3)))
    pre = preintegrate(still_batch(), noise=NO_NOISE)
    out = ekf_predict(state, pre, np.eye(3), np.array([0.0, 0.0, -9.81]))
    assert np.allclose(out.x, state.x, atol=1e-9)
    assert np.allclose(out.v, state.v, atol=1e-9)
    assert np.allclose(out.cov, 0.0)


def test_ekf_predict_grows_cov_by_position_noise():
    state = EkfState(x=np.zeros(3), v=np.zeros(3), cov=0.01 * np.eye(3))
    pre = preintegrate(still_batch(), noise=ImuNoiseConfig(1e-3, 0.0))
    out = ekf_predict(state, pre, np.eye(3), np.array([0.0, 0.0, -9.81]))
    assert np.trace(out.cov) == pytest.approx(np.trace(state.cov) + np.trace(pre.dQ_X))


def test_ekf_predict_matches_dead_reckon_position():
    from ddslam.imu import RobotState, dead_reckon, GRAVITY
    rng = np.random.default_rng(2)
    n = 50
    t = np.arange(n + 1) / n
    batch = ImuBatch(t=t, specific_force=rng.normal(0, 1, (n + 1, 3)) + [0, 0, 9.81],
                     angular_rate=rng.normal(0, 0.1, (n + 1, 3)))
    pre = preintegrate(batch, noise=NO_NOISE)
    rot = euler_to_rotation((0.1, -0.2, 0.5))
    state = EkfState(x=np.array([1.0, -1.0, 0.3]), v=np.array([0.5, 0.2, 0.0]),
                     cov=np.zeros((3, 3)))
    out = ekf_predict(state, pre, rot, GRAVITY)
    rs = dead_reckon(RobotState(state.x, state.v, rot), pre, GRAVITY)
    assert np.allclose(out.x, rs.position, atol=1e-12)
    assert np.allclose(out.v, rs.velocity, atol=1e-12)


# ----------------------------------------------------------------- observe

def test_ekf_observe_axis_aligned():
    pred, jac = ekf_observe(np.zeros(3), np.eye(3), np.array([1.0, 0.0, 0.0]))
    assert np.allclose(pred, [0.0, 0.0, 1.0], atol=1e-12)
    assert jac.shape == (3, 3)


def test_ekf_observe_rejects_coincident():
    with pytest.raises(ValueError, match="degenerate"):
        ekf_observe(np.ones(3), np.eye(3), np.ones(3))


def test_ekf_observe_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    step = 1e-6
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-3, 3, 3)
        src = x + rng.uniform(0.5, 4.0) * _random_unit(rng)
        rot = euler_to_rotation(rng.uniform(-np.pi, np.pi, 3)).T
        _, jac = ekf_observe(x, rot, src)
        num = np.zeros((3, 3))
        for k in range(3):
            dx = np.zeros(3)
            dx[k] = step
            hi, _ = ekf_observe(x + dx, rot, src)
            lo, _ = ekf_observe(x - dx, rot, src)
            diff = hi - lo
            diff[0] = np.arctan2(np.sin(diff[0]), np.cos(diff[0]))
            diff[1] = np.arctan2(np.sin(diff[1]), np.cos(diff[1]))
            num[:, k] = diff / (2 * step)
        worst = max(worst, float(np.abs(jac - num).max()))
    assert worst < 1e-5


def _random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def test_ekf_observe_range_gradient_direction():
    x = np.array([1.0, 1.0, 0.0])
    src = np.array([3.0, 1.0, 0.0])
    _, jac = ekf_observe(x, np.eye(3), src)
    # moving toward the source shrinks the range: gradient is -unit(src - x)
    assert np.allclose(jac[2], [-1.0, 0.0, 0.0], atol=1e-12)


# ------------------------------------------------------------------ update

def test_kalman_gain_scalar_like_case():
    sigma2 = 0.3
    gain = kalman_gain(sigma2 * np.eye(3), np.eye(3), sigma2 * np.eye(3))
    assert np.allclose(gain, 0.5 * np.eye(3), atol=1e-12)


def test_ekf_update_zero_innovation_keeps_state_and_shrinks_cov():
    cfg = LocatingConfig()
    state = EkfState(x=np.zeros(3), v=np.zeros(3), cov=0.25 * np.eye(3))
    src = np.array([2.0, 1.0, 0.5])
    pred = ekf_observe(state.x, np.eye(3), src)
    x_hat, v_hat, cov = ekf_update(state, pred, tuple(pred[0]), np.zeros(3), 1.0, cfg)
    assert np.allclose(x_hat, state.x, atol=1e-9)
    assert np.trace(cov) < np.trace(state.cov)


def test_ekf_update_angle_wrapping_near_pi():
    cfg = LocatingConfig(use_distance=False)
    state = EkfState(x=np.zeros(3), v=np.zeros(3), cov=1e-6 * np.eye(3))
    src = np.array([-2.0, -0.001, 0.0])  # bearing close to +pi
    pred, jac = ekf_observe(state.x, np.eye(3), src)
    measured = (-np.pi + 1e-3, 0.0, 0.0)  # same direction approached from -pi
    x_hat, _, _ = ekf_update(state, (pred, jac), measured, np.zeros(3), 1.0, cfg)
    # a ~2pi wrap error would displace the state by meters
    assert np.linalg.norm(x_hat - state.x) < 0.05


def test_ekf_update_large_meas_cov_freezes_state():
    cfg = LocatingConfig(doa_var=1e12, range_var=1e12)
    state = EkfState(x=np.zeros(3), v=np.zeros(3), cov=0.1 * np.eye(3))
    src = np.array([2.0, 1.0, 0.5])
    pred = ekf_observe(state.x, np.eye(3), src)
    measured = (pred[0][0] + 0.5, pred[0][1] - 0.2, pred[0][2] + 1.0)
    x_hat, _, _ = ekf_update(state, pred, measured, np.zeros(3), 1.0, cfg)
    assert np.allclose(x_hat, state.x, atol=1e-6)


def test_ekf_update_zero_cov_ignores_measurement():
    cfg = LocatingConfig()
    state = EkfState(x=np.zeros(3), v=np.zeros(3), cov=np.zeros((3, 3)))
    src = np.array([2.0, 1.0, 0.5])
    pred = ekf_observe(state.x, np.eye(3), src)
    measured = (pred[0][0] + 0.3, pred[0][1] + 0.3, pred[0][2] + 2.0)
    x_hat, _, _ = ekf_update(state, pred, measured, np.zeros(3), 1.0, cfg)
    assert np.allclose(x_hat, state.x, atol=1e-9)


def test_ekf_update_velocity_over_gap():
    cfg = LocatingConfig()
    state = EkfState(x=np.array([2.0, 0.0, 0.0]), v=np.zeros(3), cov=np.zeros((3, 3)))
    src = np.array([4.0, 1.0, 0.5])
    pred = ekf_observe(state.x, np.eye(3), src)
    x_hat, v_hat, _ = ekf_update(state, pred, tuple(pred[0]), np.zeros(3), 2.0, cfg)
    assert np.allclose(v_hat, x_hat / 2.0)


def test_ekf_update_rejects_bad_gap():
    cfg = LocatingConfig()
    state = EkfState(x=np.zeros(3), v=np.zeros(3), cov=np.eye(3))
    src = np.array([2.0, 1.0, 0.5])
    pred = ekf_observe(state.x, np.eye(3), src)
    with pytest.raises(ValueError):
        ekf_update(state, pred, tuple(pred[0]), np.zeros(3), 0.0, cfg)


# ------------------------------------------------------------------ fusion

def test_gmm_fuse_single_candidate_identity():
    x = np.array([1.0, 2.0, 3.0])
    v = np.array([0.1, 0.2, 0.3])
    cov = 0.02 * np.eye(3)
    out = gmm_fuse([(x, v, cov)], x, 0.01 * np.eye(3), np.zeros(3), a_p=0.0)
    assert np.allclose(out.x, x)
    assert np.allclose(out.v, v)
    assert np.allclose(out.cov, cov)
    assert out.weights == pytest.approx([1.0])


def test_gmm_fuse_symmetric_candidates():
    x_pred = np.zeros(3)
    c1 = (np.array([0.1, 0, 0]), np.zeros(3), np.eye(3))
    c2 = (np.array([-0.1, 0, 0]), np.zeros(3), np.eye(3))
    out = gmm_fuse([c1, c2], x_pred, 0.01 * np.eye(3), np.zeros(3), a_p=0.0)
    assert np.allclose(out.x, x_pred, atol=1e-12)
    assert np.allclose(out.weights, [0.5, 0.5])


def test_gmm_fuse_near_candidate_dominates():
    q = 0.01 * np.eye(3)  # sigma = 0.1
    near = (np.zeros(3), np.zeros(3), np.eye(3))
    far = (np.array([0.3, 0, 0]), np.zeros(3), np.eye(3))  # 3 sigma away
    out = gmm_fuse([near, far], np.zeros(3), q, np.zeros(3), a_p=0.0)
    assert out.weights[0] > 0.98


def test_gmm_fuse_weights_probability_vector():
    rng = np.random.default_rng(4)
    cands = [(rng.normal(size=3), rng.normal(size=3), np.eye(3)) for _ in range(12)]
    out = gmm_fuse(cands, np.zeros(3), 0.5 * np.eye(3), np.zeros(3), a_p=0.3)
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(out.weights >= 0)


def test_gmm_fuse_velocity_smoothing():
    v_prev = np.array([1.0, 0.0, 0.0])
    cand = (np.zeros(3), np.array([0.0, 1.0, 0.0]), np.eye(3))
    out = gmm_fuse([cand], np.zeros(3), np.eye(3), v_prev, a_p=0.7)
    assert np.allclose(out.v, 0.7 * v_prev + 0.3 * np.array([0.0, 1.0, 0.0]))


def test_gmm_fuse_underflow_falls_back_to_uniform():
    bad_cov = np.zeros((3, 3))  # singular scale, regularized inside
    c1 = (np.array([1e8, 0, 0]), np.zeros(3), np.eye(3))
    c2 = (np.array([-1e8, 0, 0]), np.zeros(3), np.eye(3))
    out = gmm_fuse([c1, c2], np.zeros(3), bad_cov, np.zeros(3), a_p=0.0)
    assert isinstance(out, FusionResult)
    assert np.allclose(out.weights, [0.5, 0.5])
    assert out.degenerate


# ----------------------------------------------------------------- weights

def test_particle_alpha_peak_value():
    q = 0.04 * np.eye(3)
    peak = particle_alpha(np.zeros(3), np.zeros(3), q)
    expected = (2 * np.pi) ** -1.5 * np.linalg.det(q) ** -0.5
    assert peak == pytest.approx(expected, rel=1e-9)


def test_particle_alpha_isotropic_ratio():
    q = np.eye(3)
    peak = particle_alpha(np.zeros(3), np.zeros(3), q)
    off = particle_alpha(np.array([1.0, 0, 0]), np.zeros(3), q)
    assert off / peak == pytest.approx(np.exp(-0.5), rel=1e-9)


def test_particle_alpha_monotone_in_deviation():
    q = 0.1 * np.eye(3)
    vals = [particle_alpha(np.array([d, 0, 0]), np.zeros(3), q) for d in (0, 0.1, 0.3, 1.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_gaussian_logpdf_regularizes_singular():
    val = gaussian_logpdf(np.zeros(3), np.zeros(3), np.zeros((3, 3)))
    assert np.isfinite(val)


def test_innovation_log_likelihood_prefers_small_innovation():
    cov = 0.01 * np.eye(3)
    jac = np.eye(3)
    r = 0.05 * np.eye(3)
    good = innovation_log_likelihood(np.array([0.01, 0.0, 0.0]), cov, jac, r)
    bad = innovation_log_likelihood(np.array([0.5, 0.0, 0.0]), cov, jac, r)
    assert good > bad
