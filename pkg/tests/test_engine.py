import numpy as np
import pytest

from ddslam.acoustics import DrrWindowSet
from ddslam.engine import (
    SlamConfig,
    SlamFilter,
    init_particles,
    run,
    systematic_resample,
    _normalized_log_weights,
)
from ddslam.imu import ImuBatch
from ddslam.locating import LocatingConfig
from ddslam.sim import MeasurementFrame, ScenarioConfig, generate_frames


def small_config(**kw):
    defaults = dict(n_particles=10, seed=0, initial_position=(1.0, 1.0, 0.5))
    defaults.update(kw)
    return SlamConfig(**defaults)


def empty_frame(t, dt=1.0, rate=20):
    n = int(rate * dt)
    times = t - dt + np.arange(n + 1) * dt / n
    return MeasurementFrame(
        t=t,
        imu=ImuBatch(t=times, specific_force=np.tile([0, 0, 9.81], (n + 1, 1)),
                     angular_rate=np.zeros((n + 1, 3))),
        doas=np.empty((0, 2)),
        drr=DrrWindowSet(np.empty((0, 1))),
    )


# ------------------------------------------------------------------- init

def test_init_single_particle():
    filt = SlamFilter(small_config(n_particles=1))
    assert len(filt.particles) == 1
    assert filt.betas[0] == pytest.approx(1.0)


def test_init_dc_within_range():
    cfg = small_config(locating=LocatingConfig(dc_min=1.0, dc_max=5.0))
    filt = SlamFilter(cfg)
    assert all(1.0 <= p.dc <= 5.0 for p in filt.particles)


def test_init_deterministic_across_runs():
    a = SlamFilter(small_config()).particles
    b = SlamFilter(small_config()).particles
    for pa, pb in zip(a, b):
        assert pa.dc == pb.dc
        assert np.array_equal(pa.state.x, pb.state.x)


# --------------------------------------------------------------- weighting

def test_beta_normalized_each_step():
    cfg = ScenarioConfig(n_steps=10, seed=0)
    frames = generate_frames(cfg)
    filt = SlamFilter(small_config(initial_position=cfg.start_position))
    for frame in frames:
        filt.step(frame)
        assert filt.betas.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(filt.betas >= 0)


def test_evidence_ratio_sets_beta():
    # one particle with 10x the evidence of the other nine: beta = 10/19
    cfg = small_config()
    particles = init_particles(cfg, SlamFilter(cfg).streams)
    for p in particles:
        p.log_weight = 0.0
    particles[0].log_weight = np.log(10.0)
    betas, degenerate = _normalized_log_weights(particles)
    assert not degenerate
    assert betas[0] == pytest.approx(10.0 / 19.0)


def test_all_underflow_gives_uniform_flag():
    cfg = small_config()
    particles = init_particles(cfg, SlamFilter(cfg).streams)
    for p in particles:
        p.log_weight = -np.inf
    betas, degenerate = _normalized_log_weights(particles)
    assert degenerate
    assert np.allclose(betas, 0.1)


# -------------------------------------------------------------- resampling

def test_resample_one_hot_weights():
    weights = np.zeros(10)
    weights[3] = 1.0
    idx = systematic_resample(weights, np.random.default_rng(0))
    assert np.all(idx == 3)


def test_resample_uniform_preserves_multiset_within_one():
    weights = np.full(10, 0.1)
    idx = systematic_resample(weights, np.random.default_rng(1))
    counts = np.bincount(idx, minlength=10)
    assert np.all(np.abs(counts - 1) <= 1)


def test_resample_offspring_counts_match_expectation():
    rng = np.random.default_rng(2)
    weights = np.array([0.5, 0.3, 0.1, 0.06, 0.04])
    counts = np.zeros(5)
    trials = 40000
    for _ in range(trials):
        idx = systematic_resample(weights, rng)
        counts += np.bincount(idx, minlength=5)
    expected = weights * 5 * trials
    assert np.all(np.abs(counts - expected) / expected < 0.02)
    # systematic property: every draw is within 1 of the expectation
    for _ in range(200):
        c = np.bincount(systematic_resample(weights, rng), minlength=5)
        assert np.all(np.abs(c - weights * 5) <= 1.0 + 1e-9)


def test_resample_preserves_dc_mean_in_expectation():
    rng = np.random.default_rng(3)
    dcs = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    weights = np.array([0.4, 0.25, 0.2, 0.1, 0.05])
    target = float(weights @ dcs)
    acc = 0.0
    trials = 10000
    for _ in range(trials):
        idx = systematic_resample(weights, rng)
        acc += dcs[idx].mean()
    assert acc / trials == pytest.approx(target, rel=0.02)


# ------------------------------------------------------------------- step

def test_step_rejects_non_monotone_time():
    filt = SlamFilter(small_config())
    filt.step(empty_frame(1.0))
    with pytest.raises(ValueError, match="not after"):
        filt.step(empty_frame(0.5))


def test_empty_doa_frames_pure_dead_reckoning():
    filt = SlamFilter(small_config(n_particles=3))
    for t in range(1, 6):
        est = filt.step(empty_frame(float(t)))
    assert est.ess == pytest.approx(3.0)
    for p in filt.particles:
        assert len(p.map.components) == 0
        assert np.allclose(p.state.x, [1.0, 1.0, 0.5], atol=1e-6)


def test_dc_mean_constant_without_information():
    cfg = small_config()
    filt = SlamFilter(cfg)
    first = None
    for t in range(1, 12):
        est = filt.step(empty_frame(float(t)))
        if first is None:
            first = est.dc_mean
        assert est.dc_mean == pytest.approx(first, abs=1e-9)


def test_run_produces_one_estimate_per_frame():
    cfg = ScenarioConfig(n_steps=12, seed=1)
    frames = generate_frames(cfg)
    estimates = run(frames, small_config(initial_position=cfg.start_position, seed=1))
    assert len(estimates) == 12
    assert [e.t for e in estimates] == [f.t for f in frames]


def test_run_deterministic_same_seed():
    cfg = ScenarioConfig(n_steps=15, seed=2)
    frames = generate_frames(cfg)
    slam = small_config(initial_position=cfg.start_position, seed=2)
    a = run(frames, slam)
    b = run(frames, slam)
    for ea, eb in zip(a, b):
        assert np.array_equal(ea.position, eb.position)
        assert ea.dc_mean == eb.dc_mean
        assert ea.ess == eb.ess


def test_run_deterministic_across_worker_counts(monkeypatch):
    cfg = ScenarioConfig(n_steps=12, seed=3)
    frames = generate_frames(cfg)
    slam = small_config(initial_position=cfg.start_position, seed=3)
    monkeypatch.setenv("DDSLAM_THREADS", "1")
    a = run(frames, slam)
    monkeypatch.setenv("DDSLAM_THREADS", "4")
    b = run(frames, slam)
    for ea, eb in zip(a, b):
        assert np.array_equal(ea.position, eb.position)
        assert np.array_equal(ea.velocity, eb.velocity)
        assert ea.dc_mean == eb.dc_mean


def test_non_keyframe_leaves_map_untouched():
    # stationary scenario: first frame is a keyframe, later ones are not
    cfg = ScenarioConfig(trajectory_mode="stationary_segment", stationary_start=0,
                         stationary_steps=10, n_steps=10, seed=4,
                         doa_noise_std=0.0, p_detect=1.0, clutter_rate=0.0,
                         accel_noise_var=0.0, gyro_noise_var=0.0)
    frames = generate_frames(cfg)
    filt = SlamFilter(small_config(n_particles=2, seed=4,
                                   initial_position=cfg.start_position))
    est1 = filt.step(frames[0])
    assert est1.keyframe_fraction == 1.0
    sizes = [len(p.map.components) for p in filt.particles]
    weights = [p.map.total_weight() for p in filt.particles]
    for frame in frames[1:]:
        est = filt.step(frame)
        assert est.keyframe_fraction == 0.0
        assert [len(p.map.components) for p in filt.particles] == sizes
        assert [p.map.total_weight() for p in filt.particles] == pytest.approx(weights)


def test_particle_copy_is_deep():
    cfg = ScenarioConfig(n_steps=4, seed=5)
    frames = generate_frames(cfg)
    filt = SlamFilter(small_config(initial_position=cfg.start_position, seed=5))
    for frame in frames:
        filt.step(frame)
    original = filt.particles[0]
    clone = original.copy()
    clone.state.x += 1.0
    clone.dc += 0.5
    if clone.map.components:
        clone.map.components[0].weight += 1.0
    assert not np.allclose(clone.state.x, original.state.x)
    assert clone.dc != original.dc
    if original.map.components:
        assert clone.map.components[0].weight != original.map.components[0].weight
