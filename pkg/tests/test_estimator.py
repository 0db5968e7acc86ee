import numpy as np
import pytest
from sklearn.base import clone

from ddslam.estimator import AcousticSlam
from ddslam.sim import ScenarioConfig, generate_frames


@pytest.fixture(scope="module")
def frames():
    return generate_frames(ScenarioConfig(n_steps=10, seed=6))


def test_get_set_params_round_trip():
    est = AcousticSlam(n_particles=5, dc_max=4.0)
    params = est.get_params()
    assert params["n_particles"] == 5
    assert params["dc_max"] == 4.0
    est.set_params(smoothing=0.5)
    assert est.smoothing == 0.5


def test_clone_preserves_params():
    est = AcousticSlam(n_particles=7, seed=3, mode="bearing_only")
    twin = clone(est)
    assert twin.get_params() == est.get_params()


def test_fit_exposes_attributes(frames):
    est = AcousticSlam(n_particles=4, seed=6, dc_min=0.5, dc_max=3.0,
                       initial_position=(1.0, 1.0, 0.5))
    out = est.fit(frames)
    assert out is est
    assert est.trajectory_.shape == (10, 3)
    assert est.velocities_.shape == (10, 3)
    assert est.dc_trace_.shape == (10,)
    assert 0.5 <= est.critical_distance_ <= 3.0
    assert est.n_frames_ == 10


def test_predict_without_fit_raises():
    with pytest.raises(AttributeError):
        AcousticSlam().predict()


def test_predict_after_fit_returns_trajectory(frames):
    est = AcousticSlam(n_particles=4, seed=6, initial_position=(1.0, 1.0, 0.5))
    est.fit(frames)
    assert np.array_equal(est.predict(), est.trajectory_)


def test_fit_rejects_empty():
    with pytest.raises(ValueError, match="at least one frame"):
        AcousticSlam().fit([])


def test_invalid_mode_rejected(frames):
    with pytest.raises(ValueError, match="mode"):
        AcousticSlam(mode="sideways").fit(frames)


def test_fit_deterministic_for_seed(frames):
    a = AcousticSlam(n_particles=4, seed=1, initial_position=(1.0, 1.0, 0.5)).fit(frames)
    b = AcousticSlam(n_particles=4, seed=1, initial_position=(1.0, 1.0, 0.5)).fit(frames)
    assert np.array_equal(a.trajectory_, b.trajectory_)
