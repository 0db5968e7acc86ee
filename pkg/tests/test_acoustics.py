import numpy as np
import pytest

from ddslam.acoustics import (
    DrrWindowSet,
    RoomAcoustics,
    critical_distance,
    distance_samples,
    drr_to_distance,
)


def test_drr_to_distance_at_critical_distance():
    assert drr_to_distance(1.0, 1.5) == pytest.approx(1.5)


def test_drr_to_distance_direct_substitution():
    assert drr_to_distance(4.0, 2.0) == pytest.approx(1.0)
    assert drr_to_distance(0.25, 1.5) == pytest.approx(3.0)


def test_drr_to_distance_rejects_bad_inputs():
    with pytest.raises(ValueError):
        drr_to_distance(0.0, 1.0)
    with pytest.raises(ValueError):
        drr_to_distance(1.0, -1.0)


def test_drr_to_distance_strictly_decreasing_in_eta():
    etas = np.linspace(0.1, 10, 50)
    d = drr_to_distance(etas, 2.0)
    assert np.all(np.diff(d) < 0)


def test_critical_distance_reference_room():
    # 6 x 6 x 3 room, T60 0.15 s, unit directivities
    room = RoomAcoustics(volume=108.0, t60=0.15)
    assert critical_distance(room) == pytest.approx(1.5139, abs=1e-4)


def test_critical_distance_scaling():
    base = critical_distance(RoomAcoustics(volume=100.0, t60=0.2))
    assert critical_distance(RoomAcoustics(volume=400.0, t60=0.2)) == pytest.approx(2 * base)
    assert critical_distance(RoomAcoustics(volume=100.0, t60=0.8)) == pytest.approx(base / 2)


def test_inversion_identity():
    # eta synthesized as (d_c/d)^2 recovers d exactly
    rng = np.random.default_rng(0)
    d_c = 1.5139
    for _ in range(100):
        d = rng.uniform(0.2, 8.0)
        eta = (d_c / d) ** 2
        assert drr_to_distance(eta, d_c) == pytest.approx(d, abs=1e-12)


def test_distance_samples_no_history():
    windows = DrrWindowSet(np.ones((2, 3)))
    out = distance_samples(windows, 2.0)
    assert out.shape == (2, 3)
    assert np.allclose(out, 2.0)


def test_distance_samples_clamp_arithmetic():
    # prev 2, raw 10, v_max 2, dt 1, margin 0.5 -> clamp at 2 + 2*1*1.5 = 5
    windows = DrrWindowSet(np.array([[0.04]]))  # raw distance = 2/0.2 = 10
    out = distance_samples(windows, 2.0, prev_distances=[2.0], v_max=2.0, dt=1.0, margin=0.5)
    assert out[0, 0] == pytest.approx(5.0)


def test_distance_samples_single_window_degenerate():
    windows = DrrWindowSet(np.array([[0.25]]))
    out = distance_samples(windows, 1.5)
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(drr_to_distance(0.25, 1.5))


def test_rate_limiter_idempotent_within_bound():
    windows = DrrWindowSet(np.array([[1.0, 0.9, 1.1]]))
    first = distance_samples(windows, 2.0, prev_distances=[2.0], v_max=2.0, dt=1.0)
    again = distance_samples(windows, 2.0, prev_distances=[2.0], v_max=2.0, dt=1.0)
    assert np.allclose(first, again)
    assert np.allclose(first, drr_to_distance(windows.eta, 2.0))


def test_window_set_rejects_nonpositive():
    with pytest.raises(ValueError):
        DrrWindowSet(np.array([[1.0, -0.5]]))


def test_room_acoustics_rejects_nonpositive():
    with pytest.raises(ValueError):
        RoomAcoustics(volume=0.0, t60=0.2)
