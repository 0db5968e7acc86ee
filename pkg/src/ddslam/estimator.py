"""Scikit-learn style facade over the filter.

`AcousticSlam` is a BaseEstimator whose `fit` consumes a sequence of
measurement frames and exposes the run's outputs as fitted attributes, so the
filter slots into pipelines, grid searches, and anything else speaking
get_params/set_params.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .engine import SlamConfig, SlamFilter
from .locating import LocatingConfig
from .mapping import MapConfig
from .validation import check_frames


class AcousticSlam(BaseEstimator):
    """Acoustic SLAM estimator: fit on measurement frames, read off trajectories.

    Parameters mirror the documented config keys (angles in degrees at this
    boundary). After `fit`, the per-frame robot positions are in
    `trajectory_`, confirmed source positions in `source_positions_`, and the
    final weighted critical distance in `critical_distance_`.
    """

    def __init__(self, n_particles=10, dc_min=0.5, dc_max=10.0, smoothing=0.7,
                 doa_cov_deg=2.0, range_cov=0.35, mode="dd", keyframes=True,
                 births_per_doa=20, max_components=100, seed=0,
                 initial_position=(0.0, 0.0, 0.0), v_max=2.0):
        self.n_particles = n_particles
        self.dc_min = dc_min
        self.dc_max = dc_max
        self.smoothing = smoothing
        self.doa_cov_deg = doa_cov_deg
        self.range_cov = range_cov
        self.mode = mode
        self.keyframes = keyframes
        self.births_per_doa = births_per_doa
        self.max_components = max_components
        self.seed = seed
        self.initial_position = initial_position
        self.v_max = v_max

    def _config(self) -> SlamConfig:
        if self.mode not in ("dd", "bearing_only"):
            raise ValueError(f"mode must be 'dd' or 'bearing_only', got {self.mode!r}")
        doa_var = np.radians(self.doa_cov_deg) ** 2
        return SlamConfig(
            n_particles=self.n_particles,
            seed=self.seed,
            map=MapConfig(doa_var=doa_var, births_per_doa=self.births_per_doa,
                          max_components=self.max_components),
            locating=LocatingConfig(doa_var=doa_var, range_var=self.range_cov ** 2,
                                    smoothing=self.smoothing, dc_min=self.dc_min,
                                    dc_max=self.dc_max,
                                    use_distance=self.mode == "dd"),
            keyframes_enabled=self.keyframes,
            initial_position=tuple(self.initial_position),
            v_max=self.v_max,
        )

    def fit(self, X, y=None):
        """Run the filter over frames X (a sequence of MeasurementFrame)."""
        frames = check_frames(X, "X")
        estimates = SlamFilter(self._config()).run(frames)
        self.estimates_ = estimates
        self.trajectory_ = np.array([e.position for e in estimates])
        self.velocities_ = np.array([e.velocity for e in estimates])
        self.dc_trace_ = np.array([e.dc_mean for e in estimates])
        self.critical_distance_ = float(self.dc_trace_[-1])
        self.source_positions_ = (np.array(estimates[-1].sources)
                                  if estimates[-1].sources else np.empty((0, 3)))
        self.n_frames_ = len(frames)
        return self

    def predict(self, X=None) -> np.ndarray:
        """Per-frame position estimates: the fitted trajectory when X is None,
        otherwise a fresh run over X with the same parameters."""
        if X is None:
            if not hasattr(self, "trajectory_"):
                raise AttributeError("call fit first or pass frames")
            return self.trajectory_
        frames = check_frames(X, "X")
        estimates = SlamFilter(self._config()).run(frames)
        return np.array([e.position for e in estimates])

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).trajectory_
