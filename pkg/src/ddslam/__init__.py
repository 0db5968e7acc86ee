"""Acoustic SLAM: fuse sound-source bearings, reverberation-ratio distances,
and IMU dead reckoning to localize a robot while mapping the sources."""

from .acoustics import DrrWindowSet, RoomAcoustics, critical_distance, drr_to_distance
from .engine import Particle, SlamConfig, SlamEstimate, SlamFilter, run
from .estimator import AcousticSlam
from .imu import ImuBatch, ImuNoiseConfig, Preintegrated, RobotState, dead_reckon, preintegrate
from .locating import EkfState, LocatingConfig
from .mapping import GaussianComponent, KeyframeState, MapConfig, SourceMap
from .sim import MeasurementFrame, ScenarioConfig, generate_frames

__all__ = [
    "AcousticSlam",
    "DrrWindowSet",
    "EkfState",
    "GaussianComponent",
    "ImuBatch",
    "ImuNoiseConfig",
    "KeyframeState",
    "LocatingConfig",
    "MapConfig",
    "MeasurementFrame",
    "Particle",
    "Preintegrated",
    "RobotState",
    "RoomAcoustics",
    "ScenarioConfig",
    "SlamConfig",
    "SlamEstimate",
    "SlamFilter",
    "SourceMap",
    "critical_distance",
    "dead_reckon",
    "drr_to_distance",
    "generate_frames",
    "preintegrate",
    "run",
]

__version__ = "0.1.0"
