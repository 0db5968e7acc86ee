"""Reverberation-ratio distance model: DRR <-> distance, critical distance, rate limiting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DrrWindowSet:
    """Per-bearing, per-window direct-to-reverberant energy ratios.

    eta: (n_doas, n_windows) array of positive ratios; row m pairs with the
    m-th bearing of the same frame.
    """

    eta: np.ndarray

    def __post_init__(self):
        self.eta = np.atleast_2d(np.asarray(self.eta, dtype=float))
        if self.eta.size and np.any(self.eta <= 0):
            raise ValueError("all DRR values must be > 0")

    @property
    def n_doas(self) -> int:
        return self.eta.shape[0]

    @property
    def n_windows(self) -> int:
        return self.eta.shape[1]


@dataclass
class RoomAcoustics:
    """Acoustic room description entering the critical-distance formula."""

    volume: float
    t60: float
    source_directivity: float = 1.0
    receiver_directivity: float = 1.0

    def __post_init__(self):
        if min(self.volume, self.t60, self.source_directivity, self.receiver_directivity) <= 0:
            raise ValueError("room acoustics parameters must be > 0")


def drr_to_distance(eta, d_c: float):
    """Distance implied by a DRR value: d = d_c / sqrt(eta).

    At the critical distance the direct and reverberant energies are equal
    (eta = 1); the ratio falls with the square of distance.
    """
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0):
        raise ValueError("eta must be > 0")
    if d_c <= 0:
        raise ValueError("d_c must be > 0")
    d = d_c / np.sqrt(eta)
    return float(d) if d.ndim == 0 else d


def critical_distance(room: RoomAcoustics) -> float:
    """Distance at which direct and reverberant energies are equal."""
    rho = room.source_directivity * room.receiver_directivity
    return 0.1 * np.sqrt(rho) * np.sqrt(room.volume / (np.pi * room.t60))


def distance_samples(windows: DrrWindowSet, d_c_hat: float, prev_distances=None,
                     v_max: float = 2.0, dt: float = 1.0, margin: float = 0.5) -> np.ndarray:
    """Per-(bearing, window) distances from DRR, rate-limited against the last frame.

    prev_distances: optional sequence aligned with the bearing rows; entries of
    None (or NaN) mean no history for that row. The allowed step is
    v_max * dt * (1 + margin); raw values outside it saturate at the bound.
    """
    if d_c_hat <= 0:
        raise ValueError("d_c_hat must be > 0")
    if v_max <= 0:
        raise ValueError("v_max must be > 0")
    dist = drr_to_distance(windows.eta, d_c_hat)
    if prev_distances is None:
        return dist
    bound = v_max * dt * (1.0 + margin)
    out = np.array(dist, dtype=float)
    for m, prev in enumerate(prev_distances):
        if m >= out.shape[0]:
            break
        if prev is None or not np.isfinite(prev):
            continue
        out[m] = np.clip(out[m], prev - bound, prev + bound)
    return out
