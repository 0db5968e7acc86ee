"""Gaussian-mixture source map: births, merging, reduction, keyframes, extraction.

The map is a PHD-style intensity: component weights encode expected source
count and are never renormalized. New components are born along measured
bearings; a keyframe gate stops births while the robot pose and bearing set
are unchanged, which prevents repeated same-ray births from dragging the
weight mass toward the robot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    direction_angle,
    rotation_to_euler,
    spherical_to_cartesian,
)
from .imu import RobotState



@dataclass
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def copy(self) -> "GaussianComponent":
        return GaussianComponent(self.weight, self.mean.copy(), self.cov.copy())


@dataclass
class MapConfig:
    """Birth, gating, and reduction parameters of the source map."""

    birth_mode: str = "uniform_radius"  # or "sqrt_uniform"
    r_min: float = 0.3
    r_max: float = 9.0
    births_per_doa: int = 20
    # Total birth mass per bearing. Small against an established component:
    # the per-measurement normalization hands births a full unit of weight
    # when nothing else explains a bearing, so acquisition is unaffected,
    # while a consolidated cluster is not diluted by its own re-observations.
    birth_weight: float = 0.05
    birth_cov: float = 0.0625
    doa_var: float = np.radians(2.0) ** 2
    p_detect: float = 0.95
    # Effective detection probability for map weight updates only: detection
    # failures come in bursts, and decaying the whole map by (1 - p_detect)
    # on one missed frame erases an otherwise confirmed source.
    p_detect_map: float = 0.3
    clutter_rate: float = 0.5
    kf_pos_threshold: float = 0.5
    kf_doa_threshold: float = 0.15
    kf_rot_threshold: float = 0.15
    # With the update off, the map runs the plain accumulate-births-and-merge
    # scheme: observed mass is never redistributed toward well-explained
    # components, which is the regime whose stationary weight concentration
    # the keyframe gate exists to prevent.
    triangulation_update: bool = True
    limit_step: float = 0.5
    max_components: int = 100
    prune_threshold: float = 1e-5
    merge_threshold: float = 4.0
    # Optional eigenvalue cap on moment-matched covariances: merging inflates
    # them, inflated covariances widen the own-covariance merge gate, and the
    # widened gate can cascade a whole birth ray into one component.
    merge_cov_cap: float = np.inf
    confirm_weight: float = 0.5
    confirm_spread: float = 0.8
    cluster_gate_sigma: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")
        if self.birth_mode not in ("uniform_radius", "sqrt_uniform"):
            raise ValueError(f"unknown birth_mode {self.birth_mode!r}")
        if not 0.0 <= self.p_detect <= 1.0:
            raise ValueError("p_detect must be in [0, 1]")
        if min(self.kf_pos_threshold, self.kf_doa_threshold, self.kf_rot_threshold) <= 0:
            raise ValueError("keyframe thresholds must be > 0")


@dataclass
class SourceMap:
    components: list = field(default_factory=list)
    max_components: int = 100
    prune_threshold: float = 1e-5
    merge_threshold: float = 4.0
    merge_cov_cap: float = np.inf

    @classmethod
    def empty(cls, cfg: MapConfig) -> "SourceMap":
        return cls([], cfg.max_components, cfg.prune_threshold, cfg.merge_threshold,
                   cfg.merge_cov_cap)

    def copy(self) -> "SourceMap":
        return SourceMap([c.copy() for c in self.components],
                         self.max_components, self.prune_threshold, self.merge_threshold,
                         self.merge_cov_cap)

    def total_weight(self) -> float:
        return float(sum(c.weight for c in self.components))

    def weighted_centroid(self) -> np.ndarray | None:
        w = self.total_weight()
        if not self.components or w <= 0:
            return None
        acc = np.zeros(3)
        for c in self.components:
            acc += c.weight * c.mean
        return acc / w


@dataclass
class KeyframeState:
    position: np.ndarray
    doas: np.ndarray  # (k, 2) azimuth/elevation pairs
    rotation: np.ndarray


def birth_components(robot_pos, rotation, doa, cfg: MapConfig, rng) -> list:
    """New components along one measured bearing.

    rotation is the robot's body-to-world attitude; the bearing (az, el) is in
    the robot frame. Radii follow the configured mode: uniform_radius draws
    U(r_min, r_max); sqrt_uniform draws r_min * sqrt(U(1, (r_max/r_min)^2)),
    which is uniform per unit radial area and removes the near-robot density
    excess of the plain uniform draw.
    """
    n = cfg.births_per_doa
    sigma = np.sqrt(cfg.doa_var)
    az = doa[0] + rng.normal(0.0, sigma, size=n)
    el = doa[1] + rng.normal(0.0, sigma, size=n)
    if cfg.birth_mode == "sqrt_uniform":
        ratio = (cfg.r_max / cfg.r_min) ** 2
        radii = cfg.r_min * np.sqrt(rng.uniform(1.0, ratio, size=n))
    else:
        radii = rng.uniform(cfg.r_min, cfg.r_max, size=n)
    weight = cfg.birth_weight / n
    cov = cfg.birth_cov * np.eye(3)
    out = []
    for k in range(n):
        u = spherical_to_cartesian(az[k], el[k])
        mean = np.asarray(robot_pos, dtype=float) + radii[k] * (rotation @ u)
        out.append(GaussianComponent(weight, mean, cov.copy()))
    return out


def component_distance(r: float, dr: float, dgamma: float) -> float:
    """Euclidean distance between two same-ray-plane components at ranges r and
    r + dr separated by the angle dgamma (law of cosines)."""
    r2 = r + dr
    return float(np.sqrt(max(r * r + r2 * r2 - 2.0 * r * r2 * np.cos(dgamma), 0.0)))


def merge_components(src: SourceMap) -> SourceMap:
    """Moment-matched merging of components within the Mahalanobis gate.

    Repeatedly seeds at the heaviest remaining component and absorbs every
    component whose own-covariance Mahalanobis distance to the seed is within
    the threshold. Total weight is conserved exactly.
    """
    comps = src.components
    if not comps:
        return src.copy()
    weights = np.array([c.weight for c in comps])
    means = np.array([c.mean for c in comps])
    covs = np.array([c.cov for c in comps])
    try:
        inv_covs = np.linalg.inv(covs)
    except np.linalg.LinAlgError:
        inv_covs = np.linalg.inv(covs + 1e-9 * np.eye(3))
    out = []
    alive = np.arange(len(comps))
    while alive.size:
        j = alive[np.argmax(weights[alive])]
        diff = means[alive] - means[j]
        maha = np.sum(diff * (inv_covs[alive] @ diff[:, :, None])[:, :, 0], axis=1)
        sel = maha <= src.merge_threshold
        group = alive[sel]
        w_group = weights[group]
        w = w_group.sum()
        mean = w_group @ means[group] / w
        spread = means[group] - mean
        cov = ((w_group[:, None, None] * covs[group]).sum(axis=0)
               + (w_group[:, None] * spread).T @ spread) / w
        cov = 0.5 * (cov + cov.T)
        if np.isfinite(src.merge_cov_cap):
            eigvals, eigvecs = np.linalg.eigh(cov)
            cov = (eigvecs * np.minimum(eigvals, src.merge_cov_cap)) @ eigvecs.T
        out.append(GaussianComponent(float(w), mean, cov))
        alive = alive[~sel]
    return SourceMap(out, src.max_components, src.prune_threshold, src.merge_threshold,
                     src.merge_cov_cap)


def reduce_map(src: SourceMap) -> SourceMap:
    """Drop below-threshold weights and cap the component count at the heaviest.

    Weights are not renormalized: the total encodes the expected source count.
    """
    comps = [c for c in src.components if c.weight >= src.prune_threshold]
    if len(comps) > src.max_components:
        comps.sort(key=lambda c: c.weight, reverse=True)
        comps = comps[: src.max_components]
    return SourceMap(comps, src.max_components, src.prune_threshold, src.merge_threshold,
                     src.merge_cov_cap)


def doa_set_distance(doas_a, doas_b) -> float:
    """Max great-circle angle over greedily matched bearing pairs.

    Sets of different sizes leave bearings unmatched, which counts as an
    infinite difference (any threshold test then triggers).
    """
    a = [tuple(d) for d in doas_a]
    b = [tuple(d) for d in doas_b]
    if len(a) != len(b):
        return np.inf
    if not a:
        return 0.0
    worst = 0.0
    free_b = list(range(len(b)))
    for _ in range(len(a)):
        best = None
        for i, da in enumerate(a):
            if da is None:
                continue
            for jj in free_b:
                ang = direction_angle(da, b[jj])
                if best is None or ang < best[0]:
                    best = (ang, i, jj)
        ang, i, jj = best
        worst = max(worst, ang)
        a[i] = None
        free_b.remove(jj)
    return worst


def keyframe_check(current: RobotState, doas, kf: KeyframeState, cfg: MapConfig) -> bool:
    """True when the pose or the bearing set moved past any keyframe threshold."""
    if float(np.linalg.norm(current.position - kf.position)) > cfg.kf_pos_threshold:
        return True
    if doa_set_distance(doas, kf.doas) > cfg.kf_doa_threshold:
        return True
    euler = rotation_to_euler(current.rotation @ kf.rotation.T)
    return float(np.linalg.norm(euler)) > cfg.kf_rot_threshold


def limiting_filter(s_new, s_prev, limit_step: float) -> np.ndarray:
    """Reject single-step estimate jumps beyond limit_step (boundary inclusive)."""
    s_new = np.asarray(s_new, dtype=float)
    s_prev = np.asarray(s_prev, dtype=float)
    if float(np.linalg.norm(s_new - s_prev)) <= limit_step:
        return s_new
    return s_prev


def estimate_sources(src: SourceMap, prev_estimates, cfg: MapConfig,
                     with_cov: bool = False) -> list:
    """Confirmed source positions: greedy weight-seeded clustering + limiting.

    Clusters seed at the heaviest unused component and absorb components within
    cluster_gate_sigma standard deviations (largest eigenvalue of the seed
    covariance). A cluster confirms a source when its weight exceeds
    confirm_weight and its moment-matched spread is within confirm_spread:
    heavy but elongated clusters are birth rays whose range is still
    unresolved, and reporting them locks in an arbitrary range. Confirmed
    centroids come back heaviest first, optionally passed through the
    limiting filter against the positionally matching previous estimate.

    with_cov=True returns (centroid, moment-matched covariance, weight)
    triples instead; the covariance is the position uncertainty a consumer
    should add to its own when treating the estimate as a landmark, and the
    weight tells it how consolidated the cluster is.
    """
    if not src.components:
        return []
    order = sorted(range(len(src.components)),
                   key=lambda i: src.components[i].weight, reverse=True)
    weights = np.array([src.components[i].weight for i in order])
    means = np.array([src.components[i].mean for i in order])
    covs = np.array([src.components[i].cov for i in order])
    gates = cfg.cluster_gate_sigma * np.sqrt(
        np.maximum(np.linalg.eigvalsh(covs)[:, -1], 0.0))
    free = np.ones(len(order), dtype=bool)
    clusters = []
    for j in range(len(order)):
        if not free[j]:
            continue
        members = free & (np.linalg.norm(means - means[j], axis=1) <= gates[j])
        free &= ~members
        w = weights[members].sum()
        centroid = weights[members] @ means[members] / w
        spread_vecs = means[members] - centroid
        cov = (np.einsum("k,kij->ij", weights[members], covs[members])
               + np.einsum("k,ki,kj->ij", weights[members], spread_vecs, spread_vecs)) / w
        spread = float(np.sqrt(max(np.linalg.eigvalsh(cov)[-1], 0.0)))
        clusters.append((w, centroid, spread, cov))
    clusters = [c for c in clusters
                if c[0] > cfg.confirm_weight and c[2] <= cfg.confirm_spread]
    clusters.sort(key=lambda c: c[0], reverse=True)
    if with_cov:
        return [(centroid, cov, w) for w, centroid, _, cov in clusters]
    estimates = [centroid for _, centroid, _, _ in clusters]
    if prev_estimates:
        for i, est in enumerate(estimates):
            if i < len(prev_estimates) and prev_estimates[i] is not None:
                estimates[i] = limiting_filter(est, prev_estimates[i], cfg.limit_step)
    return estimates


def _bearing_gaussians(doas, robot_pos, rotation, src: SourceMap, cfg: MapConfig):
    """(J, M) angular Gaussian densities between component bearings and measured
    bearings, plus the component weight vector. rotation is body-to-world."""
    weights = np.array([c.weight for c in src.components])
    n_comp, n_meas = len(src.components), len(doas)
    if n_comp == 0 or n_meas == 0:
        return np.zeros((n_comp, n_meas)), weights
    means = np.array([c.mean for c in src.components])
    offs = (means - np.asarray(robot_pos, dtype=float)) @ np.asarray(rotation, dtype=float)
    norms = np.linalg.norm(offs, axis=1)
    safe = norms > 1e-12
    units = np.zeros_like(offs)
    units[safe] = offs[safe] / norms[safe, None]
    meas_units = np.array([spherical_to_cartesian(d[0], d[1]) for d in doas])
    angles = np.arccos(np.clip(units @ meas_units.T, -1.0, 1.0))
    sigma2 = cfg.doa_var
    dens = np.exp(-0.5 * angles ** 2 / sigma2) / np.sqrt(2.0 * np.pi * sigma2)
    dens[~safe] = 0.0
    return dens, weights


def doa_log_evidence(doas, robot_pos, rotation, src: SourceMap, cfg: MapConfig) -> float:
    """Log-likelihood of a bearing set given the map and robot pose.

    log L = -lambda - p_d * W + sum_m log(lambda/(4 pi) + p_d * sum_j w_j *
    N(angle(omega_m, bearing of component j); 0, doa_var)), with W the total
    map weight (expected feature count).
    """
    lam = cfg.clutter_rate
    total = -lam - cfg.p_detect * src.total_weight()
    if len(doas) == 0:
        return float(total)
    dens, weights = _bearing_gaussians(doas, robot_pos, rotation, src, cfg)
    per_meas = lam / (4.0 * np.pi) + cfg.p_detect * (weights @ dens if len(weights) else 0.0)
    with np.errstate(divide="ignore"):
        total += np.sum(np.log(per_meas))
    return float(total)


def doa_evidence(doas, robot_pos, rotation, src: SourceMap, cfg: MapConfig) -> float:
    """Exponentiated :func:`doa_log_evidence`; positive, decreasing in bearing mismatch."""
    return float(np.exp(doa_log_evidence(doas, robot_pos, rotation, src, cfg)))


def update_weights(src: SourceMap, doas, robot_pos, rotation,
                   cfg: MapConfig) -> tuple[SourceMap, float]:
    """Probabilistic-triangulation weight update against one bearing set.

    Every component keeps a (1 - p_d) missed-detection share; each measured
    bearing redistributes roughly unit weight among the components that
    explain it, in proportion to their angular likelihood against the clutter
    floor. Off-bearing mass therefore decays within a couple of keyframes,
    which is what collapses birth rays onto their intersection as the robot
    moves. Component means and covariances are untouched.

    Returns the reweighted map and the bearing-set log evidence (identical to
    :func:`doa_log_evidence` on the input map).
    """
    lam = cfg.clutter_rate
    weights = np.array([c.weight for c in src.components])
    log_evidence = -lam - cfg.p_detect * float(weights.sum())
    out = src.copy()
    if len(src.components) == 0:
        return out, float(log_evidence + len(doas) * np.log(lam / (4.0 * np.pi))
                          if len(doas) else log_evidence)
    dens, _ = _bearing_gaussians(doas, robot_pos, rotation, src, cfg)
    p_map = cfg.p_detect_map
    new_weights = (1.0 - p_map) * weights
    for m in range(len(doas)):
        detected = cfg.p_detect * weights * dens[:, m]
        denom = lam / (4.0 * np.pi) + detected.sum()
        with np.errstate(divide="ignore"):
            log_evidence += np.log(denom)
        detected_map = p_map * weights * dens[:, m]
        denom_map = lam / (4.0 * np.pi) + detected_map.sum()
        if denom_map > 0:
            new_weights = new_weights + detected_map / denom_map
    for c, w in zip(out.components, new_weights):
        c.weight = float(w)
    return out, float(log_evidence)
