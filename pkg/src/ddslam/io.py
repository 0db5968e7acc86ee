"""File formats and configuration: frame files, trace CSV, metrics, key=value configs.

Frame files are JSON Lines with a self-describing header record; float values
serialize with shortest round-trip decimals, so a written file parses back to
bit-identical doubles. Traces and metrics are comma-separated with a header
row. Configs are flat key=value text; angles cross this boundary in degrees.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .acoustics import DrrWindowSet
from .engine import SlamConfig, SlamEstimate
from .geometry import euclidean_error
from .imu import ImuBatch, RobotState
from .locating import LocatingConfig
from .mapping import MapConfig
from .sim import MeasurementFrame, ScenarioConfig

FRAME_FORMAT = "ddslam-frames-v1"


class ConfigError(Exception):
    """Bad configuration file or key."""


class DataError(Exception):
    """Malformed or missing data file."""


# ------------------------------------------------------------------ frames


def write_frames(path, frames, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        header = {"format": FRAME_FORMAT, "n_frames": len(frames)}
        if meta:
            header.update(meta)
        fh.write(json.dumps(header) + "\n")
        for frame in frames:
            rec = {
                "t": frame.t,
                "imu": {
                    "t": frame.imu.t.tolist(),
                    "f": frame.imu.specific_force.tolist(),
                    "w": frame.imu.angular_rate.tolist(),
                },
                "doas": frame.doas.tolist(),
                "drr": frame.drr.eta.tolist(),
            }
            if frame.gt is not None:
                rec["gt"] = {
                    "p": frame.gt.position.tolist(),
                    "v": frame.gt.velocity.tolist(),
                    "R": frame.gt.rotation.tolist(),
                }
            if frame.gt_sources is not None:
                rec["gt_sources"] = np.asarray(frame.gt_sources).tolist()
            fh.write(json.dumps(rec) + "\n")


def read_frames(path) -> tuple[list[MeasurementFrame], dict]:
    frames = []
    with open(path) as fh:
        header_line = fh.readline()
        if not header_line:
            raise DataError(f"{path}: empty frame file")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:1: not a frame file ({exc})") from exc
        if header.get("format") != FRAME_FORMAT:
            raise DataError(f"{path}:1: expected format {FRAME_FORMAT!r}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                n_windows = max(len(row) for row in rec["drr"]) if rec["drr"] else 1
                gt = None
                if "gt" in rec:
                    gt = RobotState(
                        position=np.array(rec["gt"]["p"], dtype=float),
                        velocity=np.array(rec["gt"]["v"], dtype=float),
                        rotation=np.array(rec["gt"]["R"], dtype=float),
                    )
                gt_sources = None
                if "gt_sources" in rec:
                    gt_sources = np.array(rec["gt_sources"], dtype=float).reshape(-1, 3)
                frames.append(MeasurementFrame(
                    t=float(rec["t"]),
                    imu=ImuBatch(
                        t=np.array(rec["imu"]["t"], dtype=float),
                        specific_force=np.array(rec["imu"]["f"], dtype=float),
                        angular_rate=np.array(rec["imu"]["w"], dtype=float),
                    ),
                    doas=np.array(rec["doas"], dtype=float).reshape(-1, 2),
                    drr=DrrWindowSet(np.array(rec["drr"], dtype=float).reshape(-1, n_windows)),
                    gt=gt,
                    gt_sources=gt_sources,
                ))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return frames, header


# ------------------------------------------------------------------- trace


@dataclass
class TraceRow:
    t: float
    est_pos: np.ndarray
    gt_pos: np.ndarray | None
    traj_error: float
    est_vel: np.ndarray
    dc_mean: float
    ess: float
    keyframe: float
    log_evidence: float
    n_sources_est: int
    source_est: list      # per ground-truth source: nearest estimate or None
    source_error: list    # per ground-truth source: error or nan


def build_trace(frames, estimates: list[SlamEstimate]) -> list[TraceRow]:
    """Pair per-step estimates with ground truth; one row per frame."""
    if len(frames) != len(estimates):
        raise DataError("frame and estimate counts differ")
    rows = []
    for frame, est in zip(frames, estimates):
        gt_pos = frame.gt.position if frame.gt is not None else None
        traj_error = euclidean_error(gt_pos, est.position) if gt_pos is not None else np.nan
        source_est, source_error = [], []
        if frame.gt_sources is not None:
            for gt_src in frame.gt_sources:
                if est.sources:
                    errs = [euclidean_error(gt_src, s) for s in est.sources]
                    k = int(np.argmin(errs))
                    source_est.append(est.sources[k])
                    source_error.append(errs[k])
                else:
                    source_est.append(None)
                    source_error.append(np.nan)
        rows.append(TraceRow(
            t=est.t,
            est_pos=est.position,
            gt_pos=gt_pos,
            traj_error=traj_error,
            est_vel=est.velocity,
            dc_mean=est.dc_mean,
            ess=est.ess,
            keyframe=est.keyframe_fraction,
            log_evidence=est.log_evidence,
            n_sources_est=len(est.sources),
            source_est=source_est,
            source_error=source_error,
        ))
    return rows


def _trace_header(n_sources: int) -> list[str]:
    cols = ["t", "est_x", "est_y", "est_z", "gt_x", "gt_y", "gt_z", "traj_error",
            "est_vx", "est_vy", "est_vz", "dc_mean", "ess", "keyframe",
            "log_evidence", "n_sources_est"]
    for k in range(n_sources):
        cols += [f"src{k}_x", f"src{k}_y", f"src{k}_z", f"src{k}_error"]
    return cols


def write_trace(path, rows: list[TraceRow]) -> None:
    n_sources = max((len(r.source_error) for r in rows), default=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_trace_header(n_sources))
        for r in rows:
            gt = r.gt_pos if r.gt_pos is not None else [np.nan] * 3
            rec = [r.t, *r.est_pos, *gt, r.traj_error, *r.est_vel, r.dc_mean,
                   r.ess, r.keyframe, r.log_evidence, r.n_sources_est]
            for k in range(n_sources):
                if k < len(r.source_error) and r.source_est[k] is not None:
                    rec += [*r.source_est[k], r.source_error[k]]
                else:
                    rec += [np.nan, np.nan, np.nan, np.nan]
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                             else v for v in rec])


def read_trace(path) -> list[TraceRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "traj_error" not in reader.fieldnames:
            raise DataError(f"{path}: not a trace file")
        n_sources = sum(1 for c in reader.fieldnames if c.endswith("_error")
                        and c.startswith("src"))
        for lineno, rec in enumerate(reader, start=2):
            try:
                source_est, source_error = [], []
                for k in range(n_sources):
                    pos = np.array([float(rec[f"src{k}_{ax}"]) for ax in "xyz"])
                    source_est.append(None if np.isnan(pos).any() else pos)
                    source_error.append(float(rec[f"src{k}_error"]))
                gt = np.array([float(rec["gt_x"]), float(rec["gt_y"]), float(rec["gt_z"])])
                rows.append(TraceRow(
                    t=float(rec["t"]),
                    est_pos=np.array([float(rec["est_x"]), float(rec["est_y"]),
                                      float(rec["est_z"])]),
                    gt_pos=None if np.isnan(gt).any() else gt,
                    traj_error=float(rec["traj_error"]),
                    est_vel=np.array([float(rec["est_vx"]), float(rec["est_vy"]),
                                      float(rec["est_vz"])]),
                    dc_mean=float(rec["dc_mean"]),
                    ess=float(rec["ess"]),
                    keyframe=float(rec["keyframe"]),
                    log_evidence=float(rec["log_evidence"]),
                    n_sources_est=int(rec["n_sources_est"]),
                    source_est=source_est,
                    source_error=source_error,
                ))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return rows


# ----------------------------------------------------------------- metrics


@dataclass
class MetricsReport:
    n_steps: int
    mean_traj_error: float
    max_traj_error: float
    source_convergence_step: int | None
    final_source_error: float
    dc_convergence_step: int | None
    final_dc: float

    def to_text(self) -> str:
        def step(v):
            return "not_converged" if v is None else str(v)
        return "\n".join([
            f"n_steps,{self.n_steps}",
            f"mean_traj_error,{self.mean_traj_error!r}",
            f"max_traj_error,{self.max_traj_error!r}",
            f"source_convergence_step,{step(self.source_convergence_step)}",
            f"final_source_error,{self.final_source_error!r}",
            f"dc_convergence_step,{step(self.dc_convergence_step)}",
            f"final_dc,{self.final_dc!r}",
        ])


def rolling_dc_convergence(dc: np.ndarray, window: int = 20, rel_tol: float = 0.05):
    """First step (1-based) after which the trailing-window std stays below
    rel_tol times the trailing-window mean; None if it never settles."""
    n = len(dc)
    ok = np.zeros(n, dtype=bool)
    for i in range(window - 1, n):
        seg = dc[i - window + 1: i + 1]
        mean = np.mean(seg)
        ok[i] = mean != 0 and np.std(seg) < rel_tol * abs(mean)
    for i in range(n):
        if ok[i:].all() and ok[i]:
            return i + 1
    return None


def compute_metrics(rows: list[TraceRow], source_threshold: float = 0.3,
                    dc_window: int = 20, dc_rel_tol: float = 0.05) -> MetricsReport:
    if not rows:
        raise DataError("empty trace")
    errors = np.array([r.traj_error for r in rows])
    if np.isnan(errors).all():
        raise DataError("trace contains no ground truth")
    src_errors = np.array([[e for e in r.source_error] for r in rows]) \
        if rows[0].source_error else np.zeros((len(rows), 0))

    source_step = None
    if src_errors.size:
        below = np.all(np.nan_to_num(src_errors, nan=np.inf) < source_threshold, axis=1)
        for i in range(len(rows)):
            if below[i:].all() and below[i]:
                source_step = i + 1
                break

    dc = np.array([r.dc_mean for r in rows])
    return MetricsReport(
        n_steps=len(rows),
        mean_traj_error=float(np.nanmean(errors)),
        max_traj_error=float(np.nanmax(errors)),
        source_convergence_step=source_step,
        final_source_error=float(src_errors[-1].max()) if src_errors.size else np.nan,
        dc_convergence_step=rolling_dc_convergence(dc, dc_window, dc_rel_tol),
        final_dc=float(dc[-1]),
    )


# ------------------------------------------------------------------ config

_SCENARIO_KEYS = {
    "room", "sources", "t60", "source_directivity", "receiver_directivity",
    "speed", "trajectory", "dt", "steps", "seed", "imu_rate",
    "accel_noise_var", "gyro_noise_var", "doa_noise_deg", "p_detect",
    "clutter_rate", "range_noise", "windows", "heading_change_every",
    "start", "wall_margin", "stationary_start", "stationary_steps", "waypoints",
}

_SLAM_KEYS = {
    "particles", "dc_min", "dc_max", "smoothing", "doa_cov_deg", "range_cov",
    "v_max", "rate_limit_margin", "keyframes", "orientation",
    "orientation_noise_deg", "velocity_feedback", "use_end_rotation",
    "resample_jitter", "ess_fraction", "initial_cov", "map_p_detect",
    "birth_mode", "births_per_doa", "birth_weight", "birth_cov", "r_min", "r_max",
    "j_max", "prune_threshold", "merge_threshold", "merge_cov_cap",
    "confirm_weight", "confirm_spread", "triangulation_update",
    "cluster_gate_sigma", "kf_pos", "kf_doa_deg", "kf_rot_deg", "limit_step",
}


def parse_config(path) -> dict:
    """Flat key=value config text; '#' starts a comment; unknown keys error."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _SCENARIO_KEYS and key not in _SLAM_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key: {key}")
            out[key] = value
    return out


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _triples(text: str) -> tuple:
    groups = [g for g in text.split(";") if g.strip()]
    return tuple(tuple(float(x) for x in g.split(",")) for g in groups)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"expected boolean, got {text!r}")


def scenario_from_config(cfg: dict) -> ScenarioConfig:
    c = dict(cfg)
    try:
        return ScenarioConfig(
            room=_floats(c["room"]) if "room" in c else (6.0, 6.0, 3.0),
            sources=_triples(c["sources"]) if "sources" in c else ((3.0, 3.0, 1.5),),
            t60=float(c.get("t60", 0.15)),
            source_directivity=float(c.get("source_directivity", 1.0)),
            receiver_directivity=float(c.get("receiver_directivity", 1.0)),
            speed=float(c.get("speed", 2.0)),
            trajectory_mode=c.get("trajectory", "random_heading"),
            dt=float(c.get("dt", 1.0)),
            imu_rate_hz=float(c.get("imu_rate", 100.0)),
            accel_noise_var=float(c.get("accel_noise_var", 1e-3)),
            gyro_noise_var=float(c.get("gyro_noise_var", 1e-2)),
            doa_noise_std=np.radians(float(c.get("doa_noise_deg", 1.0))),
            p_detect=float(c.get("p_detect", 0.95)),
            clutter_rate=float(c.get("clutter_rate", 0.5)),
            range_noise_std=float(c.get("range_noise", 0.35)),
            n_windows=int(c.get("windows", 5)),
            n_steps=int(c.get("steps", 105)),
            seed=int(c.get("seed", 0)),
            heading_change_every=int(c.get("heading_change_every", 5)),
            start_position=_floats(c["start"]) if "start" in c else (1.0, 1.0, 0.5),
            wall_margin=float(c.get("wall_margin", 0.3)),
            stationary_start=int(c.get("stationary_start", 0)),
            stationary_steps=int(c.get("stationary_steps", 0)),
            waypoints=_triples(c["waypoints"]) if "waypoints" in c else (),
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad scenario config: {exc}") from exc


def slam_from_config(cfg: dict, scenario: ScenarioConfig | None = None) -> SlamConfig:
    c = dict(cfg)
    if scenario is None:
        scenario = scenario_from_config(cfg)
    r_max_default = float(np.linalg.norm(scenario.room))
    try:
        map_cfg = MapConfig(
            birth_mode=c.get("birth_mode", "uniform_radius"),
            r_min=float(c.get("r_min", 0.3)),
            r_max=float(c.get("r_max", r_max_default)),
            births_per_doa=int(c.get("births_per_doa", 20)),
            birth_weight=float(c.get("birth_weight", 0.05)),
            birth_cov=float(c.get("birth_cov", 0.0625)),
            doa_var=np.radians(float(c.get("doa_cov_deg", 2.0))) ** 2,
            p_detect=float(c.get("p_detect", scenario.p_detect)),
            p_detect_map=float(c.get("map_p_detect", 0.3)),
            clutter_rate=float(c.get("clutter_rate", scenario.clutter_rate)),
            kf_pos_threshold=float(c.get("kf_pos", 0.5)),
            kf_doa_threshold=np.radians(float(c.get("kf_doa_deg", 8.0))),
            kf_rot_threshold=np.radians(float(c.get("kf_rot_deg", 8.0))),
            limit_step=float(c.get("limit_step", 0.5)),
            max_components=int(c.get("j_max", 100)),
            prune_threshold=float(c.get("prune_threshold", 1e-5)),
            merge_threshold=float(c.get("merge_threshold", 4.0)),
            merge_cov_cap=float(c.get("merge_cov_cap", np.inf)),
            confirm_weight=float(c.get("confirm_weight", 0.5)),
            confirm_spread=float(c.get("confirm_spread", 0.8)),
            triangulation_update=_bool(c.get("triangulation_update", "on")),
            cluster_gate_sigma=float(c.get("cluster_gate_sigma", 3.0)),
        )
        loc_cfg = LocatingConfig(
            doa_var=np.radians(float(c.get("doa_cov_deg", 2.0))) ** 2,
            range_var=float(c.get("range_cov", 0.35)) ** 2,
            smoothing=float(c.get("smoothing", 0.7)),
            dc_min=float(c.get("dc_min", 0.5)),
            dc_max=float(c.get("dc_max", 10.0)),
        )
        return SlamConfig(
            n_particles=int(c.get("particles", 10)),
            seed=int(c.get("seed", scenario.seed)),
            map=map_cfg,
            locating=loc_cfg,
            accel_noise_var=float(c.get("accel_noise_var", scenario.accel_noise_var)),
            gyro_noise_var=float(c.get("gyro_noise_var", scenario.gyro_noise_var)),
            v_max=float(c.get("v_max", scenario.speed)),
            rate_limit_margin=float(c.get("rate_limit_margin", 0.5)),
            keyframes_enabled=_bool(c.get("keyframes", "on")),
            orientation_source=c.get("orientation", "ground_truth"),
            orientation_noise_std=np.radians(float(c.get("orientation_noise_deg", 0.0))),
            velocity_feedback=_bool(c.get("velocity_feedback", "on")),
            use_end_rotation=_bool(c.get("use_end_rotation", "off")),
            resample_jitter=float(c.get("resample_jitter", 0.0)),
            ess_fraction=float(c.get("ess_fraction", 0.5)),
            initial_position=scenario.start_position,
            initial_cov=float(c.get("initial_cov", 0.0)),
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad filter config: {exc}") from exc
