"""Command-line entry points: simulate, run, eval, sweep.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import io as dio
from .engine import SlamFilter
from .sim import generate_frames

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_config(path, seed=None) -> dict:
    cfg = dio.parse_config(path)
    if seed is not None:
        cfg["seed"] = str(seed)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    scenario = dio.scenario_from_config(cfg)
    frames = generate_frames(scenario)
    meta = {"dc_true": scenario.critical_distance(),
            "room": list(scenario.room), "dt": scenario.dt, "seed": scenario.seed}
    dio.write_frames(args.out, frames, meta)
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def run_on_frames(frames, slam_cfg, mode: str):
    """Run the filter over loaded frames.

    bearing_only reproduces the bearings-plus-motion-reports baseline: the
    distance channel and the critical-distance estimation are disabled, and
    the velocity stays on pure inertial integration (motion reports are
    inputs to that baseline, not states its bearings can correct).
    """
    if mode == "bearing_only":
        slam_cfg = replace(slam_cfg,
                           velocity_feedback=False,
                           locating=replace(slam_cfg.locating, use_distance=False))
    elif mode != "dd":
        raise dio.ConfigError(f"unknown mode {mode!r}")
    return SlamFilter(slam_cfg).run(frames)


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    if args.particles is not None:
        cfg["particles"] = str(args.particles)
    frames, _header = dio.read_frames(args.frames)
    scenario = dio.scenario_from_config(cfg)
    slam_cfg = dio.slam_from_config(cfg, scenario)
    estimates = run_on_frames(frames, slam_cfg, args.mode)
    rows = dio.build_trace(frames, estimates)
    dio.write_trace(args.out, rows)
    print(f"wrote {len(rows)} trace rows to {args.out}")
    return 0


def cmd_eval(args) -> int:
    rows = dio.read_trace(args.trace)
    report = dio.compute_metrics(rows, source_threshold=args.source_threshold)
    text = report.to_text()
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def cmd_sweep(args) -> int:
    counts = [int(x) for x in args.particles.split(",") if x.strip()]
    if not counts:
        raise dio.ConfigError("sweep needs at least one particle count")
    cfg = _load_config(args.config, args.seed)
    scenario = dio.scenario_from_config(cfg)
    base_seed = scenario.seed
    lines = []
    reps = args.replicates
    header = ["particles", "mean_traj_error", "mean_source_error", "mean_final_dc"]
    header += [f"traj_rep{r}" for r in range(reps)]
    header += [f"source_rep{r}" for r in range(reps)]
    lines.append(",".join(header))
    for count in counts:
        traj_errs, src_errs, dcs = [], [], []
        for r in range(reps):
            rep_cfg = dict(cfg)
            rep_cfg["seed"] = str(base_seed + r)
            rep_scn = dio.scenario_from_config(rep_cfg)
            frames = generate_frames(rep_scn)
            slam_cfg = dio.slam_from_config(rep_cfg, rep_scn)
            slam_cfg = replace(slam_cfg, n_particles=count)
            estimates = run_on_frames(frames, slam_cfg, args.mode)
            rows = dio.build_trace(frames, estimates)
            report = dio.compute_metrics(rows)
            traj_errs.append(report.mean_traj_error)
            src_errs.append(report.final_source_error)
            dcs.append(report.final_dc)
        rec = [count, np.mean(traj_errs), np.mean(src_errs), np.mean(dcs)]
        rec += traj_errs + src_errs
        lines.append(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                              for v in rec))
    text = "\n".join(lines)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddslam",
        description="Acoustic SLAM from bearings, reverberation-ratio distances, and IMU data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic frame file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the filter over a frame file")
    p.add_argument("--frames", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["dd", "bearing_only"], default="dd",
                   help="dd fuses direction + distance; bearing_only drops the distance channel")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--particles", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="metrics report from a trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--source-threshold", type=float, default=0.3)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="repeat runs across particle counts")
    p.add_argument("--config", required=True)
    p.add_argument("--particles", required=True, help="comma-separated counts")
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--mode", choices=["dd", "bearing_only"], default="dd")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except dio.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (dio.DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
