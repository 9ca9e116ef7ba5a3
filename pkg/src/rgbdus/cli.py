"""Command-line entry point: ``rgbdus <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or parse error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import fileio
from .calib import calibrate, calibration_error
from .config import ExperimentConfig
from .errors import ConfigError, FormatError, NumericalError
from .experiments import (
    ground_truth_calibration,
    run_calibration,
    run_cube_eval,
    run_distance_sweep,
    simulate_calibration_session,
)
from .overlay import DEFAULT_OPACITY, COLORMAPS, RgbFrame, composite, image_quad
from .scene import make_nwire_geometry

log = logging.getLogger("rgbdus")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
FRAME_PERIOD_S = 1.0 / 30.0  # nominal acquisition rate of simulated streams


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.from_dict(fileio.read_json(path, require_schema=False))


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["base_seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    if getattr(args, "distance", None) is not None:
        over["camera_distance_mm"] = args.distance
    if getattr(args, "noiseless", False):
        cfg = cfg.noiseless()
    return dataclasses.replace(cfg, **over) if over else cfg


class _Report:
    """Collects the JSON report; run metadata is left out with ``--deterministic``."""

    def __init__(self, args, command: str, cfg: ExperimentConfig):
        self.args = args
        config = cfg.to_dict()
        config.pop("workers")  # execution detail; results do not depend on it
        self.body = {"command": command, "config": config}
        self.t0 = time.perf_counter()

    def write(self, name: str, **payload) -> Path:
        body = {**self.body, **payload}
        if not self.args.deterministic:
            body["created_utc"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
            body["elapsed_s"] = time.perf_counter() - self.t0
        path = self.args.out / name
        fileio.write_json(path, _clean(body))
        log.info("wrote %s", path)
        return path


def _clean(obj):
    """Non-finite floats become ``None`` so the report stays valid JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- subcommands ------------------------------------------------------------------------

def cmd_simulate_calibration(args) -> int:
    """Render a calibration session into a directory usable by ``calibrate``."""
    cfg = _resolve(args)
    s = simulate_calibration_session(cfg, cfg.camera_distance_mm, cfg.base_seed)
    out = args.out
    records, frames = [], sorted(s.frames + s.heldout, key=lambda f: f[0].frame_index)
    for fr, _ in frames:
        fileio.write_us_frame(out / f"us_{fr.frame_index:04d}.pgm", fr)
    fileio.write_annotations_csv(out / "annotations.csv", [fr for fr, _ in frames])
    last = s.tracked[0]
    for k, (T, rms) in enumerate(zip(s.tracked, s.track_rms)):
        last = T if T is not None else last
        records.append(fileio.PoseRecord(k, k * FRAME_PERIOD_S, last, rms, T is None))
    fileio.write_pose_csv(out / "marker_poses.csv", records)
    _Report(args, "simulate-calibration", cfg).write(
        "session.json",
        distance_mm=cfg.camera_distance_mm, seed=cfg.base_seed,
        n_frames=len(s.frames), heldout_frames=list(s.heldout_indices), lost_frames=s.lost_frames,
        T_cam_from_phantom=fileio.pose_to_dict(s.T_cam_from_phantom),
        ground_truth_matrix_row_major=[float(x) for x in s.gt_matrix.A.ravel()])
    return EXIT_OK


def _load_session(session: Path, cfg: ExperimentConfig):
    meta = fileio.read_json(session / "session.json")
    poses = {r.frame: r for r in fileio.read_pose_csv(session / "marker_poses.csv")}
    held = set(meta["heldout_frames"])
    frames, heldout = [], []
    for path in sorted(session.glob("us_*.pgm")):
        k = int(path.stem.split("_")[1])
        rec = poses.get(k)
        if rec is None or rec.lost:
            continue
        fr = fileio.read_us_frame(path, cfg.ultrasound.spacing, k)
        (heldout if k in held else frames).append((fr, rec.pose))
    return meta, frames, heldout, fileio.pose_from_dict(meta["T_cam_from_phantom"])


def cmd_calibrate(args) -> int:
    """Solve the calibration from a session directory, or from a fresh simulation."""
    cfg = _resolve(args)
    rep = _Report(args, "calibrate", cfg)
    geom = make_nwire_geometry(cfg.phantom)
    extra = {}
    if args.session is not None:
        meta, frames, heldout, T_cp = _load_session(args.session, cfg)
        report = calibrate(frames, geom, T_cp, cfg.segmentation)
        if heldout:
            mean, sd = calibration_error(report.matrix, heldout, geom, T_cp, cfg.segmentation)
            report = dataclasses.replace(report, error_mean=mean, error_sd=sd)
        extra["session"] = {"distance_mm": meta["distance_mm"], "seed": meta["seed"]}
    else:
        run, report = run_calibration(cfg, cfg.camera_distance_mm, cfg.base_seed)
        if report is None:
            raise NumericalError(run.message)
        extra["ground_truth_error"] = {"translation_mm": run.translation_error,
                                       "rotation_deg": run.rotation_error_deg, "scale": run.scale_error}
    fileio.write_calibration(args.out / "calibration.json", report)
    rep.write("calibrate_report.json", calibration=fileio.calibration_to_dict(report), **extra)
    return EXIT_OK


def cmd_sweep_distance(args) -> int:
    cfg = _resolve(args)
    rep = _Report(args, "sweep-distance", cfg)
    distances = args.distances or None
    sweep = run_distance_sweep(cfg, distances, args.repeats)
    rep.write("sweep.json", **sweep.to_dict())
    for r in sweep.rows:
        print(f"{r.distance:6.0f} mm  {r.error_mean:.3f} +/- {r.error_sd:.3f} mm  "
              f"({r.n_ok} ok, {r.n_failed} failed)")
    return EXIT_OK


def _calibration_source(args, cfg: ExperimentConfig):
    path = args.calibration or cfg.calibration_file
    if path is None:
        return None, "in-run"
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"calibration file {path} not found")
    return fileio.read_calibration(path).matrix, str(path)


def cmd_evaluate_cube(args) -> int:
    cfg = _resolve(args)
    if args.trials is not None:
        cfg = dataclasses.replace(cfg, cube=dataclasses.replace(cfg.cube, trials=args.trials))
    rep = _Report(args, "evaluate-cube", cfg)
    matrix, source = _calibration_source(args, cfg)
    if matrix is None and args.no_in_run_calibration:
        raise ConfigError("no calibration file given and in-run calibration disabled")
    seeds = list(range(cfg.base_seed, cfg.base_seed + cfg.cube.trials))
    results = run_cube_eval(cfg, seeds, matrix)
    rows = [{"seed": s, "ok": r is not None, **(r.to_dict() if r is not None else {})}
            for s, r in zip(seeds, results)]
    rep.write("cube.json", calibration_source=source, rows=rows)
    for row in rows:
        if row["ok"]:
            e = row["euler_offsets"]
            print(f"seed {row['seed']}: residue {row['icp_residue']:.2f} mm  center "
                  f"{row['center_offset']:.2f} mm  angles {e[0]:.2f} {e[1]:.2f} {e[2]:.2f} deg")
        else:
            print(f"seed {row['seed']}: failed")
    return EXIT_OK if all(r["ok"] for r in rows) else EXIT_NUMERICAL


def cmd_track(args) -> int:
    """Simulated marker tracking along the calibration trajectory, as a pose stream."""
    cfg = _resolve(args)
    s = simulate_calibration_session(cfg, cfg.camera_distance_mm, cfg.base_seed)
    records, last = [], s.tracked[0]
    for k, (T, rms) in enumerate(zip(s.tracked, s.track_rms)):
        last = T if T is not None else last
        records.append(fileio.PoseRecord(k, k * FRAME_PERIOD_S, last, rms, T is None))
    fileio.write_pose_csv(args.out / "track.csv", records)
    errs = [float(np.linalg.norm(T.t - G.t)) for T, G in zip(s.tracked, s.true_marker_poses) if T is not None]
    _Report(args, "track", cfg).write(
        "track.json", n_poses=len(records), n_lost=sum(r.lost for r in records),
        mean_translation_error_mm=float(np.mean(errs)) if errs else None,
        phantom_pose_error_mm=float(np.linalg.norm(s.T_cam_from_phantom.t - s.T_cam_from_phantom_true.t)))
    return EXIT_OK


def cmd_overlay(args) -> int:
    """Blend one ultrasound frame into an RGB frame at its tracked pose."""
    cfg = _resolve(args)
    K = cfg.camera.intrinsics
    if args.calibration is None:
        matrix = ground_truth_calibration(cfg)
    else:
        if not Path(args.calibration).is_file():
            raise ConfigError(f"calibration file {args.calibration} not found")
        matrix = fileio.read_calibration(args.calibration).matrix
    us = fileio.read_us_frame(args.us, cfg.ultrasound.spacing)
    rec = {r.frame: r for r in fileio.read_pose_csv(args.poses)}.get(args.frame)
    if rec is None:
        raise ConfigError(f"frame {args.frame} not in {args.poses}")
    rgb = fileio.read_ppm(args.rgb) if args.rgb else RgbFrame.blank(K)
    rgb.check_intrinsics(K)
    quad = image_quad(matrix, rec.pose, K, us.size)
    out = composite(rgb, us, quad, args.colormap, args.opacity)
    fileio.write_ppm(args.out / "overlay.ppm", out)
    _Report(args, "overlay", cfg).write("overlay.json", frame=args.frame,
                                        quad_px=[[float(x) for x in p] for p in quad])
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config JSON")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--deterministic", action="store_true",
                        help="omit timestamps and timings so reports are byte-reproducible")
    common.add_argument("--workers", type=int, help="worker processes (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rgbdus", description="RGB-D tracked ultrasound calibration toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-calibration", parents=[common], help="render a calibration session")
    s.add_argument("--distance", type=float, help="camera distance, mm")
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_simulate_calibration)

    s = sub.add_parser("calibrate", parents=[common], help="solve the calibration matrix")
    s.add_argument("--session", type=Path, help="directory written by simulate-calibration")
    s.add_argument("--distance", type=float)
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sweep-distance", parents=[common], help="calibration error versus distance")
    s.add_argument("--distances", type=float, nargs="+")
    s.add_argument("--repeats", type=int)
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_sweep_distance)

    s = sub.add_parser("evaluate-cube", parents=[common], help="cube localization accuracy")
    s.add_argument("--calibration", type=Path, help="calibration JSON (default: calibrate in-run)")
    s.add_argument("--no-in-run-calibration", action="store_true")
    s.add_argument("--trials", type=int)
    s.add_argument("--distance", type=float)
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_evaluate_cube)

    s = sub.add_parser("track", parents=[common], help="simulated marker pose stream")
    s.add_argument("--distance", type=float)
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("overlay", parents=[common], help="composite an ultrasound frame into RGB")
    s.add_argument("--us", type=Path, required=True, help="ultrasound PGM")
    s.add_argument("--poses", type=Path, required=True, help="marker pose CSV")
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--rgb", type=Path, help="RGB PPM (default: black frame)")
    s.add_argument("--calibration", type=Path, help="calibration JSON (default: ground truth)")
    s.add_argument("--colormap", choices=sorted(COLORMAPS), default="hot")
    s.add_argument("--opacity", type=float, default=DEFAULT_OPACITY)
    s.set_defaults(func=cmd_overlay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:  # invalid parameter values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
