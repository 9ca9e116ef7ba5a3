#!/usr/bin/env python3
"""Calibration error against camera distance; prints a table and writes JSON."""

import argparse
import logging

from rgbdus.config import ExperimentConfig
from rgbdus.experiments import run_distance_sweep
from rgbdus.fileio import read_json, write_json


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--distances", type=float, nargs="+")
    ap.add_argument("--repeats", type=int)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--noiseless", action="store_true")
    ap.add_argument("--out", default="sweep_results.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    cfg = ExperimentConfig.from_dict(read_json(args.config)) if args.config else ExperimentConfig()
    cfg = cfg.noiseless() if args.noiseless else cfg
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "workers": args.workers})
    rep = run_distance_sweep(cfg, args.distances, args.repeats)

    print(f"{'distance (mm)':>14} {'mean (mm)':>10} {'sd (mm)':>8} {'ok':>4} {'failed':>6}")
    for r in rep.rows:
        print(f"{r.distance:14.0f} {r.error_mean:10.3f} {r.error_sd:8.3f} {r.n_ok:4d} {r.n_failed:6d}")
    write_json(args.out, rep.to_dict())


if __name__ == "__main__":
    main()
