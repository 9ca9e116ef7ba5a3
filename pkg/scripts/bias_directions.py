#!/usr/bin/env python3
"""How much of a 2 mm calibration offset the wire-distance metric can see.

The metric measures distance to wire segments, so only the offset component
perpendicular to each wire contributes. The shift therefore depends on the
offset direction, the probe mounting and the trajectory fan.
"""

import dataclasses
import logging

import numpy as np

from rgbdus.calib import calibrate, calibration_error
from rgbdus.config import ExperimentConfig, ProbeConfig
from rgbdus.experiments import simulate_calibration_session


def shifts(cfg, label):
    s = simulate_calibration_session(cfg, 500.0, 0)
    M = calibrate(s.frames, s.geom, s.T_cam_from_phantom).matrix
    base, _ = calibration_error(M, s.heldout, s.geom, s.T_cam_from_phantom)
    dirs = {"marker x": np.eye(3)[0], "marker y": np.eye(3)[1], "marker z": np.eye(3)[2],
            "image u": M.R[:, 0] / np.linalg.norm(M.R[:, 0]),
            "image v": M.R[:, 1] / np.linalg.norm(M.R[:, 1])}
    print(f"{label} (base error {base:.4f} mm)")
    for name, d in dirs.items():
        e, _ = calibration_error(M.translated(2.0 * d), s.heldout, s.geom, s.T_cam_from_phantom)
        print(f"  2 mm along {name:9s} -> shift {e - base:.4f} mm")


def main() -> None:
    logging.basicConfig(level=logging.ERROR)
    cfg = ExperimentConfig().noiseless()
    flat = dataclasses.replace(cfg.trajectory, fan_deg=0.0, roll_deg=0.0)
    shifts(cfg, "default mounting, default fan")
    shifts(dataclasses.replace(cfg, trajectory=flat), "default mounting, perpendicular planes")
    shifts(dataclasses.replace(cfg, trajectory=flat, probe=ProbeConfig(marker_euler_deg=(4.0, 0.0, 90.0))),
           "marker x along image depth, perpendicular planes")


if __name__ == "__main__":
    main()
