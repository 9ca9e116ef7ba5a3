"""Depth-camera tracked ultrasound: N-wire probe calibration, marker tracking
and augmented-reality overlay, with a simulator for every sensor involved."""

from .calib import CalibrationMatrix, CalibrationReport, calibrate, solve_calibration
from .config import ExperimentConfig
from .geom import CameraIntrinsics, RigidTransform
from .register import IcpParams, SurfaceModel, icp, localize_model, track_step, umeyama_fit

__version__ = "0.1.0"

__all__ = [
    "CalibrationMatrix",
    "CalibrationReport",
    "CameraIntrinsics",
    "ExperimentConfig",
    "IcpParams",
    "RigidTransform",
    "SurfaceModel",
    "calibrate",
    "icp",
    "localize_model",
    "solve_calibration",
    "track_step",
    "umeyama_fit",
]
