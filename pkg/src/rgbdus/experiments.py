"""Simulated acquisition sessions and the two experiment runners.

A calibration session places the N-wire phantom in front of the depth camera,
localizes and freezes it, tracks the probe marker along a fan of image-plane
poses and renders one ultrasound frame per pose. The cube session does the
same around a cube resting on a planar marker board.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .calib import (
    CalibrationMatrix,
    CalibrationReport,
    calibrate,
    calibration_error,
    segment_spots,
)
from .config import ExperimentConfig, check_distance
from .depthsim import apply_noise, combine_depths, raycast, to_point_cloud
from .errors import ConfigError, NumericalError, RgbdUsError
from .evaluation import (
    BoardModel,
    CubeEvalReport,
    board_pose_from_detections,
    collect_edge_points,
    evaluate_cube,
    simulate_corner_detections,
)
from .geom import (
    RigidTransform,
    look_at,
    rotation_angle_deg,
    rotation_from_euler,
    rotation_from_rotvec,
)
from .register import SurfaceModel, TrackerState, localize_model, track_step
from .scene import (
    TriangleMesh,
    cube_mesh,
    make_cube_edges,
    make_marker_mesh,
    make_nwire_geometry,
    make_phantom_mesh,
    merge_meshes,
    plane_mesh,
)
from .ussim import SpeckleParams, intersect_cube_edges, intersect_wires, render_us_frame

log = logging.getLogger(__name__)

IMAGE_TOP_OFFSET = 5.0  # mm between the first image row and the phantom top plane
INIT_ROTATION_ERROR_DEG = 5.0  # manual initialization is only roughly aligned


# -- helpers -----------------------------------------------------------------------

def interpolate_pose(T0: RigidTransform, T1: RigidTransform, s: float) -> RigidTransform:
    rv = Rotation.from_matrix(T0.R.T @ T1.R).as_rotvec()
    return RigidTransform(T0.R @ rotation_from_rotvec(s * rv), (1 - s) * T0.t + s * T1.t)


def ground_truth_calibration(cfg: ExperimentConfig) -> CalibrationMatrix:
    """The simulator's true image-to-marker matrix."""
    T_image_from_marker = RigidTransform(rotation_from_euler(cfg.probe.marker_euler_deg),
                                         cfg.probe.marker_center_in_image)
    T = T_image_from_marker.inverse()
    sx, sy = cfg.ultrasound.spacing
    return CalibrationMatrix.from_parts(sx, sy, T.R, T.t)


def _speckle(cfg: ExperimentConfig) -> SpeckleParams | None:
    us = cfg.ultrasound
    return SpeckleParams(us.speckle_mean, us.speckle_sigma) if us.speckle_mean > 0 else None


def _perturbed_rotation(R: np.ndarray, rng: np.random.Generator, deg: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rotation_from_rotvec(np.radians(deg) * axis) @ R


def _camera_pose(target, distance: float, elevation_deg: float, azimuth_deg: float,
                 up) -> RigidTransform:
    """``T_cam_from_world`` looking at ``target`` from ``distance``.

    ``up`` is the world's upward direction; elevation is measured from the
    plane orthogonal to it, azimuth from the world's ``-y`` axis.
    """
    up = np.asarray(up, dtype=float)
    el, az = np.radians(elevation_deg), np.radians(azimuth_deg)
    horiz = np.array([-np.sin(az), -np.cos(az), 0.0])
    direction = np.cos(el) * horiz + np.sin(el) * up
    eye = np.asarray(target, dtype=float) + distance * direction
    return look_at(eye, target, up).inverse()


# -- trajectory ------------------------------------------------------------------

def image_pose(center_ph, angles_deg, cfg: ExperimentConfig) -> RigidTransform:
    """``T_phantom_from_image`` with the image center at ``center_ph``.

    At zero angles the image plane is perpendicular to the wires, ``u`` runs
    front to back and ``v`` runs with depth.
    """
    sx, sy = cfg.ultrasound.spacing
    w, h = cfg.ultrasound.image_size
    base = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    R = rotation_from_euler(angles_deg) @ base
    c_img = np.array([sx * (w - 1) / 2.0, sy * (h - 1) / 2.0, 0.0])
    return RigidTransform(R, np.asarray(center_ph, dtype=float) - R @ c_img)


def default_trajectory(cfg: ExperimentConfig, rng: np.random.Generator | None = None):
    """``(T_phantom_from_image, heldout)`` pairs for the calibration fan."""
    tr = cfg.trajectory
    p = cfg.phantom
    sy_img = cfg.ultrasound.spacing[1] * (cfg.ultrasound.image_size[1] - 1)
    yc = 0.5 * (p.y_front + p.y_back)
    zc = sy_img / 2.0 - IMAGE_TOP_OFFSET
    out = []
    if tr.poses:
        for k, pose in enumerate(tr.poses):
            held = tr.heldout_every > 0 and k % tr.heldout_every == tr.heldout_every - 1
            out.append((image_pose(pose[:3], pose[3:6], cfg), held))
        return out
    n = tr.n_poses
    for k in range(n):
        theta = 2.0 * math.pi * k / n
        x0 = tr.x_range[0] + (tr.x_range[1] - tr.x_range[0]) * k / max(n - 1, 1)
        angles = np.array([tr.roll_deg * math.sin(2 * theta),
                           tr.fan_deg * math.sin(theta),
                           tr.fan_deg * math.cos(theta)])
        center = np.array([x0, yc, zc])
        if rng is not None and (tr.jitter_deg > 0 or tr.jitter_mm > 0):
            angles = angles + rng.normal(0.0, tr.jitter_deg, 3)
            center = center + rng.normal(0.0, tr.jitter_mm, 3)
        held = tr.heldout_every > 0 and k % tr.heldout_every == tr.heldout_every - 1
        out.append((image_pose(center, angles, cfg), held))
    return out


# -- marker tracking over a probe path --------------------------------------------

@dataclass
class _Seeds:
    rng: np.random.Generator

    def next(self) -> int:
        return int(self.rng.integers(0, 2**63 - 1))


def _track_marker(cfg: ExperimentConfig, marker_mesh: TriangleMesh, background: np.ndarray,
                  T_cam_from_marker_path, seeds: _Seeds, rng: np.random.Generator, stats=None):
    """Tracked ``T_cam_from_marker`` per path pose (``None`` where lost).

    ``stats``, if given, receives the ``(rms, lost)`` of each path pose.
    """
    K = cfg.camera.intrinsics
    noise = cfg.camera.noise
    tr = cfg.trajectory

    def cloud_at(T):
        z = combine_depths(background, raycast(marker_mesh, T, K))
        return to_point_cloud(apply_noise(z, K, noise, seeds.next()))

    model = SurfaceModel.from_mesh(marker_mesh, cfg.icp.model_downsample_spacing)
    T0 = T_cam_from_marker_path[0]
    radius = float(np.linalg.norm(marker_mesh.bounds()[1] - marker_mesh.bounds()[0])) / 2.0
    init_R = _perturbed_rotation(T0.R, rng, INIT_ROTATION_ERROR_DEG)
    first = localize_model(marker_mesh, cloud_at(T0), T0.t, radius + 10.0, cfg.localization,
                           init_rotation=init_R, model=model)
    state = TrackerState.from_result(model, first)
    tracked = [first.pose]
    if stats is not None:
        stats.append((first.rms_residue, False))
    prev = T0
    for T in T_cam_from_marker_path[1:]:
        dist = float(np.linalg.norm(T.t - prev.t))
        ang = rotation_angle_deg(prev.R.T @ T.R)
        n_sub = max(1, math.ceil(max(dist / tr.max_step_mm, ang / tr.max_step_deg)))
        for j in range(1, n_sub + 1):
            state, res = track_step(state, cloud_at(interpolate_pose(prev, T, j / n_sub)), cfg.icp)
        tracked.append(None if state.lost else state.last_pose)
        if stats is not None:
            stats.append((res.rms_residue, state.lost))
        prev = T
    return tracked


# -- calibration session ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CalibrationSession:
    frames: list  # (USFrame, tracked T_cam_from_marker) for calibration poses
    heldout: list  # same, held out for the error metric
    T_cam_from_phantom: RigidTransform  # frozen localization result
    T_cam_from_phantom_true: RigidTransform
    geom: object
    gt_matrix: CalibrationMatrix
    lost_frames: int = 0
    true_marker_poses: list = field(default_factory=list)
    tracked: list = field(default_factory=list)  # per path pose, None where lost
    track_rms: list = field(default_factory=list)
    heldout_indices: tuple = ()


def simulate_calibration_session(cfg: ExperimentConfig, distance: float, seed: int) -> CalibrationSession:
    check_distance(distance)
    rng = np.random.default_rng(seed)
    seeds = _Seeds(np.random.default_rng([seed, 1]))
    K = cfg.camera.intrinsics
    geom = make_nwire_geometry(cfg.phantom)
    phantom = make_phantom_mesh(geom)
    marker = make_marker_mesh(cfg.marker)
    gt = ground_truth_calibration(cfg)
    T_image_from_marker = gt.T_marker_from_image.inverse()

    lo, hi = phantom.bounds()
    center = 0.5 * (lo + hi)
    T_cam_from_phantom = _camera_pose(center, distance, cfg.camera.elevation_deg,
                                      cfg.camera.azimuth_deg, up=(0.0, 0.0, -1.0))

    # phantom alone: localize once, then freeze
    z_phantom = raycast(phantom, T_cam_from_phantom, K)
    cloud = to_point_cloud(apply_noise(z_phantom, K, cfg.camera.noise, seeds.next()))
    init_R = _perturbed_rotation(T_cam_from_phantom.R, rng, INIT_ROTATION_ERROR_DEG)
    roi_radius = 0.5 * float(np.linalg.norm(hi - lo)) + 5.0
    phantom_model = SurfaceModel.from_mesh(phantom, cfg.localization.model_downsample_spacing)
    loc = localize_model(phantom, cloud, T_cam_from_phantom.apply(center), roi_radius,
                         cfg.localization, init_rotation=init_R, model=phantom_model)
    phantom_state = TrackerState.from_result(phantom_model, loc, frozen=True)
    T_cam_from_phantom_est = phantom_state.last_pose

    path = default_trajectory(cfg, rng)
    true_marker = [T_cam_from_phantom @ T_pi @ T_image_from_marker for T_pi, _ in path]
    stats = []
    tracked = _track_marker(cfg, marker, z_phantom, true_marker, seeds, rng, stats)

    frames, heldout, lost = [], [], 0
    speckle = _speckle(cfg)
    us = cfg.ultrasound
    for k, ((T_pi, held), T_est) in enumerate(zip(path, tracked)):
        spots = intersect_wires(geom, T_pi.inverse(), us.spacing, us.image_size)
        frame = render_us_frame(spots, us.image_size, us.spacing, us.psf_sigma, speckle,
                                seeds.next(), frame_index=k)
        if T_est is None:
            lost += 1
            log.warning("marker lost at frame %d; frame dropped", k)
            continue
        (heldout if held else frames).append((frame, T_est))
    return CalibrationSession(frames, heldout, T_cam_from_phantom_est, T_cam_from_phantom, geom, gt,
                              lost, true_marker, tracked, [r for r, _ in stats],
                              tuple(k for k, (_, held) in enumerate(path) if held))


@dataclass(frozen=True)
class CalibrationRun:
    distance: float
    seed: int
    ok: bool
    error_mean: float = float("nan")
    error_sd: float = float("nan")
    rms_fit: float = float("nan")
    translation_error: float = float("nan")  # |t - t_gt|, mm
    rotation_error_deg: float = float("nan")
    scale_error: float = float("nan")  # max relative pixel-scale error
    n_frames: int = 0
    message: str = ""


def compare_matrices(est: CalibrationMatrix, gt: CalibrationMatrix) -> tuple[float, float, float]:
    """Translation error (mm), rotation error (deg), max relative scale error."""
    return (float(np.linalg.norm(est.t - gt.t)),
            rotation_angle_deg(gt.R.T @ est.R),
            float(max(abs(est.sx / gt.sx - 1.0), abs(est.sy / gt.sy - 1.0))))


def run_calibration(cfg: ExperimentConfig, distance: float, seed: int) -> tuple[CalibrationRun, CalibrationReport | None]:
    """One simulated calibration with its held-out error."""
    try:
        s = simulate_calibration_session(cfg, distance, seed)
        report = calibrate(s.frames, s.geom, s.T_cam_from_phantom, cfg.segmentation)
        mean, sd = calibration_error(report.matrix, s.heldout, s.geom, s.T_cam_from_phantom, cfg.segmentation)
        report = replace(report, error_mean=mean, error_sd=sd)
    except RgbdUsError as exc:
        log.warning("run (distance %g, seed %d) failed: %s", distance, seed, exc)
        return CalibrationRun(distance, seed, False, message=f"{type(exc).__name__}: {exc}"), None
    dt, dr, ds = compare_matrices(report.matrix, s.gt_matrix)
    return CalibrationRun(distance, seed, True, mean, sd, report.rms_fit, dt, dr, ds, report.n_frames), report


# -- distance sweep -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    distance: float
    n_ok: int
    n_failed: int
    error_mean: float  # mean over successful repeats of the per-run mean error
    error_sd: float  # spread of the per-run means

    def to_dict(self) -> dict:
        return {"distance_mm": self.distance, "n_ok": self.n_ok, "n_failed": self.n_failed,
                "error_mean": self.error_mean, "error_sd": self.error_sd}


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    runs: tuple[CalibrationRun, ...]

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows],
                "runs": [_run_dict(r) for r in self.runs]}


def _run_dict(r: CalibrationRun) -> dict:
    return {k: getattr(r, k) for k in CalibrationRun.__dataclass_fields__}


def _sweep_job(args):
    cfg, distance, seed = args
    return run_calibration(cfg, distance, seed)[0]


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_distance_sweep(cfg: ExperimentConfig, distances=None, repeats: int | None = None) -> SweepReport:
    """Repeated calibrations per camera distance; one row per distance.

    Run ``i`` (ordered by distance, then repeat) uses seed ``base_seed + i``.
    Failed runs are logged and counted, and the sweep continues.
    """
    distances = tuple(cfg.distances_mm if distances is None else distances)
    repeats = cfg.repeats if repeats is None else repeats
    if len(distances) < 1 or repeats < 1:
        raise ConfigError("sweep needs at least one distance and one repeat")
    for d in distances:
        check_distance(d)
    jobs = [(cfg, d, cfg.base_seed + i * repeats + r) for i, d in enumerate(distances) for r in range(repeats)]
    runs = _map(_sweep_job, jobs, cfg.workers)
    rows = []
    for d in distances:
        ok = [r.error_mean for r in runs if r.distance == d and r.ok]
        n_fail = sum(1 for r in runs if r.distance == d and not r.ok)
        mean = float(np.mean(ok)) if ok else float("nan")
        sd = float(np.std(ok, ddof=1)) if len(ok) > 1 else 0.0
        rows.append(SweepRow(float(d), len(ok), n_fail, mean, sd))
    return SweepReport(tuple(rows), tuple(runs))


# -- cube evaluation ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CubeScene:
    board: BoardModel
    edges: object
    T_cam_from_world: RigidTransform
    background: np.ndarray  # noiseless z-buffer of board and cube


def cube_probe_path(cfg: ExperimentConfig) -> list[RigidTransform]:
    """``T_cube_from_image`` poses: two perpendicular sweeps across the top
    edges and one oblique sweep down the selected vertical edge."""
    c = cfg.cube
    h = c.size / 2.0
    sx, sy = cfg.ultrasound.spacing
    w, _ = cfg.ultrasound.image_size
    half_u = sx * (w - 1) / 2.0
    n = c.frames_per_sweep
    path = []

    def pose(u_dir, v_dir, origin):
        u_dir, v_dir = np.asarray(u_dir, float), np.asarray(v_dir, float)
        R = np.column_stack([u_dir, v_dir, np.cross(u_dir, v_dir)])
        return RigidTransform(R, origin)

    top = h + IMAGE_TOP_OFFSET
    for x in np.linspace(-0.8 * h, 0.8 * h, n):  # cuts the edges along x
        path.append(pose((0, 1, 0), (0, 0, -1), (x, -half_u, top)))
    for y in np.linspace(0.8 * h, -0.8 * h, n):  # cuts the edges along y
        path.append(pose((1, 0, 0), (0, 0, -1), (-half_u, y, top)))
    # oblique plane tilted 45 degrees, crossing the vertical edge at (-h, -h)
    u_dir = np.array([1.0, -1.0, 0.0]) / math.sqrt(2)
    v_dir = np.array([1.0, 1.0, -math.sqrt(2)]) / 2.0
    for z in np.linspace(0.6 * h, -0.8 * h, n):
        hit = np.array([-h, -h, z])  # lands at image (half_u, 20 mm)
        path.append(pose(u_dir, v_dir, hit - half_u * u_dir - 20.0 * v_dir))
    return path


def build_cube_scene(cfg: ExperimentConfig, distance: float) -> CubeScene:
    c = cfg.cube
    K = cfg.camera.intrinsics
    cube_pose = RigidTransform(rotation_from_euler((0.0, 0.0, c.yaw_deg)), (0.0, 0.0, c.size / 2.0))
    board = BoardModel.grid(c.board_size, c.board_grid, cube_pose)
    T_cam_from_world = _camera_pose((0.0, 0.0, c.size / 2.0), distance, cfg.camera.elevation_deg,
                                    cfg.camera.azimuth_deg, up=(0.0, 0.0, 1.0))
    world = merge_meshes([plane_mesh(c.board_size, c.board_size), cube_mesh(c.size).transformed(cube_pose)])
    return CubeScene(board, make_cube_edges(c.size, c.edges), T_cam_from_world,
                     raycast(world, T_cam_from_world, K))


def run_cube_trial(cfg: ExperimentConfig, distance: float, seed: int,
                   matrix: CalibrationMatrix | None = None, inject_offset=None) -> CubeEvalReport:
    """One cube localization trial.

    Without ``matrix`` a calibration session at the same distance and seed
    supplies it. ``inject_offset`` shifts the collected points (mm, camera
    frame) before evaluation.
    """
    if matrix is None:
        run, report = run_calibration(cfg, distance, seed)
        if report is None:
            raise ConfigError(f"in-run calibration failed: {run.message}")
        matrix = report.matrix
    K = cfg.camera.intrinsics
    rng = np.random.default_rng([seed, 2])
    seeds = _Seeds(np.random.default_rng([seed, 3]))
    scene = build_cube_scene(cfg, distance)
    T_cw = scene.T_cam_from_world

    detections = simulate_corner_detections(scene.board, T_cw, K, scene.background,
                                            cfg.cube.pixel_noise_px, rng)
    board_depth = apply_noise(scene.background, K, cfg.camera.noise, seeds.next())
    T_cw_est = board_pose_from_detections(scene.board, detections, board_depth)

    gt = ground_truth_calibration(cfg)
    T_image_from_marker = gt.T_marker_from_image.inverse()
    T_world_from_cube = scene.board.cube_pose_in_world
    path = cube_probe_path(cfg)
    true_marker = [T_cw @ T_world_from_cube @ T_ci @ T_image_from_marker for T_ci in path]
    tracked = _track_marker(cfg, make_marker_mesh(cfg.marker), scene.background, true_marker, seeds, rng)

    us = cfg.ultrasound
    speckle = _speckle(cfg)
    collected = []
    for k, (T_ci, T_est) in enumerate(zip(path, tracked)):
        if T_est is None:
            continue
        spots = intersect_cube_edges(scene.edges, T_ci.inverse(), us.spacing, us.image_size)
        frame = render_us_frame(spots, us.image_size, us.spacing, us.psf_sigma, speckle,
                                seeds.next(), frame_index=k)
        collected.append((segment_spots(frame, cfg.segmentation), T_est))
    points = collect_edge_points(collected, matrix)
    if inject_offset is not None:
        points = points + np.asarray(inject_offset, dtype=float)
    return evaluate_cube(points, scene.edges, T_cw_est, T_world_from_cube, cfg.localization, cfg.cube.icp_step_mm)


def _cube_job(args):
    cfg, distance, seed, matrix = args
    try:
        return run_cube_trial(cfg, distance, seed, matrix)
    except NumericalError as exc:
        log.warning("cube trial (seed %d) failed: %s", seed, exc)
        return None


def run_cube_eval(cfg: ExperimentConfig, seeds=None,
                  matrix: CalibrationMatrix | None = None) -> list[CubeEvalReport | None]:
    """Cube trials at ``camera_distance_mm``, one entry per seed (``None`` if it failed)."""
    if seeds is None:
        seeds = range(cfg.base_seed, cfg.base_seed + cfg.cube.trials)
    seeds = list(seeds)
    jobs = [(cfg, cfg.camera_distance_mm, s, matrix) for s in seeds]
    return _map(_cube_job, jobs, cfg.workers)
