import numpy as np
import pytest

from rgbdus.calib import CalibrationMatrix
from rgbdus.config import ExperimentConfig
from rgbdus.depthsim import DepthNoiseModel, apply_noise
from rgbdus.errors import TooFewDetections
from rgbdus.evaluation import (
    BoardModel,
    CubeEvalReport,
    board_pose_from_detections,
    collect_edge_points,
    evaluate_cube,
    simulate_corner_detections,
)
from rgbdus.experiments import build_cube_scene
from rgbdus.geom import RigidTransform, random_transform, rotation_angle_deg, rotation_from_euler
from rgbdus.register import IcpParams
from rgbdus.scene import make_cube_edges

CFG = ExperimentConfig()
K = CFG.camera.intrinsics


@pytest.fixture(scope="module")
def scene():
    return build_cube_scene(CFG, 500.0)


def test_board_validation():
    with pytest.raises(ValueError):
        BoardModel(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]))
    with pytest.raises(ValueError):
        BoardModel(np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0.0]]))
    assert BoardModel.grid(300, 4).corners.shape == (16, 3)


def test_board_pose_noiseless(scene):
    det = simulate_corner_detections(scene.board, scene.T_cam_from_world, K, scene.background)
    assert len(det) >= 12
    depth = apply_noise(scene.background, K, DepthNoiseModel.none())
    T = board_pose_from_detections(scene.board, det, depth)
    assert np.linalg.norm(T.t - scene.T_cam_from_world.t) < 1e-6
    assert rotation_angle_deg(T.R.T @ scene.T_cam_from_world.R) < 1e-6


def test_board_pose_too_few(scene):
    det = simulate_corner_detections(scene.board, scene.T_cam_from_world, K, scene.background)[:2]
    with pytest.raises(TooFewDetections):
        board_pose_from_detections(scene.board, det, apply_noise(scene.background, K, DepthNoiseModel.none()))


def test_board_pose_monte_carlo(scene):
    worst_t = worst_r = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        det = simulate_corner_detections(scene.board, scene.T_cam_from_world, K, scene.background, 0.5, rng)
        T = board_pose_from_detections(scene.board, det, apply_noise(scene.background, K, DepthNoiseModel(), seed))
        worst_t = max(worst_t, np.linalg.norm(T.t - scene.T_cam_from_world.t))
        worst_r = max(worst_r, rotation_angle_deg(T.R.T @ scene.T_cam_from_world.R))
    assert worst_t < 2.0 and worst_r < 0.5


def test_occluded_corners_not_detected(scene):
    # a corner hidden by the cube: put one corner at the cube's footprint center
    board = BoardModel(np.vstack([scene.board.corners, [[0.0, 0.0, 0.0]]]), scene.board.cube_pose_in_world)
    det = simulate_corner_detections(board, scene.T_cam_from_world, K, scene.background)
    assert len(board.corners) - 1 not in [i for i, _ in det]


def test_collect_identity_origin():
    m = CalibrationMatrix.from_parts(0.1, 0.2, np.eye(3), (1.0, 2.0, 3.0))
    np.testing.assert_array_equal(collect_edge_points([(np.zeros((1, 2)), RigidTransform())], m), [[1, 2, 3]])
    assert collect_edge_points([], m).shape == (0, 3)


def test_collect_noiseless_sweep_on_edge():
    m = CalibrationMatrix.from_parts(0.1, 0.1, rotation_from_euler((4, -6, 9)), (25.6, -80, 8))
    a, b = np.array([-25.0, -25, 25]), np.array([25.0, -25, 25])
    T_cam_from_cube = random_transform(np.random.default_rng(3), 300)
    frames = []
    for x in np.linspace(-20, 20, 30):
        T_ci = RigidTransform(np.column_stack([(0, 1.0, 0), (0, 0, -1.0), (-1.0, 0, 0)]), (x, -30.0, 30.0))
        p_img = T_ci.inverse().apply(np.array([x, -25.0, 25.0]))
        pixel = p_img[:2] / 0.1
        frames.append((pixel[None], T_cam_from_cube @ T_ci @ m.T_marker_from_image.inverse()))
    pts = T_cam_from_cube.inverse().apply(collect_edge_points(frames, m))
    d = b - a
    off = np.linalg.norm(np.cross(pts - a, d), axis=1) / np.linalg.norm(d)
    assert off.max() < 1e-6


def _edge_samples(model, T, step=0.5):
    out = []
    for a, b in model.edges:
        n = int(np.ceil(np.linalg.norm(b - a) / step))
        s = np.linspace(0, 1, n + 1)[:, None]
        out.append(a + s * (b - a))
    return T.apply(np.vstack(out))


def test_evaluate_perfect_points(scene):
    model = make_cube_edges(50)
    T_cc = scene.T_cam_from_world @ scene.board.cube_pose_in_world
    r = evaluate_cube(_edge_samples(model, T_cc), model, scene.T_cam_from_world, scene.board.cube_pose_in_world)
    assert r.icp_residue < 1e-6 and r.center_offset < 1e-6 and max(map(abs, r.euler_offsets)) < 1e-6


def test_evaluate_injected_offset(scene):
    model = make_cube_edges(50)
    T_cc = scene.T_cam_from_world @ scene.board.cube_pose_in_world
    pts = _edge_samples(model, T_cc, 1.3) + np.array([1.8, -2.4, 0.0])
    r = evaluate_cube(pts, model, scene.T_cam_from_world, scene.board.cube_pose_in_world)
    assert r.center_offset == pytest.approx(3.0, rel=0.1)


def test_evaluate_invariant_to_camera_motion(scene, rng):
    model = make_cube_edges(50)
    T_cc = scene.T_cam_from_world @ scene.board.cube_pose_in_world
    pts = _edge_samples(model, T_cc, 1.3)
    pts = pts + rng.normal(0, 0.5, size=pts.shape)
    params = IcpParams(convergence_delta_rms=1e-12, max_iterations=500)
    a = evaluate_cube(pts, model, scene.T_cam_from_world, scene.board.cube_pose_in_world, params)
    M = random_transform(np.random.default_rng(8), 200)
    b = evaluate_cube(M.apply(pts), model, M @ scene.T_cam_from_world, scene.board.cube_pose_in_world, params)
    assert abs(a.icp_residue - b.icp_residue) < 1e-9
    assert abs(a.center_offset - b.center_offset) < 1e-9
    assert np.abs(np.array(a.euler_offsets) - b.euler_offsets).max() < 1e-9


def test_report_validation():
    with pytest.raises(ValueError):
        CubeEvalReport(-1.0, 0.0, (0, 0, 0), 1)
    assert CubeEvalReport(1.0, 2.0, (0.1, 0.2, 0.3), 4).to_dict()["n_points"] == 4
