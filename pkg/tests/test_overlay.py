import numpy as np
import pytest

from rgbdus.calib import CalibrationMatrix
from rgbdus.errors import BehindCamera, DegenerateQuad
from rgbdus.geom import CameraIntrinsics, RigidTransform, project, random_transform, rotation_from_euler
from rgbdus.overlay import COLORMAPS, RgbFrame, composite, homography, image_quad
from rgbdus.ussim import USFrame

K = CameraIntrinsics(570.0, 570.0, 319.5, 239.5, 640, 480)
SCALE = CalibrationMatrix.from_parts(0.1, 0.1, np.eye(3), (0.0, 0.0, 500.0))


def _us(w=64, h=48, seed=0):
    return USFrame(np.random.default_rng(seed).integers(0, 256, (h, w), dtype=np.uint8))


def test_quad_closed_form():
    q = image_quad(SCALE, RigidTransform(), K, (512, 512))
    expect = [(319.5, 239.5), (319.5 + 570 * 51.2 / 500, 239.5),
              (319.5 + 570 * 51.2 / 500, 239.5 + 570 * 51.2 / 500), (319.5, 239.5 + 570 * 51.2 / 500)]
    np.testing.assert_allclose(q, expect, atol=1e-9)


def test_quad_behind_camera():
    m = CalibrationMatrix.from_parts(0.1, 0.1, np.eye(3), (0.0, 0.0, -50.0))
    with pytest.raises(BehindCamera):
        image_quad(m, RigidTransform(), K, (512, 512))


def test_quad_matches_per_corner_projection():
    m = CalibrationMatrix.from_parts(0.1, 0.12, rotation_from_euler((4, -6, 9)), (25.6, -80, 8))
    T = RigidTransform(rotation_from_euler((170, 10, 5)), (0, 40, 450))
    q = image_quad(m, T, K, (300, 200))
    for corner, got in zip([(0, 0), (300, 0), (300, 200), (0, 200)], q):
        p = T.apply(m.map(np.array([corner], dtype=float))[0])
        assert np.abs(project(K, p) - got).max() < 1e-9


def test_quad_invariant_to_camera_motion():
    m = CalibrationMatrix.from_parts(0.1, 0.1, rotation_from_euler((4, -6, 9)), (25.6, -80, 8))
    T_cam_from_marker = RigidTransform(rotation_from_euler((170, 10, 5)), (0, 40, 450))
    q0 = image_quad(m, T_cam_from_marker, K, (512, 512))
    for seed in range(20):
        M = random_transform(np.random.default_rng(seed), 100)  # T_world_from_cam
        T_world_from_marker = M @ T_cam_from_marker
        q = image_quad(m, M.inverse() @ T_world_from_marker, K, (512, 512))
        assert np.abs(q - q0).max() < 1e-9


def test_opacity_zero_identical():
    rgb = RgbFrame(np.random.default_rng(1).integers(0, 256, (480, 640, 3), dtype=np.uint8))
    out = composite(rgb, _us(), [(100, 100), (300, 120), (280, 300), (90, 260)], opacity=0.0)
    assert out.pixels.tobytes() == rgb.pixels.tobytes()


def test_identity_quad_copies_gray():
    us = _us(64, 48)
    rgb = RgbFrame.blank(K, 7)
    out = composite(rgb, us, [(10, 20), (74, 20), (74, 68), (10, 68)], colormap="gray", opacity=1.0)
    np.testing.assert_array_equal(out.pixels[20:68, 10:74, 0], us.pixels)
    np.testing.assert_array_equal(out.pixels[20:68, 10:74, 1], us.pixels)


def test_writes_only_inside_bbox():
    rgb = RgbFrame.blank(K, 0)
    quad = np.array([(100, 100), (300, 120), (280, 300), (90, 260)], dtype=float)
    out = composite(rgb, USFrame(np.full((48, 64), 255, np.uint8)), quad, opacity=1.0)
    ys, xs = np.nonzero(out.pixels.any(axis=2))
    assert xs.min() >= 90 and xs.max() <= 300 and ys.min() >= 100 and ys.max() <= 300


def test_rotated_quad_centroid():
    us_px = np.zeros((100, 100), np.uint8)
    us_px[60:70, 20:30] = 255
    us = USFrame(us_px)
    quad = np.array([(200.0, 150.0), (350.0, 190.0), (310.0, 340.0), (160.0, 300.0)])
    out = composite(RgbFrame.blank(K, 0), us, quad, colormap="gray", opacity=1.0)
    ys, xs = np.nonzero(out.pixels[..., 0] > 128)
    Hm = homography([(0, 0), (100, 0), (100, 100), (0, 100)], quad)
    c = Hm @ np.array([25.0, 65.0, 1.0])
    assert np.hypot(xs.mean() + 0.5 - c[0] / c[2], ys.mean() + 0.5 - c[1] / c[2]) < 1.0


def test_degenerate_quads():
    rgb = RgbFrame.blank(K)
    with pytest.raises(DegenerateQuad):
        composite(rgb, _us(), [(0, 0), (10, 0), (20, 0), (5, 10)])
    with pytest.raises(DegenerateQuad):
        composite(rgb, _us(), [(0, 0), (10, 0), (2, 2), (0, 10)])


def test_hot_colormap_endpoints():
    hot = COLORMAPS["hot"]
    assert tuple(hot[0]) == (0, 0, 0) and tuple(hot[255]) == (255, 255, 255)
    assert hot[100, 0] > hot[100, 1] >= hot[100, 2]  # red leads green leads blue
    assert hot[180, 0] == 255 and hot[180, 2] == 0  # red saturated, no blue yet


def test_frame_size_checked():
    with pytest.raises(ValueError):
        RgbFrame.blank(K).check_intrinsics(CameraIntrinsics(1, 1, 0, 0, 10, 10))
