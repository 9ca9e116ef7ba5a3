import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import SIZE, SPACING, perpendicular_plane, plane_diagonal_oracle, tilted_plane
from rgbdus.calib import (
    CalibrationMatrix,
    Correspondence,
    build_correspondences,
    calibrate,
    calibration_error,
    fit_residual,
    match_nwires,
    point_segment_distance,
    segment_spots,
    solve_calibration,
    wire_distances,
)
from rgbdus.errors import (
    DegeneratePixelConfiguration,
    MatchFailed,
    TooFewCorrespondences,
)
from rgbdus.geom import RigidTransform, random_transform, rotation_from_euler
from rgbdus.scene import make_nwire_geometry, middle_point_on_diagonal
from rgbdus.ussim import SpeckleParams, USFrame, intersect_wires, render_us_frame, visible

GEOM = make_nwire_geometry()
T_MARKER_FROM_IMAGE = RigidTransform(rotation_from_euler((4, -6, 9)), (25.6, -80, 8))
GT = CalibrationMatrix.from_parts(0.1, 0.1, T_MARKER_FROM_IMAGE.R, T_MARKER_FROM_IMAGE.t)


def _pixels(T_phantom_from_image):
    return np.array([s.pixel for s in visible(intersect_wires(GEOM, T_phantom_from_image.inverse(),
                                                              SPACING, SIZE))])


def _fan(n=16, rng=None):
    rng = rng or np.random.default_rng(0)
    return [tilted_plane(rng.uniform(8, 32), rng.uniform(-12, 12, 3)) for _ in range(n)]


# -- matrix type ---------------------------------------------------------------------------

def test_matrix_columns_match_decomposition():
    A = GT.A
    np.testing.assert_allclose(A[:, 0], 0.1 * GT.R[:, 0], atol=1e-15)
    np.testing.assert_allclose(A[:, 1], 0.1 * GT.R[:, 1], atol=1e-15)
    np.testing.assert_array_equal(A[:, 2], GT.t)
    assert GT.consistency_error() < 1e-15


def test_matrix_rejects_sheared_input():
    A = GT.A.copy()
    A[:, 1] += 0.01 * A[:, 0]
    with pytest.raises(ValueError):
        CalibrationMatrix(A, GT.sx, GT.sy, GT.R, GT.t)


@given(st.integers(0, 10_000), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_from_affine_round_trip(seed, sx, sy):
    T = random_transform(np.random.default_rng(seed))
    m = CalibrationMatrix.from_parts(sx, sy, T.R, T.t)
    back = CalibrationMatrix.from_affine(m.A)
    assert np.abs(back.A - m.A).max() < 1e-12
    assert back.sx == pytest.approx(sx) and back.sy == pytest.approx(sy)


def test_from_affine_zero_column():
    A = GT.A.copy()
    A[:, 0] = 0
    with pytest.raises(DegeneratePixelConfiguration):
        CalibrationMatrix.from_affine(A)


def test_map_origin_is_translation():
    np.testing.assert_array_equal(GT.map(np.zeros((1, 2)))[0], GT.t)


# -- segmentation and matching ----------------------------------------------------------------

def test_segment_blank():
    assert segment_spots(USFrame(np.zeros((64, 64), dtype=np.uint8))).shape == (0, 2)


def test_segment_nine_blobs_no_speckle():
    spots = intersect_wires(GEOM, perpendicular_plane(20).inverse(), SPACING, SIZE)
    f = render_us_frame(spots, SIZE, SPACING, 3.0, None)
    found = segment_spots(f)
    ann = np.array([a[:2] for a in f.annotations])
    assert len(found) == 9
    assert np.linalg.norm(found[:, None] - ann[None], axis=2).min(axis=0).max() < 0.25


def test_segment_speckle_statistics():
    rng = np.random.default_rng(99)
    good = 0
    for seed in range(100):
        T = tilted_plane(rng.uniform(8, 32), rng.uniform(-10, 10, 3))
        f = render_us_frame(intersect_wires(GEOM, T.inverse(), SPACING, SIZE), SIZE, SPACING, 3.0,
                            SpeckleParams(20, 10), seed)
        found = segment_spots(f)
        ann = np.array([a[:2] for a in f.annotations])
        if len(found) == 9 and np.linalg.norm(found[:, None] - ann[None], axis=2).min(axis=0).max() < 0.5:
            good += 1
    assert good >= 95


@pytest.mark.parametrize("x0, alpha", [(20.0, 0.5), (10.0, 0.25)])
def test_match_perpendicular_alpha(x0, alpha):
    lab = match_nwires(_pixels(perpendicular_plane(x0)))
    assert len(lab.layers) == 3
    assert np.allclose(lab.alphas, alpha, atol=1e-3)


def test_match_wrong_count():
    with pytest.raises(MatchFailed):
        match_nwires(_pixels(perpendicular_plane(20))[:8])


def test_match_not_collinear():
    px = _pixels(perpendicular_plane(20))
    order = np.argsort(px[:, 1])
    px[order[1], 1] += 5.0  # lifts one spot off its layer line (still sorts into the same layer)
    with pytest.raises(MatchFailed):
        match_nwires(px, collinearity_tol=3.0)


def test_middle_point_interpolation_oracle_1000_planes():
    rng = np.random.default_rng(2024)
    worst = 0.0
    n = 0
    while n < 1000:
        T = tilted_plane(rng.uniform(6, 34), rng.uniform(-20, 20, 3))
        px = _pixels(T)
        if len(px) != 9:
            continue
        lab = match_nwires(px)
        for layer in range(3):
            a, b = GEOM.layers[layer].diagonal
            got = middle_point_on_diagonal(GEOM, layer, lab.alphas[layer])
            worst = max(worst, float(np.linalg.norm(got - plane_diagonal_oracle(T, a, b))))
        n += 1
    assert worst < 1e-9


# -- correspondences ---------------------------------------------------------------------------

def test_correspondence_examples():
    lab = match_nwires(_pixels(perpendicular_plane(20)))
    I = RigidTransform()
    c = build_correspondences(lab, GEOM, I, I)
    np.testing.assert_allclose(c[0].X_marker, (20, 20, 15), atol=1e-9)
    c = build_correspondences(lab, GEOM, I, RigidTransform.from_translation((0, 0, 100)))
    np.testing.assert_allclose(c[0].X_marker, (20, 20, -85), atol=1e-9)


def test_frozen_phantom_pose_gives_same_phantom_points():
    lab = match_nwires(_pixels(perpendicular_plane(20)))
    T_cp = random_transform(np.random.default_rng(1))
    pts = set()
    for k in range(10):
        T_cm = random_transform(np.random.default_rng(100 + k))
        for c in build_correspondences(lab, GEOM, T_cp, T_cm, k):
            X_ph = (T_cp.inverse() @ T_cm).apply(c.X_marker)
            pts.add(tuple(np.round(X_ph, 9)))
    assert len(pts) == 3


# -- solve -------------------------------------------------------------------------------------------

def _exact_corrs(planes, gt=GT, T_cam_from_phantom=None):
    T_cp = T_cam_from_phantom or RigidTransform(rotation_from_euler((20, -30, 40)), (10, 20, 500))
    T_mi = gt.T_marker_from_image
    out = []
    for k, T_pi in enumerate(planes):
        T_cm = T_cp @ T_pi @ T_mi.inverse()
        lab = match_nwires(_pixels(T_pi))
        out.extend(build_correspondences(lab, GEOM, T_cp, T_cm, k))
    return out


def test_exact_recovery_30_frames():
    m = solve_calibration(_exact_corrs(_fan(30)))
    assert np.abs(m.A - GT.A).max() < 1e-8
    assert abs(m.sx / GT.sx - 1) < 1e-8 and abs(m.sy / GT.sy - 1) < 1e-8


def test_anisotropic_scale_recovery():
    gt = CalibrationMatrix.from_parts(0.12, 0.09, GT.R, GT.t)
    planes = _fan(20)
    corrs = []
    for k, T_pi in enumerate(planes):
        T_cm = T_pi @ gt.T_marker_from_image.inverse()
        spots = intersect_wires(GEOM, T_pi.inverse(), (0.12, 0.09), SIZE)
        lab = match_nwires([s.pixel for s in visible(spots)])
        corrs.extend(build_correspondences(lab, GEOM, RigidTransform(), T_cm, k))
    m = solve_calibration(corrs)
    assert np.abs(m.A - gt.A).max() < 1e-8


def test_too_few():
    with pytest.raises(TooFewCorrespondences):
        solve_calibration(_exact_corrs(_fan(1)))


def test_collinear_pixels():
    corrs = [Correspondence((float(u), 2.0 * u + 1), (u, 0.0, 1.0)) for u in range(6)]
    with pytest.raises(DegeneratePixelConfiguration):
        solve_calibration(corrs)


@given(st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_solution_never_worse_than_ground_truth(seed, noise):
    rng = np.random.default_rng(seed)
    corrs = _exact_corrs(_fan(12, rng))
    noisy = [Correspondence(c.pixel, tuple(np.array(c.X_marker) + rng.normal(0, noise, 3)), c.frame_index)
             for c in corrs]
    m = solve_calibration(noisy)
    assert fit_residual(m, noisy) <= fit_residual(GT, noisy) * (1 + 1e-12)


# -- error metric ---------------------------------------------------------------------------------

def _heldout(planes, T_cp, gt=GT, speckle=None):
    out = []
    for k, T_pi in enumerate(planes):
        T_cm = T_cp @ T_pi @ gt.T_marker_from_image.inverse()
        spots = intersect_wires(GEOM, T_pi.inverse(), SPACING, SIZE)
        out.append((render_us_frame(spots, SIZE, SPACING, 3.0, speckle, k, k), T_cm))
    return out


def test_point_segment_distance():
    seg = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    assert point_segment_distance((5, 3, 4), seg) == pytest.approx(5.0)
    assert point_segment_distance((13, 4, 0), seg) == pytest.approx(5.0)


def test_ground_truth_error_near_zero():
    T_cp = RigidTransform.from_translation((0, 0, 500))
    planes = [perpendicular_plane(x) for x in (8, 15, 22, 30)]
    lab_frames = _heldout(planes, T_cp)
    mean, _ = calibration_error(GT, lab_frames, GEOM, T_cp)
    assert mean < 0.02  # segmented centroids of clean blobs
    # exact crossing pixels make the metric vanish
    d = [wire_distances(GT, match_nwires(_pixels(T)), GEOM, T_cp, T_cm).max()
         for T, (_, T_cm) in zip(planes, lab_frames)]
    assert max(d) < 1e-6


def test_injected_translation_bias():
    # marker x is the image u axis here, perpendicular to every wire of a perpendicular plane
    gt = CalibrationMatrix.from_parts(0.1, 0.1, np.eye(3), (5.0, -60.0, 3.0))
    T_cp = RigidTransform.from_translation((0, 0, 500))
    held = _heldout([perpendicular_plane(x) for x in (10, 18, 25, 31)], T_cp, gt)
    base, _ = calibration_error(gt, held, GEOM, T_cp)
    shifted, _ = calibration_error(gt.translated((2.0, 0.0, 0.0)), held, GEOM, T_cp)
    assert shifted - base == pytest.approx(2.0, rel=0.05)


def test_calibrate_pipeline_noiseless():
    T_cp = RigidTransform(rotation_from_euler((10, 20, 30)), (5, 5, 450))
    planes = _fan(16)
    frames = _heldout(planes, T_cp)
    report = calibrate(frames[:12], GEOM, T_cp, heldout=frames[12:])
    assert report.n_frames == 12 and report.n_correspondences == 36
    assert np.linalg.norm(report.matrix.t - GT.t) < 0.1
    assert report.error_mean < 0.05


def test_calibrate_drops_bad_frames(caplog):
    T_cp = RigidTransform.from_translation((0, 0, 500))
    frames = _heldout(_fan(12), T_cp)
    blank = (USFrame(np.zeros((512, 512), dtype=np.uint8), SPACING, 99), frames[0][1])
    report = calibrate(frames + [blank], GEOM, T_cp)
    assert report.n_frames == 12
    assert any("rejected" in r.message for r in caplog.records)
