import numpy as np
import pytest

from helpers import SIZE, SPACING, perpendicular_plane, tilted_plane
from rgbdus.calib import CalibrationMatrix, segment_spots
from rgbdus.errors import DegenerateIntersection
from rgbdus.geom import RigidTransform, rotation_from_euler
from rgbdus.scene import make_cube_edges, make_nwire_geometry, middle_point_on_diagonal
from rgbdus.ussim import (
    SpeckleParams,
    Spot,
    USFrame,
    intersect_cube_edges,
    intersect_wires,
    pixel_to_image_mm,
    render_us_frame,
    visible,
)

GEOM = make_nwire_geometry()


def test_perpendicular_plane_hits():
    spots = intersect_wires(GEOM, perpendicular_plane(20.0).inverse(), SPACING, SIZE)
    assert len(visible(spots)) == 9
    diag0 = next(s for s in spots if s.wire_id == 1)
    np.testing.assert_allclose(diag0.point, (20, 20, 15), atol=1e-12)
    np.testing.assert_allclose(diag0.point, middle_point_on_diagonal(GEOM, 0, 0.5), atol=1e-12)


def test_parallel_plane_degenerate():
    R = np.column_stack([(1.0, 0, 0), (0, 0, 1.0), (0, -1.0, 0)])  # image plane contains x
    with pytest.raises(DegenerateIntersection):
        intersect_wires(GEOM, RigidTransform(R, (0, 20, 0)).inverse())


def test_out_of_field_plane():
    spots = intersect_wires(GEOM, perpendicular_plane(-5.0).inverse(), SPACING, SIZE)
    assert len(spots) == 9 and not any(s.in_field for s in spots)


def test_loop_closure_through_ground_truth_matrix():
    T_marker_from_image = RigidTransform(rotation_from_euler((4, -6, 9)), (25, -80, 8))
    gt = CalibrationMatrix.from_parts(SPACING[0], SPACING[1], T_marker_from_image.R, T_marker_from_image.t)
    T_pi = tilted_plane(17.0, (5, -8, 10))
    T_phantom_from_marker = T_pi @ T_marker_from_image.inverse()
    for s in intersect_wires(GEOM, T_pi.inverse(), SPACING, SIZE):
        p = T_phantom_from_marker.apply(gt.map(np.array(s.pixel))[0])
        assert np.linalg.norm(p - np.array(s.point)) < 1e-9


def _blob_spot(u, v, wid=0):
    return Spot((u, v), wid, (0.0, 0.0, 0.0))


def test_single_spot_maximum_at_center():
    f = render_us_frame([_blob_spot(255.0, 255.0)], speckle=None)
    assert np.unravel_index(np.argmax(f.pixels), f.pixels.shape) == (255, 255)
    assert (f.pixels == f.pixels.max()).sum() == 1


def test_close_spots_merge():
    f = render_us_frame([_blob_spot(200.0, 200.0), _blob_spot(201.0, 200.0, 1)], speckle=None)
    assert len(segment_spots(f)) == 1


def test_annotations_are_blob_centroids():
    spots = intersect_wires(GEOM, tilted_plane(13.0, (3, 4, -6)).inverse(), SPACING, SIZE)
    f = render_us_frame(spots, SIZE, SPACING, 3.0, None)
    found = segment_spots(f)
    ann = np.array([a[:2] for a in f.annotations])
    d = np.linalg.norm(found[:, None] - ann[None], axis=2).min(axis=0)
    assert len(found) == 9 and d.max() < 0.25


def test_speckle_segmentation_closed_loop():
    spots = intersect_wires(GEOM, perpendicular_plane(22.0).inverse(), SPACING, SIZE)
    f = render_us_frame(spots, SIZE, SPACING, 3.0, SpeckleParams(20, 10), seed=3)
    found = segment_spots(f)
    ann = np.array([a[:2] for a in f.annotations])
    assert len(found) == 9
    assert np.linalg.norm(found[:, None] - ann[None], axis=2).min(axis=0).max() < 0.5


def test_render_deterministic():
    spots = [_blob_spot(100.5, 80.25)]
    a = render_us_frame(spots, seed=4).pixels
    assert a.tobytes() == render_us_frame(spots, seed=4).pixels.tobytes()


def test_usframe_validation():
    with pytest.raises(ValueError):
        USFrame(np.zeros((4, 4), dtype=np.uint8), (0.0, 0.1))
    with pytest.raises(ValueError):
        USFrame(np.zeros((4, 4), dtype=np.uint8), annotations=((5.0, 1.0, 0),))


# cube edges -----------------------------------------------------------------------

def _cube_plane(x):
    """Plane x = const in cube CS, u along +y, v along -z, top row 5 mm above the top face."""
    R = np.column_stack([(0.0, 1.0, 0.0), (0.0, 0.0, -1.0), (-1.0, 0.0, 0.0)])
    return RigidTransform(R, (x, -25.55, 30.0))


def test_cube_edge_single_hit():
    model = make_cube_edges(50, (1,))  # runs along y, parallel to the plane
    hits = intersect_cube_edges(make_cube_edges(50, (0,)), _cube_plane(0.0).inverse(), SPACING, SIZE)
    assert len(hits) == 1
    # edge 0 runs from (-25,-25,25) to (25,-25,25); plane x=0 crosses it at (0,-25,25)
    u, v = hits[0].pixel
    np.testing.assert_allclose((u * 0.1, v * 0.1), (0.55, 5.0), atol=1e-9)
    assert intersect_cube_edges(model, _cube_plane(0.0).inverse(), SPACING, SIZE) == []


def test_cube_plane_missing():
    T = RigidTransform.from_translation((500.0, 0, 0)) @ _cube_plane(0.0)
    assert intersect_cube_edges(make_cube_edges(50, range(12)), T.inverse(), SPACING, SIZE) == []


def test_cube_edge_sweep_points_on_edge():
    model = make_cube_edges(50, (0,))
    a, b = model.edges[0]
    for x in np.linspace(-24, 24, 50):
        T_ci = _cube_plane(x)
        hits = intersect_cube_edges(model, T_ci.inverse(), SPACING, SIZE)
        assert len(hits) == 1
        p = T_ci.apply(pixel_to_image_mm([hits[0].pixel], SPACING)[0])
        d = b - a
        off = np.linalg.norm(np.cross(p - a, d)) / np.linalg.norm(d)
        assert off < 1e-9
