import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rgbdus.errors import NonPositiveDepth
from rgbdus.geom import (
    CameraIntrinsics,
    RigidTransform,
    compose,
    euler_from_rotation,
    invert,
    pose_offset,
    project,
    random_transform,
    rot_z,
    rotation_from_euler,
    unproject,
)

seeds = st.integers(0, 2**32 - 1)


def _T(seed):
    return random_transform(np.random.default_rng(seed), 200.0)


def test_identity_compose():
    T = _T(1)
    assert compose(RigidTransform(), T).allclose(T, 0)


def test_compose_inverse_is_identity():
    T = _T(2)
    I = compose(T, invert(T))
    assert np.abs(I.R - np.eye(3)).max() < 1e-12 and np.abs(I.t).max() < 1e-12


def test_compose_hand_example():
    A = RigidTransform(rot_z(90), (1, 0, 0))
    B = RigidTransform(rot_z(90))
    # right operand acts first: B maps (1,0,0) to (0,1,0), then A gives (-1,0,0) + (1,0,0)
    np.testing.assert_allclose(compose(A, B).apply((1.0, 0.0, 0.0)), (0.0, 0.0, 0.0), atol=1e-12)
    # the opposite chain order lands on (-1, 1, 0)
    np.testing.assert_allclose(compose(B, A).apply((1.0, 0.0, 0.0)), (-1.0, 1.0, 0.0), atol=1e-12)


def test_invert_translation():
    T = invert(RigidTransform.from_translation((1, 2, 3)))
    np.testing.assert_array_equal(T.t, (-1, -2, -3))
    assert invert(RigidTransform()).allclose(RigidTransform(), 0)


@given(seeds)
def test_double_inverse(seed):
    T = _T(seed)
    assert invert(invert(T)).allclose(T, 1e-12)


@given(seeds, seeds, seeds)
def test_compose_associative(a, b, c):
    A, B, C = _T(a), _T(b), _T(c)
    assert ((A @ B) @ C).allclose(A @ (B @ C), 1e-10)


def test_rejects_improper_rotation():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))


def test_project_examples(K600):
    np.testing.assert_allclose(project(K600, (0, 0, 500)), (320, 240))
    np.testing.assert_allclose(project(K600, (100, 0, 500)), (440, 240))
    with pytest.raises(NonPositiveDepth):
        project(K600, (0, 0, -1))


def test_unproject_examples(K600):
    np.testing.assert_allclose(unproject(K600, (320, 240), 500), (0, 0, 500))
    np.testing.assert_allclose(unproject(K600, (440, 240), 500), (100, 0, 500))
    with pytest.raises(NonPositiveDepth):
        unproject(K600, (1, 1), 0.0)


def test_project_unproject_round_trip_1000(K600, rng):
    px = rng.uniform((0, 0), (640, 480), size=(1000, 2))
    d = rng.uniform(100, 2000, size=1000)
    back = project(K600, unproject(K600, px, d))
    assert np.abs(back - px).max() < 1e-9
    p = unproject(K600, px, d)
    assert np.abs(unproject(K600, project(K600, p), p[:, 2]) - p).max() < 1e-9


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 1, 1, 1, 10, 10)
    with pytest.raises(ValueError):
        CameraIntrinsics(1, 1, 10, 1, 10, 10)


def test_pose_offset_examples():
    T = _T(5)
    off = pose_offset(T, T)
    assert off.center_offset == 0 and np.allclose(off.euler_offsets, 0, atol=1e-9)
    moved = RigidTransform(T.R, T.t + (3, 4, 0))
    assert pose_offset(T, moved).center_offset == pytest.approx(5.0, abs=1e-12)
    rot = T @ RigidTransform(rot_z(4.2))
    np.testing.assert_allclose(pose_offset(T, rot).euler_offsets, (0, 0, 4.2), atol=1e-9)


@given(st.floats(-170, 170), st.floats(-85, 85), st.floats(-170, 170), seeds)
def test_pose_offset_recovers_injected_euler(a, b, c, seed):
    T = _T(seed)
    E = RigidTransform(rotation_from_euler((a, b, c)))
    got = pose_offset(T, T @ E).euler_offsets
    assert np.abs(np.array(got) - (a, b, c)).max() < 1e-9


def test_euler_gimbal_flag():
    _, locked = euler_from_rotation(rotation_from_euler((10, 90, 20)))
    assert locked
    angles, locked = euler_from_rotation(rotation_from_euler((10, 30, 20)))
    assert not locked and np.allclose(angles, (10, 30, 20))
