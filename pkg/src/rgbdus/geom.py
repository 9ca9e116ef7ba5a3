"""Coordinate algebra: rigid transforms, pinhole camera, pose differences.

Conventions used throughout the package:

* lengths in millimeters, angles in degrees at every reporting interface and
  radians internally;
* a transform named ``T_a_from_b`` maps coordinates expressed in frame ``b``
  into frame ``a``, so ``compose(T_a_from_b, T_b_from_c)`` is ``T_a_from_c``;
* Euler angles are reported for the intrinsic Z-Y-X sequence
  ``R = Rz(gamma) @ Ry(beta) @ Rx(alpha)`` as the triple ``(alpha, beta, gamma)``,
  i.e. the angles about x, y and z in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth

ORTHO_TOL = 1e-9
_DRIFT_TOL = 1e-12
_GIMBAL_TOL = 1e-6


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor of ``M`` with determinant forced to +1."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


def rotation_error(R: np.ndarray) -> float:
    """Max deviation of ``R`` from a proper rotation (orthonormality and det)."""
    R = np.asarray(R, dtype=float)
    return max(float(np.abs(R.T @ R - np.eye(3)).max()), abs(float(np.linalg.det(R)) - 1.0))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``x -> R @ x + t`` (t in mm)."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform must be finite")
        if rotation_error(R) > ORTHO_TOL:
            raise ValueError(f"not a proper rotation (error {rotation_error(R):.3g})")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_translation(cls, t) -> RigidTransform:
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> RigidTransform:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def apply(self, points) -> np.ndarray:
        """Transform a 3-vector or an ``(N, 3)`` array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.t

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.R.T

    def inverse(self) -> RigidTransform:
        return invert(self)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.R, other.R, atol=atol) and np.allclose(self.t, other.t, atol=atol))

    def __repr__(self) -> str:
        return f"RigidTransform(R={self.R.tolist()}, t={self.t.tolist()})"


def compose(T_a_from_b: RigidTransform, T_b_from_c: RigidTransform) -> RigidTransform:
    """Chain two transforms sharing frame ``b``; returns ``T_a_from_c``.

    The shared middle frame is a naming convention and is not checked.
    """
    R = T_a_from_b.R @ T_b_from_c.R
    t = T_a_from_b.R @ T_b_from_c.t + T_a_from_b.t
    if float(np.abs(R.T @ R - np.eye(3)).max()) > _DRIFT_TOL:
        R = nearest_rotation(R)
    return RigidTransform(R, t)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.R.T
    return RigidTransform(Rt, -Rt @ T.t)


# -- rotations ---------------------------------------------------------------

def rot_x(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(angles_deg) -> np.ndarray:
    """``Rz(gamma) @ Ry(beta) @ Rx(alpha)`` for ``angles_deg = (alpha, beta, gamma)``."""
    ax, ay, az = angles_deg
    return rot_z(az) @ rot_y(ay) @ rot_x(ax)


def euler_from_rotation(R: np.ndarray) -> tuple[np.ndarray, bool]:
    """Inverse of :func:`rotation_from_euler`.

    Returns ``((alpha, beta, gamma) in degrees, gimbal_lock)``. At gimbal lock
    (beta within 1e-6 rad of +-90 deg) alpha is set to 0 and gamma absorbs the
    remaining rotation.
    """
    R = np.asarray(R, dtype=float)
    sb = -R[2, 0]
    sb = min(1.0, max(-1.0, sb))
    beta = np.arcsin(sb)
    locked = abs(abs(beta) - np.pi / 2) < _GIMBAL_TOL
    if locked:
        alpha = 0.0
        gamma = np.arctan2(-R[0, 1], R[1, 1])
    else:
        alpha = np.arctan2(R[2, 1], R[2, 2])
        gamma = np.arctan2(R[1, 0], R[0, 0])
    angles = np.degrees([alpha, beta, gamma])
    # report in (-180, 180]
    angles = np.where(angles <= -180.0, angles + 360.0, angles)
    return angles, bool(locked)


def rotation_from_rotvec(rv) -> np.ndarray:
    """Rodrigues formula; ``rv`` is axis * angle in radians."""
    rv = np.asarray(rv, dtype=float)
    theta = float(np.linalg.norm(rv))
    if theta < 1e-12:
        K = _skew(rv)
        return np.eye(3) + K + 0.5 * K @ K
    k = rv / theta
    K = _skew(k)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * K @ K


def rotation_angle_deg(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, degrees."""
    R = np.asarray(R, dtype=float)
    # atan2 keeps full precision near 0 where arccos(trace) loses half the digits
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.degrees(np.arctan2(s, c)))


def _skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def look_at(eye, target, up) -> RigidTransform:
    """``T_world_from_cam`` for a camera at ``eye`` whose optical axis (+z)
    points to ``target`` with image-down (+y) roughly along ``-up``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=float)
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidTransform(np.column_stack([x, y, z]), eye)


def random_transform(rng: np.random.Generator, max_translation: float = 100.0,
                     max_angle_deg: float = 180.0) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, max_angle_deg))
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(rotation_from_rotvec(axis * angle), t)


# -- camera ------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def project(K: CameraIntrinsics, p_cam) -> np.ndarray:
    """Pinhole projection of a point (or ``(N, 3)`` points) to pixels ``(u, v)``."""
    p = np.asarray(p_cam, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("point at or behind the camera plane")
    u = K.fx * p[..., 0] / z + K.cx
    v = K.fy * p[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def unproject(K: CameraIntrinsics, pixel, depth) -> np.ndarray:
    """Back-project pixel(s) at z-depth(s) ``depth`` to camera coordinates."""
    px = np.asarray(pixel, dtype=float)
    d = np.asarray(depth, dtype=float)
    if np.any(d <= 0):
        raise NonPositiveDepth("depth must be positive")
    x = (px[..., 0] - K.cx) / K.fx * d
    y = (px[..., 1] - K.cy) / K.fy * d
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


# -- pose comparison ---------------------------------------------------------

@dataclass(frozen=True)
class PoseOffset:
    center_offset: float
    euler_offsets: tuple[float, float, float]
    gimbal_lock: bool = False

    def __post_init__(self):
        if self.center_offset < 0:
            raise ValueError("center offset must be non-negative")


def pose_offset(T_gt: RigidTransform, T_est: RigidTransform) -> PoseOffset:
    """Translation distance and Euler decomposition of ``R_gt.T @ R_est``."""
    center = float(np.linalg.norm(T_gt.t - T_est.t))
    angles, locked = euler_from_rotation(T_gt.R.T @ T_est.R)
    return PoseOffset(center, tuple(float(a) for a in angles), locked)
