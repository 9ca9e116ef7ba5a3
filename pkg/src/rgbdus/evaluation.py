"""Cube localization accuracy: board ground truth, edge points, ICP report."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calib import CalibrationMatrix
from .depthsim import DepthMap
from .errors import TooFewDetections
from .geom import CameraIntrinsics, RigidTransform, pose_offset, project, unproject
from .register import IcpParams, SurfaceModel, icp, umeyama_fit
from .scene import CubeEdgeModel


@dataclass(frozen=True, eq=False)
class BoardModel:
    """Planar marker board; corners in world coordinates (board center = origin, z = 0)."""

    corners: np.ndarray  # (N, 3)
    cube_pose_in_world: RigidTransform = RigidTransform()

    def __post_init__(self):
        c = np.array(self.corners, dtype=float).reshape(-1, 3)
        if len(c) < 3:
            raise ValueError("board needs at least 3 corners")
        if np.abs(c[:, 2]).max() > 1e-12:
            raise ValueError("board corners must lie in the z = 0 plane")
        if np.linalg.matrix_rank(c[:, :2] - c[0, :2], tol=1e-9) < 2:
            raise ValueError("board corners are collinear")
        c.setflags(write=False)
        object.__setattr__(self, "corners", c)

    @classmethod
    def grid(cls, size: float, n: int, cube_pose_in_world: RigidTransform = RigidTransform()) -> BoardModel:
        """``n x n`` corners evenly covering a square board of side ``size``."""
        s = np.linspace(-0.45 * size, 0.45 * size, n)
        xx, yy = np.meshgrid(s, s)
        corners = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(n * n)])
        return cls(corners, cube_pose_in_world)


@dataclass(frozen=True)
class CubeEvalReport:
    icp_residue: float  # mean distance, mm
    center_offset: float
    euler_offsets: tuple[float, float, float]  # degrees
    n_points: int

    def __post_init__(self):
        if self.icp_residue < 0 or self.center_offset < 0:
            raise ValueError("residue and offset must be non-negative")

    def to_dict(self) -> dict:
        return {"icp_residue": self.icp_residue, "center_offset": self.center_offset,
                "euler_offsets": list(self.euler_offsets), "n_points": self.n_points}


def simulate_corner_detections(board: BoardModel, T_cam_from_world: RigidTransform, K: CameraIntrinsics,
                               z_clean: np.ndarray | None = None, pixel_noise: float = 0.0,
                               rng: np.random.Generator | None = None, occlusion_tol: float = 2.0):
    """Stand-in for a corner detector: project every corner and add pixel noise.

    Corners outside the image, or hidden behind other geometry according to the
    noiseless z-buffer ``z_clean``, are not detected.
    """
    pts = T_cam_from_world.apply(board.corners)
    out = []
    for i, p in enumerate(pts):
        if p[2] <= 0:
            continue
        uv = project(K, p)
        if not (0 <= uv[0] <= K.width - 1 and 0 <= uv[1] <= K.height - 1):
            continue
        if z_clean is not None:
            z = z_clean[int(round(uv[1])), int(round(uv[0]))]
            if z <= 0 or abs(z - p[2]) > occlusion_tol:
                continue
        if pixel_noise > 0:
            uv = uv + (rng if rng is not None else np.random.default_rng()).normal(0.0, pixel_noise, 2)
        out.append((i, uv))
    return out


def board_pose_from_detections(board: BoardModel, detections, depth: DepthMap) -> RigidTransform:
    """``T_cam_from_world`` from detected corner pixels and the depth map."""
    world, cam = [], []
    for corner_id, pixel in detections:
        z = depth.depth_at(pixel)
        if z <= 0:
            continue
        world.append(board.corners[corner_id])
        cam.append(unproject(depth.intrinsics, np.asarray(pixel, dtype=float), z))
    if len(world) < 3:
        raise TooFewDetections(f"need 3 corners with depth, got {len(world)}")
    return umeyama_fit(np.array(world), np.array(cam))


def collect_edge_points(frames, matrix: CalibrationMatrix) -> np.ndarray:
    """Map segmented pixels into camera coordinates.

    ``frames`` holds ``(pixels, T_cam_from_marker)`` pairs, ``pixels`` being an
    ``(n, 2)`` array of spot centroids.
    """
    out = [np.zeros((0, 3))]
    for pixels, T_cam_from_marker in frames:
        px = np.asarray(pixels, dtype=float).reshape(-1, 2)
        if len(px):
            out.append(T_cam_from_marker.apply(matrix.map(px)))
    return np.vstack(out)


def evaluate_cube(points, model: CubeEdgeModel, T_cam_from_world_gt: RigidTransform,
                  cube_pose_in_world: RigidTransform, icp_params: IcpParams = IcpParams(),
                  step: float = 0.5) -> CubeEvalReport:
    """Fit the ground-truth edges to the localized points and compare poses.

    The edges, placed by the board-derived camera pose, are sampled every
    ``step`` mm and moved onto the points by ICP from identity; the offsets
    compare that fitted cube pose with the ground-truth one.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    T_cam_from_cube = T_cam_from_world_gt @ cube_pose_in_world
    segs = T_cam_from_cube.apply(model.edges.reshape(-1, 3)).reshape(model.edges.shape)
    surface = SurfaceModel.from_segments(segs, step)
    result = icp(surface, points, RigidTransform(), icp_params)
    fitted = result.pose @ T_cam_from_cube
    off = pose_offset(T_cam_from_cube, fitted)
    return CubeEvalReport(result.mean_residue, off.center_offset, off.euler_offsets, int(len(points)))

