"""Synthetic depth camera: ray-cast z-depth maps of triangle meshes.

Depth is measured along the optical axis (z-depth), not along the ray. Each
pixel's ray goes from the camera center through the pixel center; the nearest
hit wins. Noise is drawn from one generator seeded per call, indexed by pixel,
so the map depends only on the inputs and the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMesh
from .geom import CameraIntrinsics, RigidTransform, unproject
from .scene import TriangleMesh

_EPS = 1e-12
_NEAR = 1.0  # mm; triangles closer than this fall back to a full-image scan


@dataclass(frozen=True)
class DepthNoiseModel:
    """Per-pixel Gaussian noise with sigma(z) = sigma0 + sigma1 * (z / 1000)**2."""

    sigma0: float = 0.5
    sigma1: float = 2.5
    dropout_rate: float = 0.01

    def __post_init__(self):
        if min(self.sigma0, self.sigma1, self.dropout_rate) < 0:
            raise ValueError("noise parameters must be non-negative")

    def sigma(self, z):
        return self.sigma0 + self.sigma1 * (np.asarray(z) / 1000.0) ** 2

    @classmethod
    def none(cls) -> DepthNoiseModel:
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class DepthMap:
    depths: np.ndarray  # (height, width), mm, 0 = no return
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=float)
        K = self.intrinsics
        if d.shape != (K.height, K.width):
            raise ValueError(f"depth map shape {d.shape} does not match intrinsics")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("depths must be finite and non-negative")
        object.__setattr__(self, "depths", d)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def depth_at(self, pixel) -> float:
        """Depth at a sub-pixel location, 0 when any neighbor has no return.

        Interpolates inverse depth bilinearly, which is exact on planes.
        """
        u, v = float(pixel[0]), float(pixel[1])
        u0, v0 = int(np.floor(u)), int(np.floor(v))
        if u0 < 0 or v0 < 0 or u0 + 1 >= self.width or v0 + 1 >= self.height:
            return 0.0
        patch = self.depths[v0:v0 + 2, u0:u0 + 2]
        if np.any(patch <= 0):
            return 0.0
        fu, fv = u - u0, v - v0
        w = np.array([[(1 - fu) * (1 - fv), fu * (1 - fv)], [(1 - fu) * fv, fu * fv]])
        return float(1.0 / np.sum(w / patch))


def _pixel_rays(K: CameraIntrinsics) -> np.ndarray:
    u = np.arange(K.width, dtype=float)
    v = np.arange(K.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    return np.stack([(uu - K.cx) / K.fx, (vv - K.cy) / K.fy, np.ones_like(uu)], axis=-1)


def raycast(mesh: TriangleMesh, T_cam_from_world: RigidTransform, K: CameraIntrinsics) -> np.ndarray:
    """Noiseless z-depth of the nearest hit per pixel (0 where nothing is hit)."""
    if len(mesh.triangles) == 0:
        raise EmptyMesh("cannot render an empty mesh")
    tri = T_cam_from_world.apply(mesh.vertices)[mesh.triangles]
    rays = _pixel_rays(K)
    zbuf = np.full((K.height, K.width), np.inf)

    for a, b, c in tri:
        zs = (a[2], b[2], c[2])
        if max(zs) <= _EPS:
            continue
        if min(zs) > _NEAR:
            uv = np.array([[K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy] for p in (a, b, c)])
            u0 = max(int(np.floor(uv[:, 0].min())), 0)
            u1 = min(int(np.ceil(uv[:, 0].max())), K.width - 1)
            v0 = max(int(np.floor(uv[:, 1].min())), 0)
            v1 = min(int(np.ceil(uv[:, 1].max())), K.height - 1)
            if u0 > u1 or v0 > v1:
                continue
        else:
            u0, u1, v0, v1 = 0, K.width - 1, 0, K.height - 1
        d = rays[v0:v1 + 1, u0:u1 + 1]
        # Moller-Trumbore with the ray origin at the camera center
        e1, e2 = b - a, c - a
        pvec = np.cross(d, e2)
        det = pvec @ e1
        ok = np.abs(det) > _EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = -a
        bu = (pvec @ s) * inv
        qvec = np.cross(s, e1)
        bv = (d @ qvec) * inv
        t = (qvec @ e2) * inv
        hit = ok & (bu >= 0) & (bv >= 0) & (bu + bv <= 1) & (t > _EPS)
        if not hit.any():
            continue
        view = zbuf[v0:v1 + 1, u0:u1 + 1]
        np.minimum(view, np.where(hit, t, np.inf), out=view)
    zbuf[~np.isfinite(zbuf)] = 0.0
    return zbuf


def render_depth(mesh: TriangleMesh | list[TriangleMesh], T_cam_from_world: RigidTransform,
                 K: CameraIntrinsics, noise: DepthNoiseModel = DepthNoiseModel(),
                 seed: int = 0) -> DepthMap:
    """Ray-cast a depth map and apply the noise model.

    ``mesh`` may be a list of meshes sharing the same world frame; they occlude
    one another.
    """
    meshes = mesh if isinstance(mesh, (list, tuple)) else [mesh]
    if not meshes or all(len(m.triangles) == 0 for m in meshes):
        raise EmptyMesh("cannot render an empty mesh")
    z = raycast(meshes[0], T_cam_from_world, K)
    for m in meshes[1:]:
        z = combine_depths(z, raycast(m, T_cam_from_world, K))
    return apply_noise(z, K, noise, seed)


def combine_depths(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Nearest return per pixel of two noiseless z-buffers (0 = no return)."""
    both = (a > 0) & (b > 0)
    return np.where(both, np.minimum(a, b), np.maximum(a, b))


def apply_noise(z: np.ndarray, K: CameraIntrinsics, noise: DepthNoiseModel = DepthNoiseModel(),
                seed: int = 0) -> DepthMap:
    """Add depth-dependent Gaussian noise and dropout to a noiseless z-buffer."""
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal(z.shape)
    drop = rng.random(z.shape) < noise.dropout_rate
    covered = z > 0
    noisy = np.where(covered, z + noise.sigma(z) * gauss, 0.0)
    noisy[drop | (noisy < 0)] = 0.0
    return DepthMap(noisy, K)


def to_point_cloud(depth: DepthMap) -> np.ndarray:
    """One camera-frame point per pixel with a return, as an ``(N, 3)`` array."""
    v, u = np.nonzero(depth.depths > 0)
    if len(u) == 0:
        return np.zeros((0, 3))
    pix = np.stack([u, v], axis=1).astype(float)
    return unproject(depth.intrinsics, pix, depth.depths[v, u])


def crop_roi(cloud: np.ndarray, center, radius: float) -> np.ndarray:
    """Points within ``radius`` of ``center`` (boundary included)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    keep = np.linalg.norm(cloud - np.asarray(center, dtype=float), axis=1) <= radius
    return cloud[keep]
