"""Synthetic B-mode frames from wire or cube-edge crossings of the image plane.

Image coordinate system: origin at the top-left pixel center, u to the right,
v downward, image plane at z = 0. Pixel ``(u, v)`` sits at ``(sx * u, sy * v, 0)``
mm in image coordinates, matching the homogeneous convention of the
calibration matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateIntersection
from .geom import RigidTransform
from .scene import CubeEdgeModel, NWireGeometry

MIN_CROSSING_ANGLE_DEG = 1.0
DEFAULT_SPACING = (0.1, 0.1)
DEFAULT_IMAGE_SIZE = (512, 512)


@dataclass(frozen=True)
class Spot:
    pixel: tuple[float, float]
    wire_id: int
    point: tuple[float, float, float]  # crossing point in the source frame, mm
    in_field: bool = True


@dataclass(frozen=True)
class SpeckleParams:
    mean: float = 20.0
    sigma: float = 10.0


@dataclass(frozen=True, eq=False)
class USFrame:
    pixels: np.ndarray  # (height, width) uint8
    spacing: tuple[float, float] = DEFAULT_SPACING
    frame_index: int = 0
    annotations: tuple[tuple[float, float, int], ...] = field(default=())

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.dtype != np.uint8:
            raise ValueError("US frame must be a 2-D uint8 image")
        if min(self.spacing) <= 0:
            raise ValueError("pixel spacing must be positive")
        h, w = px.shape
        for u, v, _ in self.annotations:
            if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
                raise ValueError(f"annotation ({u}, {v}) outside the image")

    @property
    def size(self) -> tuple[int, int]:
        """``(width, height)`` in pixels."""
        return self.pixels.shape[1], self.pixels.shape[0]


def _segment_plane_crossings(segments: np.ndarray, ids, T_image_from_src: RigidTransform,
                             spacing, image_size, strict: bool) -> list[Spot]:
    sx, sy = spacing
    w, h = image_size
    sin_min = np.sin(np.radians(MIN_CROSSING_ANGLE_DEG))
    out = []
    for seg, sid in zip(segments, ids):
        a, b = T_image_from_src.apply(seg)
        d = b - a
        if abs(d[2]) < sin_min * np.linalg.norm(d):
            if strict:
                raise DegenerateIntersection(f"image plane nearly parallel to wire {sid}")
            continue
        s = -a[2] / d[2]
        p_img = a + s * d
        u, v = p_img[0] / sx, p_img[1] / sy
        in_field = (0.0 <= s <= 1.0) and (0.0 <= u <= w - 1) and (0.0 <= v <= h - 1)
        p_src = seg[0] + s * (seg[1] - seg[0])
        out.append(Spot((float(u), float(v)), int(sid), tuple(float(x) for x in p_src), in_field))
    return out


def intersect_wires(geom: NWireGeometry, T_image_from_phantom: RigidTransform,
                    spacing=DEFAULT_SPACING, image_size=DEFAULT_IMAGE_SIZE) -> list[Spot]:
    """Crossings of all nine (infinite) wires with the image plane.

    Every wire yields a spot; crossings off the wire segment or outside the
    image have ``in_field=False``. Raises ``DegenerateIntersection`` when the
    plane is within 1 degree of parallel to any wire.
    """
    return _segment_plane_crossings(geom.segments(), range(9), T_image_from_phantom,
                                    spacing, image_size, strict=True)


def intersect_cube_edges(model: CubeEdgeModel, T_image_from_cube: RigidTransform,
                         spacing=DEFAULT_SPACING, image_size=DEFAULT_IMAGE_SIZE) -> list[Spot]:
    """In-field crossings of the model's edges with the image plane.

    Edges running (nearly) parallel to the plane are skipped rather than
    raising, since most sweep planes are parallel to some cube edges.
    """
    hits = _segment_plane_crossings(model.edges, model.edge_ids, T_image_from_cube,
                                    spacing, image_size, strict=False)
    return [h for h in hits if h.in_field]


def visible(spots) -> list[Spot]:
    return [s for s in spots if s.in_field]


def render_us_frame(spots, image_size=DEFAULT_IMAGE_SIZE, spacing=DEFAULT_SPACING,
                    psf_sigma: float = 3.0, speckle: SpeckleParams | None = SpeckleParams(),
                    seed: int = 0, frame_index: int = 0) -> USFrame:
    """Gaussian blobs of peak 255 over a speckled background echo.

    The background is ``speckle.mean`` times a multiplicative uniform factor of
    mean 1 and standard deviation ``speckle.sigma / speckle.mean``.
    """
    if psf_sigma <= 0:
        raise ValueError("psf_sigma must be positive")
    w, h = image_size
    blobs = np.zeros((h, w))
    r = int(np.ceil(5 * psf_sigma))
    ann = []
    for spot in spots:
        if not spot.in_field:
            continue
        u, v = spot.pixel
        ann.append((float(u), float(v), int(spot.wire_id)))
        u0, u1 = max(int(u) - r, 0), min(int(u) + r + 1, w)
        v0, v1 = max(int(v) - r, 0), min(int(v) + r + 1, h)
        uu, vv = np.meshgrid(np.arange(u0, u1), np.arange(v0, v1))
        g = 255.0 * np.exp(-((uu - u) ** 2 + (vv - v) ** 2) / (2 * psf_sigma ** 2))
        np.maximum(blobs[v0:v1, u0:u1], g, out=blobs[v0:v1, u0:u1])
    img = blobs
    if speckle is not None and speckle.mean > 0:
        rng = np.random.default_rng(seed)
        half = np.sqrt(3.0) * speckle.sigma / speckle.mean
        factor = 1.0 + rng.uniform(-half, half, size=(h, w))
        img = blobs + speckle.mean * np.clip(factor, 0.0, None)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return USFrame(pixels, tuple(spacing), frame_index, tuple(ann))


def pixel_to_image_mm(pixels, spacing) -> np.ndarray:
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    return np.column_stack([px[:, 0] * spacing[0], px[:, 1] * spacing[1], np.zeros(len(px))])
