"""Augmented-reality compositing of a calibrated ultrasound frame into RGB video."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calib import CalibrationMatrix
from .errors import BehindCamera, DegenerateQuad
from .geom import CameraIntrinsics, RigidTransform
from .ussim import USFrame

DEFAULT_OPACITY = 0.85


def _hot_table() -> np.ndarray:
    x = np.arange(256) / 255.0
    r = np.clip(x / 0.365079, 0.0, 1.0)
    g = np.clip((x - 0.365079) / 0.380953, 0.0, 1.0)
    b = np.clip((x - 0.746032) / 0.253968, 0.0, 1.0)
    return np.rint(255.0 * np.column_stack([r, g, b])).astype(np.uint8)


COLORMAPS = {
    "hot": _hot_table(),  # black -> red -> yellow -> white
    "gray": np.repeat(np.arange(256, dtype=np.uint8)[:, None], 3, axis=1),
}
for _lut in COLORMAPS.values():
    _lut.setflags(write=False)


@dataclass(frozen=True, eq=False)
class RgbFrame:
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError("RGB frame must be an (H, W, 3) uint8 array")

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[0]

    @classmethod
    def blank(cls, K: CameraIntrinsics, value: int = 0) -> RgbFrame:
        return cls(np.full((K.height, K.width, 3), value, dtype=np.uint8))

    def check_intrinsics(self, K: CameraIntrinsics) -> None:
        if self.size != (K.width, K.height):
            raise ValueError(f"frame size {self.size} does not match intrinsics ({K.width}, {K.height})")


def image_quad(matrix: CalibrationMatrix, T_cam_from_marker: RigidTransform, K: CameraIntrinsics,
               us_size) -> np.ndarray:
    """Projected pixels of the ultrasound frame corners, ``(4, 2)``.

    Corners run ``(0, 0), (W, 0), (W, H), (0, H)`` in ultrasound pixels.
    """
    W, H = us_size
    corners = np.array([[0.0, 0.0], [W, 0.0], [W, H], [0.0, H]])
    p = T_cam_from_marker.apply(matrix.map(corners))
    if np.any(p[:, 2] <= 0):
        raise BehindCamera("ultrasound image is not in front of the camera")
    return np.column_stack([K.fx * p[:, 0] / p[:, 2] + K.cx, K.fy * p[:, 1] / p[:, 2] + K.cy])


def homography(src, dst) -> np.ndarray:
    """3x3 projective map taking four ``src`` points onto ``dst`` (DLT)."""
    src, dst = np.asarray(src, dtype=float), np.asarray(dst, dtype=float)
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.array(rows))
    Hm = vt[-1].reshape(3, 3)
    return Hm / Hm[2, 2]


def _check_quad(quad: np.ndarray) -> None:
    span = float(np.ptp(quad, axis=0).max())
    if not np.all(np.isfinite(quad)) or span == 0.0:
        raise DegenerateQuad("quad has no extent")
    crosses = []
    for i in range(4):
        a, b, c = quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]
        e1, e2 = b - a, c - b
        crosses.append(e1[0] * e2[1] - e1[1] * e2[0])
    crosses = np.array(crosses)
    if np.any(np.abs(crosses) <= 1e-9 * span * span):
        raise DegenerateQuad("three quad corners are collinear")
    if not (np.all(crosses > 0) or np.all(crosses < 0)):
        raise DegenerateQuad("quad is not convex")


def composite(rgb: RgbFrame, us: USFrame, quad, colormap: str = "hot",
              opacity: float = DEFAULT_OPACITY) -> RgbFrame:
    """Blend the color-mapped ultrasound frame into ``rgb`` over ``quad``.

    Every RGB pixel inside the quad is mapped back through the inverse
    homography and takes its nearest ultrasound pixel.
    """
    if not 0.0 <= opacity <= 1.0:
        raise ValueError("opacity must be in [0, 1]")
    if colormap not in COLORMAPS:
        raise ValueError(f"unknown colormap {colormap!r}")
    quad = np.asarray(quad, dtype=float).reshape(4, 2)
    _check_quad(quad)
    out = np.array(rgb.pixels, copy=True)
    if opacity == 0.0:
        return RgbFrame(out)
    W, H = us.size
    Hinv = np.linalg.inv(homography([[0, 0], [W, 0], [W, H], [0, H]], quad))
    h, w = out.shape[:2]
    x0, y0 = np.floor(quad.min(axis=0)).astype(int)
    x1, y1 = np.ceil(quad.max(axis=0)).astype(int)
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w - 1), min(y1, h - 1)
    if x0 > x1 or y0 > y1:
        return RgbFrame(out)
    xx, yy = np.meshgrid(np.arange(x0, x1 + 1, dtype=float), np.arange(y0, y1 + 1, dtype=float))
    q = Hinv @ np.stack([xx.ravel(), yy.ravel(), np.ones(xx.size)])
    u = np.floor(q[0] / q[2] + 1e-9).astype(int)
    v = np.floor(q[1] / q[2] + 1e-9).astype(int)
    inside = (u >= 0) & (u < W) & (v >= 0) & (v < H)
    color = COLORMAPS[colormap][us.pixels[v[inside], u[inside]]].astype(float)
    xi = xx.ravel()[inside].astype(int)
    yi = yy.ravel()[inside].astype(int)
    base = out[yi, xi].astype(float)
    out[yi, xi] = np.clip(np.rint((1.0 - opacity) * base + opacity * color), 0, 255).astype(np.uint8)
    return RgbFrame(out)
