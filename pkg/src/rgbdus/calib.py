"""N-wire probe calibration: spots -> wire labels -> correspondences -> matrix.

The calibration matrix ``A`` maps homogeneous pixels ``[u, v, 1]`` to marker
coordinates (mm). Its model has two pixel scales and a rigid pose and no
shear: ``A = [sx * R[:, 0], sy * R[:, 1], t]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from .errors import (
    DegeneratePixelConfiguration,
    IllConditioned,
    MatchFailed,
    RgbdUsError,
    TooFewCorrespondences,
)
from .geom import RigidTransform, nearest_rotation, rotation_angle_deg, rotation_from_rotvec
from .scene import BACK, DIAGONAL, FRONT, NWireGeometry, middle_point_on_diagonal, wire_id
from .ussim import USFrame

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CalibrationMatrix:
    A: np.ndarray
    sx: float
    sy: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0):
            raise ValueError("pixel scales must be positive")
        RigidTransform(self.R, self.t)  # validates the rotation
        for name in ("A", "R", "t"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.consistency_error() > 1e-9:
            raise ValueError("matrix does not match its decomposition")

    @classmethod
    def from_parts(cls, sx: float, sy: float, R, t) -> CalibrationMatrix:
        R = np.asarray(R, dtype=float)
        t = np.asarray(t, dtype=float)
        A = np.column_stack([sx * R[:, 0], sy * R[:, 1], t])
        return cls(A, float(sx), float(sy), R, t)

    @classmethod
    def from_affine(cls, A) -> CalibrationMatrix:
        """Nearest shear-free matrix: scales from the column norms, rotation by
        orthogonal polar projection."""
        A = np.asarray(A, dtype=float)
        c1, c2 = A[:, 0], A[:, 1]
        sx, sy = float(np.linalg.norm(c1)), float(np.linalg.norm(c2))
        if sx == 0.0 or sy == 0.0:
            raise DegeneratePixelConfiguration("a pixel axis maps to a single point")
        R = nearest_rotation(np.column_stack([c1 / sx, c2 / sy, np.cross(c1, c2) / (sx * sy)]))
        return cls.from_parts(sx, sy, R, A[:, 2])

    @property
    def T_marker_from_image(self) -> RigidTransform:
        """Rigid part: image-plane mm (``z = 0``) to marker mm."""
        return RigidTransform(self.R, self.t)

    def consistency_error(self) -> float:
        """Largest deviation of ``A`` from its decomposition."""
        rebuilt = np.column_stack([self.sx * self.R[:, 0], self.sy * self.R[:, 1], self.t])
        return float(np.abs(rebuilt - self.A).max())

    def map(self, pixels) -> np.ndarray:
        """Pixels ``(N, 2)`` to marker coordinates ``(N, 3)``."""
        px = np.asarray(pixels, dtype=float).reshape(-1, 2)
        return px @ self.A[:, :2].T + self.A[:, 2]

    def translated(self, offset) -> CalibrationMatrix:
        return CalibrationMatrix.from_parts(self.sx, self.sy, self.R, self.t + np.asarray(offset, dtype=float))


# -- segmentation and matching -------------------------------------------------------

@dataclass(frozen=True)
class SegmentationParams:
    threshold: int = 128
    min_blob_px: int = 4
    max_blob_px: int = 4000


def segment_spots(frame: USFrame, params: SegmentationParams = SegmentationParams()) -> np.ndarray:
    """Threshold, label 8-connected blobs, filter by size, return intensity-
    weighted centroids as an ``(N, 2)`` array of ``(u, v)``."""
    img = np.asarray(frame.pixels, dtype=float)
    mask = img >= params.threshold
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros((0, 2))
    index = np.arange(1, n + 1)
    sizes = ndimage.sum_labels(mask, labels, index)
    good = index[(sizes >= params.min_blob_px) & (sizes <= params.max_blob_px)]
    if len(good) == 0:
        return np.zeros((0, 2))
    rc = np.array(ndimage.center_of_mass(img, labels, good), dtype=float).reshape(-1, 2)
    return rc[:, ::-1].copy()


@dataclass(frozen=True, eq=False)
class LabeledSpots:
    layers: tuple[np.ndarray, ...]  # per layer a (3, 2) array: front, middle, back pixels
    alphas: tuple[float, ...]

    def pixel(self, wid: int) -> np.ndarray:
        layer, position = divmod(wid, 3)
        return self.layers[layer][(FRONT, DIAGONAL, BACK).index(position)]

    def wire_pixels(self) -> list[tuple[int, np.ndarray]]:
        return [(wire_id(l, p), self.layers[l][p]) for l in range(len(self.layers)) for p in range(3)]


def match_nwires(spots, expected_layers: int = 3, front_is_left: bool = True,
                 collinearity_tol: float = 3.0) -> LabeledSpots:
    """Group nine spots into three wire layers and label them.

    Spots are sorted by depth (``v``) into triples; each triple is ordered by
    ``u`` and the middle spot is the diagonal wire. ``alpha`` is the pixel
    distance ratio front->middle over front->back.
    """
    pts = np.asarray(spots, dtype=float).reshape(-1, 2)
    n = 3 * expected_layers
    if len(pts) != n:
        raise MatchFailed(f"expected {n} spots, got {len(pts)}")
    pts = pts[np.argsort(pts[:, 1], kind="stable")]
    layers, alphas = [], []
    for i in range(expected_layers):
        tri = pts[3 * i:3 * i + 3]
        tri = tri[np.argsort(tri[:, 0], kind="stable")]
        if not front_is_left:
            tri = tri[::-1]
        a, b, c = tri
        ac = c - a
        length = float(np.linalg.norm(ac))
        if length == 0.0:
            raise MatchFailed("coincident side-wire spots")
        off_line = abs(ac[0] * (b - a)[1] - ac[1] * (b - a)[0]) / length
        if off_line > collinearity_tol:
            raise MatchFailed(f"layer {i} spots are not collinear ({off_line:.2f} px off)")
        alpha = float(np.linalg.norm(b - a) / length)
        if not 0.0 <= alpha <= 1.0:
            raise MatchFailed(f"alpha {alpha:.3f} outside [0, 1]")
        layers.append(tri.copy())
        alphas.append(alpha)
    return LabeledSpots(tuple(layers), tuple(alphas))


# -- correspondences and solve --------------------------------------------------

@dataclass(frozen=True)
class Correspondence:
    pixel: tuple[float, float]
    X_marker: tuple[float, float, float]
    frame_index: int = 0


def build_correspondences(labeled: LabeledSpots, geom: NWireGeometry,
                          T_cam_from_phantom: RigidTransform, T_cam_from_marker: RigidTransform,
                          frame_index: int = 0) -> list[Correspondence]:
    """Middle-wire pixels paired with their wire point in marker coordinates."""
    T_marker_from_phantom = T_cam_from_marker.inverse() @ T_cam_from_phantom
    out = []
    for layer, (tri, alpha) in enumerate(zip(labeled.layers, labeled.alphas)):
        X = T_marker_from_phantom.apply(middle_point_on_diagonal(geom, layer, alpha))
        out.append(Correspondence(tuple(float(x) for x in tri[1]), tuple(float(x) for x in X), frame_index))
    return out


def _design(corrs) -> tuple[np.ndarray, np.ndarray]:
    P = np.array([[c.pixel[0], c.pixel[1], 1.0] for c in corrs])
    X = np.array([c.X_marker for c in corrs], dtype=float)
    return P, X


def fit_residual(matrix: CalibrationMatrix, corrs) -> float:
    """Sum of squared mapping errors over the correspondences (mm^2)."""
    P, X = _design(corrs)
    return float(np.sum((P @ matrix.A.T - X) ** 2))


def solve_calibration(corrs) -> CalibrationMatrix:
    """Least-squares calibration matrix from pixel/marker correspondences.

    An unconstrained affine fit seeds the decomposition (pixel scales from the
    column norms, rotation by orthogonal polar projection); the no-shear model
    is then refined on the same objective.
    """
    corrs = list(corrs)
    if len(corrs) < 4:
        raise TooFewCorrespondences(f"need at least 4 correspondences, got {len(corrs)}")
    P, X = _design(corrs)
    uv = P[:, :2] - P[:, :2].mean(axis=0)
    sv = np.linalg.svd(uv, compute_uv=False)
    if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise DegeneratePixelConfiguration("pixels are collinear or coincident")
    if np.linalg.cond(P) >= 1e8:
        raise IllConditioned("design matrix is ill-conditioned")
    At, *_ = np.linalg.lstsq(P, X, rcond=None)
    init = CalibrationMatrix.from_affine(At.T)

    u, v = P[:, 0], P[:, 1]

    def unpack(x):
        R = rotation_from_rotvec(x[:3]) @ init.R
        return R, x[3], x[4], x[5:8]

    def residuals(x):
        R, sx, sy, t = unpack(x)
        pred = np.outer(sx * u, R[:, 0]) + np.outer(sy * v, R[:, 1]) + t
        return (pred - X).ravel()

    x0 = np.concatenate([np.zeros(3), [init.sx, init.sy], init.t])
    if np.max(np.abs(residuals(x0))) < 1e-12:
        return CalibrationMatrix.from_parts(init.sx, init.sy, init.R, init.t)
    sol = least_squares(residuals, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    R, sx, sy, t = unpack(sol.x)
    if sx <= 0 or sy <= 0:
        raise IllConditioned("fit produced a non-positive pixel scale")
    return CalibrationMatrix.from_parts(sx, sy, nearest_rotation(R), t)


# -- error metric and full pipeline ----------------------------------------------

def point_segment_distance(p, seg) -> float:
    a, b = np.asarray(seg[0], dtype=float), np.asarray(seg[1], dtype=float)
    d = b - a
    s = float(np.clip(np.dot(np.asarray(p) - a, d) / np.dot(d, d), 0.0, 1.0))
    return float(np.linalg.norm(np.asarray(p) - (a + s * d)))


def _sd(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1)) if len(x) > 1 else 0.0


def wire_distances(matrix: CalibrationMatrix, labeled: LabeledSpots, geom: NWireGeometry,
                   T_cam_from_phantom: RigidTransform, T_cam_from_marker: RigidTransform) -> np.ndarray:
    """Distance of every labeled spot, mapped into phantom space, to its wire."""
    T_phantom_from_marker = T_cam_from_phantom.inverse() @ T_cam_from_marker
    segs = geom.segments()
    out = []
    for wid, px in labeled.wire_pixels():
        p = T_phantom_from_marker.apply(matrix.map(px)[0])
        out.append(point_segment_distance(p, segs[wid]))
    return np.array(out)


def calibration_error(matrix: CalibrationMatrix, heldout, geom: NWireGeometry,
                      T_cam_from_phantom: RigidTransform,
                      seg_params: SegmentationParams = SegmentationParams(),
                      front_is_left: bool = True) -> tuple[float, float]:
    """Mean and standard deviation (mm) of wire distances over held-out frames.

    ``heldout`` is a sequence of ``(USFrame, T_cam_from_marker)``. Frames that
    fail segmentation or matching are skipped with a warning.
    """
    dists = []
    for frame, T_cam_from_marker in heldout:
        try:
            labeled = match_nwires(segment_spots(frame, seg_params), front_is_left=front_is_left)
        except RgbdUsError as exc:
            log.warning("held-out frame %d skipped: %s", frame.frame_index, exc)
            continue
        dists.extend(wire_distances(matrix, labeled, geom, T_cam_from_phantom, T_cam_from_marker))
    if not dists:
        raise MatchFailed("no usable held-out frame")
    return float(np.mean(dists)), _sd(dists)


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    matrix: CalibrationMatrix
    rms_fit: float
    n_frames: int
    n_correspondences: int
    error_mean: float = float("nan")
    error_sd: float = float("nan")


def pose_diversity_deg(poses) -> float:
    """Largest pairwise rotation angle among marker poses."""
    poses = list(poses)
    best = 0.0
    for i in range(len(poses)):
        for j in range(i + 1, len(poses)):
            best = max(best, rotation_angle_deg(poses[i].R.T @ poses[j].R))
    return best


def calibrate(frames, geom: NWireGeometry, T_cam_from_phantom: RigidTransform,
              seg_params: SegmentationParams = SegmentationParams(),
              front_is_left: bool = True, heldout=None) -> CalibrationReport:
    """Segment, match and solve over ``(USFrame, T_cam_from_marker)`` pairs.

    Frames whose matching fails are dropped whole.
    """
    corrs, used = [], []
    for frame, T_cam_from_marker in frames:
        try:
            labeled = match_nwires(segment_spots(frame, seg_params), front_is_left=front_is_left)
        except RgbdUsError as exc:
            log.warning("frame %d rejected: %s", frame.frame_index, exc)
            continue
        corrs.extend(build_correspondences(labeled, geom, T_cam_from_phantom, T_cam_from_marker,
                                           frame.frame_index))
        used.append(T_cam_from_marker)
    if len(used) < 10 or pose_diversity_deg(used) < 15.0:
        log.warning("weak acquisition: %d frames spanning %.1f deg (recommended >= 10 frames, >= 15 deg)",
                    len(used), pose_diversity_deg(used))
    matrix = solve_calibration(corrs)
    rms = float(np.sqrt(fit_residual(matrix, corrs) / len(corrs)))
    mean = sd = float("nan")
    if heldout is not None:
        mean, sd = calibration_error(matrix, heldout, geom, T_cam_from_phantom, seg_params, front_is_left)
    return CalibrationReport(matrix, rms, len(used), len(corrs), mean, sd)
