"""Rigid registration: paired-point fitting, ICP, model localization, tracking.

The tracker is a point-to-point ICP stand-in for a model-based depth tracker:
a CAD mesh goes in, a ``T_cam_from_model`` pose comes out per depth frame.

Correspondences run from each scene point to the model. When the model is a
:class:`SurfaceModel`, the nearest model samples only nominate candidate
triangles (or segments) and the correspondence is the exact closest point on
those primitives, so a coarse sampling does not bias the fit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy.spatial import cKDTree

from .depthsim import crop_roi
from .errors import DegenerateConfiguration, EmptyMesh, EmptyRoi, NoCorrespondences
from .geom import RigidTransform, rot_x, rot_y, rot_z, rotation_angle_deg, rotation_from_rotvec
from .scene import TriangleMesh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 100
    convergence_delta_rms: float = 1e-4
    max_correspondence_distance: float = 15.0
    model_downsample_spacing: float = 3.0
    scene_downsample_spacing: float = 0.0  # 0 keeps every scene point
    acceleration: str = "anderson"  # "anderson", "extrapolate" or "none"
    anderson_memory: int = 5

    def __post_init__(self):
        if self.acceleration not in ("anderson", "extrapolate", "none"):
            raise ValueError(f"unknown acceleration {self.acceleration!r}")
        if min(self.max_iterations, self.convergence_delta_rms,
               self.max_correspondence_distance, self.model_downsample_spacing) <= 0:
            raise ValueError("ICP parameters must be positive")


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    pose: RigidTransform  # T_cam_from_model
    rms_residue: float
    iterations: int
    converged: bool
    mean_residue: float = 0.0
    n_correspondences: int = 0
    rms_history: tuple[float, ...] = ()
    ambiguous: bool = False


# -- paired-point fit ------------------------------------------------------------

def umeyama_fit(src, dst) -> RigidTransform:
    """Least-squares rigid transform with ``T.apply(src) ~ dst`` (no scale).

    Raises ``DegenerateConfiguration`` for fewer than three pairs or for
    collinear / coincident point sets.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValueError("src and dst must be paired")
    if len(src) < 3:
        raise DegenerateConfiguration("need at least 3 point pairs")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    for x in (xs, xd):
        sv = np.linalg.svd(x, compute_uv=False)
        if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
            raise DegenerateConfiguration("points are collinear or coincident")
    U, _, Vt = np.linalg.svd(xd.T @ xs)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return RigidTransform(R, mu_d - R @ mu_s)


# -- closest points on primitives ------------------------------------------------

def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Row-wise closest point of ``p[i]`` on triangle ``(a[i], b[i], c[i])``."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    def safe(num, den):
        ok = np.abs(den) > 1e-300
        return np.where(ok, num / np.where(ok, den, 1.0), 0.0)[:, None]

    on_ab = a + safe(d1, d1 - d3) * ab
    on_ac = a + safe(d2, d2 - d6) * ac
    on_bc = b + safe(d4 - d3, (d4 - d3) + (d5 - d6)) * (c - b)
    denom = va + vb + vc
    inside = a + ab * safe(vb, denom) + ac * safe(vc, denom)
    conds = [
        ((d1 <= 0) & (d2 <= 0))[:, None],
        ((d3 >= 0) & (d4 <= d3))[:, None],
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0))[:, None],
        ((d6 >= 0) & (d5 <= d6))[:, None],
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0))[:, None],
        ((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0))[:, None],
    ]
    return np.select(conds, [a, b, on_ab, c, on_ac, on_bc], default=inside)


def closest_point_on_segments(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    t = np.einsum("ij,ij->i", p - a, d) / np.einsum("ij,ij->i", d, d)
    return a + np.clip(t, 0.0, 1.0)[:, None] * d


@dataclass(frozen=True, eq=False)
class SurfaceModel:
    """Sampled model points plus the primitives they were drawn from.

    ``primitives`` is ``(M, 3, 3)`` for triangles or ``(M, 2, 3)`` for
    segments. Closest-point queries are exact: a grid over the model's
    bounding box, padded by ``margin``, stores per cell every primitive that
    can be nearest to some point of that cell (those within the cell center's
    nearest distance plus one cell diagonal). Queries outside the grid scan
    all primitives.
    """

    points: np.ndarray
    primitives: np.ndarray
    margin: float = 20.0
    grid: tuple = field(repr=False, default=None)  # (origin, cell, dims, starts, items)

    def __post_init__(self):
        object.__setattr__(self, "points", np.ascontiguousarray(self.points, dtype=float))
        object.__setattr__(self, "primitives", np.ascontiguousarray(self.primitives, dtype=float))
        if len(self.primitives) == 0:
            raise EmptyMesh("surface model needs at least one primitive")
        if self.grid is None:
            object.__setattr__(self, "grid", _build_grid(self.primitives, self.margin))

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, spacing: float, seed: int = 0, margin: float = 20.0) -> SurfaceModel:
        return cls(sample_mesh_surface(mesh, spacing, seed), mesh.corners, margin)

    @classmethod
    def from_segments(cls, segments: np.ndarray, step: float, margin: float = 20.0) -> SurfaceModel:
        segments = np.asarray(segments, dtype=float)
        pts = []
        for a, b in segments:
            n = max(1, int(np.ceil(np.linalg.norm(b - a) / step - 1e-9)))
            s = np.linspace(0.0, 1.0, n + 1)
            pts.append(a + s[:, None] * (b - a))
        return cls(np.vstack(pts), segments, margin)

    def closest(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closest surface points to ``q`` and their distances."""
        q = np.ascontiguousarray(q, dtype=float).reshape(-1, 3)
        origin, cell, dims, starts, items = self.grid
        return _closest_grid(q, origin, cell, dims, starts, items, self.primitives)


_MAX_CELLS = 60000


def _build_grid(prims: np.ndarray, margin: float):
    pts = prims.reshape(-1, 3)
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    ext = hi - lo
    cell = max(float(np.prod(ext) / _MAX_CELLS) ** (1.0 / 3.0), 1e-3)
    dims = np.maximum(np.ceil(ext / cell).astype(np.int64), 1)
    starts, items = _fill_grid(lo, cell, dims, prims)
    return lo, cell, dims, starts, items


@numba.njit(cache=True)
def _closest_on_triangle(px, py, pz, T):
    ax, ay, az = T[0, 0], T[0, 1], T[0, 2]
    bx, by, bz = T[1, 0], T[1, 1], T[1, 2]
    cx, cy, cz = T[2, 0], T[2, 1], T[2, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        w = d1 / (d1 - d3)
        return ax + w * abx, ay + w * aby, az + w * abz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w


@numba.njit(cache=True)
def _closest_on_segment(px, py, pz, S):
    ax, ay, az = S[0, 0], S[0, 1], S[0, 2]
    dx, dy, dz = S[1, 0] - ax, S[1, 1] - ay, S[1, 2] - az
    t = ((px - ax) * dx + (py - ay) * dy + (pz - az) * dz) / (dx * dx + dy * dy + dz * dz)
    t = min(1.0, max(0.0, t))
    return ax + t * dx, ay + t * dy, az + t * dz


@numba.njit(cache=True)
def _closest_on(px, py, pz, P):
    if P.shape[0] == 3:
        return _closest_on_triangle(px, py, pz, P)
    return _closest_on_segment(px, py, pz, P)


@numba.njit(cache=True)
def _fill_grid(origin, cell, dims, prims):
    nx, ny, nz = dims[0], dims[1], dims[2]
    n_cells = nx * ny * nz
    m = prims.shape[0]
    slack = np.sqrt(3.0) * cell  # two half-diagonals
    counts = np.zeros(n_cells + 1, dtype=np.int64)
    ctr = np.empty((m, 3))
    rad = np.empty(m)
    for j in range(m):
        k = prims.shape[1]
        for a in range(3):
            ctr[j, a] = prims[j, :, a].sum() / k
        r = 0.0
        for v in range(k):
            r = max(r, np.sqrt(((prims[j, v] - ctr[j]) ** 2).sum()))
        rad[j] = r
    d = np.empty(m)
    for pass_ in range(2):
        if pass_ == 1:
            for i in range(n_cells):
                counts[i + 1] += counts[i]
            items = np.empty(counts[n_cells], dtype=np.int64)
            fill = counts[:-1].copy()
        for ix in range(nx):
            for iy in range(ny):
                for iz in range(nz):
                    c = (ix * ny + iy) * nz + iz
                    px = origin[0] + (ix + 0.5) * cell
                    py = origin[1] + (iy + 0.5) * cell
                    pz = origin[2] + (iz + 0.5) * cell
                    # bounding spheres bound every distance from both sides
                    upper = np.inf
                    for j in range(m):
                        e = np.sqrt((ctr[j, 0] - px) ** 2 + (ctr[j, 1] - py) ** 2 + (ctr[j, 2] - pz) ** 2)
                        d[j] = max(e - rad[j], 0.0)
                        upper = min(upper, e + rad[j])
                    best = np.inf
                    for j in range(m):
                        if d[j] <= upper + slack:
                            x, y, z = _closest_on(px, py, pz, prims[j])
                            d[j] = np.sqrt((x - px) ** 2 + (y - py) ** 2 + (z - pz) ** 2)
                            best = min(best, d[j])
                        else:
                            d[j] = np.inf
                    for j in range(m):
                        if d[j] <= best + slack + 1e-9:
                            if pass_ == 0:
                                counts[c + 1] += 1
                            else:
                                items[fill[c]] = j
                                fill[c] += 1
    return counts, items


@numba.njit(cache=True)
def _closest_grid(q, origin, cell, dims, starts, items, prims):
    n = q.shape[0]
    out = np.empty((n, 3))
    dist = np.empty(n)
    m = prims.shape[0]
    for i in range(n):
        px, py, pz = q[i, 0], q[i, 1], q[i, 2]
        ix = int(np.floor((px - origin[0]) / cell))
        iy = int(np.floor((py - origin[1]) / cell))
        iz = int(np.floor((pz - origin[2]) / cell))
        inside = 0 <= ix < dims[0] and 0 <= iy < dims[1] and 0 <= iz < dims[2]
        if inside:
            c = (ix * dims[1] + iy) * dims[2] + iz
            j0, j1 = starts[c], starts[c + 1]
        else:
            j0, j1 = 0, m
        best = np.inf
        for jj in range(j0, j1):
            j = items[jj] if inside else jj
            x, y, z = _closest_on(px, py, pz, prims[j])
            d2 = (x - px) ** 2 + (y - py) ** 2 + (z - pz) ** 2
            if d2 < best:
                best = d2
                out[i, 0] = x
                out[i, 1] = y
                out[i, 2] = z
        dist[i] = np.sqrt(best)
    return out, dist


def voxel_thin(points: np.ndarray, spacing: float) -> np.ndarray:
    """Keep the first point falling in each ``spacing`` voxel (order kept)."""
    if spacing <= 0 or len(points) == 0:
        return points
    keys = np.floor(points / spacing).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    first.sort()
    return points[first]


def sample_mesh_surface(mesh: TriangleMesh, spacing: float, seed: int = 0) -> np.ndarray:
    """Uniform-area random samples thinned to one per ``spacing`` voxel.

    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    n = max(len(areas), int(np.ceil(8.0 * areas.sum() / spacing ** 2)))
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    flip = r1 + r2 > 1.0
    r1[flip], r2[flip] = 1.0 - r1[flip], 1.0 - r2[flip]
    c = mesh.corners[tri]
    pts = c[:, 0] + r1[:, None] * (c[:, 1] - c[:, 0]) + r2[:, None] * (c[:, 2] - c[:, 0])
    return voxel_thin(pts, spacing)


# -- ICP -----------------------------------------------------------------------------

@dataclass
class _Eval:
    M: RigidTransform  # T_model_from_cam
    targets: np.ndarray
    dist: np.ndarray
    keep: np.ndarray
    rms: float  # truncated: rejected pairs count at the rejection distance


def _power(S: RigidTransform, lam: float, center: np.ndarray) -> RigidTransform:
    """Scale a rigid step ``S`` by ``lam``, rotating about ``center``."""
    rv = _rotvec(S.R)
    R = rotation_from_rotvec(lam * rv)
    d = S.apply(center) - center
    return RigidTransform(R, center + lam * d - R @ center)


class _PoseChart:
    """Local 6-vector coordinates of poses near ``ref``: scaled rotation
    vector and translation of the change, both taken about the scene
    centroid so the two blocks are comparable in mm."""

    def __init__(self, ref: RigidTransform, scene: np.ndarray):
        self.ref_inv = ref.inverse()
        self.ref = ref
        self.c = ref.apply(scene.mean(axis=0))
        self.L = max(float(np.sqrt(np.mean(np.sum((scene - scene.mean(axis=0)) ** 2, axis=1)))), 1e-6)

    def coords(self, M: RigidTransform) -> np.ndarray:
        D = M @ self.ref_inv
        return np.concatenate([self.L * _rotvec(D.R), D.apply(self.c) - self.c])

    def pose(self, x: np.ndarray) -> RigidTransform:
        R = rotation_from_rotvec(x[:3] / self.L)
        return RigidTransform(R, self.c + x[3:] - R @ self.c) @ self.ref


def _rotvec(R: np.ndarray) -> np.ndarray:
    angle = np.radians(rotation_angle_deg(R))
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-9:
        return 0.5 * w
    return angle * w / (2.0 * np.sin(angle))


def icp(model, scene, init: RigidTransform = RigidTransform(), params: IcpParams = IcpParams()) -> RegistrationResult:
    """Point-to-point ICP returning ``T_cam_from_model``.

    ``model`` is an ``(M, 3)`` array or a :class:`SurfaceModel`. Each scene
    point is paired with its closest model point; pairs farther apart than
    ``max_correspondence_distance`` are dropped, and a closed-form rigid fit
    gives the next pose. Plain iterations crawl along weakly constrained
    directions, so by default the pose sequence is Anderson-accelerated; the
    ``"extrapolate"`` option instead doubles each step while the RMS keeps
    falling. An accelerated pose is only taken when it beats the plain one.
    Iterations stop when the RMS drops by less than ``convergence_delta_rms``;
    a step that would raise the RMS is rejected, so the RMS history is
    non-increasing. The RMS driving these decisions (``rms_history``) counts
    rejected pairs at the rejection distance, so shedding points is never
    rewarded; ``rms_residue`` and ``mean_residue`` are over accepted pairs.
    """
    scene = voxel_thin(np.asarray(scene, dtype=float).reshape(-1, 3), params.scene_downsample_spacing)
    if len(scene) == 0:
        raise NoCorrespondences("empty scene cloud")
    if isinstance(model, SurfaceModel):
        closest = model.closest
    else:
        pts = np.asarray(model, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise NoCorrespondences("empty model cloud")
        tree = cKDTree(pts)

        def closest(q):
            d, i = tree.query(q)
            return pts[i], d

    def evaluate(M: RigidTransform) -> _Eval | None:
        targets, dist = closest(M.apply(scene))
        dmax = params.max_correspondence_distance
        keep = dist <= dmax
        if keep.sum() < 3:
            return None
        return _Eval(M, targets, dist, keep, float(np.sqrt(np.mean(np.minimum(dist, dmax) ** 2))))

    cur = evaluate(init.inverse())
    if cur is None:
        raise NoCorrespondences("no scene point within the correspondence distance")
    chart = _PoseChart(cur.M, scene)
    xs, gs = [], []
    history = [cur.rms]
    converged = cur.rms < 1e-12
    while not converged and len(history) < params.max_iterations:
        try:
            M_fit = umeyama_fit(scene[cur.keep], cur.targets[cur.keep])
        except DegenerateConfiguration:
            break
        nxt = evaluate(M_fit)
        if nxt is None or nxt.rms > cur.rms:
            converged = True
            break
        if params.acceleration == "anderson":
            xs.append(chart.coords(cur.M))
            gs.append(chart.coords(M_fit))
            del xs[:-params.anderson_memory - 1], gs[:-params.anderson_memory - 1]
            if len(xs) > 1:
                F = np.array(gs) - np.array(xs)
                dF = np.diff(F, axis=0).T
                dG = np.diff(np.array(gs), axis=0).T
                gamma = np.linalg.lstsq(dF, F[-1], rcond=None)[0]
                trial = evaluate(chart.pose(gs[-1] - dG @ gamma))
                if trial is not None and trial.rms < nxt.rms:
                    nxt = trial
                else:
                    del xs[:-1], gs[:-1]
        elif params.acceleration == "extrapolate" and nxt.rms < cur.rms:
            step = M_fit @ cur.M.inverse()
            center = cur.M.apply(scene[cur.keep]).mean(axis=0)
            lam = 2.0
            while lam <= 64.0:
                trial = evaluate(_power(step, lam, center) @ cur.M)
                if trial is None or trial.rms >= nxt.rms:
                    break
                nxt = trial
                lam *= 2.0
        gain = cur.rms - nxt.rms
        cur = nxt
        history.append(cur.rms)
        if gain < params.convergence_delta_rms or cur.rms < 1e-12:
            converged = True
    inliers = cur.dist[cur.keep]
    return RegistrationResult(cur.M.inverse(), float(np.sqrt(np.mean(inliers ** 2))), len(history),
                              converged, float(inliers.mean()), int(cur.keep.sum()), tuple(history))


# -- localization and tracking ----------------------------------------------------

def _alternative_rotations():
    for R in (rot_x(90), rot_x(180), rot_x(-90), rot_y(90), rot_y(180), rot_y(-90),
              rot_z(90), rot_z(180), rot_z(-90)):
        yield R


def localize_model(mesh: TriangleMesh, scene, roi_center, roi_radius: float,
                   params: IcpParams = IcpParams(), init_rotation=None,
                   check_ambiguity: bool = False, model: SurfaceModel | None = None,
                   seed: int = 0, restart_offset: float = 6.0) -> RegistrationResult:
    """Register ``mesh`` to the scene points inside a spherical ROI.

    The initial pose places the model's sample centroid on the centroid of the
    ROI points with rotation ``init_rotation`` (identity by default: the
    operator presents the object in a predefined orientation). Only part of
    the surface is visible, so that centroid guess is biased; with a nonzero
    ``restart_offset`` six extra starts shifted by that many mm along the
    camera axes run a coarse pass, and the best one is refined.
    With ``check_ambiguity`` the fit is repeated from 90/180 degree rotated
    starts; a different pose fitting about as well sets ``ambiguous`` and
    logs a warning.
    """
    roi = crop_roi(scene, roi_center, roi_radius)
    if len(roi) < 3:
        raise EmptyRoi("no scene points inside the ROI")
    if model is None:
        model = SurfaceModel.from_mesh(mesh, params.model_downsample_spacing, seed)
    R0 = np.eye(3) if init_rotation is None else np.asarray(init_rotation, dtype=float)
    centroid = model.points.mean(axis=0)
    target = roi.mean(axis=0)
    init = RigidTransform(R0, target - R0 @ centroid)
    if restart_offset > 0:
        coarse = replace(params, convergence_delta_rms=max(params.convergence_delta_rms, 1e-3),
                         scene_downsample_spacing=max(params.scene_downsample_spacing,
                                                      params.model_downsample_spacing))
        best = None
        for off in np.vstack([np.zeros(3), np.eye(3), -np.eye(3)]) * restart_offset:
            try:
                trial = icp(model, roi, RigidTransform(R0, init.t + off), coarse)
            except NoCorrespondences:
                continue
            if best is None or trial.rms_history[-1] < best.rms_history[-1]:
                best = trial
        if best is not None:
            init = best.pose
    result = icp(model, roi, init, params)
    if not result.converged:
        log.warning("model localization did not converge (rms %.3f mm)", result.rms_residue)
    if not check_ambiguity:
        return result

    ambiguous = False
    tol = 1.25 * result.rms_residue + 0.05
    for Ralt in _alternative_rotations():
        R = R0 @ Ralt
        alt_init = RigidTransform(R, target - R @ centroid)
        try:
            alt = icp(model, roi, alt_init, params)
        except NoCorrespondences:
            continue
        angle = rotation_angle_deg(alt.pose.R.T @ result.pose.R)
        if alt.rms_residue <= tol and angle > 10.0:
            ambiguous = True
            break
    if ambiguous:
        log.warning("registration is ambiguous: a rotated pose fits as well")
    return replace(result, ambiguous=ambiguous)


@dataclass(frozen=True, eq=False)
class TrackerState:
    model: SurfaceModel
    last_pose: RigidTransform
    frozen: bool = False
    lost: bool = False
    residue_history: tuple[float, ...] = ()
    radius: float = 0.0  # model bounding radius around its sample centroid

    @classmethod
    def from_result(cls, model: SurfaceModel, result: RegistrationResult, frozen: bool = False) -> TrackerState:
        c = model.points.mean(axis=0)
        radius = float(np.linalg.norm(model.points - c, axis=1).max())
        return cls(model, result.pose, frozen, False, (result.rms_residue,), radius)

    def frozen_copy(self) -> TrackerState:
        return replace(self, frozen=True)


def track_step(state: TrackerState, scene, params: IcpParams = IcpParams()) -> tuple[TrackerState, RegistrationResult]:
    """One warm-started tracking update.

    A frozen state returns its pose untouched. Otherwise ICP starts from the
    previous pose on the scene points near it; the state becomes ``lost`` when
    the RMS residue exceeds three model sample spacings or nothing matches,
    and keeps its last good pose in that case.
    """
    if state.frozen:
        rms = state.residue_history[-1] if state.residue_history else 0.0
        return state, RegistrationResult(state.last_pose, rms, 0, True)
    center = state.last_pose.apply(state.model.points.mean(axis=0))
    scene = np.asarray(scene, dtype=float).reshape(-1, 3)
    local = scene
    if len(scene):
        local = crop_roi(scene, center, state.radius + params.max_correspondence_distance)
    try:
        result = icp(state.model, local, state.last_pose, params)
    except NoCorrespondences:
        result = RegistrationResult(state.last_pose, float("inf"), 0, False)
    lost = not result.rms_residue <= 3.0 * params.model_downsample_spacing
    pose = state.last_pose if lost else result.pose
    new_state = replace(state, last_pose=pose, lost=lost,
                        residue_history=state.residue_history + (result.rms_residue,))
    return new_state, result
