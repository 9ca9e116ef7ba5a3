"""Parametric ground-truth world: N-wire phantom, cube-cluster marker, test cube.

Phantom coordinate system: x runs along the wires, y goes from the front side
wire to the back one, z grows with depth (away from the probe). The origin is
the front-top corner of the frame between the two side walls, so the wires
span ``0 <= x <= x_span``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlphaOutOfRange, BadEdgeId, EmptyArrangement, InvalidGeometry

FRONT, DIAGONAL, BACK = 0, 1, 2
WIRE_NAMES = ("front", "diagonal", "back")


def wire_id(layer: int, position: int) -> int:
    return 3 * layer + position


def split_wire_id(wid: int) -> tuple[int, int]:
    return divmod(int(wid), 3)


# -- meshes ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        F = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise InvalidGeometry("triangle index out of range")
        if F.size and np.any(triangle_areas(V, F) <= 1e-9):
            raise InvalidGeometry("degenerate triangle")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)

    @property
    def corners(self) -> np.ndarray:
        """``(M, 3, 3)`` triangle corner coordinates."""
        return self.vertices[self.triangles]

    def normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def span(self) -> float:
        lo, hi = self.bounds()
        return float((hi - lo).max())

    def transformed(self, T) -> TriangleMesh:
        return TriangleMesh(T.apply(self.vertices), self.triangles)


def triangle_areas(V: np.ndarray, F: np.ndarray) -> np.ndarray:
    c = V[F]
    return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)


def merge_meshes(meshes) -> TriangleMesh:
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(tris))


def box_mesh(lo, hi) -> TriangleMesh:
    """Closed axis-aligned box with outward-facing triangles."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi <= lo):
        raise InvalidGeometry("box extent must be positive")
    return _voxel_surface({(0, 0, 0)}, hi - lo, lo, 1)


def _voxel_surface(cells, cell_size, origin, subdiv: int) -> TriangleMesh:
    """Boundary surface of a set of integer lattice cells.

    Faces shared by two occupied cells are dropped and lattice vertices are
    shared, so a face-connected arrangement gives a closed surface.
    """
    cells = set(cells)
    cell_size = np.broadcast_to(np.asarray(cell_size, dtype=float), (3,))
    n = subdiv
    index: dict[tuple[int, int, int], int] = {}
    tris: list[tuple[int, int, int]] = []

    def vid(p):
        if p not in index:
            index[p] = len(index)
        return index[p]

    for cell in sorted(cells):
        for axis in range(3):
            b, c = (axis + 1) % 3, (axis + 2) % 3
            for sign in (1, -1):
                nb = list(cell)
                nb[axis] += sign
                if tuple(nb) in cells:
                    continue
                plane = (cell[axis] + (1 if sign > 0 else 0)) * n
                for i in range(n):
                    for j in range(n):
                        quad = []
                        for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                            p = [0, 0, 0]
                            p[axis] = plane
                            p[b] = cell[b] * n + i + di
                            p[c] = cell[c] * n + j + dj
                            quad.append(vid(tuple(p)))
                        if sign < 0:
                            quad = quad[::-1]
                        tris.append((quad[0], quad[1], quad[2]))
                        tris.append((quad[0], quad[2], quad[3]))
    lattice = np.array(sorted(index, key=index.get), dtype=float)
    V = np.asarray(origin, dtype=float) + lattice * (cell_size / n)
    return TriangleMesh(V, np.array(tris, dtype=np.int64))


def edge_valence(mesh: TriangleMesh) -> dict[tuple[int, int], int]:
    """How many triangles use each undirected edge (2 everywhere when closed)."""
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in mesh.triangles:
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            counts[key] = counts.get(key, 0) + 1
    return counts


# -- N-wire phantom ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NWireLayer:
    depth: float
    front: np.ndarray  # (2, 3) segment endpoints
    diagonal: np.ndarray
    back: np.ndarray

    def wire(self, position: int) -> np.ndarray:
        return (self.front, self.diagonal, self.back)[position]


@dataclass(frozen=True, eq=False)
class NWireGeometry:
    layers: tuple[NWireLayer, ...]
    wire_diameter: float = 1.0

    def __post_init__(self):
        if len(self.layers) != 3:
            raise InvalidGeometry("an N-wire phantom has exactly 3 layers")
        for layer in self.layers:
            segs = np.array([layer.front, layer.diagonal, layer.back])
            if segs.shape != (3, 2, 3):
                raise InvalidGeometry("each wire is a pair of 3D endpoints")
            if np.abs(segs[..., 2] - layer.depth).max() > 1e-9:
                raise InvalidGeometry("wire endpoints must share the layer depth")
            if _point_line_distance(layer.diagonal[0], layer.front) > 1e-9 or \
               _point_line_distance(layer.diagonal[1], layer.back) > 1e-9:
                raise InvalidGeometry("diagonal must join the two side wires")
        if self.wire_diameter <= 0:
            raise InvalidGeometry("wire diameter must be positive")

    def segments(self) -> np.ndarray:
        """``(9, 2, 3)`` wire segments indexed by wire id."""
        return np.array([layer.wire(p) for layer in self.layers for p in range(3)])

    @property
    def x_span(self) -> float:
        return float(self.layers[0].front[1, 0] - self.layers[0].front[0, 0])


def _point_line_distance(p, seg) -> float:
    a, b = np.asarray(seg[0]), np.asarray(seg[1])
    d = b - a
    return float(np.linalg.norm(np.cross(np.asarray(p) - a, d)) / np.linalg.norm(d))


@dataclass(frozen=True)
class PhantomParams:
    x_span: float = 40.0
    y_front: float = 10.0
    y_back: float = 30.0
    layer_depths: tuple[float, ...] = (15.0, 25.0, 35.0)
    wire_diameter: float = 1.0


def make_nwire_geometry(params: PhantomParams = PhantomParams()) -> NWireGeometry:
    depths = list(params.layer_depths)
    if len(depths) != 3:
        raise InvalidGeometry("need exactly three layer depths")
    if any(b <= a for a, b in zip(depths, depths[1:])):
        raise InvalidGeometry("layer depths must be strictly increasing")
    if params.y_front == params.y_back:
        raise InvalidGeometry("front and back wires coincide")
    if params.x_span <= 0:
        raise InvalidGeometry("x_span must be positive")
    L, yf, yb = float(params.x_span), float(params.y_front), float(params.y_back)
    layers = []
    for z in depths:
        z = float(z)
        layers.append(NWireLayer(
            depth=z,
            front=np.array([[0.0, yf, z], [L, yf, z]]),
            diagonal=np.array([[0.0, yf, z], [L, yb, z]]),
            back=np.array([[0.0, yb, z], [L, yb, z]]),
        ))
    return NWireGeometry(tuple(layers), float(params.wire_diameter))


def middle_point_on_diagonal(geom: NWireGeometry, layer: int, alpha: float) -> np.ndarray:
    """Point at fraction ``alpha`` along the diagonal, from its front end."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha={alpha} outside [0, 1]")
    a, b = geom.layers[layer].diagonal
    return a + alpha * (b - a)


def make_phantom_mesh(geom: NWireGeometry, wall: float = 5.0) -> TriangleMesh:
    """Frame holding the wires: two side walls, a base, and asymmetric
    features (a corner post and a side ledge) so rigid registration of the
    surface has a single optimum."""
    segs = geom.segments()
    L = geom.x_span
    y0 = float(segs[..., 1].min()) - 10.0
    y1 = float(segs[..., 1].max()) + 10.0
    zb = float(segs[..., 2].max()) + 10.0
    boxes = [
        ((-wall, y0, 0.0), (0.0, y1, zb)),
        ((L, y0, 0.0), (L + wall, y1, zb)),
        ((-wall, y0, zb), (L + wall, y1, zb + wall)),
        ((0.0, y0, 0.0), (L, y0 + 3.0, 5.0)),
        ((-2 * wall, y0, -2 * wall), (0.0, y0 + 2 * wall, 0.0)),
        ((L + wall, y1 - 15.0, zb - 15.0), (L + 2.4 * wall, y1, zb + wall)),
    ]
    return merge_meshes(box_mesh(lo, hi) for lo, hi in boxes)


# -- marker --------------------------------------------------------------------

DEFAULT_MARKER_ARRANGEMENT = (
    (0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0),
    (0, 1, 0), (3, 0, 1), (1, 0, 1),
)
SYMMETRIC_ARRANGEMENT = tuple(itertools.product((0, 1), repeat=3))


@dataclass(frozen=True)
class MarkerParams:
    cube_size: float = 10.0
    arrangement: tuple[tuple[int, int, int], ...] = DEFAULT_MARKER_ARRANGEMENT
    downsample_spacing: float | None = None


def make_marker_mesh(params: MarkerParams = MarkerParams()) -> TriangleMesh:
    """Surface of a union of cubes, centered on its bounding box.

    A ``downsample_spacing`` subdivides every cube face so mesh vertices are
    at most that far apart. Arrangements with rotational symmetry (such as the
    2x2x2 block) are accepted, but registration against them is ambiguous.
    """
    cells = {tuple(int(c) for c in cell) for cell in params.arrangement}
    if not cells:
        raise EmptyArrangement("marker needs at least one cube")
    subdiv = 1
    if params.downsample_spacing:
        subdiv = max(1, math.ceil(params.cube_size / params.downsample_spacing - 1e-9))
    mesh = _voxel_surface(cells, params.cube_size, (0.0, 0.0, 0.0), subdiv)
    lo, hi = mesh.bounds()
    return TriangleMesh(mesh.vertices - 0.5 * (lo + hi), mesh.triangles)


def rotational_symmetries(cells) -> int:
    """Number of the 24 axis-aligned rotations mapping ``cells`` onto itself."""
    cells = np.array(sorted(cells), dtype=int)

    def normalized(a):
        return sorted(map(tuple, a - a.min(axis=0)))

    ref = normalized(cells)
    count = 0
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            M = np.zeros((3, 3), dtype=int)
            for r, (c, s) in enumerate(zip(perm, signs)):
                M[r, c] = s
            if round(np.linalg.det(M)) != 1:
                continue
            if normalized(cells @ M.T) == ref:
                count += 1
    return count


# -- evaluation cube -------------------------------------------------------------

_CUBE_CORNERS = np.array([
    [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
    [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
], dtype=float)
# ids 0-3 top face (z = +size/2), 4-7 bottom face, 8-11 vertical
_CUBE_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)
DEFAULT_EDGE_SELECTION = (0, 1, 2, 3, 8)


@dataclass(frozen=True, eq=False)
class CubeEdgeModel:
    size: float
    edges: np.ndarray  # (n, 2, 3) in cube CS
    edge_ids: tuple[int, ...]
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def edge(self, edge_id: int) -> np.ndarray:
        return self.edges[self.edge_ids.index(edge_id)]


def make_cube_edges(size: float = 50.0, edge_selection=DEFAULT_EDGE_SELECTION) -> CubeEdgeModel:
    ids = tuple(int(e) for e in edge_selection)
    if not 1 <= len(ids) <= 12 or len(set(ids)) != len(ids):
        raise BadEdgeId("need 1 to 12 distinct edge ids")
    if any(not 0 <= e < 12 for e in ids):
        raise BadEdgeId(f"edge ids must be in 0..11, got {ids}")
    if size <= 0:
        raise InvalidGeometry("cube size must be positive")
    corners = _CUBE_CORNERS * (size / 2.0)
    edges = np.array([[corners[a], corners[b]] for a, b in (_CUBE_EDGES[e] for e in ids)])
    return CubeEdgeModel(float(size), edges, ids)


def cube_mesh(size: float) -> TriangleMesh:
    h = size / 2.0
    return box_mesh((-h, -h, -h), (h, h, h))


def plane_mesh(width: float, height: float) -> TriangleMesh:
    """Rectangle in the z = 0 plane centered on the origin, normal +z."""
    w, h = width / 2.0, height / 2.0
    V = np.array([[-w, -h, 0.0], [w, -h, 0.0], [w, h, 0.0], [-w, h, 0.0]])
    return TriangleMesh(V, np.array([[0, 1, 2], [0, 2, 3]]))
