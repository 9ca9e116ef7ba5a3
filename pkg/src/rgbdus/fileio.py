"""Artifact file formats.

Text formats write floats with ``%.17g`` so every double survives a round
trip, and start with a ``# schema: <tag>`` comment; JSON artifacts carry a
``"schema"`` key. Reading a file whose tag differs raises ``VersionMismatch``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .calib import CalibrationMatrix, CalibrationReport
from .depthsim import DepthMap
from .errors import ParseError, VersionMismatch
from .geom import CameraIntrinsics, RigidTransform
from .overlay import RgbFrame
from .scene import TriangleMesh
from .ussim import USFrame

SCHEMA = "rgbdus/1"
DEPTH_UNIT_MM = 0.1
POSE_HEADER = ["frame", "t_s", "tx_mm", "ty_mm", "tz_mm", "qw", "qx", "qy", "qz", "rms_mm", "lost"]
ANNOTATION_HEADER = ["frame", "u", "v", "wire_id"]


def _g(x: float) -> str:
    return "%.17g" % x


def _schema_line() -> str:
    return f"# schema: {SCHEMA}\n"


def _check_schema_comment(line: str, lineno: int, path) -> bool:
    """True if ``line`` is a schema comment; raises on a foreign tag."""
    body = line.lstrip("#").strip()
    if not body.startswith("schema:"):
        return False
    tag = body.split(":", 1)[1].strip()
    if tag != SCHEMA:
        raise VersionMismatch(f"{path}:{lineno}: schema {tag!r}, expected {SCHEMA!r}")
    return True


def _float(tok: str, lineno: int, path) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok!r}", lineno, str(path)) from None
    if not math.isfinite(x):
        raise ParseError(f"non-finite value {tok!r}", lineno, str(path))
    return x


# -- OBJ ---------------------------------------------------------------------

def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as f:
        f.write(_schema_line())
        for v in mesh.vertices:
            f.write("v %s %s %s\n" % tuple(_g(x) for x in v))
        for t in mesh.triangles:
            f.write("f %d %d %d\n" % tuple(int(i) + 1 for i in t))


def read_obj(path) -> TriangleMesh:
    """Vertices and triangular faces; other statements are ignored."""
    verts, faces = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                _check_schema_comment(s, lineno, path)
                continue
            tok = s.split()
            if tok[0] == "v":
                if len(tok) not in (4, 5):
                    raise ParseError("vertex needs 3 coordinates", lineno, str(path))
                verts.append([_float(t, lineno, path) for t in tok[1:4]])
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise ParseError(f"only triangles are supported, face has {len(tok) - 1} vertices",
                                     lineno, str(path))
                idx = []
                for t in tok[1:]:
                    try:
                        i = int(t.split("/")[0])
                    except ValueError:
                        raise ParseError(f"bad face index {t!r}", lineno, str(path)) from None
                    i = i - 1 if i > 0 else len(verts) + i
                    if not 0 <= i < len(verts):
                        raise ParseError(f"face index {t} out of range", lineno, str(path))
                    idx.append(i)
                faces.append(idx)
    try:
        return TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise ParseError(str(exc), path=str(path)) from exc


# -- XYZ point clouds -----------------------------------------------------------

def format_xyz(points) -> str:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return _schema_line() + "".join("%s %s %s\n" % (_g(x), _g(y), _g(z)) for x, y, z in pts)


def write_xyz(path, points) -> None:
    Path(path).write_text(format_xyz(points))


def read_xyz(path) -> np.ndarray:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                _check_schema_comment(s, lineno, path)
                continue
            tok = s.split()
            if len(tok) != 3:
                raise ParseError("expected 3 coordinates", lineno, str(path))
            rows.append([_float(t, lineno, path) for t in tok])
    return np.array(rows, dtype=float).reshape(-1, 3)


# -- PGM / PPM ---------------------------------------------------------------------

def _write_pnm(path, magic: bytes, arr: np.ndarray) -> None:
    h, w = arr.shape[:2]
    maxval = 65535 if arr.dtype == np.uint16 else 255
    data = arr.astype(">u2").tobytes() if maxval == 65535 else arr.astype(np.uint8).tobytes()
    with open(path, "wb") as f:
        f.write(magic + b"\n" + _schema_line().encode() + f"{w} {h}\n{maxval}\n".encode() + data)


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    pos = 0
    fields = []
    line = 1

    def skip_space_and_comments():
        nonlocal pos, line
        while pos < len(raw):
            c = raw[pos:pos + 1]
            if c == b"#":
                end = raw.find(b"\n", pos)
                end = len(raw) if end < 0 else end
                _check_schema_comment(raw[pos:end].decode("ascii", "replace"), line, path)
                pos = end
            elif c.isspace():
                line += c == b"\n"
                pos += 1
            else:
                return

    while len(fields) < 4:
        skip_space_and_comments()
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("truncated header", line, str(path))
        fields.append(raw[start:pos])
    if fields[0] != magic:
        raise ParseError(f"expected {magic.decode()} image, got {fields[0]!r}", 1, str(path))
    try:
        w, h, maxval = (int(x) for x in fields[1:])
    except ValueError:
        raise ParseError("bad header numbers", line, str(path)) from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise ParseError("bad image dimensions or maxval", line, str(path))
    pos += 1  # the single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = w * h * channels
    if len(raw) - pos < n * dtype.itemsize:
        raise ParseError("truncated pixel data", line, str(path))
    arr = np.frombuffer(raw, dtype=dtype, count=n, offset=pos)
    arr = arr.astype(np.uint16 if maxval > 255 else np.uint8)
    return arr.reshape((h, w, channels) if channels > 1 else (h, w))


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype not in (np.uint8, np.uint16):
        raise ValueError("PGM needs a 2-D uint8 or uint16 image")
    _write_pnm(path, b"P5", image)


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5", 1)


def write_ppm(path, frame: RgbFrame) -> None:
    _write_pnm(path, b"P6", frame.pixels)


def read_ppm(path) -> RgbFrame:
    arr = _read_pnm(path, b"P6", 3)
    if arr.dtype != np.uint8:
        raise ParseError("only 8-bit PPM is supported", path=str(path))
    return RgbFrame(arr)


def write_us_frame(path, frame: USFrame) -> None:
    write_pgm(path, frame.pixels)


def read_us_frame(path, spacing=(0.1, 0.1), frame_index: int = 0) -> USFrame:
    arr = read_pgm(path)
    if arr.dtype != np.uint8:
        raise ParseError("ultrasound frames are 8-bit", path=str(path))
    return USFrame(arr, tuple(spacing), frame_index)


def write_depth_pgm(path, depth: DepthMap) -> None:
    """16-bit depth in units of 0.1 mm (values clipped to the 16-bit range)."""
    q = np.clip(np.rint(depth.depths / DEPTH_UNIT_MM), 0, 65535).astype(np.uint16)
    write_pgm(path, q)


def read_depth_pgm(path, K: CameraIntrinsics) -> DepthMap:
    arr = read_pgm(path)
    return DepthMap(arr.astype(float) * DEPTH_UNIT_MM, K)


# -- CSV streams -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PoseRecord:
    frame: int
    t_s: float
    pose: RigidTransform
    rms_mm: float = 0.0
    lost: bool = False


def _quat_wxyz(R: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return -q if q[0] < 0 else q


def format_pose_csv(records) -> str:
    buf = io.StringIO()
    buf.write(_schema_line())
    buf.write(",".join(POSE_HEADER) + "\n")
    for r in records:
        q = _quat_wxyz(r.pose.R)
        vals = [str(int(r.frame)), _g(r.t_s), *(_g(x) for x in r.pose.t), *(_g(x) for x in q),
                _g(r.rms_mm), "1" if r.lost else "0"]
        buf.write(",".join(vals) + "\n")
    return buf.getvalue()


def write_pose_csv(path, records) -> None:
    Path(path).write_text(format_pose_csv(records))


def _csv_rows(path, header):
    with open(path, newline="") as f:
        lines = f.read().splitlines()
    body = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            _check_schema_comment(line, lineno, path)
            continue
        body.append((lineno, line))
    if not body:
        raise ParseError("missing header", path=str(path))
    lineno, first = body[0]
    if next(csv.reader([first])) != header:
        raise ParseError(f"expected header {','.join(header)}", lineno, str(path))
    for lineno, line in body[1:]:
        row = next(csv.reader([line]))
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno, str(path))
        yield lineno, row


def _int(tok: str, lineno: int, path) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"not an integer: {tok!r}", lineno, str(path)) from None


def read_pose_csv(path) -> list[PoseRecord]:
    out = []
    for lineno, row in _csv_rows(path, POSE_HEADER):
        frame = _int(row[0], lineno, path)
        t_s = _float(row[1], lineno, path)
        t = [_float(x, lineno, path) for x in row[2:5]]
        q = np.array([_float(x, lineno, path) for x in row[5:9]])
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-6:
            raise ParseError(f"quaternion norm {norm:.9f} is not 1", lineno, str(path))
        w, x, y, z = q / norm
        R = Rotation.from_quat([x, y, z, w]).as_matrix()
        rms = float(row[9]) if row[9] not in ("inf", "nan") else float(row[9])
        if row[10] not in ("0", "1"):
            raise ParseError("lost flag must be 0 or 1", lineno, str(path))
        out.append(PoseRecord(frame, t_s, RigidTransform(R, t), rms, row[10] == "1"))
    return out


def write_annotations_csv(path, frames) -> None:
    """``frame,u,v,wire_id`` rows from the annotations of ``USFrame`` objects."""
    buf = io.StringIO()
    buf.write(_schema_line())
    buf.write(",".join(ANNOTATION_HEADER) + "\n")
    for fr in frames:
        for u, v, wid in fr.annotations:
            buf.write(f"{fr.frame_index},{_g(u)},{_g(v)},{int(wid)}\n")
    Path(path).write_text(buf.getvalue())


def read_annotations_csv(path) -> dict[int, list[tuple[float, float, int]]]:
    out: dict[int, list] = {}
    for lineno, row in _csv_rows(path, ANNOTATION_HEADER):
        out.setdefault(_int(row[0], lineno, path), []).append(
            (_float(row[1], lineno, path), _float(row[2], lineno, path), _int(row[3], lineno, path)))
    return out


# -- JSON ------------------------------------------------------------------------------

def dumps_json(obj: dict) -> str:
    """Canonical JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps({"schema": SCHEMA, **obj}, sort_keys=True, indent=2) + "\n"


def write_json(path, obj: dict) -> None:
    Path(path).write_text(dumps_json(obj))


def read_json(path, require_schema: bool = True) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, str(path)) from None
    if not isinstance(data, dict):
        raise ParseError("expected a JSON object", 1, str(path))
    tag = data.pop("schema", None)
    if tag is None and require_schema:
        raise VersionMismatch(f"{path}: missing schema tag")
    if tag is not None and tag != SCHEMA:
        raise VersionMismatch(f"{path}: schema {tag!r}, expected {SCHEMA!r}")
    return data


def calibration_to_dict(report: CalibrationReport) -> dict:
    m = report.matrix
    return {"matrix_row_major": [float(x) for x in m.A.ravel()], "sx": m.sx, "sy": m.sy,
            "rms_fit": report.rms_fit, "error_mean": report.error_mean, "error_sd": report.error_sd,
            "n_frames": report.n_frames, "n_correspondences": report.n_correspondences}


def calibration_from_dict(data: dict, path=None) -> CalibrationReport:
    try:
        A = np.array(data["matrix_row_major"], dtype=float).reshape(3, 3)
        matrix = CalibrationMatrix.from_affine(A)
        if np.abs(matrix.A - A).max() > 1e-9:
            raise ParseError("calibration matrix has shear", path=str(path) if path else None)
        return CalibrationReport(matrix, float(data["rms_fit"]), int(data["n_frames"]),
                                 int(data.get("n_correspondences", 3 * int(data["n_frames"]))),
                                 float(data["error_mean"]), float(data["error_sd"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad calibration report: {exc}", path=str(path) if path else None) from exc


def write_calibration(path, report: CalibrationReport) -> None:
    write_json(path, calibration_to_dict(report))


def read_calibration(path) -> CalibrationReport:
    return calibration_from_dict(read_json(path), path)


def pose_to_dict(T: RigidTransform) -> dict:
    return {"R": [[float(x) for x in row] for row in T.R], "t": [float(x) for x in T.t]}


def pose_from_dict(d: dict) -> RigidTransform:
    try:
        return RigidTransform(np.array(d["R"], dtype=float), np.array(d["t"], dtype=float))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad pose: {exc}") from exc
