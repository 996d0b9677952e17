"""Mesh loading (OBJ/PLY), the binary LaRI file, PLY export and pose conventions."""

from __future__ import annotations

import enum
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (CorruptHeader, InvalidRotation, ParseError, TruncatedFile, UnsupportedFormat,
                     VersionMismatch)
from .geometry import TriangleMesh
from .render import LariMap, mask_from_index

# ------------------------------------------------------------------ meshes


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _load_obj(path: Path) -> TriangleMesh:
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
                elif tag == "f":
                    poly = []
                    for tok in parts[1:]:
                        k = int(tok.split("/", 1)[0])
                        k = k - 1 if k > 0 else len(verts) + k
                        if not 0 <= k < len(verts):
                            raise ParseError(f"face references missing vertex {tok}", path, lineno)
                        poly.append(k)
                    if len(poly) < 3:
                        raise ParseError("face with fewer than 3 vertices", path, lineno)
                    tris.extend(_fan(poly))
            except (ValueError, IndexError) as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(f"malformed {tag!r} record: {line.strip()!r}", path, lineno) from None
    return TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                        np.asarray(tris, dtype=np.int64).reshape(-1, 3))


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class _PlyElement:
    name: str
    count: int
    props: list  # (name, dtype) or (name, count_dtype, item_dtype)


@dataclass
class PlyData:
    vertices: np.ndarray
    faces: np.ndarray  # (M, 3) after fan triangulation
    colors: np.ndarray | None


def _parse_ply_header(fh, path):
    first = fh.readline()
    if first.strip() != b"ply":
        raise ParseError("missing 'ply' magic", path, 1, 0)
    fmt = None
    elements: list[_PlyElement] = []
    lineno = 1
    while True:
        offset = fh.tell()
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("header not terminated by end_header", path, lineno, offset)
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(f"unknown PLY format {' '.join(parts[1:])!r}", path, lineno, offset)
            fmt = parts[1]
        elif parts[0] == "element":
            try:
                elements.append(_PlyElement(parts[1], int(parts[2]), []))
            except (IndexError, ValueError):
                raise ParseError("malformed element line", path, lineno, offset) from None
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", path, lineno, offset)
            try:
                if parts[1] == "list":
                    elements[-1].props.append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
                else:
                    elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
            except (IndexError, KeyError):
                raise ParseError(f"bad property {raw.strip()!r}", path, lineno, offset) from None
        elif parts[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header keyword {parts[0]!r}", path, lineno, offset)
    if fmt is None:
        raise ParseError("PLY header lacks a format line", path, lineno)
    return fmt, elements, lineno


def _read_ascii_element(lines, el: _PlyElement, path):
    rows = []
    for _ in range(el.count):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise ParseError(f"unexpected end of file in element {el.name!r}", path) from None
        toks = line.split()
        pos = 0
        row = []
        try:
            for prop in el.props:
                if len(prop) == 3:
                    n = int(toks[pos])
                    row.append([float(x) for x in toks[pos + 1:pos + 1 + n]])
                    if len(row[-1]) != n:
                        raise IndexError
                    pos += 1 + n
                else:
                    row.append(float(toks[pos]))
                    pos += 1
        except (IndexError, ValueError):
            raise ParseError(f"malformed {el.name} record", path, lineno) from None
        rows.append(row)
    return rows


def _read_binary_element(buf: bytes, pos: int, el: _PlyElement, endian: str, path, base: int):
    """Decode one element starting at ``pos``; error offsets are reported from file start."""
    if all(len(p) == 2 for p in el.props):
        dt = np.dtype([(p[0], endian + p[1]) for p in el.props])
        end = pos + dt.itemsize * el.count
        if end > len(buf):
            raise ParseError(f"truncated element {el.name!r}", path, offset=base + len(buf))
        return np.frombuffer(buf, dtype=dt, count=el.count, offset=pos), end
    if len(el.props) == 1:
        # common case: every face is a triangle
        _, cdt, idt = el.props[0]
        dt = np.dtype([("n", endian + cdt), ("i", endian + idt, (3,))])
        end = pos + dt.itemsize * el.count
        if end <= len(buf):
            arr = np.frombuffer(buf, dtype=dt, count=el.count, offset=pos)
            if (arr["n"] == 3).all():
                return [[row] for row in arr["i"].tolist()], end
    rows = []
    for _ in range(el.count):
        row = []
        for prop in el.props:
            try:
                if len(prop) == 3:
                    cdt, idt = np.dtype(endian + prop[1]), np.dtype(endian + prop[2])
                    n = int(np.frombuffer(buf, cdt, 1, pos)[0])
                    pos += cdt.itemsize
                    row.append(np.frombuffer(buf, idt, n, pos).tolist())
                    pos += idt.itemsize * n
                else:
                    dt = np.dtype(endian + prop[1])
                    row.append(float(np.frombuffer(buf, dt, 1, pos)[0]))
                    pos += dt.itemsize
            except ValueError:
                raise ParseError(f"truncated element {el.name!r}", path, offset=base + pos) from None
        rows.append(row)
    return rows, pos


def read_ply(path) -> PlyData:
    """Vertices, fan-triangulated faces and optional vertex colors of a PLY file."""
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_ply_header(fh, path)
        body_start = fh.tell()
        data = fh.read()
    parsed = {}
    if fmt == "ascii":
        text = data.decode("ascii", errors="replace").splitlines()
        lines = ((header_lines + i + 1, ln) for i, ln in enumerate(text) if ln.strip())
        for el in elements:
            parsed[el.name] = (el, _read_ascii_element(lines, el, path))
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        pos = 0
        for el in elements:
            rows, pos = _read_binary_element(data, pos, el, endian, path, body_start)
            parsed[el.name] = (el, rows)

    if "vertex" not in parsed:
        raise ParseError("PLY file has no vertex element", path)
    el, rows = parsed["vertex"]
    names = [p[0] for p in el.props]
    for axis in "xyz":
        if axis not in names:
            raise ParseError(f"vertex element lacks property {axis!r}", path)
    if isinstance(rows, np.ndarray):
        verts = np.stack([rows[a].astype(np.float64) for a in "xyz"], axis=1)
        colors = (np.stack([rows[c] for c in ("red", "green", "blue")], axis=1).astype(np.uint8)
                  if all(c in names for c in ("red", "green", "blue")) else None)
    else:
        table = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(names))
        for k, prop in enumerate(el.props):
            # ascii values carry the declared precision (e.g. float32)
            table[:, k] = table[:, k].astype(prop[1]).astype(np.float64)
        verts = table[:, [names.index(a) for a in "xyz"]]
        colors = (table[:, [names.index(c) for c in ("red", "green", "blue")]].astype(np.uint8)
                  if all(c in names for c in ("red", "green", "blue")) else None)

    tris: list = []
    if "face" in parsed:
        el, rows = parsed["face"]
        list_props = [i for i, p in enumerate(el.props) if len(p) == 3 and p[0] in ("vertex_indices", "vertex_index")]
        if not list_props:
            raise ParseError("face element lacks a vertex_indices list", path)
        k = list_props[0]
        for face_no, row in enumerate(rows):
            poly = [int(x) for x in row[k]]
            if len(poly) < 3:
                raise ParseError(f"face {face_no} has fewer than 3 vertices", path)
            if min(poly) < 0 or max(poly) >= len(verts):
                raise ParseError(f"face {face_no} references a missing vertex", path)
            tris.extend(_fan(poly))
    return PlyData(verts.reshape(-1, 3), np.asarray(tris, dtype=np.int64).reshape(-1, 3), colors)


MESH_FORMATS = {".obj": "OBJ", ".ply": "PLY"}


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Load an OBJ or PLY mesh; polygons are fan-triangulated, degenerates dropped."""
    path = Path(path)
    fmt = (format or MESH_FORMATS.get(path.suffix.lower(), "")).upper()
    if fmt not in ("OBJ", "PLY"):
        raise UnsupportedFormat(f"cannot load {path.name!r}: expected .obj or .ply")
    if not path.is_file():
        raise ParseError("no such file", path)
    if fmt == "OBJ":
        return _load_obj(path)
    ply = read_ply(path)
    return TriangleMesh(ply.vertices, ply.faces)


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write("v %r %r %r\n" % (float(v[0]), float(v[1]), float(v[2])))
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ---------------------------------------------------------------- LaRI file

LARI_MAGIC = b"LARI"
LARI_VERSION = 1
LARI_HEADER = struct.Struct("<4sIIIII")
FLAG_MASK = 1
MAX_LAYERS = 255


def lari_file_size(height: int, width: int, layers: int) -> int:
    return LARI_HEADER.size + height * width + 12 * height * width * layers


def _atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_lari(lari: LariMap, index) -> bytes:
    pts = lari.points if isinstance(lari, LariMap) else np.asarray(lari)
    h, w, layers, _ = pts.shape
    idx = np.asarray(index)
    if idx.shape != (h, w):
        raise ValueError(f"stopping index {idx.shape} does not match map {(h, w)}")
    if layers > MAX_LAYERS:
        raise ValueError(f"at most {MAX_LAYERS} layers fit the file format")
    if idx.size and (idx.min() < 0 or idx.max() > layers):
        raise ValueError("stopping index outside 0..L")
    valid = mask_from_index(idx, layers)
    data = np.where(valid[..., None], pts, 0.0).astype("<f4")
    return b"".join([LARI_HEADER.pack(LARI_MAGIC, LARI_VERSION, h, w, layers, FLAG_MASK),
                     idx.astype(np.uint8).tobytes(), data.tobytes()])


def write_lari(lari: LariMap, index, path) -> int:
    """Write the map and stopping index; returns the number of bytes written.

    Entries outside the valid prefix are stored as 0.0.
    """
    payload = encode_lari(lari, index)
    _atomic_write(Path(path), payload)
    return len(payload)


def decode_lari(buf: bytes) -> tuple[LariMap, np.ndarray]:
    if len(buf) < LARI_HEADER.size:
        raise TruncatedFile(f"{len(buf)} bytes is shorter than the header")
    magic, version, h, w, layers, _flags = LARI_HEADER.unpack_from(buf)
    if magic != LARI_MAGIC:
        raise CorruptHeader(f"bad magic {magic!r}")
    if version != LARI_VERSION:
        raise VersionMismatch(f"file version {version}, reader supports {LARI_VERSION}")
    if layers < 1 or layers > MAX_LAYERS:
        raise CorruptHeader(f"layer count {layers} out of range")
    want = lari_file_size(h, w, layers)
    if len(buf) < want:
        raise TruncatedFile(f"expected {want} bytes, got {len(buf)}")
    if len(buf) > want:
        raise CorruptHeader(f"{len(buf) - want} trailing bytes after payload")
    off = LARI_HEADER.size
    idx = np.frombuffer(buf, np.uint8, h * w, off).reshape(h, w).astype(np.int64)
    if idx.size and idx.max() > layers:
        raise CorruptHeader("stopping index exceeds the layer count")
    pts = np.frombuffer(buf, "<f4", h * w * layers * 3, off + h * w).reshape(h, w, layers, 3)
    pts = pts.astype(np.float32)
    pts[~mask_from_index(idx, layers)] = np.nan
    return LariMap(pts), idx


def read_lari(path) -> tuple[LariMap, np.ndarray]:
    return decode_lari(Path(path).read_bytes())


# ------------------------------------------------------------------ export

LAYER_PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [0, 130, 200], [255, 225, 25],
    [145, 30, 180], [245, 130, 48], [70, 240, 240], [128, 128, 128],
], dtype=np.uint8)


def export_ply(points, path, layer_ids=None, binary: bool = True) -> None:
    """Write a vertex-only PLY; per-layer colors come from an 8-entry palette."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("refusing to write an empty point cloud")
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    colors = None
    if layer_ids is not None:
        ids = np.asarray(layer_ids, dtype=np.int64)
        if ids.shape != (len(pts),):
            raise ValueError("one layer id per point is required")
        colors = LAYER_PALETTE[ids % len(LAYER_PALETTE)]
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(pts)}"]
    header += [f"property {'float' if t == '<f4' else 'uchar'} {n}" for n, t in fields]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        rec = np.empty(len(pts), dtype=np.dtype(fields))
        for k, axis in enumerate("xyz"):
            rec[axis] = pts[:, k]
        if colors is not None:
            for k, c in enumerate(("red", "green", "blue")):
                rec[c] = colors[:, k]
        body = rec.tobytes()
    else:
        rows = []
        for i, p in enumerate(pts.astype(np.float32)):
            # 9 significant digits round-trip float32 exactly
            row = " ".join(format(float(c), ".9g") for c in p)
            if colors is not None:
                row += " %d %d %d" % tuple(colors[i])
            rows.append(row)
        body = ("\n".join(rows) + "\n").encode("ascii")
    _atomic_write(Path(path), head + body)


def load_point_cloud(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Points of a PLY file plus layer ids recovered from palette colors (if any)."""
    ply = read_ply(path)
    layers = None
    if ply.colors is not None:
        match = (ply.colors[:, None, :] == LAYER_PALETTE[None, :, :]).all(axis=-1)
        if match.any(axis=1).all():
            layers = match.argmax(axis=1)
    return ply.vertices, layers


# ------------------------------------------------------------------- poses


class Axes(str, enum.Enum):
    OPENCV = "x-right/y-down/z-forward"
    OPENGL = "x-right/y-up/z-back"


class Side(str, enum.Enum):
    COLUMN = "left-multiply column vectors"
    ROW = "right-multiply row vectors"


class Direction(str, enum.Enum):
    CAM_TO_WORLD = "camera-to-world"
    WORLD_TO_CAM = "world-to-camera"


@dataclass(frozen=True)
class PoseConvention:
    axes: Axes = Axes.OPENCV
    side: Side = Side.COLUMN
    direction: Direction = Direction.CAM_TO_WORLD

    def __post_init__(self):
        object.__setattr__(self, "axes", Axes(self.axes))
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "direction", Direction(self.direction))


CANONICAL = PoseConvention()
_FLIP = np.diag([1.0, -1.0, -1.0, 1.0])


def _check_rigid(m: np.ndarray, row_layout: bool) -> None:
    r = m[:3, :3]
    bottom = m[:3, 3] if row_layout else m[3, :3]
    if (np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9
            or np.abs(bottom).max() > 1e-12):
        raise InvalidRotation("pose is not a rigid transform with an orthonormal, det +1 rotation")


def rigid_inverse(m: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    r = m[:3, :3]
    out[:3, :3] = r.T
    out[:3, 3] = -r.T @ m[:3, 3]
    return out


def to_canonical(pose, conv: PoseConvention) -> np.ndarray:
    """Camera-to-world, column-vector, x-right/y-down/z-forward form of ``pose``."""
    m = np.array(pose, dtype=np.float64).reshape(4, 4)
    _check_rigid(m, conv.side is Side.ROW)
    if conv.side is Side.ROW:
        m = m.T
    if conv.direction is Direction.WORLD_TO_CAM:
        m = rigid_inverse(m)
    if conv.axes is Axes.OPENGL:
        m = m @ _FLIP
    return m


def from_canonical(pose, conv: PoseConvention) -> np.ndarray:
    m = np.array(pose, dtype=np.float64).reshape(4, 4)
    if conv.axes is Axes.OPENGL:
        m = m @ _FLIP
    if conv.direction is Direction.WORLD_TO_CAM:
        m = rigid_inverse(m)
    if conv.side is Side.ROW:
        m = m.T
    return m


def convert_pose(pose, src: PoseConvention, dst: PoseConvention) -> np.ndarray:
    """Re-express a 4x4 pose so it describes the same camera under ``dst``."""
    if src == dst:
        m = np.array(pose, dtype=np.float64).reshape(4, 4)
        _check_rigid(m, src.side is Side.ROW)
        return m
    return from_canonical(to_canonical(pose, src), dst)


def camera_rays(pose, conv: PoseConvention, pixels_cam_opencv: np.ndarray):
    """World-space origins/directions for OpenCV-frame pixel directions under ``conv``.

    A camera whose axes follow ``conv.axes`` sees the OpenCV direction
    (x, y, z) as (x, -y, -z); the pose matrix is interpreted per ``conv``.
    """
    m = np.array(pose, dtype=np.float64).reshape(4, 4)
    if conv.side is Side.ROW:
        m = m.T
    if conv.direction is Direction.WORLD_TO_CAM:
        m = rigid_inverse(m)
    d = np.asarray(pixels_cam_opencv, dtype=np.float64)
    if conv.axes is Axes.OPENGL:
        d = d * np.array([1.0, -1.0, -1.0])
    return np.broadcast_to(m[:3, 3], d.shape), d @ m[:3, :3].T
