"""Triangle meshes: container, OBJ/PLY reading and PLY writing."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import MeshFormatError, ValidationError

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle surface in millimetres.

    Attributes:
        vertices: (V, 3) float array.
        triangles: (T, 3) int array of vertex indices.
        normals: optional (V, 3) unit per-vertex normals.
        n_dropped: degenerate triangles removed at construction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None
    n_dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError(f"vertices must be (V, 3), got {v.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValidationError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            n = np.ascontiguousarray(self.normals, dtype=np.float64)
            if n.shape != v.shape:
                raise ValidationError("normals must match vertices")
            n.setflags(write=False)
            object.__setattr__(self, "normals", n)

    @classmethod
    def from_arrays(cls, vertices, triangles, normals=None) -> "Mesh":
        """Build a mesh, dropping degenerate triangles and checking it is nonempty."""
        vertices = np.asarray(vertices, dtype=np.float64)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValidationError("triangle index out of range")
        areas = _triangle_areas(vertices, triangles)
        keep = areas > DEGENERATE_AREA
        n_dropped = int((~keep).sum())
        if n_dropped:
            logger.info("dropped %d degenerate triangles", n_dropped)
        triangles = triangles[keep]
        if len(triangles) == 0:
            raise ValidationError("mesh has no non-degenerate triangles")
        return cls(vertices, triangles, normals, n_dropped)

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) triangle corner positions."""
        return self.vertices[self.triangles]

    @property
    def face_areas(self) -> np.ndarray:
        return _triangle_areas(self.vertices, self.triangles)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def face_normals(self) -> np.ndarray:
        """Unit facet normals from winding order (right-hand rule)."""
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "Mesh":
        v = self.vertices * scale
        n = self.normals
        if rotation is not None:
            rotation = np.asarray(rotation, dtype=np.float64)
            v = v @ rotation.T
            if n is not None:
                n = n @ rotation.T
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return Mesh(v, self.triangles, n)


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    c = vertices[triangles]
    return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)


def load_mesh(path, format: str | None = None, unit_scale: float = 1.0) -> Mesh:
    """Read an OBJ or PLY file (ASCII or binary little-endian PLY).

    Args:
        path: file location.
        format: "obj" or "ply"; inferred from the suffix when omitted.
        unit_scale: multiplier converting file units to millimetres.

    Raises:
        FileNotFoundError: if ``path`` does not exist.
        MeshFormatError: on malformed content, with the line or byte offset.
        ValidationError: if nothing usable remains after filtering.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such mesh file: {path}")
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        vertices, triangles = _read_obj(path)
    elif fmt == "ply":
        vertices, triangles = _read_ply(path)
    else:
        raise MeshFormatError(f"unsupported mesh format {fmt!r}")
    if len(vertices) == 0 or len(triangles) == 0:
        raise ValidationError(f"{path}: empty mesh")
    return Mesh.from_arrays(vertices * unit_scale, triangles)


def _read_obj(path: Path):
    vertices, triangles = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    vertices.append([float(x) for x in parts[1:4]])
                    if len(vertices[-1]) != 3:
                        raise ValueError("vertex needs 3 coordinates")
                elif parts[0] == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(vertices) + i)
                    if len(idx) < 3:
                        raise ValueError("face needs at least 3 vertices")
                    # fan triangulation for polygons
                    for k in range(1, len(idx) - 1):
                        triangles.append([idx[0], idx[k], idx[k + 1]])
            except ValueError as exc:
                raise MeshFormatError(f"{path}:{lineno}: {exc}") from exc
    v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    t = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    if len(t) and (t.min() < 0 or t.max() >= len(v)):
        raise MeshFormatError(f"{path}: face references missing vertex")
    return v, t


_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _read_ply(path: Path):
    data = path.read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshFormatError(f"{path}: missing PLY header")
    body_start = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []  # (name, count, [(prop_name, type, list_count_type)])
    for lineno, line in enumerate(header, 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path}:{lineno}: property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], parts[3], parts[2]))
            else:
                elements[-1][2].append((parts[2], parts[1], None))
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshFormatError(f"{path}: unsupported PLY format {fmt!r}")
    if fmt == "ascii":
        return _read_ply_ascii(path, data[body_start:], elements, len(header) + 2)
    return _read_ply_binary(path, data, body_start, elements)


def _ply_collect(name, row, props, vertices, faces):
    if name == "vertex":
        vertices.append([row["x"], row["y"], row["z"]])
    elif name == "face":
        idx = next(v for k, v in row.items() if k in ("vertex_indices", "vertex_index"))
        for k in range(1, len(idx) - 1):
            faces.append([idx[0], idx[k], idx[k + 1]])


def _read_ply_ascii(path, body: bytes, elements, first_line):
    lines = body.decode("ascii", errors="replace").splitlines()
    pos = 0
    vertices, faces = [], []
    for name, count, props in elements:
        for _ in range(count):
            if pos >= len(lines):
                raise MeshFormatError(f"{path}:{first_line + pos}: unexpected end of data")
            toks = lines[pos].split()
            row = {}
            try:
                k = 0
                for pname, ptype, ltype in props:
                    if ltype is None:
                        row[pname] = float(toks[k])
                        k += 1
                    else:
                        n = int(toks[k])
                        row[pname] = [int(t) for t in toks[k + 1:k + 1 + n]]
                        k += 1 + n
            except (ValueError, IndexError) as exc:
                raise MeshFormatError(f"{path}:{first_line + pos}: {exc}") from exc
            _ply_collect(name, row, props, vertices, faces)
            pos += 1
    return np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_ply_binary(path, data: bytes, offset: int, elements):
    vertices, faces = [], []
    for name, count, props in elements:
        scalar_only = all(l is None for _, _, l in props)
        if scalar_only:
            dtype = np.dtype([(p, "<" + _PLY_TYPES[t]) for p, t, _ in props])
            nbytes = dtype.itemsize * count
            if offset + nbytes > len(data):
                raise MeshFormatError(f"{path}: truncated {name} block at byte {offset}")
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            offset += nbytes
            if name == "vertex":
                vertices = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
            continue
        for _ in range(count):
            row = {}
            for pname, ptype, ltype in props:
                try:
                    if ltype is None:
                        code = "<" + _PLY_TYPES[ptype]
                        (row[pname],) = struct.unpack_from(code, data, offset)
                        offset += struct.calcsize(code)
                    else:
                        lcode = "<" + _PLY_TYPES[ltype]
                        (n,) = struct.unpack_from(lcode, data, offset)
                        offset += struct.calcsize(lcode)
                        code = "<%d%s" % (n, _PLY_TYPES[ptype])
                        row[pname] = list(struct.unpack_from(code, data, offset))
                        offset += struct.calcsize(code)
                except struct.error as exc:
                    raise MeshFormatError(f"{path}: truncated data at byte {offset}") from exc
            _ply_collect(name, row, props, vertices if isinstance(vertices, list) else [], faces)
    return np.asarray(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def save_ply(mesh: Mesh, path, binary: bool = True) -> None:
    """Write vertices and triangles as PLY."""
    path = Path(path)
    v = mesh.vertices.astype(np.float32)
    t = mesh.triangles.astype(np.int32)
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(v)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(t)}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(v.astype("<f4").tobytes())
            face = np.zeros(len(t), dtype=[("n", "u1"), ("i", "<i4", (3,))])
            face["n"] = 3
            face["i"] = t
            fh.write(face.tobytes())
        else:
            for x in v:
                fh.write(f"{x[0]:.6f} {x[1]:.6f} {x[2]:.6f}\n".encode())
            for f in t:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode())


def save_obj(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        for x in mesh.vertices:
            fh.write(f"v {x[0]:.9g} {x[1]:.9g} {x[2]:.9g}\n")
        for f in mesh.triangles + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")
