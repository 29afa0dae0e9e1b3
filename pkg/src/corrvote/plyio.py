"""Minimal PLY reader/writer for vertex data (positions and optional normals).

Supports ``ascii`` and ``binary_little_endian`` files. Only the ``vertex``
element is loaded; other elements (faces, edges, ...) are skipped, as are
vertex properties other than ``x y z nx ny nz``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud

__all__ = ["PlyError", "read_ply", "write_ply"]

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    """Malformed or unsupported PLY input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class _Element:
    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        self.props: list[tuple[str, str, str | None]] = []  # (name, dtype, list count dtype)


def _parse_header(fh) -> tuple[str, list[_Element], int]:
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyError("missing 'ply' magic", 1)
    fmt = None
    elements: list[_Element] = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyError("unexpected end of file inside header", lineno)
        try:
            words = raw.decode("ascii").split()
        except UnicodeDecodeError:
            raise PlyError("non-ASCII bytes in header", lineno) from None
        if not words:
            continue
        key = words[0]
        if key == "end_header":
            break
        if key in ("comment", "obj_info"):
            continue
        if key == "format":
            if len(words) != 3 or words[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise PlyError(f"bad format line: {raw.decode().strip()!r}", lineno)
            if words[1] == "binary_big_endian":
                raise PlyError("binary_big_endian is not supported", lineno)
            fmt = words[1]
        elif key == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyError(f"bad element line: {raw.decode().strip()!r}", lineno)
            elements.append(_Element(words[1], int(words[2])))
        elif key == "property":
            if not elements:
                raise PlyError("property before any element", lineno)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _TYPES or words[3] not in _TYPES:
                    raise PlyError(f"unknown list property type in {raw.decode().strip()!r}", lineno)
                elements[-1].props.append((words[4], _TYPES[words[3]], _TYPES[words[2]]))
            elif len(words) == 3:
                if words[1] not in _TYPES:
                    raise PlyError(f"unknown property type {words[1]!r}", lineno)
                elements[-1].props.append((words[2], _TYPES[words[1]], None))
            else:
                raise PlyError(f"bad property line: {raw.decode().strip()!r}", lineno)
        else:
            raise PlyError(f"unknown header keyword {key!r}", lineno)
    if fmt is None:
        raise PlyError("header has no format line", lineno)
    return fmt, elements, lineno


def _skip_binary(fh, el: _Element):
    if all(lst is None for _, _, lst in el.props):
        size = sum(np.dtype(t).itemsize for _, t, _ in el.props)
        fh.seek(size * el.count, 1)
        return
    for _ in range(el.count):
        for _, t, lst in el.props:
            if lst is None:
                fh.seek(np.dtype(t).itemsize, 1)
            else:
                ct = np.dtype(lst)
                (n,) = struct.unpack("<" + ct.char, fh.read(ct.itemsize))
                fh.seek(n * np.dtype(t).itemsize, 1)


def _vertex_columns(el: _Element, lineno: int) -> dict[str, int]:
    names = [p[0] for p in el.props]
    if any(p[2] is not None for p in el.props):
        raise PlyError("list properties on vertex element are not supported", lineno)
    for axis in "xyz":
        if axis not in names:
            raise PlyError(f"vertex element lacks property {axis!r}", lineno)
    return {name: i for i, name in enumerate(names)}


def read_ply(path) -> PointCloud:
    """Load vertices (and normals when ``nx ny nz`` are present)."""
    path = Path(path)
    with path.open("rb") as fh:
        fmt, elements, header_lines = _parse_header(fh)
        vertex = next((e for e in elements if e.name == "vertex"), None)
        if vertex is None:
            raise PlyError("no vertex element in header", header_lines)
        cols = _vertex_columns(vertex, header_lines)
        if fmt == "ascii":
            data = _read_ascii_vertices(fh, elements, vertex, header_lines)
        else:
            for el in elements:
                if el is vertex:
                    break
                _skip_binary(fh, el)
            dtype = np.dtype([(name, "<" + t) for name, t, _ in vertex.props])
            buf = fh.read(dtype.itemsize * vertex.count)
            if len(buf) != dtype.itemsize * vertex.count:
                raise PlyError("file truncated inside vertex data")
            rec = np.frombuffer(buf, dtype=dtype)
            data = np.stack([rec[name].astype(float) for name, _, _ in vertex.props], axis=1) \
                if vertex.count else np.empty((0, len(vertex.props)))
    points = data[:, [cols["x"], cols["y"], cols["z"]]]
    normals = None
    if all(k in cols for k in ("nx", "ny", "nz")):
        normals = data[:, [cols["nx"], cols["ny"], cols["nz"]]]
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        good = lengths[:, 0] > 0
        normals[good] /= lengths[good]
        normals[~good] = (0.0, 0.0, 1.0)
    return PointCloud(points, normals)


def _read_ascii_vertices(fh, elements, vertex, header_lines) -> np.ndarray:
    lineno = header_lines
    rows = []
    for el in elements:
        for _ in range(el.count):
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise PlyError(f"unexpected end of file in element {el.name!r}", lineno)
            if el is not vertex:
                continue
            words = raw.split()
            if len(words) < len(vertex.props):
                raise PlyError(f"expected {len(vertex.props)} vertex values, got {len(words)}", lineno)
            try:
                rows.append([float(w) for w in words[: len(vertex.props)]])
            except ValueError:
                raise PlyError("non-numeric vertex value", lineno) from None
        if el is vertex:
            break
    return np.array(rows, dtype=float).reshape(-1, len(vertex.props))


def write_ply(path, cloud: PointCloud, binary: bool = False, comments=()) -> None:
    """Write vertices (and normals if present) as float64 properties."""
    has_normals = cloud.normals is not None
    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if has_normals else [])
    data = cloud.points if not has_normals else np.hstack([cloud.points, cloud.normals])
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {len(cloud)}")
    header += [f"property double {n}" for n in names]
    header.append("end_header")
    with Path(path).open("wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
        else:
            for row in data:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))
