"""Cloud file I/O: PLY (ascii, binary little/big endian) and plain XYZ text.

Only the ``vertex`` element is interpreted. Scalar vertex properties other
than x/y/z come back as named channels; ``std`` is the one the pipeline
cares about.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .cloud import PointCloud
from .errors import CloudIOError, FormatError, LengthMismatchError, ParseError

FORMATS = ("ply-ascii", "ply-binary-le", "xyz-text")

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_PLY_ENCODINGS = {"ascii": None, "binary_little_endian": "<", "binary_big_endian": ">"}
_COLOR_PROPS = ("red", "green", "blue")


@dataclass
class _Element:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, dtype) or (name, count_t, item_t)

    @property
    def has_lists(self) -> bool:
        return any(len(p) == 3 for p in self.props)


@dataclass
class CloudData:
    """Everything read from a cloud file."""

    cloud: PointCloud
    channels: dict

    @property
    def std(self):
        return self.channels.get("std")

    @property
    def colors(self):
        if all(c in self.channels for c in _COLOR_PROPS):
            return np.column_stack([self.channels[c] for c in _COLOR_PROPS]).astype(np.uint8)
        return None


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix in (".xyz", ".txt"):
        return "xyz-text"
    return "ply-binary-le"


# ------------------------------------------------------------------ reading


def _parse_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise ParseError("missing 'ply' magic", path=path, line=1)
    encoding = None
    elements: list[_Element] = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("header not terminated by end_header", path=path, line=lineno)
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ascii byte in header", path=path, line=lineno) from None
        if not line or line.startswith(("comment", "obj_info")):
            continue
        tok = line.split()
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in _PLY_ENCODINGS:
                raise ParseError(f"unsupported format line {line!r}", path=path, line=lineno)
            encoding = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(f"bad element line {line!r}", path=path, line=lineno)
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"bad element count {tok[2]!r}", path=path, line=lineno) from None
            if count < 0:
                raise ParseError("negative element count", path=path, line=lineno)
            elements.append(_Element(tok[1], count))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", path=path, line=lineno)
            if len(tok) == 5 and tok[1] == "list":
                if tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise ParseError(f"unknown list type in {line!r}", path=path, line=lineno)
                elements[-1].props.append((tok[4], _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            elif len(tok) == 3 and tok[1] in _PLY_TYPES:
                elements[-1].props.append((tok[2], _PLY_TYPES[tok[1]]))
            else:
                raise ParseError(f"bad property line {line!r}", path=path, line=lineno)
        else:
            raise ParseError(f"unknown header keyword {tok[0]!r}", path=path, line=lineno)
    if encoding is None:
        raise ParseError("header has no format line", path=path, line=lineno)
    return encoding, elements, lineno


def _vertex_element(elements, path):
    for i, el in enumerate(elements):
        if el.name == "vertex":
            names = [p[0] for p in el.props]
            missing = [c for c in "xyz" if c not in names]
            if missing:
                raise FormatError(f"vertex element lacks {','.join(missing)}", path=path)
            return i, el
    raise FormatError("file has no vertex element", path=path)


def _columns_to_data(names, columns) -> CloudData:
    table = dict(zip(names, columns))
    pts = np.column_stack([np.asarray(table[c], dtype=np.float64) for c in "xyz"])
    channels = {k: np.asarray(v) for k, v in table.items() if k not in ("x", "y", "z")}
    for k, v in channels.items():
        if v.dtype.kind == "f":
            channels[k] = v.astype(np.float64)
    return CloudData(PointCloud(pts.reshape(-1, 3)), channels)


def _read_ply_ascii(fh, elements, vidx, header_lines, path) -> CloudData:
    lineno = header_lines
    vertex = elements[vidx]
    for el in elements[:vidx]:
        for _ in range(el.count):
            if not fh.readline():
                raise ParseError(f"unexpected EOF in element {el.name!r}", path=path, line=lineno + 1)
            lineno += 1
    if vertex.has_lists:
        raise FormatError("list properties on vertex are not supported", path=path)
    names = [p[0] for p in vertex.props]
    dtypes = [p[1] for p in vertex.props]
    rows = np.empty((vertex.count, len(names)), dtype=np.float64)
    for r in range(vertex.count):
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("unexpected EOF in vertex element", path=path, line=lineno)
        tok = raw.split()
        if len(tok) != len(names):
            raise ParseError(
                f"expected {len(names)} values, found {len(tok)}", path=path, line=lineno
            )
        try:
            rows[r] = [float(t) for t in tok]
        except ValueError:
            raise ParseError(f"non-numeric value in {raw.strip()!r}", path=path, line=lineno) from None
    columns = [rows[:, j].astype(dt) if dt[0] in "iu" else rows[:, j] for j, dt in enumerate(dtypes)]
    return _columns_to_data(names, columns)


def _skip_binary_element(fh, el, endian, path):
    if not el.has_lists:
        size = sum(np.dtype(p[1]).itemsize for p in el.props) * el.count
        fh.seek(size, os.SEEK_CUR)
        return
    for _ in range(el.count):
        for p in el.props:
            if len(p) == 2:
                fh.seek(np.dtype(p[1]).itemsize, os.SEEK_CUR)
            else:
                ct = np.dtype(endian + p[1])
                raw = fh.read(ct.itemsize)
                if len(raw) != ct.itemsize:
                    raise ParseError(f"truncated element {el.name!r}", path=path, offset=fh.tell())
                n = int(np.frombuffer(raw, dtype=ct)[0])
                fh.seek(n * np.dtype(p[2]).itemsize, os.SEEK_CUR)


def _read_ply_binary(fh, elements, vidx, endian, path) -> CloudData:
    vertex = elements[vidx]
    for el in elements[:vidx]:
        _skip_binary_element(fh, el, endian, path)
    if vertex.has_lists:
        raise FormatError("list properties on vertex are not supported", path=path)
    dtype = np.dtype([(p[0], endian + p[1]) for p in vertex.props])
    offset = fh.tell()
    need = dtype.itemsize * vertex.count
    raw = fh.read(need)
    if len(raw) != need:
        raise ParseError(
            f"vertex data truncated: need {need} bytes, have {len(raw)}",
            path=path,
            offset=offset + len(raw),
        )
    rec = np.frombuffer(raw, dtype=dtype)
    names = [p[0] for p in vertex.props]
    return _columns_to_data(names, [rec[n] for n in names])


def _read_ply(path: Path) -> CloudData:
    with open(path, "rb") as fh:
        encoding, elements, header_lines = _parse_header(fh, path)
        vidx, _ = _vertex_element(elements, path)
        endian = _PLY_ENCODINGS[encoding]
        if endian is None:
            return _read_ply_ascii(fh, elements, vidx, header_lines, path)
        return _read_ply_binary(fh, elements, vidx, endian, path)


def _read_xyz(path: Path) -> CloudData:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tok = s.split()
            if len(tok) != 3:
                raise ParseError(f"expected 3 values, found {len(tok)}", path=path, line=lineno)
            try:
                rows.append([float(t) for t in tok])
            except ValueError:
                raise ParseError(f"non-numeric value in {s!r}", path=path, line=lineno) from None
    return CloudData(PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3)), {})


def read_cloud(path, format: str | None = None) -> CloudData:
    """Read a cloud with all of its extra vertex channels."""
    path = Path(path)
    if not path.is_file():
        raise CloudIOError(f"no such file: {path}", path=path)
    fmt = format or _infer_format(path)
    if fmt not in FORMATS:
        raise FormatError(f"unknown cloud format {fmt!r}", path=path)
    try:
        if fmt == "xyz-text":
            return _read_xyz(path)
        return _read_ply(path)
    except OSError as exc:
        raise CloudIOError(str(exc), path=path) from exc


def load_cloud(path, format: str | None = None):
    """Load ``(cloud, std)``; ``std`` is ``None`` unless the file carries a
    ``std`` vertex property.

    ``format`` may be ``"ply-ascii"``, ``"ply-binary-le"`` or ``"xyz-text"``;
    for PLY the header decides the encoding, so both PLY names are accepted
    for either encoding.
    """
    data = read_cloud(path, format)
    return data.cloud, data.std


# ------------------------------------------------------------------ writing


def blue_red(values) -> np.ndarray:
    """Linear blue-to-red uint8 colours over [min, max] of ``values``.

    A zero-width range maps every value to blue.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return np.zeros((0, 3), dtype=np.uint8)
    lo, hi = v.min(), v.max()
    t = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    rgb = np.column_stack([255.0 * t, np.zeros_like(t), 255.0 * (1.0 - t)])
    return np.rint(rgb).astype(np.uint8)


def _float_token(value, kind: str) -> str:
    if kind == "f4":
        return repr(float(np.float32(value)))
    return repr(float(value))


def save_cloud(
    cloud: PointCloud,
    path,
    format: str | None = None,
    channels: Mapping[str, np.ndarray] | None = None,
    color_by: str | None = None,
    precision: str = "double",
) -> None:
    """Write a cloud.

    ``channels`` maps property names to per-point float arrays. ``color_by``
    names one of them; its values are turned into uchar red/green/blue with
    :func:`blue_red`. ``precision`` is ``"double"`` (lossless round trip) or
    ``"float"`` (float32 coordinates and channels).
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt not in FORMATS:
        raise FormatError(f"unknown cloud format {fmt!r}", path=path)
    channels = dict(channels or {})
    n = cloud.count
    for name, values in channels.items():
        if np.asarray(values).shape != (n,):
            raise LengthMismatchError(
                f"channel {name!r} has {np.asarray(values).size} values for {n} points",
                path=path,
            )
    if color_by is not None and color_by not in channels:
        raise LengthMismatchError(f"colour channel {color_by!r} not supplied", path=path)

    try:
        if fmt == "xyz-text":
            if channels:
                raise FormatError("xyz-text cannot carry extra channels", path=path)
            with open(path, "w", encoding="utf-8") as fh:
                for p in cloud.points:
                    fh.write(" ".join(repr(float(v)) for v in p) + "\n")
            return
        _write_ply(cloud, path, fmt, channels, color_by, precision)
    except OSError as exc:
        raise CloudIOError(str(exc), path=path) from exc


def _write_ply(cloud, path, fmt, channels, color_by, precision):
    kind = {"double": "f8", "float": "f4"}.get(precision)
    if kind is None:
        raise FormatError(f"precision must be 'double' or 'float', not {precision!r}")
    ply_t = "double" if kind == "f8" else "float"
    cols = [("x", kind, cloud.points[:, 0]), ("y", kind, cloud.points[:, 1]), ("z", kind, cloud.points[:, 2])]
    for name, values in channels.items():
        cols.append((name, kind, np.asarray(values, dtype=np.float64)))
    if color_by is not None:
        rgb = blue_red(channels[color_by])
        for j, c in enumerate(_COLOR_PROPS):
            cols.append((c, "u1", rgb[:, j]))

    encoding = "ascii" if fmt == "ply-ascii" else "binary_little_endian"
    header = ["ply", f"format {encoding} 1.0", f"element vertex {cloud.count}"]
    for name, dt, _ in cols:
        header.append(f"property {'uchar' if dt == 'u1' else ply_t} {name}")
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    with open(path, "wb") as fh:
        fh.write(head)
        if encoding == "ascii":
            lines = []
            for i in range(cloud.count):
                toks = [
                    str(int(v[i])) if dt == "u1" else _float_token(v[i], dt)
                    for _, dt, v in cols
                ]
                lines.append(" ".join(toks))
            fh.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))
        else:
            rec = np.empty(cloud.count, dtype=[(n, "<" + dt) for n, dt, _ in cols])
            for n, _, v in cols:
                rec[n] = v
            fh.write(rec.tobytes())
