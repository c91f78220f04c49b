"""Binary and text formats: LAT1 latents, PGM images, CSV tables, JSON documents."""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .latent_grid import LatentGrid, Level

LAT1_MAGIC = b"LAT1"
_HEADER = struct.Struct("<4sIIII")


def encode_lat1(grid: LatentGrid) -> bytes:
    c, h, w = grid.shape
    header = _HEADER.pack(LAT1_MAGIC, h, w, c, int(grid.level))
    return header + grid.values.astype("<f4").tobytes(order="C")


def decode_lat1(data: bytes) -> LatentGrid:
    if len(data) < _HEADER.size:
        raise ShapeError("truncated LAT1 header")
    magic, h, w, c, level = _HEADER.unpack_from(data)
    if magic != LAT1_MAGIC:
        raise ShapeError(f"bad magic {magic!r}")
    if level not in (0, 1):
        raise ShapeError(f"bad level {level}")
    n = h * w * c
    body = data[_HEADER.size:]
    if len(body) != 4 * n:
        raise ShapeError(f"expected {4 * n} payload bytes, got {len(body)}")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(c, h, w)
    return LatentGrid(values, Level(level))


def write_lat1(path, grid: LatentGrid) -> None:
    Path(path).write_bytes(encode_lat1(grid))


def read_lat1(path) -> LatentGrid:
    return decode_lat1(Path(path).read_bytes())


def encode_pgm(image) -> bytes:
    """Binary P5 with maxval 255 from an image in [0, 1] (or a {0, 1} map)."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError("PGM needs a 2-D image")
    px = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ShapeError("not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    body = data[pos + 1:pos + 1 + w * h]  # exactly one whitespace byte precedes the raster
    px = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    return px.astype(np.float64) / maxval


def write_pgm(path, image) -> None:
    Path(path).write_bytes(encode_pgm(image))


def write_csv(path, header, rows) -> None:
    """CSV with floats written via ``repr`` so they round-trip exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"not serializable: {type(o)}")


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
