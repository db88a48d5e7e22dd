"""Density-map and annotation containers, value expansion and file I/O.

Coordinates follow the image convention: ``x`` is the column, ``y`` the row,
origin at the top-left pixel. Grids are stored as ``(height, width)`` arrays.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidParameterError, ValidationError

DMF1_MAGIC = b"DMF1"
_HEADER = struct.Struct("<4sII")
# 2**31 float32 cells is 8 GiB; anything larger is a corrupt header
MAX_CELLS = 2**31


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DensityMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"density map must be a non-empty 2-D grid, got shape {v.shape}")
        v = _frozen(v)
        if not np.all(np.isfinite(v)):
            raise ValidationError("density map contains non-finite values")
        if np.any(v < 0):
            raise ValidationError("density map contains negative values")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, width: int, height: int) -> "DensityMap":
        return cls(np.zeros((height, width)))

    def __eq__(self, other):
        if not isinstance(other, DensityMap):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    width: int
    height: int
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValidationError("frame dimensions must be integers")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"frame must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = np.zeros((0, 2))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError(f"points must be an (n, 2) array, got shape {pts.shape}")
        for i, (x, y) in enumerate(pts):
            if not (np.isfinite(x) and np.isfinite(y)):
                raise ValidationError(f"point {i} is not finite", index=i)
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValidationError(
                    f"point {i} ({x}, {y}) outside frame {self.width}x{self.height}", index=i
                )
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self):
        return len(self.points)

    @property
    def n(self) -> int:
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.points, other.points)
        )

    __hash__ = None


def integral_count(dmap: DensityMap) -> float:
    return float(dmap.values.sum())


def expand_values(dmap: DensityMap, factor: float) -> DensityMap:
    """Scale every pixel by ``factor``. Deflate with ``1 / factor``."""
    if not factor > 0 or not np.isfinite(factor):
        raise InvalidParameterError(f"expansion factor must be positive, got {factor}")
    return DensityMap(dmap.values * factor)


def encode_density_map(dmap: DensityMap) -> bytes:
    payload = np.ascontiguousarray(dmap.values, dtype="<f4").tobytes()
    return _HEADER.pack(DMF1_MAGIC, dmap.width, dmap.height) + payload


def decode_density_map(data: bytes) -> DensityMap:
    if len(data) < _HEADER.size:
        if data[:4] != DMF1_MAGIC[: len(data[:4])]:
            raise FormatError(f"bad magic {data[:4]!r}", 0)
        raise FormatError("truncated header", len(data))
    magic, width, height = _HEADER.unpack_from(data)
    if magic != DMF1_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if width == 0 or height == 0:
        raise FormatError(f"zero dimension {width}x{height}", 4)
    cells = width * height
    if cells > MAX_CELLS:
        raise FormatError(f"dimensions {width}x{height} overflow the cell limit", 4)
    expected = _HEADER.size + 4 * cells
    if len(data) < expected:
        raise FormatError(
            f"truncated payload: need {4 * cells} bytes, have {len(data) - _HEADER.size}", len(data)
        )
    if len(data) > expected:
        raise FormatError("trailing bytes after payload", expected)
    vals = np.frombuffer(data, dtype="<f4", count=cells, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(vals) | (vals < 0))
    if bad.size:
        raise FormatError(f"invalid density value {vals[bad[0]]}", _HEADER.size + 4 * int(bad[0]))
    return DensityMap(vals.astype(np.float64).reshape(height, width))


def write_density_map(dmap: DensityMap, path) -> None:
    Path(path).write_bytes(encode_density_map(dmap))


def read_density_map(path) -> DensityMap:
    return decode_density_map(Path(path).read_bytes())


def annotations_to_json(ann: AnnotationSet) -> dict:
    return {
        "width": ann.width,
        "height": ann.height,
        "points": [[float(x), float(y)] for x, y in ann.points],
    }


def annotations_from_json(doc) -> AnnotationSet:
    if not isinstance(doc, dict):
        raise ValidationError("annotation document must be a JSON object")
    for key in ("width", "height", "points"):
        if key not in doc:
            raise ValidationError(f"annotation document missing {key!r}")
    w, h, pts = doc["width"], doc["height"], doc["points"]
    if not isinstance(w, int) or isinstance(w, bool) or not isinstance(h, int) or isinstance(h, bool):
        raise ValidationError("width and height must be integers")
    if not isinstance(pts, list):
        raise ValidationError("points must be a list")
    for i, p in enumerate(pts):
        if (
            not isinstance(p, (list, tuple))
            or len(p) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)
        ):
            raise ValidationError(f"point {i} must be a pair of numbers", index=i)
    return AnnotationSet(w, h, np.array(pts, dtype=np.float64).reshape(-1, 2))


def load_annotations(path) -> AnnotationSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed annotation JSON: {exc}") from exc
    return annotations_from_json(doc)


def save_annotations(ann: AnnotationSet, path) -> None:
    Path(path).write_text(json.dumps(annotations_to_json(ann)), encoding="utf-8")
