"""Feature-map and label-grid containers plus their on-disk formats.

The FMAP binary format:

    bytes 0-3    magic "FMAP"
    bytes 4-5    version, uint16 little-endian (currently 1)
    bytes 6-9    H, uint32 LE
    bytes 10-13  W, uint32 LE
    bytes 14-17  D, uint32 LE
    bytes 18-19  zero padding
    payload      H*W*D float32 LE, row-major, channel innermost
                 (index = ((row*W)+col)*D + channel)

Payloads are stored in single precision; everything in memory is double.
Vectors are re-normalized to unit length on load, and saving runs a small
fixpoint so that save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAX_AXIS = 4096
FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
_HEADER = struct.Struct("<4sHIII2s")  # 20 bytes

# replacement for degenerate (near-zero) vectors: first basis vector
_ZERO_NORM_EPS = 1e-12


class FormatError(ValueError):
    """Base class for file-format violations."""


class MalformedHeaderError(FormatError):
    pass


class DimensionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


def normalize(v: np.ndarray) -> np.ndarray:
    """Project a raw vector onto the unit sphere.

    Direction is preserved for inputs with norm > 1e-12; degenerate inputs
    map to the first basis vector e1. The result is an exact fixpoint:
    normalize(normalize(v)) returns bit-identical values.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite component in vector")
    n = float(np.linalg.norm(v))
    if n <= _ZERO_NORM_EPS:
        e1 = np.zeros_like(v)
        e1[0] = 1.0
        return e1
    u = v / n
    # drive to an exact fixpoint of x -> x/||x||; the iteration may fall
    # into an ulp-level cycle, canonicalized to its smallest byte-state so
    # the result depends only on the cycle (hence normalize is idempotent)
    visited = [u.tobytes()]
    while True:
        n2 = float(np.linalg.norm(u))
        if n2 == 1.0:
            return u
        u2 = u / n2
        blob = u2.tobytes()
        if blob == visited[-1]:
            return u
        if blob in visited:
            cycle = visited[visited.index(blob) :]
            return np.frombuffer(min(cycle), dtype=u.dtype).copy()
        visited.append(blob)
        u = u2


def normalize_rows(arr: np.ndarray) -> tuple[np.ndarray, int]:
    """Unit-normalize the last axis of ``arr``; returns (result, zero_count).

    Vectorized version of :func:`normalize` with the same degenerate-input
    rule; used by the loaders. Runs the same fixpoint iteration.
    """
    out = np.asarray(arr, dtype=np.float64).copy()
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite component in feature payload")
    flat = out.reshape(-1, out.shape[-1])
    norms = np.linalg.norm(flat, axis=1)
    dead = norms <= _ZERO_NORM_EPS
    zero_count = int(dead.sum())
    if zero_count:
        flat[dead] = 0.0
        flat[dead, 0] = 1.0
        norms = np.linalg.norm(flat, axis=1)
    flat /= norms[:, None]
    for _ in range(4):
        norms = np.linalg.norm(flat, axis=1)
        off = norms != 1.0
        if not off.any():
            break
        nxt = flat[off] / norms[off, None]
        if np.array_equal(nxt, flat[off]):
            break
        flat[off] = nxt
    return out, zero_count


@dataclass(frozen=True)
class LoadReport:
    """Ingestion notes from a feature-map load."""

    zero_vectors: int = 0


@dataclass(frozen=True)
class FeatureMap:
    """H x W grid of D-dimensional unit feature vectors (float64)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise DimensionError(f"feature map must be H x W x D, got shape {d.shape}")
        h, w, depth = d.shape
        if h < 1 or w < 1 or depth < 2:
            raise DimensionError(f"bad feature-map dims {h}x{w}x{depth}")
        if h > MAX_AXIS or w > MAX_AXIS or depth > MAX_AXIS:
            raise DimensionError(f"dims {h}x{w}x{depth} exceed {MAX_AXIS} per axis")
        norms = np.linalg.norm(d, axis=2)
        if not np.all(np.abs(norms - 1.0) <= 1e-6):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise ValueError(f"feature vectors must be unit norm (worst |n-1| = {worst:.2e})")
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_raw(cls, arr: np.ndarray) -> tuple["FeatureMap", LoadReport]:
        """Build a map from raw (possibly unnormalized) activations."""
        data, zeros = normalize_rows(arr)
        return cls(data), LoadReport(zero_vectors=zeros)

    def crop(self, r0: int, c0: int, h: int, w: int) -> "FeatureMap":
        if r0 < 0 or c0 < 0 or r0 + h > self.height or c0 + w > self.width:
            raise DimensionError(
                f"crop [{r0}:{r0+h}, {c0}:{c0+w}] outside {self.height}x{self.width} lattice"
            )
        return FeatureMap(self.data[r0 : r0 + h, c0 : c0 + w].copy())


@dataclass(frozen=True)
class LabelGrid:
    """Per-cell tri-state labels: 1 foreground, 0 context, -1 occluded."""

    labels: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.labels)
        if a.ndim != 2:
            raise DimensionError(f"label grid must be 2-D, got shape {a.shape}")
        if not np.isin(a, (-1, 0, 1)).all():
            raise ValueError("labels must lie in {-1, 0, 1}")
        a = a.astype(np.int8)
        a.flags.writeable = False
        object.__setattr__(self, "labels", a)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class Box:
    """Center/size rectangle; axis 0 (x) is the row axis, extents (h, w).

    ``frame`` tags which lattice the coordinates live on ("image" or
    "representation"); consumers check the tag at operation boundaries.
    """

    cx: float
    cy: float
    h: float
    w: float
    frame: str = "image"

    def __post_init__(self):
        if self.h <= 0 or self.w <= 0:
            raise ValueError(f"box extents must be positive, got h={self.h} w={self.w}")
        if self.frame not in ("image", "representation"):
            raise ValueError(f"unknown box frame {self.frame!r}")

    @property
    def x0(self) -> float:
        return self.cx - self.h / 2.0

    @property
    def x1(self) -> float:
        return self.cx + self.h / 2.0

    @property
    def y0(self) -> float:
        return self.cy - self.w / 2.0

    @property
    def y1(self) -> float:
        return self.cy + self.w / 2.0

    def contains_box(self, other: "Box") -> bool:
        eps = 1e-9
        return (
            self.x0 <= other.x0 + eps
            and self.x1 >= other.x1 - eps
            and self.y0 <= other.y0 + eps
            and self.y1 >= other.y1 - eps
        )

    def iou(self, other: "Box") -> float:
        ix = max(0.0, min(self.x1, other.x1) - max(self.x0, other.x0))
        iy = max(0.0, min(self.y1, other.y1) - max(self.y0, other.y0))
        inter = ix * iy
        union = self.h * self.w + other.h * other.w - inter
        return inter / union if union > 0 else 1.0

    def cell_window(self) -> tuple[int, int, int, int]:
        """Integer (r0, c0, h, w) covering the box on the 1-unit cell grid."""
        r0 = int(np.floor(self.x0 + 0.5))
        c0 = int(np.floor(self.y0 + 0.5))
        h = max(1, int(round(self.h)))
        w = max(1, int(round(self.w)))
        return r0, c0, h, w

    @classmethod
    def from_cells(cls, r0: int, c0: int, h: int, w: int, frame: str = "image") -> "Box":
        return cls(r0 + h / 2.0, c0 + w / 2.0, float(h), float(w), frame)

    def as_list(self) -> list[float]:
        return [float(self.cx), float(self.cy), float(self.h), float(self.w)]


def _f32_unit_fixpoint(row: np.ndarray) -> np.ndarray:
    """f32 vector stable under f32(normalize_f64(.)); cycles canonicalized.

    The normalize-then-round map can oscillate between ulp-neighbors; picking
    the smallest byte-state of the cycle makes the result a function of the
    cycle alone, so save -> load -> save lands on the same bytes.
    """
    x = row.astype(np.float32)
    visited = [x.tobytes()]
    # orbits are finite (f32 state space): short transients then a fixpoint
    # or a tiny cycle; transients of a few dozen ulp-steps occur in practice
    for _ in range(4096):
        # the exact f64 normalization the loader applies
        x64, _ = normalize_rows(x.astype(np.float64)[None, :])
        nxt = x64[0].astype(np.float32)
        blob = nxt.tobytes()
        if blob == visited[-1]:
            return nxt
        if blob in visited:
            cycle = visited[visited.index(blob) :]
            return np.frombuffer(min(cycle), dtype=np.float32).copy()
        visited.append(blob)
        x = nxt
    return x


def save_feature_map(fmap: FeatureMap, path) -> None:
    """Write the FMAP binary format (see module docstring)."""
    flat = fmap.data.reshape(-1, fmap.depth)
    payload = np.stack([_f32_unit_fixpoint(row) for row in flat]).reshape(
        fmap.data.shape
    )
    header = _HEADER.pack(
        FMAP_MAGIC, FMAP_VERSION, fmap.height, fmap.width, fmap.depth, b"\x00\x00"
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.astype("<f4").tobytes())


def load_feature_map(path) -> FeatureMap:
    fmap, _ = load_feature_map_with_report(path)
    return fmap


def load_feature_map_with_report(path) -> tuple[FeatureMap, LoadReport]:
    """Load an FMAP file; vectors are re-normalized, dead cells reported."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file shorter than the 20-byte header")
    magic, version, h, w, d, pad = _HEADER.unpack_from(raw, 0)
    if magic != FMAP_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != FMAP_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if pad != b"\x00\x00":
        raise MalformedHeaderError(f"{path}: nonzero header padding")
    if h < 1 or w < 1 or d < 2 or h > MAX_AXIS or w > MAX_AXIS or d > MAX_AXIS:
        raise DimensionError(f"{path}: bad dims H={h} W={w} D={d}")
    expected = h * w * d * 4
    body = raw[_HEADER.size :]
    if len(body) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload {len(body)} bytes, expected {expected}"
        )
    if len(body) > expected:
        raise FormatError(f"{path}: {len(body) - expected} trailing bytes after payload")
    arr = np.frombuffer(body, dtype="<f4").reshape(h, w, d)
    data, zeros = normalize_rows(arr.astype(np.float64))
    return FeatureMap(data), LoadReport(zero_vectors=zeros)


def save_label_grid(grid: LabelGrid, path) -> None:
    """Text format: first line "H W", then H rows of W labels."""
    lines = [f"{grid.height} {grid.width}"]
    for row in grid.labels:
        lines.append(" ".join(str(int(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_label_grid(path) -> LabelGrid:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 2:
            raise MalformedHeaderError(f"{path}: first line must be 'H W'")
        h, w = int(head[0]), int(head[1])
        rows = []
        for _ in range(h):
            vals = fh.readline().split()
            if len(vals) != w:
                raise TruncatedPayloadError(f"{path}: short label row")
            rows.append([int(v) for v in vals])
    return LabelGrid(np.array(rows, dtype=np.int8))
