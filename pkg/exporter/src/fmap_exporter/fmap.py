"""Standalone FMAP writer.

The consuming engine defines the format; this package only needs to emit
conforming bytes:

    bytes 0-3    magic "FMAP"
    bytes 4-5    version, uint16 LE (1)
    bytes 6-9    H, uint32 LE
    bytes 10-13  W, uint32 LE
    bytes 14-17  D, uint32 LE
    bytes 18-19  zero padding
    payload      H*W*D float32 LE, row-major, channel innermost

Raw activations go in as-is; unit normalization is the loader's job.
"""

from __future__ import annotations

import struct

import numpy as np

_HEADER = struct.Struct("<4sHIII2s")
MAX_AXIS = 4096


def write_fmap(activations: np.ndarray, path) -> None:
    arr = np.asarray(activations, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"activations must be H x W x D, got {arr.shape}")
    h, w, d = arr.shape
    if h < 1 or w < 1 or d < 2:
        raise ValueError(f"bad dims {arr.shape}")
    if max(h, w, d) > MAX_AXIS:
        raise ValueError(f"dims {arr.shape} exceed {MAX_AXIS} per axis")
    if not np.all(np.isfinite(arr)):
        raise ValueError("activations must be finite")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"FMAP", 1, h, w, d, b"\x00\x00"))
        fh.write(arr.astype("<f4").tobytes())
