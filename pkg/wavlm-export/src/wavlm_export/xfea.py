"""Writer for the "XFEA" binary feature format.

Layout (little-endian): magic "XFEA", u32 version=1, u32 T, u32 D,
f32 hop_ms, u8 normalized, then T*D float32 values row-major. The format
is owned by the consuming pipeline; this module only has to produce
byte-exact files.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"XFEA"
VERSION = 1
HEADER = "<4sIIIfB"


def write_xfea(path: str | os.PathLike, frames: np.ndarray,
               hop_ms: float = 20.0, normalized: bool = False) -> None:
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ValueError(f"expected a (T, D) matrix, got shape {frames.shape}")
    if not np.isfinite(frames).all():
        raise ValueError("non-finite feature values")
    t, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(HEADER, MAGIC, VERSION, t, d, hop_ms,
                             int(normalized)))
        fh.write(frames.astype("<f4").tobytes())


def read_xfea_header(path: str | os.PathLike) -> tuple[int, int, float, int]:
    """(T, D, hop_ms, normalized) for self-verification after export."""
    with open(path, "rb") as fh:
        raw = fh.read(struct.calcsize(HEADER))
    magic, version, t, d, hop_ms, normalized = struct.unpack(HEADER, raw)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"not an XFEA v{VERSION} file: {path}")
    return t, d, hop_ms, normalized
