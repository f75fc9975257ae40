"""Reader and writer for unsigned-byte IDX files (the MNIST container format)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

UBYTE = 0x08


class IdxFormatError(ValueError):
    pass


def read_idx(path, ndim: int | None = None) -> np.ndarray:
    """Read an IDX file of unsigned bytes.

    The header is a 4-byte big-endian magic ``0x000008NN`` (NN = number of
    dimensions), then NN big-endian uint32 sizes, then row-major data.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError("file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic >> 8 != UBYTE:
        raise IdxFormatError(f"magic 0x{magic:08x} is not an unsigned-byte IDX file")
    nd = magic & 0xFF
    if ndim is not None and nd != ndim:
        raise IdxFormatError(f"expected {ndim} dimensions, file has {nd}")
    header = 4 + 4 * nd
    if len(raw) < header:
        raise IdxFormatError("truncated dimension header")
    dims = struct.unpack(f">{nd}I", raw[4:header])
    body = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if body.size != int(np.prod(dims)):
        raise IdxFormatError(f"payload has {body.size} bytes, header promises {int(np.prod(dims))}")
    return body.reshape(dims).copy()


def write_idx(path, data) -> Path:
    a = np.asarray(data)
    if a.dtype != np.uint8:
        raise IdxFormatError("only uint8 arrays can be written")
    path = Path(path)
    path.write_bytes(struct.pack(f">I{a.ndim}I", (UBYTE << 8) | a.ndim, *a.shape) + np.ascontiguousarray(a).tobytes())
    return path
