"""Bit-exact raster container used for every array artifact on disk.

Layout: magic ``FWIR`` | u8 version=1 | u8 dtype | u8 rank | u8 pad |
rank x u32 little-endian dims | row-major little-endian payload.
Supported dtypes: 0=float32, 1=float64, 2=uint8.  Rank is at most 4.
"""

from __future__ import annotations

import os
import struct
from typing import BinaryIO, Union

import numpy as np

__all__ = ["read_raster", "write_raster", "RasterFormatError"]

MAGIC = b"FWIR"
VERSION = 1
MAX_RANK = 4

_DTYPE_TAGS = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
}
_TAG_DTYPES = {tag: dt for dt, tag in _DTYPE_TAGS.items()}

PathOrFile = Union[str, os.PathLike, BinaryIO]


class RasterFormatError(ValueError):
    """Malformed raster container (bad magic, dtype tag, or truncation)."""


def write_raster(dest: PathOrFile, array: np.ndarray) -> None:
    """Serialize ``array`` to the container format, bit-exactly recoverable."""
    a = np.ascontiguousarray(array)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    a = a.astype(dt, copy=False)
    if a.dtype not in _DTYPE_TAGS:
        raise RasterFormatError(f"unsupported dtype {array.dtype}")
    if a.ndim > MAX_RANK:
        raise RasterFormatError(f"rank {a.ndim} exceeds maximum {MAX_RANK}")
    header = MAGIC + struct.pack(
        "<BBBB", VERSION, _DTYPE_TAGS[a.dtype], a.ndim, 0
    )
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    payload = a.tobytes(order="C")
    if hasattr(dest, "write"):
        dest.write(header + payload)
    else:
        with open(dest, "wb") as f:
            f.write(header + payload)


def read_raster(src: PathOrFile) -> np.ndarray:
    """Read a container written by :func:`write_raster`; inverse bit-exact."""
    if hasattr(src, "read"):
        data = src.read()
    else:
        with open(src, "rb") as f:
            data = f.read()

    if len(data) < 8:
        raise RasterFormatError("truncated header")
    if data[:4] != MAGIC:
        raise RasterFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, tag, rank, _pad = struct.unpack("<BBBB", data[4:8])
    if version != VERSION:
        raise RasterFormatError(f"unsupported version {version}")
    if tag not in _TAG_DTYPES:
        raise RasterFormatError(f"unknown dtype tag {tag}")
    if rank > MAX_RANK:
        raise RasterFormatError(f"rank {rank} exceeds maximum {MAX_RANK}")

    dims_end = 8 + 4 * rank
    if len(data) < dims_end:
        raise RasterFormatError("truncated dimension list")
    shape = struct.unpack(f"<{rank}I", data[8:dims_end])
    dtype = _TAG_DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = dims_end + count * dtype.itemsize
    if len(data) < expected:
        raise RasterFormatError(
            f"truncated payload: have {len(data) - dims_end} bytes, "
            f"need {count * dtype.itemsize}"
        )
    flat = np.frombuffer(data[dims_end:expected], dtype=dtype)
    return flat.reshape(shape).copy()
