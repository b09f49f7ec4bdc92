"""Binary container for raw tensors, shared by checkpoints.

Layout: magic b"FTTN", u8 version (=1), u8 rank, rank * u32 little-endian
dims, then prod(dims) float32 little-endian values in row-major order.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = b"FTTN"
VERSION = 1


def write_tensor(f: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float32)
    if not arr.flags["C_CONTIGUOUS"]:
        # ascontiguousarray would promote rank-0 to rank-1; 0-d is always contiguous
        arr = np.ascontiguousarray(arr)
    f.write(MAGIC)
    f.write(struct.pack("<BB", VERSION, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.astype("<f4", copy=False).tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    base = f.tell()
    magic = f.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}, expected {MAGIC!r}", base)
    head = f.read(2)
    if len(head) != 2:
        raise FormatError("truncated tensor header", base + 4)
    version, rank = struct.unpack("<BB", head)
    if version != VERSION:
        raise FormatError(f"unsupported tensor version {version}", base + 4)
    dims_raw = f.read(4 * rank)
    if len(dims_raw) != 4 * rank:
        raise FormatError("truncated tensor dims", base + 6)
    dims = struct.unpack(f"<{rank}I", dims_raw)
    count = 1
    for d in dims:
        count *= d
    payload = f.read(4 * count)
    if len(payload) != 4 * count:
        raise FormatError(
            f"truncated tensor payload, expected {4 * count} bytes got {len(payload)}",
            base + 6 + 4 * rank,
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
