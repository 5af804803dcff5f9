"""Dense tensors, seeded random streams and the RCT1 on-disk format.

RCT1 layout (all little-endian)::

    8 bytes   magic  b"RCTNSR1\\0"
    u8        dtype code (0 = float32, 1 = complex64 interleaved re/im)
    u8        ndim
    ndim*u32  dimension sizes
    payload   C order (last index fastest)
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"RCTNSR1\x00"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<c8")}
_U32_MAX = 2**32 - 1


class TensorFormatError(ValueError):
    """Raised for malformed or unsupported RCT1 files."""


@dataclass(frozen=True)
class Cine:
    """Real-valued 2D+time image series, layout T x H x W."""

    data: np.ndarray
    frame_dt: float = 36.4

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"cine must be a non-empty T x H x W array, got {data.shape}")
        if np.iscomplexobj(data):
            raise ValueError("cine data must be real")
        if not np.all(np.isfinite(data)):
            raise ValueError("cine contains non-finite values")
        data = data.astype(np.float32, copy=False)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


def _dtype_code(arr: np.ndarray) -> int:
    if np.iscomplexobj(arr):
        return 1
    return 0


def write_tensor(fh: BinaryIO, tensor: np.ndarray) -> None:
    arr = np.asarray(tensor)
    code = _dtype_code(arr)
    if arr.ndim > 255:
        raise TensorFormatError("too many dimensions for RCT1")
    if any(s > _U32_MAX for s in arr.shape):
        raise TensorFormatError(f"dimension overflow: {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code])
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(8)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    head = fh.read(2)
    if len(head) != 2:
        raise TensorFormatError("truncated header")
    code, ndim = struct.unpack("<BB", head)
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"unknown dtype code {code}")
    dims_raw = fh.read(4 * ndim)
    if len(dims_raw) != 4 * ndim:
        raise TensorFormatError("truncated header")
    shape = struct.unpack(f"<{ndim}I", dims_raw)
    dtype = _DTYPE_CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise TensorFormatError(f"truncated payload: expected {nbytes} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def save_tensor(path: str | Path, tensor: np.ndarray) -> None:
    """Write ``tensor`` to ``path`` in RCT1 format (float32 or complex64)."""
    with open(path, "wb") as fh:
        write_tensor(fh, tensor)


def load_tensor(path: str | Path) -> np.ndarray:
    """Read an RCT1 tensor; raises :class:`TensorFormatError` on bad input."""
    with open(path, "rb") as fh:
        return read_tensor(fh)


def normalize01(x):
    """Min-max scale the whole array (or Cine) to [0, 1].

    A constant input maps to all zeros.
    """
    if isinstance(x, Cine):
        return Cine(normalize01(x.data), x.frame_dt)
    arr = np.asarray(x, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.zeros(arr.shape, dtype=np.float32)
    return ((arr - lo) / (hi - lo)).astype(np.float32)


def rng_stream(seed: int, *labels: str | int) -> np.random.Generator:
    """Independent Philox-4x64 stream keyed by ``seed`` and a purpose label path.

    Labels are hashed with CRC-32 so the same (seed, labels) gives the same
    stream on every platform.
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    words = [int(seed) & 0xFFFFFFFF, int(seed) >> 32]
    for label in labels:
        if isinstance(label, str):
            words.append(zlib.crc32(label.encode("utf-8")))
        else:
            words.append(int(label) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
