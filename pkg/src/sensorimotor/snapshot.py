"""Tensor snapshot files.

Two layouts share the same primitives:

* single tensor — magic ``SMT1``, little-endian u32 rank, u32 extents,
  row-major f32 payload. Used for precomputed flow fields.
* named container — magic ``SMTM``, u32 tensor count, then per tensor a
  u32 name length, UTF-8 name, and the single-tensor body (rank, extents,
  payload). Used for checkpoints.

Values are stored in single precision; everything in memory is float64.
"""

from __future__ import annotations

import struct
from typing import Dict

import numpy as np

MAGIC_SINGLE = b"SMT1"
MAGIC_MULTI = b"SMTM"


class SnapshotError(IOError):
    """Corrupt, truncated, or mislabeled snapshot file."""


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise SnapshotError(f"truncated snapshot: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def _write_body(f, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_body(f) -> np.ndarray:
    (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
    if rank > 16:
        raise SnapshotError(f"implausible tensor rank {rank}")
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "extents"))
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = _read_exact(f, 4 * count, "payload")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(shape)


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC_SINGLE)
        _write_body(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC_SINGLE:
            raise SnapshotError(f"{path}: bad magic, not a tensor snapshot")
        return _read_body(f)


def save_container(path, tensors: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC_MULTI)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            enc = name.encode("utf-8")
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            _write_body(f, arr)


def load_container(path) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC_MULTI:
            raise SnapshotError(f"{path}: bad magic, not a snapshot container")
        (count,) = struct.unpack("<I", _read_exact(f, 4, "count"))
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, nlen, "name").decode("utf-8")
            out[name] = _read_body(f)
        trailing = f.read(1)
        if trailing:
            raise SnapshotError(f"{path}: trailing bytes after last tensor")
    return out
