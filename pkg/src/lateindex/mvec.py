"""MVEC flat binary matrix format.

Little-endian layout:

    magic   "MVEC"  (4 bytes)
    version u8      (= 1)
    scalar  u8      (= 0, float32)
    reserved u16    (= 0)
    dim     u32
    count   u64
    payload count * dim float32, row-major

Round-trips are bit-exact: the payload is the raw float32 buffer.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, IoFailureError, NonFiniteError, VersionMismatchError

MAGIC = b"MVEC"
VERSION = 1
SCALAR_F32 = 0
_HEADER = struct.Struct("<4sBBHIQ")
HEADER_SIZE = _HEADER.size  # 20 bytes


def write_mvec(matrix: np.ndarray, path: str | Path) -> None:
    """Write a 2-D float matrix; see module docstring for the layout."""
    m = np.ascontiguousarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError("mvec payload must be a 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("mvec payload contains NaN or Inf")
    count, dim = m.shape
    header = _HEADER.pack(MAGIC, VERSION, SCALAR_F32, 0, dim, count)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(m.tobytes())
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def read_mvec(path: str | Path) -> np.ndarray:
    """Read a matrix written by :func:`write_mvec`, bit-exact."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise CorruptFileError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, scalar, reserved, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: unsupported mvec version {version}")
    if scalar != SCALAR_F32:
        raise CorruptFileError(f"{path}: unsupported scalar type {scalar}")
    if reserved != 0:
        raise CorruptFileError(f"{path}: non-zero reserved field")
    expected = HEADER_SIZE + count * dim * 4
    if len(raw) != expected:
        raise CorruptFileError(
            f"{path}: size {len(raw)} does not match header (expected {expected})"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE)
    return data.reshape(count, dim).copy()
