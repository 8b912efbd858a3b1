"""Binary feature store: a header plus a dense row-major float64 matrix.

Layout (little-endian)::

    b"RFQ1"  magic
    u32      version (1)
    u32      dim
    u64      count
    f64[count * dim]
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, StoreDimMismatchError, TruncatedFileError

MAGIC = b"RFQ1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


def write_feature_store(vectors, dim: int, path) -> None:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, dim)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise StoreDimMismatchError(f"vectors of shape {arr.shape} do not match declared dim {dim}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dim, arr.shape[0]))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_feature_store(path, expected_dim: int | None = None):
    """Return ``(dim, matrix)``; the matrix has shape (count, dim)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated ({len(raw)} bytes)")
    _, version, dim, count = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise BadMagicError(f"{path}: unsupported store version {version}")
    if expected_dim is not None and dim != expected_dim:
        raise StoreDimMismatchError(f"{path}: store dim {dim} != expected {expected_dim}")
    need = _HEADER.size + 8 * dim * count
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes for {count}x{dim}, found {len(raw)}")
    if len(raw) > need:
        raise StoreDimMismatchError(f"{path}: {len(raw) - need} trailing bytes after {count}x{dim} payload")
    data = np.frombuffer(raw, dtype="<f8", count=dim * count, offset=_HEADER.size)
    return dim, data.astype(np.float64).reshape(count, dim)
