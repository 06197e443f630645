"""Reader/writer for the LTF1 tensor file format.

Layout: magic bytes ``LTF1``, one u8 dtype code (0 = float32, 1 = uint8),
one u8 rank, ``rank`` little-endian u32 dimensions, then the row-major
little-endian payload.  Used for pixel patches, masks, latent matrices and
checkpoint parameter arrays.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LTF1"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("uint8")}
_CODE_FOR_KIND = {"f": 0, "u": 1, "b": 1, "i": 0}


class LtfError(ValueError):
    """Raised for malformed LTF1 payloads."""


def encode(array: np.ndarray) -> bytes:
    """Serialise an array to LTF1 bytes.

    Floats are stored as float32, booleans and unsigned ints as uint8.
    Signed integers are stored as float32 (exact below 2**24); anything
    else is rejected.
    """
    arr = np.asarray(array)
    if arr.dtype.kind not in _CODE_FOR_KIND:
        raise LtfError(f"unsupported dtype {arr.dtype}")
    code = _CODE_FOR_KIND[arr.dtype.kind]
    # astype, not ascontiguousarray: the latter silently promotes 0-d to 1-d
    arr = arr.astype(_DTYPE_CODES[code], copy=False)
    if arr.ndim > 255:
        raise LtfError("rank exceeds u8")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise LtfError("dimension exceeds u32")
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode(blob: bytes) -> np.ndarray:
    """Parse LTF1 bytes back into an array."""
    if blob[:4] != MAGIC:
        raise LtfError("bad magic, not an LTF1 payload")
    if len(blob) < 6:
        raise LtfError("truncated header")
    code, rank = struct.unpack_from("<BB", blob, 4)
    if code not in _DTYPE_CODES:
        raise LtfError(f"unknown dtype code {code}")
    offset = 6
    if len(blob) < offset + 4 * rank:
        raise LtfError("truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = blob[offset:]
    if len(payload) != expected:
        raise LtfError(f"payload size {len(payload)} != expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode(array))


def read(path: str | Path) -> np.ndarray:
    return decode(Path(path).read_bytes())
