"""Matrix files for the command line.

Binary layout: a 16-byte little-endian header ``b"MMAT"``, dtype code,
rows, cols (three uint32), followed by row-major little-endian elements.
Anything not starting with the magic is read as a JSON nested list.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MMAT"
_HEADER = struct.Struct("<4sIII")
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i4")}
_CODES = {v: k for k, v in DTYPES.items()}


class MatrixFormatError(ValueError):
    pass


def encode(m: np.ndarray) -> bytes:
    m = np.asarray(m)
    if m.ndim != 2:
        raise MatrixFormatError(f"expected a 2-D matrix, got shape {m.shape}")
    dt = m.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise MatrixFormatError(f"unsupported dtype {m.dtype}")
    return _HEADER.pack(MAGIC, _CODES[dt], *m.shape) + np.ascontiguousarray(m, dtype=dt).tobytes()


def decode(data: bytes, dtype=None) -> np.ndarray:
    if data[:4] == MAGIC:
        if len(data) < _HEADER.size:
            raise MatrixFormatError("truncated MMAT header")
        _, code, rows, cols = _HEADER.unpack_from(data)
        if code not in DTYPES:
            raise MatrixFormatError(f"unknown MMAT dtype code {code}")
        dt = DTYPES[code]
        body = data[_HEADER.size:]
        if len(body) != rows * cols * dt.itemsize:
            raise MatrixFormatError(f"MMAT body holds {len(body)} bytes, header says {rows}x{cols} {dt}")
        m = np.frombuffer(body, dtype=dt).reshape(rows, cols)
    else:
        try:
            m = np.array(json.loads(data.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise MatrixFormatError(f"neither MMAT nor a JSON matrix: {e}") from None
        if m.ndim != 2 or m.dtype.kind not in "iuf":
            raise MatrixFormatError(f"JSON matrix must be a rectangular numeric nested list, got shape {m.shape}")
    return m.astype(dtype) if dtype is not None else m


def load(path: str | Path, dtype=None) -> np.ndarray:
    return decode(Path(path).read_bytes(), dtype)


def save(path: str | Path, m: np.ndarray) -> None:
    Path(path).write_bytes(encode(m))
