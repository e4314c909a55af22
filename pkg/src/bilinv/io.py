"""Binary formats for matrices and vectors.

Matrices are raw little-endian float64 in column-major order, shape kept
in a sidecar manifest.  Vectors carry their own 16-byte header::

    bytes 0-3   magic  b"BLVX"
    bytes 4-7   uint32 format version
    bytes 8-15  uint64 element count
"""

import struct
from pathlib import Path

import numpy as np

VECTOR_MAGIC = b"BLVX"
VECTOR_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def write_matrix(path, M):
    M = np.asarray(M, dtype="<f8")
    Path(path).write_bytes(M.tobytes(order="F"))


def read_matrix(path, shape):
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    if raw.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {raw.size} values, expected shape {shape}")
    return raw.reshape(shape, order="F").astype(np.float64)


def write_vector(path, v):
    v = np.ascontiguousarray(v, dtype="<f8").reshape(-1)
    Path(path).write_bytes(_HEADER.pack(VECTOR_MAGIC, VECTOR_VERSION, v.size) + v.tobytes())


def read_vector(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, length = _HEADER.unpack_from(data)
    if magic != VECTOR_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VECTOR_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if payload.size != length:
        raise ValueError(f"{path}: header says {length} values, found {payload.size}")
    return payload.astype(np.float64)
