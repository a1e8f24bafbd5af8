"""Flat binary tensor container used for corpus data, features, and checkpoints.

Layout (little-endian): magic ``ATV1``, u32 rank, u32 dims[rank], then the
payload row-major. Payloads are float32 for real-valued tensors and int32 for
label tensors; the reader is told which to expect.
"""

import os
import struct

import numpy as np

from .errors import BadTensorFile, MissingTensor

MAGIC = b"ATV1"
_HEADER = struct.Struct("<4sI")


def write_tensor(path, array):
    """Write an array as an ATV1 file, casting to float32 or int32."""
    a = np.asarray(array)
    if a.dtype.kind == "f":
        a = np.ascontiguousarray(a, dtype="<f4")
    elif a.dtype.kind in "iub":
        a = np.ascontiguousarray(a, dtype="<i4")
    else:
        raise BadTensorFile(f"unsupported dtype {a.dtype} for {path}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def read_tensor(path, dtype):
    """Read an ATV1 file, expecting ``dtype`` (np.float32 or np.int32)."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.int32)):
        raise BadTensorFile(f"payload dtype must be float32 or int32, got {dtype}")
    if not os.path.exists(path):
        raise MissingTensor(f"tensor file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise BadTensorFile(f"truncated header in {path}")
        magic, rank = _HEADER.unpack(head)
        if magic != MAGIC:
            raise BadTensorFile(f"bad magic {magic!r} in {path}")
        if rank > 8:
            raise BadTensorFile(f"implausible rank {rank} in {path}")
        dim_bytes = fh.read(4 * rank)
        if len(dim_bytes) < 4 * rank:
            raise BadTensorFile(f"truncated dims in {path}")
        dims = struct.unpack(f"<{rank}I", dim_bytes)
        payload = fh.read()
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    if len(payload) != expected:
        raise BadTensorFile(
            f"payload size {len(payload)} != expected {expected} in {path}"
        )
    le = dtype.newbyteorder("<")
    return np.frombuffer(payload, dtype=le).astype(dtype).reshape(dims)
