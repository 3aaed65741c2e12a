"""Flat named-tensor checkpoint files.

Binary layout: an 8-byte magic/version header, a little-endian u32 entry
count, then per entry a length-prefixed UTF-8 name, a u8 rank, u32 extents,
and the row-major float64 payload.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PHCTNSR1"


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad header)")
    out: dict[str, np.ndarray] = {}
    offset = 8
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
        offset += 8 * size
        out[name] = arr.reshape(shape).copy()
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after last tensor")
    return out
