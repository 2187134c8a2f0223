"""Versioned binary checkpoint container.

Layout: magic b"FCT1", record count (u32 LE), then per record:
name length (u32 LE), UTF-8 name, rank (u32 LE), shape dims (u32 LE each),
row-major little-endian float32 payload. Values are stored exactly as the
float32 model holds them, so save/load round-trips bit for bit.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FCT1"


def save_state(path, state):
    """Write a name -> array mapping; arrays are stored as float32."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            payload = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", payload.ndim))
            fh.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
            fh.write(payload.tobytes())


def load_state(path):
    """Read a checkpoint back into a name -> float32 array mapping."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            raw = fh.read(4 * n)
            if len(raw) != 4 * n:
                raise ValueError(f"truncated payload for {name!r}")
            state[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise ValueError("trailing bytes after final record")
    return state
