"""DGPN1 binary checkpoint format.

Layout: magic ``DGPN1``, u32 version, u32 count, then per parameter:
u32 name length, utf-8 name, u32 rank, u32 dims, raw little-endian
float32 data.  Records are sorted by name so files round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DGPN1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    """Write named arrays; values are truncated to float32 on disk."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(params))
    for name in sorted(params):
        arr = params[name]
        if not isinstance(arr, np.ndarray) and hasattr(arr, "data"):
            arr = arr.data  # accept autodiff Tensors
        data = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
        nb = name.encode()
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<I", data.ndim)
        out += struct.pack(f"<{data.ndim}I", *data.shape)
        out += data.tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read named arrays back as float64 (exact float32 extension)."""
    buf = Path(path).read_bytes()
    if buf[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:5]!r}, expected {MAGIC!r}")
    pos = 5
    try:
        version, count = struct.unpack_from("<II", buf, pos)
        pos += 8
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos)
            pos += 4 * size
            params[name] = arr.reshape(dims).astype(np.float64)
        if pos != len(buf):
            raise CheckpointError(f"{path}: trailing bytes")
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return params
