"""Binary checkpoint container.

Layout (little-endian): magic ``TJC1``, version u32, entry count u32, then per
entry: name length u16, UTF-8 name, rank u8, one u32 per dim, float64 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TJC1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(entries: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a TJC1 checkpoint")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            if pos + 8 * n > len(blob):
                raise CheckpointError(f"truncated payload for entry {name!r}")
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(dims)
            pos += 8 * n
            out[name] = arr.astype(np.float64)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(entries))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
