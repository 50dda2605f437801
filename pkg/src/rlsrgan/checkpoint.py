"""Versioned binary checkpoint files.

Layout (all integers little-endian)::

    b"RLSRCKPT"                 magic
    u16                         format version (1)
    u16                         config pair count
      u16 len, utf-8 key        } per pair
      u16 len, utf-8 value      }
    u32                         record count
      u16 len, utf-8 name       } per record
      u8 rank, u32 * rank dims  }
      f32 * prod(dims)          }
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union

import numpy as np

MAGIC = b"RLSRCKPT"
VERSION = 1

PathLike = Union[str, Path]


class CheckpointError(ValueError):
    pass


def _write_str(buf: io.BytesIO, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"string too long for checkpoint field: {text[:40]!r}...")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def encode_checkpoint(tensors: Mapping[str, np.ndarray], config: Mapping[str, object] = ()) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    config = dict(config)
    buf.write(struct.pack("<H", len(config)))
    for key, value in config.items():
        _write_str(buf, str(key))
        _write_str(buf, str(value))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        _write_str(buf, name)
        if arr.ndim > 255:
            raise CheckpointError(f"{name}: rank {arr.ndim} exceeds 255")
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def decode_checkpoint(raw: bytes) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    """Return ``(config, tensors)``; tensors come back as float32 arrays."""
    r = _Reader(raw)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (npairs,) = r.unpack("<H")
    config = {}
    for _ in range(npairs):
        key = r.string()
        config[key] = r.string()
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        name = r.string()
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
        tensors[name] = data
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after last record")
    return config, tensors


def save_checkpoint(path: PathLike, tensors: Mapping[str, np.ndarray], config: Mapping[str, object] = ()) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors, config))


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    return decode_checkpoint(Path(path).read_bytes())
