"""Named tensor store and its binary file format.

Layout (little-endian)::

    b"KFRW" | version u32 | count u32
    per tensor: name_len u16 | name utf-8 | rank u8 | dims u32 * rank | float32 payload
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import MissingWeight, ParseError, ShapeMismatch

MAGIC = b"KFRW"
VERSION = 1


class WeightStore:
    """Ordered mapping of tensor name to float32 array."""

    def __init__(self, tensors=None):
        self._tensors: dict[str, np.ndarray] = {}
        for name, arr in (tensors or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr) -> None:
        a = np.ascontiguousarray(arr, dtype=np.float32)
        a.setflags(write=False)
        self._tensors[name] = a

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise MissingWeight(name) from None

    def __contains__(self, name) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self):
        return iter(self._tensors)

    def items(self):
        return self._tensors.items()

    def get(self, name: str, shape=None) -> np.ndarray:
        arr = self[name]
        if shape is not None and tuple(arr.shape) != tuple(shape):
            raise ShapeMismatch(f"weight {name!r} has shape {arr.shape}, expected {tuple(shape)}")
        return arr

    def copy(self) -> "WeightStore":
        return WeightStore(dict(self._tensors))

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<II", VERSION, len(self._tensors))]
        for name, arr in self._tensors.items():
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF or arr.ndim > 0xFF:
                raise ValueError(f"tensor {name!r} cannot be encoded")
            out.append(struct.pack("<H", len(raw)))
            out.append(raw)
            out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
            out.append(arr.astype("<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightStore":
        if data[:4] != MAGIC:
            raise ParseError("not a KFRW weight file (bad magic)")
        try:
            version, count = struct.unpack_from("<II", data, 4)
            if version != VERSION:
                raise ParseError(f"unsupported weight file version {version}")
            pos = 12
            store = cls()
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", data, pos)
                pos += 2
                name = data[pos:pos + nlen].decode("utf-8")
                pos += nlen
                (rank,) = struct.unpack_from("<B", data, pos)
                pos += 1
                dims = struct.unpack_from(f"<{rank}I", data, pos)
                pos += 4 * rank
                n = int(np.prod(dims, dtype=np.int64))
                if pos + 4 * n > len(data):
                    raise ParseError(f"truncated payload for tensor {name!r}")
                store[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims)
                pos += 4 * n
        except struct.error as exc:
            raise ParseError(f"truncated weight file: {exc}") from None
        if pos != len(data):
            raise ParseError(f"{len(data) - pos} trailing bytes after last tensor")
        return store

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightStore":
        return cls.from_bytes(Path(path).read_bytes())
