"""Binary store of precomputed scene embeddings.

Layout (little-endian)::

    b"T2SGEMB1"  u32 version  u32 dim  u64 count
    u16 len + UTF-8 fixed-counterpart id
    count x (u16 len + UTF-8 scene id, dim x f32)
"""

from __future__ import annotations

import io
import struct
from collections import Counter
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import DuplicateSceneId, FormatError, UnknownSceneId

STORE_MAGIC = b"T2SGEMB1"
STORE_VERSION = 1
_HEAD = struct.Struct("<IIQ")
_LEN = struct.Struct("<H")


@dataclass
class EmbeddingStore:
    dim: int
    fixed_id: str
    ids: List[str]
    vectors: np.ndarray  # (count, dim) float32

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32).reshape(len(self.ids), self.dim)
        dups = [sid for sid, n in Counter(self.ids).items() if n > 1]
        if dups:
            raise DuplicateSceneId(f"scene id {dups[0]!r} stored twice")
        self._index = {sid: i for i, sid in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def __contains__(self, scene_id):
        return scene_id in self._index

    def vector(self, scene_id: str) -> np.ndarray:
        try:
            return self.vectors[self._index[scene_id]]
        except KeyError:
            raise UnknownSceneId(f"scene {scene_id!r} not in store") from None

    def rows(self, scene_ids) -> np.ndarray:
        missing = [s for s in scene_ids if s not in self._index]
        if missing:
            raise UnknownSceneId(f"scene(s) not in store: {missing[:5]}")
        return self.vectors[[self._index[s] for s in scene_ids]]

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(STORE_MAGIC)
        buf.write(_HEAD.pack(STORE_VERSION, self.dim, len(self.ids)))
        _write_str(buf, self.fixed_id)
        for sid, vec in zip(self.ids, self.vectors):
            _write_str(buf, sid)
            buf.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EmbeddingStore":
        if blob[:8] != STORE_MAGIC:
            raise FormatError("not an embedding store (bad magic)")
        try:
            version, dim, count = _HEAD.unpack_from(blob, 8)
            if version != STORE_VERSION:
                raise FormatError(f"unsupported store version {version}")
            offset = 8 + _HEAD.size
            fixed_id, offset = _read_str(blob, offset)
            ids = []
            vectors = np.empty((count, dim), dtype=np.float32)
            for r in range(count):
                sid, offset = _read_str(blob, offset)
                ids.append(sid)
                vectors[r] = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset)
                offset += 4 * dim
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"truncated or corrupt store: {exc}") from exc
        if offset != len(blob):
            raise FormatError(f"{len(blob) - offset} trailing bytes after {count} records")
        return cls(dim, fixed_id, ids, vectors)

    def save(self, path) -> int:
        blob = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(blob)
        return len(blob)

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _write_str(buf, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("id longer than 65535 bytes")
    buf.write(_LEN.pack(len(raw)))
    buf.write(raw)


def _read_str(blob: bytes, offset: int):
    (n,) = _LEN.unpack_from(blob, offset)
    offset += _LEN.size
    if offset + n > len(blob):
        raise FormatError("string runs past end of file")
    return blob[offset:offset + n].decode("utf-8"), offset + n

