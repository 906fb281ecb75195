"""Flat exact vector store of defect entries with cosine + distance scoring.

File layout (all little-endian)::

    header   struct "<8sHHIQ": magic b"NATLMKB\\0", version, reserved, dim, count
    records  count * dim float64, entry order
    trailer  u64 length + UTF-8 JSON {"entries": [...], "meta": {...}}
    crc      u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import math
import struct
import threading
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .oracle import DefectType

MAGIC = b"NATLMKB\x00"
VERSION = 1
_HEADER = struct.Struct("<8sHHIQ")
DEFAULT_WEIGHTS = (0.7, 0.3)


class KnowledgeBaseError(ValueError):
    pass


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = math.sqrt(a @ a), math.sqrt(b @ b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("undefined cosine for zero vector")
    return min(1.0, max(-1.0, float(a @ b) / (na * nb)))


def euclidean(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return math.sqrt(float(d @ d))


@dataclass
class KbEntry:
    id: int
    defect_type: DefectType
    vector: np.ndarray
    snippet_source: str = ""
    metadata: dict = field(default_factory=dict)

    def describe(self) -> dict:
        return {"id": self.id, "defect_type": self.defect_type.value,
                "snippet_source": self.snippet_source, "metadata": self.metadata}


@dataclass(frozen=True)
class RetrievalHit:
    entry_id: int
    cosine: float
    euclidean: float
    score: float


class _ReadWriteLock:
    """Many readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


class VectorStore:
    def __init__(self, dim: int, meta: dict | None = None):
        if dim < 1:
            raise ValueError("store dim must be positive")
        self.dim = dim
        self.meta = dict(meta or {})
        self.entries: list[KbEntry] = []
        self._matrix = np.zeros((0, dim))
        self._lock = _ReadWriteLock()

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, entry_id: int) -> KbEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def add(self, defect_type: DefectType, vector, snippet_source: str = "", metadata: dict | None = None) -> KbEntry:
        vec = np.ascontiguousarray(vector, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"vector has shape {vec.shape}, store dim is {self.dim}")
        if not isinstance(defect_type, DefectType):
            defect_type = DefectType.parse(str(defect_type))
        with self._lock.write():
            entry = KbEntry(len(self.entries), defect_type, vec.copy(), snippet_source, dict(metadata or {}))
            self.entries.append(entry)
            self._matrix = None
        return entry

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            rows = [e.vector for e in self.entries]
            self._matrix = np.ascontiguousarray(np.stack(rows)) if rows else np.zeros((0, self.dim))
        return self._matrix

    def retrieve(self, query, k: int = 5, weights: tuple[float, float] = DEFAULT_WEIGHTS) -> list[RetrievalHit]:
        """Top-k entries by ``w_cos * cos + w_dist / (1 + dist)``; ties go to the lower id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.ascontiguousarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query has shape {q.shape}, store dim is {self.dim}")
        if not np.any(q):
            raise ValueError("undefined cosine for zero vector")
        with self._lock.read():
            if not self.entries:
                raise KnowledgeBaseError("knowledge base empty")
            cos, dist, score = kernels.score_rows(self.matrix, q, float(weights[0]), float(weights[1]))
            ids = np.array([e.id for e in self.entries])
            order = np.lexsort((ids, -np.asarray(score)))[:k]
            return [RetrievalHit(int(ids[i]), float(cos[i]), float(dist[i]), float(score[i])) for i in order]

    # persistence ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        with self._lock.read():
            head = _HEADER.pack(MAGIC, VERSION, 0, self.dim, len(self.entries))
            body = np.ascontiguousarray(self.matrix, dtype="<f8").tobytes()
            trailer = json.dumps({"entries": [e.describe() for e in self.entries], "meta": self.meta},
                                 sort_keys=True, separators=(",", ":")).encode()
            blob = head + body + struct.pack("<Q", len(trailer)) + trailer
        return blob + struct.pack("<I", zlib.crc32(blob))

    def persist(self, path) -> None:
        tmp = Path(str(path) + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def from_bytes(cls, raw: bytes, source: str = "<bytes>") -> "VectorStore":
        if len(raw) < _HEADER.size:
            raise KnowledgeBaseError(f"{source}: truncated header")
        magic, version, _, dim, count = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise KnowledgeBaseError(f"{source}: bad magic {magic!r}")
        if version != VERSION:
            raise KnowledgeBaseError(f"{source}: unsupported version {version} (expected {VERSION})")
        if len(raw) < _HEADER.size + 4 or zlib.crc32(raw[:-4]) != struct.unpack("<I", raw[-4:])[0]:
            raise KnowledgeBaseError(f"{source}: checksum mismatch (truncated or corrupted file)")
        start = _HEADER.size
        end = start + count * dim * 8
        if end + 8 > len(raw) - 4:
            raise KnowledgeBaseError(f"{source}: truncated vector records")
        matrix = np.frombuffer(raw, dtype="<f8", count=count * dim, offset=start).reshape(count, dim)
        (tlen,) = struct.unpack_from("<Q", raw, end)
        try:
            trailer = json.loads(raw[end + 8:end + 8 + tlen])
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise KnowledgeBaseError(f"{source}: corrupt metadata trailer: {exc}") from None
        if len(trailer["entries"]) != count:
            raise KnowledgeBaseError(f"{source}: header count {count} disagrees with trailer")
        store = cls(dim, trailer.get("meta"))
        store._matrix = matrix.astype(np.float64)
        store.entries = [
            KbEntry(d["id"], DefectType(d["defect_type"]), store._matrix[i].copy(), d["snippet_source"], d["metadata"])
            for i, d in enumerate(trailer["entries"])
        ]
        return store

    @classmethod
    def load(cls, path) -> "VectorStore":
        p = Path(path)
        if not p.exists():
            raise KnowledgeBaseError(f"knowledge base not found: {path}")
        return cls.from_bytes(p.read_bytes(), str(path))
