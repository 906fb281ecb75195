"""Text embedding backends: a seeded hashing mock and an HTTP client."""

from __future__ import annotations

import hashlib
import os
import re
import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .ast_frontend import split_identifier

EMBEDDING_DIM = 256

_WORD = re.compile(r"[A-Za-z0-9_]+")


class EmbeddingBackend(Protocol):
    dim: int

    def embed_text(self, snippet: str) -> np.ndarray: ...


class EmbeddingError(RuntimeError):
    pass


@dataclass
class HashEmbeddingBackend:
    """Feature hashing of lowercased subtokens, signed by a second hash bit.

    Each subtoken adds +-1 to the bucket picked by blake2b(seed, token); the
    result is L2-normalized. Text with no word characters maps to zeros.
    """

    dim: int = EMBEDDING_DIM
    seed: int = 0

    def _bucket(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(token.encode(), digest_size=8, key=self.seed.to_bytes(8, "little")).digest()
        value = int.from_bytes(digest, "little")
        return value % self.dim, 1.0 if (value >> 63) & 1 else -1.0

    def embed_text(self, snippet: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for word in _WORD.findall(snippet):
            for piece in split_identifier(word):
                idx, sign = self._bucket(piece.lower())
                vec[idx] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


@dataclass
class HttpEmbeddingBackend:
    """POSTs ``{"text": snippet}`` to ``{base_url}/embed``; expects ``{"embedding": [...]}``."""

    base_url: str
    dim: int = EMBEDDING_DIM
    api_key_env: str = "NATLM_API_KEY"
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5

    def embed_text(self, snippet: str) -> np.ndarray:
        import httpx

        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = httpx.post(f"{self.base_url.rstrip('/')}/embed", json={"text": snippet},
                                  headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                vec = np.asarray(resp.json()["embedding"], dtype=np.float64)
                if vec.shape != (self.dim,):
                    raise EmbeddingError(f"embedding service returned shape {vec.shape}, expected ({self.dim},)")
                return vec
            except EmbeddingError:
                raise
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise EmbeddingError(f"embedding request failed after {self.retries} attempts: {last}")


def make_embedding_backend(kind: str, **kwargs) -> EmbeddingBackend:
    if kind == "mock":
        return HashEmbeddingBackend(dim=kwargs.get("dim", EMBEDDING_DIM), seed=kwargs.get("seed", 0))
    if kind == "http":
        if not kwargs.get("base_url"):
            raise ValueError("http embedding backend needs a base_url")
        return HttpEmbeddingBackend(**kwargs)
    raise ValueError(f"unknown embedding backend {kind!r}")
