"""Text embedders and cosine similarity.

Two backends ship here: :class:`HashingEmbedder`, a deterministic bag-of-tokens
embedder used offline and in tests, and :class:`HttpEmbedder`, a client for an
OpenAI-compatible ``/embeddings`` endpoint. :class:`CachedEmbedder` wraps either.
"""

from __future__ import annotations

import json
import logging
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx
import numpy as np

from .core import tokenize
from .errors import BackendTimeout, BackendUnavailable, DimensionMismatch, EmptyText

logger = logging.getLogger(__name__)

# Similarity scores are compared at this many decimals so that summation-order
# noise in the last ulp cannot reorder mathematically tied candidates.
SCORE_DECIMALS = 12


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-d vector")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def normalized(cls, raw) -> EmbeddingVector:
        arr = np.asarray(raw, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return cls(arr / norm)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of two L2-normalized vectors, i.e. their dot product."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"dimension {a.dimension} != {b.dimension}")
    value = float(np.dot(a.values, b.values))
    return min(1.0, max(-1.0, value))


def quantize(score: float) -> float:
    return round(float(score), SCORE_DECIMALS)


class Embedder(Protocol):
    backend_id: str

    def embed(self, text: str) -> EmbeddingVector: ...


class HashingEmbedder:
    """Bag of lowercased tokens hashed into ``buckets`` counts, then L2-normalized.

    Texts with no word tokens (e.g. only punctuation) fall back to hashing the
    raw stripped text as a single token.
    """

    def __init__(self, buckets: int = 256) -> None:
        if buckets < 1:
            raise ValueError("buckets must be positive")
        self.buckets = buckets
        self.backend_id = f"hash-bag-{buckets}"

    def bucket(self, token: str) -> int:
        return zlib.crc32(token.encode("utf-8")) % self.buckets

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        tokens = tokenize(text) or [text.strip().lower()]
        counts = np.zeros(self.buckets, dtype=np.float64)
        for tok in tokens:
            counts[self.bucket(tok)] += 1.0
        return EmbeddingVector.normalized(counts)


class HttpEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint.

    ``endpoint`` may be the API base (``.../v1``) or the full ``/embeddings`` URL.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 30.0,
        client: httpx.Client | None = None,
    ) -> None:
        url = endpoint.rstrip("/")
        if not url.endswith("/embeddings"):
            url += "/embeddings"
        self.url = url
        self.model = model
        self.backend_id = f"http:{url}:{model}"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout_s, headers=headers)

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        try:
            response = self._client.post(self.url, json={"model": self.model, "input": text})
            response.raise_for_status()
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"embedding request timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"embedding request failed: {exc}") from exc
        data = response.json()
        if isinstance(data, dict) and "data" in data:
            raw = data["data"][0]["embedding"]
        elif isinstance(data, dict) and "embedding" in data:
            raw = data["embedding"]
        else:
            raise BackendUnavailable("embedding response has no vector")
        return EmbeddingVector.normalized(raw)


class CachedEmbedder:
    """Memoizes another embedder keyed by (backend id, text); thread-safe."""

    def __init__(self, inner: Embedder, spill_path: str | Path | None = None) -> None:
        self.inner = inner
        self.backend_id = inner.backend_id
        self.spill_path = Path(spill_path) if spill_path else None
        self._cache: dict[tuple[str, str], EmbeddingVector] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.spill_path and self.spill_path.exists():
            self.load(self.spill_path)

    def embed(self, text: str) -> EmbeddingVector:
        key = (self.backend_id, text)
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                self.hits += 1
                return cached
        vector = self.inner.embed(text)
        with self._lock:
            self.misses += 1
            self._cache.setdefault(key, vector)
            return self._cache[key]

    def __len__(self) -> int:
        return len(self._cache)

    def save(self, path: str | Path | None = None) -> None:
        target = Path(path or self.spill_path or "")
        if not str(target):
            raise ValueError("no spill path configured")
        with self._lock:
            rows = [
                {"backend": b, "text": t, "vector": v.values.tolist()}
                for (b, t), v in self._cache.items()
            ]
        target.write_text(json.dumps(rows), encoding="utf-8")

    def load(self, path: str | Path) -> None:
        rows = json.loads(Path(path).read_text(encoding="utf-8"))
        with self._lock:
            for row in rows:
                self._cache[(row["backend"], row["text"])] = EmbeddingVector(row["vector"])
        logger.debug("loaded %d cached embeddings from %s", len(rows), path)
