from __future__ import annotations

import math
import zlib
import re

import pytest

from irake.embedding import HashingEmbedder


def oracle_vector(text: str, buckets: int = 256) -> list[float]:
    """Hash-bag embedding computed without numpy, for cross-checking."""
    counts = [0.0] * buckets
    for tok in re.findall(r"\w+", text.lower()):
        counts[zlib.crc32(tok.encode("utf-8")) % buckets] += 1.0
    norm = math.sqrt(sum(c * c for c in counts))
    return [c / norm for c in counts]


def oracle_cosine(a: str, b: str) -> float:
    va, vb = oracle_vector(a), oracle_vector(b)
    total = 0.0
    for x, y in zip(va, vb):
        total += x * y
    return max(-1.0, min(1.0, total))


@pytest.fixture
def embedder() -> HashingEmbedder:
    return HashingEmbedder()
