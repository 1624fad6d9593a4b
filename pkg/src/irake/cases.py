"""Edited-case library: solved questions keyed by question text."""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import CaseRecord
from .embedding import Embedder, EmbeddingVector, quantize
from .errors import LibraryFrozen, RecordNotSuccessful


@dataclass(frozen=True)
class LibraryEntry:
    record: CaseRecord
    question_vector: EmbeddingVector


class CaseLibrary:
    def __init__(self, embedder: Embedder, records: Iterable[CaseRecord] = (), frozen: bool = False) -> None:
        self.embedder = embedder
        self._entries: list[LibraryEntry] = []
        self._matrix: np.ndarray | None = None
        self._lock = threading.Lock()
        self.frozen = False
        for record in records:
            self.append(record)
        self.frozen = frozen

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def records(self) -> list[CaseRecord]:
        return [e.record for e in self._entries]

    def append(self, record: CaseRecord) -> CaseLibrary:
        if self.frozen:
            raise LibraryFrozen("case library is frozen")
        if not record.succeeded:
            raise RecordNotSuccessful("only successful records can be stored")
        entry = LibraryEntry(record, self.embedder.embed(record.question))
        with self._lock:
            self._entries.append(entry)
            self._matrix = None
        return self

    def scores(self, question: str) -> list[float]:
        entries = self._entries
        if not entries:
            return []
        matrix = self._matrix
        if matrix is None or matrix.shape[0] != len(entries):
            matrix = np.vstack([e.question_vector.values for e in entries])
            self._matrix = matrix
        q = self.embedder.embed(question).values
        return [quantize(s) for s in (matrix @ q)]

    def lookup_scored(self, question: str, theta: float = 0.80) -> tuple[CaseRecord, float] | None:
        if not 0.0 <= theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        scores = self.scores(question)
        if not scores:
            return None
        # max() keeps the first maximal index, i.e. the earliest insertion
        best = max(range(len(scores)), key=lambda i: scores[i])
        if scores[best] < theta:
            return None
        return self._entries[best].record, scores[best]

    def lookup(self, question: str, theta: float = 0.80) -> CaseRecord | None:
        """Most similar stored case whose similarity is at least ``theta``."""
        hit = self.lookup_scored(question, theta)
        return hit[0] if hit else None

    def random_record(self, rng: random.Random) -> CaseRecord | None:
        if not self._entries:
            return None
        return rng.choice(self._entries).record

    @classmethod
    def seed_from_cases(
        cls,
        records: list[CaseRecord],
        sample_size: int,
        seed: int,
        embedder: Embedder,
        frozen: bool = True,
    ) -> CaseLibrary:
        """Uniform sample without replacement of up to ``sample_size`` successful records."""
        if sample_size < 0:
            raise ValueError("sample_size must be >= 0")
        pool = [r for r in records if r.succeeded]
        k = min(sample_size, len(pool))
        chosen = random.Random(seed).sample(pool, k)
        return cls(embedder, chosen, frozen=frozen)

    def to_json(self) -> list[dict]:
        return [e.record.to_dict() for e in self._entries]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder, frozen: bool = True) -> CaseLibrary:
        rows = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(rows, list):
            raise ValueError(f"{path}: case library must be a JSON array")
        return cls(embedder, (CaseRecord.from_dict(r) for r in rows), frozen=frozen)
