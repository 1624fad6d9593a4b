"""Edited-fact memory: stores (edit, atomic question) pairs with their vectors.

Two retrieval modes are offered. :meth:`EditedFactMemory.pre_retrieve` is the
coarse top-n scan run before decomposition; :meth:`EditedFactMemory.precise_retrieve`
is the thresholded lookup run on each decomposed subquestion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import FactEdit, tokenize
from .embedding import Embedder, EmbeddingVector, quantize

RERANK_MIN_OVERLAP = 0.5


@dataclass(frozen=True)
class MemoryEntry:
    edit: FactEdit
    question_vector: EmbeddingVector
    statement_vector: EmbeddingVector


def token_overlap(a: str, b: str) -> float:
    """|shared tokens| / |tokens of the shorter string|, over token sets."""
    ta, tb = set(tokenize(a)), set(tokenize(b))
    shorter = min(len(ta), len(tb))
    if shorter == 0:
        return 0.0
    return len(ta & tb) / shorter


class EditedFactMemory:
    def __init__(self, embedder: Embedder, edits: Iterable[FactEdit] = (), role: str = "fact") -> None:
        self.embedder = embedder
        self.embedder_role_tag = role
        self._entries: list[MemoryEntry] = []
        self._slots: dict[tuple[str, str], int] = {}
        self._matrix: np.ndarray | None = None
        for edit in edits:
            self.insert(edit)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, edit: object) -> bool:
        if not isinstance(edit, FactEdit):
            return False
        idx = self._slots.get(edit.slot)
        return idx is not None and self._entries[idx].edit == edit

    @property
    def entries(self) -> list[MemoryEntry]:
        return list(self._entries)

    @property
    def edits(self) -> list[FactEdit]:
        return [e.edit for e in self._entries]

    def insert(self, edit: FactEdit) -> EditedFactMemory:
        """Add ``edit``; an existing entry for the same (subject, relation) is replaced in place."""
        entry = MemoryEntry(
            edit=edit,
            question_vector=self.embedder.embed(edit.atomic_question),
            statement_vector=self.embedder.embed(edit.statement),
        )
        idx = self._slots.get(edit.slot)
        if idx is None:
            self._slots[edit.slot] = len(self._entries)
            self._entries.append(entry)
        else:
            self._entries[idx] = entry
        self._matrix = None
        return self

    def scores(self, query: str) -> list[float]:
        """Quantized cosine of ``query`` against every atomic-question vector, in insertion order."""
        if not self._entries:
            return []
        if self._matrix is None:
            self._matrix = np.vstack([e.question_vector.values for e in self._entries])
        q = self.embedder.embed(query).values
        return [quantize(s) for s in (self._matrix @ q)]

    def _ranked(self, query: str) -> list[tuple[int, float]]:
        scores = self.scores(query)
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        return [(i, scores[i]) for i in order]

    def pre_retrieve(self, query: str, n: int = 3) -> list[FactEdit]:
        """Top-``n`` edits by similarity to ``query``; no threshold, ties by insertion order."""
        if n < 1:
            raise ValueError("n must be >= 1")
        return [self._entries[i].edit for i, _ in self._ranked(query)[:n]]

    def precise_retrieve(self, subquestion: str, tau: float = 0.85) -> FactEdit | None:
        """Best-matching edit if its cosine is >= ``tau`` and it passes the token-overlap re-rank."""
        if not subquestion or not subquestion.strip():
            raise ValueError("subquestion must be non-empty")
        ranked = self._ranked(subquestion)
        if not ranked:
            return None
        idx, score = ranked[0]
        if score < tau:
            return None
        edit = self._entries[idx].edit
        if token_overlap(subquestion, edit.atomic_question) < RERANK_MIN_OVERLAP:
            return None
        return edit

    def to_json(self) -> list[dict]:
        return [e.edit.to_dict() for e in self._entries]

    def export(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def from_json(cls, rows: list[dict], embedder: Embedder) -> EditedFactMemory:
        return cls(embedder, (FactEdit.from_dict(r) for r in rows))
