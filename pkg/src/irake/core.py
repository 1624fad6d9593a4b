"""Domain types: fact triples, edits, decomposition traces, case records, engine config."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any

from .errors import ConfigError

_TRAILING = ".,;:!?。 "
_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def normalize_entity(raw: str) -> str:
    """Lowercase, collapse whitespace and drop trailing punctuation.

    Diacritics are kept as-is: "Camille Saint-Saëns" -> "camille saint-saëns".
    """
    text = " ".join(raw.lower().split())
    return text.rstrip(_TRAILING)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _require(value: str, name: str) -> str:
    if not isinstance(value, str) or not " ".join(value.split()):
        raise ValueError(f"{name} must be a non-empty string")
    return value


@dataclass(frozen=True)
class FactTriple:
    subject: str
    relation: str
    object: str

    def __post_init__(self) -> None:
        _require(self.subject, "subject")
        _require(self.relation, "relation")
        _require(self.object, "object")

    def to_list(self) -> list[str]:
        return [self.subject, self.relation, self.object]


@dataclass(frozen=True)
class FactEdit:
    """One edit (s, r, o -> o*) paired with its atomic question."""

    subject: str
    relation: str
    old_object: str
    new_object: str
    atomic_question: str
    statement: str

    def __post_init__(self) -> None:
        _require(self.subject, "subject")
        _require(self.relation, "relation")
        _require(self.new_object, "new_object")
        _require(self.atomic_question, "atomic_question")
        _require(self.statement, "statement")

    @property
    def slot(self) -> tuple[str, str]:
        """Normalized (subject, relation); one edit per slot in a memory."""
        return normalize_entity(self.subject), normalize_entity(self.relation)

    @property
    def key(self) -> tuple[str, str, str]:
        return (*self.slot, normalize_entity(self.new_object))

    def to_dict(self) -> dict[str, str]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FactEdit:
        return cls(
            subject=data["subject"],
            relation=data["relation"],
            old_object=data.get("old_object", "") or "",
            new_object=data["new_object"],
            atomic_question=data["atomic_question"],
            statement=data["statement"],
        )


class GuidedBy(str, Enum):
    NONE = "none"
    FACT = "fact"
    CASE = "case"
    BOTH = "both"

    @classmethod
    def of(cls, fact: bool, case: bool) -> GuidedBy:
        if fact and case:
            return cls.BOTH
        if fact:
            return cls.FACT
        if case:
            return cls.CASE
        return cls.NONE


class GuidancePayload(str, Enum):
    QUESTION = "question"
    FACT_STATEMENT = "fact_statement"

    @classmethod
    def _missing_(cls, value: object) -> GuidancePayload | None:
        if value == "fact":
            return cls.FACT_STATEMENT
        return None


@dataclass(frozen=True)
class DecompositionStep:
    subquestion: str
    answer: str
    retrieved_edit: FactEdit | None = None
    guided_by: GuidedBy = GuidedBy.NONE

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"subquestion": self.subquestion, "answer": self.answer}
        if self.retrieved_edit is not None:
            out["retrieved_edit"] = self.retrieved_edit.to_dict()
        out["guided_by"] = self.guided_by.value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DecompositionStep:
        edit = data.get("retrieved_edit")
        return cls(
            subquestion=data["subquestion"],
            answer=data["answer"],
            retrieved_edit=FactEdit.from_dict(edit) if edit else None,
            guided_by=GuidedBy(data.get("guided_by", "none")),
        )


@dataclass(frozen=True)
class CaseRecord:
    """A solved question with its full decomposition record."""

    question: str
    steps: tuple[DecompositionStep, ...]
    final_answer: str
    succeeded: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.succeeded:
            if not self.steps:
                raise ValueError("a successful case record needs at least one step")
            if self.steps[-1].answer != self.final_answer:
                raise ValueError("final_answer must equal the answer of the last step")

    def render(self) -> str:
        """Render as "Subquestion:/Answer:" lines for use as a dynamic prompt."""
        lines = [f"Question: {self.question}"]
        for step in self.steps:
            lines.append(f"Subquestion: {step.subquestion}")
            lines.append(f"Answer: {step.answer}")
        lines.append(f"Final answer: {self.final_answer}")
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CaseRecord:
        return cls(
            question=data["question"],
            steps=tuple(DecompositionStep.from_dict(s) for s in data["steps"]),
            final_answer=data["final_answer"],
            succeeded=data.get("succeeded", True),
        )


@dataclass(frozen=True)
class SavedState:
    """Unguided decomposition state pushed before a guided decomposition."""

    working_question: str
    trace_snapshot: tuple[DecompositionStep, ...]
    hop_index: int
    resume_mode: str = "unguided"


@dataclass
class ReasoningState:
    original_question: str
    working_question: str
    hop_index: int = 0
    trace: list[DecompositionStep] = field(default_factory=list)
    backtrack_stack: list[SavedState] = field(default_factory=list)
    guidance_active: bool = False

    def snapshot(self) -> SavedState:
        return SavedState(self.working_question, tuple(self.trace), self.hop_index)

    def restore(self, saved: SavedState) -> None:
        self.working_question = saved.working_question
        self.trace = list(saved.trace_snapshot)
        self.hop_index = saved.hop_index


@dataclass(frozen=True)
class EngineConfig:
    pre_retrieval_n: int = 3
    case_similarity_threshold: float = 0.80
    precise_retrieval_threshold: float = 0.85
    max_hops: int = 8
    max_backtracks: int = 4
    fact_guidance_enabled: bool = True
    case_guidance_enabled: bool = True
    backtracking_enabled: bool = True
    guidance_payload: GuidancePayload = GuidancePayload.QUESTION
    llm_temperature: float = 0.0
    llm_max_tokens: int = 200
    repetition_penalty: float | None = None
    # "random" reproduces the random-vs-similar case ablation
    case_selection: str = "similar"
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "guidance_payload", GuidancePayload(self.guidance_payload))
        for name in ("case_similarity_threshold", "precise_retrieval_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.pre_retrieval_n < 1:
            raise ConfigError("pre_retrieval_n must be >= 1")
        if self.max_hops < 1:
            raise ConfigError("max_hops must be >= 1")
        if self.max_backtracks < 0:
            raise ConfigError("max_backtracks must be >= 0")
        if self.llm_max_tokens < 1:
            raise ConfigError("llm_max_tokens must be >= 1")
        if self.case_selection not in ("similar", "random"):
            raise ConfigError("case_selection must be 'similar' or 'random'")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["guidance_payload"] = self.guidance_payload.value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EngineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown engine config field(s): {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
