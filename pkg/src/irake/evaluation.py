"""MQuAKE-style dataset loading, batch settings, scoring and reports."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .cases import CaseLibrary
from .controller import SolveResult, Solver
from .core import CaseRecord, DecompositionStep, EngineConfig, FactEdit, FactTriple, normalize_entity
from .embedding import Embedder
from .errors import AbortedCase, MalformedDataset
from .llm import LlmBackend, PromptCatalog
from .memory import EditedFactMemory

logger = logging.getLogger(__name__)

HUNDRED = 100
CSV_COLUMNS = ("case_id", "hops", "edits", "solved", "path_exact", "recall", "tokens_in", "tokens_out", "seconds")


@dataclass(frozen=True)
class EvalCase:
    case_id: str
    questions: tuple[str, str, str]
    gold_answer: str
    gold_aliases: tuple[str, ...]
    edits: tuple[FactEdit, ...]
    gold_chain: tuple[FactTriple, ...]
    # per-hop question text on the edited chain, when the dataset provides it
    hop_questions: tuple[str, ...] = ()

    @property
    def hop_count(self) -> int:
        return len(self.gold_chain)


class BatchSetting(str, Enum):
    ONE_EDITED = "one_edited"
    HUNDRED_EDITED = "hundred_edited"
    ALL_EDITED = "all_edited"

    @classmethod
    def from_flag(cls, flag: str) -> BatchSetting:
        mapping = {"1": cls.ONE_EDITED, "100": cls.HUNDRED_EDITED, "all": cls.ALL_EDITED}
        if flag in mapping:
            return mapping[flag]
        return cls(flag)


def partition(n_cases: int, setting: BatchSetting) -> list[list[int]]:
    """Case indices grouped by shared memory under ``setting``."""
    if setting is BatchSetting.ONE_EDITED:
        return [[i] for i in range(n_cases)]
    if setting is BatchSetting.HUNDRED_EDITED:
        return [list(range(i, min(i + HUNDRED, n_cases))) for i in range(0, n_cases, HUNDRED)]
    return [list(range(n_cases))] if n_cases else []


# --- loading ---

def _label(value: Any) -> str:
    if isinstance(value, dict):
        return str(value.get("str", ""))
    return "" if value is None else str(value)


def _fill(prompt: str, subject: str) -> str:
    return prompt.replace("{}", subject) if "{}" in prompt else f"{prompt} {subject}"


def _edit_from_rewrite(rw: dict[str, Any]) -> FactEdit:
    subject = rw["subject"]
    prompt = rw.get("prompt", "")
    relation = rw.get("relation_id") or prompt
    new_object = _label(rw["target_new"])
    cloze = _fill(prompt, subject).strip() if prompt else f"{subject} {relation}"
    question = rw.get("question") or f"{cloze}?"
    return FactEdit(
        subject=subject,
        relation=relation,
        old_object=_label(rw.get("target_true")),
        new_object=new_object,
        atomic_question=question,
        statement=f"{cloze} {new_object}",
    )


def _chain(record: dict[str, Any]) -> tuple[FactTriple, ...]:
    src = record.get("orig") if isinstance(record.get("orig"), dict) else record
    labeled = src.get("new_triples_labeled") or record.get("new_triples_labeled")
    ids = src.get("new_triples") or record.get("new_triples")
    if labeled is None and ids is None:
        raise KeyError("new_triples")
    rows = labeled if labeled is not None else ids
    # relations from the id triples so they compare against requested_rewrite relation_id
    relations = [t[1] for t in ids] if ids is not None and len(ids) == len(rows) else [t[1] for t in rows]
    return tuple(FactTriple(str(t[0]), str(r), str(t[2])) for t, r in zip(rows, relations))


def case_from_record(record: dict[str, Any], index: int = 0) -> EvalCase:
    questions = record.get("questions")
    if not isinstance(questions, list) or len(questions) != 3:
        got = len(questions) if isinstance(questions, list) else questions
        raise MalformedDataset(f"expected exactly 3 questions, got {got!r}", index)
    try:
        edits = tuple(_edit_from_rewrite(rw) for rw in record["requested_rewrite"])
        chain = _chain(record)
        gold = record["new_answer"]
    except KeyError as exc:
        raise MalformedDataset(f"missing field {exc}", index) from exc
    except (TypeError, ValueError, IndexError) as exc:
        raise MalformedDataset(str(exc), index) from exc
    if not edits:
        raise MalformedDataset("requested_rewrite is empty", index)
    if len(chain) not in (2, 3, 4):
        raise MalformedDataset(f"hop count {len(chain)} not in {{2, 3, 4}}", index)
    for a, b in zip(chain, chain[1:]):
        if normalize_entity(a.object) != normalize_entity(b.subject):
            raise MalformedDataset(f"broken chain link {a.object!r} -> {b.subject!r}", index)
    hops = record.get("new_single_hops") or []
    hop_questions = tuple(h["question"] for h in hops) if len(hops) == len(chain) else ()
    return EvalCase(
        case_id=str(record.get("case_id", index)),
        questions=tuple(questions),
        gold_answer=str(gold),
        gold_aliases=tuple(record.get("new_answer_alias") or ()),
        edits=edits,
        gold_chain=chain,
        hop_questions=hop_questions,
    )


def load_records(records: Sequence[dict[str, Any]]) -> list[EvalCase]:
    return [case_from_record(r, i) for i, r in enumerate(records)]


def load_dataset(path: str | Path) -> list[EvalCase]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise MalformedDataset(f"{path}: top level must be a JSON array")
    return load_records(data)


# --- scoring ---

def trace_triples(trace: Sequence[DecompositionStep]) -> list[tuple[str | None, str | None, str]]:
    """(subject, relation, object) per step; unknown parts are None.

    A retrieved edit supplies subject and relation. Otherwise the subject is the
    previous step's answer and the relation is unknown.
    """
    out: list[tuple[str | None, str | None, str]] = []
    prev: str | None = None
    for step in trace:
        edit = step.retrieved_edit
        if edit is not None:
            out.append((edit.subject, edit.relation, step.answer))
        else:
            out.append((prev, None, step.answer))
        prev = step.answer
    return out


def path_matches(trace: Sequence[DecompositionStep], gold_chain: Sequence[FactTriple]) -> bool:
    triples = trace_triples(trace)
    if len(triples) != len(gold_chain):
        return False
    n = normalize_entity
    for (s, r, o), gold in zip(triples, gold_chain):
        if n(o) != n(gold.object):
            return False
        if r is not None and n(r) != n(gold.relation):
            return False
        if s is not None and n(s) != n(gold.subject):
            return False
    return True


def answer_matches(answer: str, case: EvalCase) -> bool:
    target = normalize_entity(answer)
    return any(target == normalize_entity(a) for a in (case.gold_answer, *case.gold_aliases))


def recall_fraction(result: SolveResult, case: EvalCase) -> float:
    required = {e.key for e in case.edits}
    if not required:
        return 0.0
    hit = {e.key for e in result.retrieved_edits} & required
    return len(hit) / len(required)


@dataclass(frozen=True)
class CaseScore:
    solved: bool
    path_exact: bool
    recall_fraction: float


def score_case(case: EvalCase, results: Sequence[SolveResult | None]) -> CaseScore:
    """Any-of-three scoring; ``None`` stands for an aborted solve."""
    if len(results) != len(case.questions):
        raise ValueError("need exactly one result per question")
    done = [r for r in results if r is not None]
    return CaseScore(
        solved=any(answer_matches(r.final_answer, case) for r in done),
        path_exact=any(path_matches(r.trace, case.gold_chain) for r in done),
        recall_fraction=max((recall_fraction(r, case) for r in done), default=0.0),
    )


# --- running ---

@dataclass
class CaseOutcome:
    case_id: str
    hops: int
    edits: int
    solved: bool
    path_exact: bool
    recall_fraction: float
    case_guided_questions: int
    tokens_in: int
    tokens_out: int
    seconds: float
    traces: list[dict | None]
    errors: list[str] = field(default_factory=list)

    def csv_row(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "hops": self.hops,
            "edits": self.edits,
            "solved": int(self.solved),
            "path_exact": int(self.path_exact),
            "recall": round(self.recall_fraction, 6),
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "seconds": round(self.seconds, 4),
        }


@dataclass
class EvalReport:
    acc: float
    hop_acc: float
    recall: float
    per_case: list[CaseOutcome]
    setting: BatchSetting
    config: dict[str, Any]
    tokens_in: int = 0
    tokens_out: int = 0

    @property
    def case_guided_questions(self) -> int:
        return sum(c.case_guided_questions for c in self.per_case)

    def summary(self) -> str:
        return f"Acc {self.acc:.1f} Hop-Acc {self.hop_acc:.1f} Recall {self.recall:.1f}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "acc": self.acc,
            "hop_acc": self.hop_acc,
            "recall": self.recall,
            "setting": self.setting.value,
            "case_guided_questions": self.case_guided_questions,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "config": self.config,
            "per_case": [
                {**c.csv_row(), "solved": c.solved, "path_exact": c.path_exact,
                 "recall_fraction": c.recall_fraction, "case_guided_questions": c.case_guided_questions,
                 "errors": c.errors, "traces": c.traces}
                for c in self.per_case
            ],
        }

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> tuple[Path, Path]:
        json_path = Path(json_path)
        csv_path = Path(csv_path) if csv_path else json_path.with_suffix(".csv")
        json_path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for c in self.per_case:
                writer.writerow(c.csv_row())
        return json_path, csv_path


def build_memories(
    cases: Sequence[EvalCase],
    setting: BatchSetting,
    embedder: Embedder,
    extra_edits: Iterable[FactEdit] = (),
) -> list[tuple[list[int], EditedFactMemory]]:
    """One memory per batch group. ``extra_edits`` (distractors) join every shared memory."""
    extras = list(extra_edits)
    groups = []
    for idx in partition(len(cases), setting):
        edits = [e for i in idx for e in cases[i].edits]
        if setting is not BatchSetting.ONE_EDITED:
            edits = extras + edits
        groups.append((idx, EditedFactMemory(embedder, edits)))
    return groups


def _solve_case(solver: Solver, case: EvalCase, on_success: Callable[[str, SolveResult], None] | None) -> CaseOutcome:
    started = time.perf_counter()
    results: list[SolveResult | None] = []
    errors: list[str] = []
    for question in case.questions:
        try:
            result = solver.solve(question)
        except AbortedCase as exc:
            logger.info("case %s aborted: %s", case.case_id, exc)
            errors.append(f"aborted: {exc}")
            result = None
        results.append(result)
        if result is not None and on_success is not None and answer_matches(result.final_answer, case):
            on_success(question, result)
    score = score_case(case, results)
    done = [r for r in results if r is not None]
    return CaseOutcome(
        case_id=case.case_id,
        hops=case.hop_count,
        edits=len(case.edits),
        solved=score.solved,
        path_exact=score.path_exact,
        recall_fraction=score.recall_fraction,
        case_guided_questions=sum(1 for r in done if r.guidance_uses.get("case")),
        tokens_in=sum(r.input_tokens for r in done),
        tokens_out=sum(r.output_tokens for r in done),
        seconds=time.perf_counter() - started,
        traces=[r.to_dict() if r is not None else None for r in results],
        errors=errors,
    )


def run_eval(
    cases: Sequence[EvalCase],
    setting: BatchSetting,
    config: EngineConfig,
    backend: LlmBackend,
    fact_embedder: Embedder,
    library: CaseLibrary | None = None,
    prompts: PromptCatalog | None = None,
    extra_edits: Iterable[FactEdit] = (),
    parallel: int = 1,
    library_append: bool = False,
) -> EvalReport:
    """Solve every paraphrase of every case under ``setting`` and aggregate the metrics.

    Backend failures propagate; decomposition aborts are scored as unsolved.
    """
    if not cases:
        raise ValueError("no cases to evaluate")
    prompts = prompts or PromptCatalog.load()

    def append_solved(question: str, result: SolveResult) -> None:
        if result.trace:
            library.append(CaseRecord(question, tuple(result.trace), result.trace[-1].answer))

    appending = library_append and library is not None and not library.frozen
    on_success = append_solved if appending else None

    outcomes: dict[int, CaseOutcome] = {}
    for idx, memory in build_memories(cases, setting, fact_embedder, extra_edits):
        solver = Solver(memory, library, config, backend, prompts)
        if parallel > 1 and not library_append:
            with ThreadPoolExecutor(max_workers=parallel) as pool:
                futures = {i: pool.submit(_solve_case, solver, cases[i], None) for i in idx}
                for i, fut in futures.items():
                    outcomes[i] = fut.result()
        else:
            for i in idx:
                outcomes[i] = _solve_case(solver, cases[i], on_success)

    per_case = [outcomes[i] for i in range(len(cases))]
    n = len(per_case)
    return EvalReport(
        acc=100.0 * sum(c.solved for c in per_case) / n,
        hop_acc=100.0 * sum(c.path_exact for c in per_case) / n,
        recall=100.0 * sum(c.recall_fraction for c in per_case) / n,
        per_case=per_case,
        setting=setting,
        config=config.to_dict(),
        tokens_in=sum(c.tokens_in for c in per_case),
        tokens_out=sum(c.tokens_out for c in per_case),
    )

