"""Scripted-LLM rules that encode a case's gold decomposition.

The rules target the bundled prompt templates: each rule keys on a literal
fragment the controller renders (the "Current question: ... Your output:" block
of a decomposition prompt, the "Question to answer:" line of a parametric QA
prompt, and so on). Parametric answers for edited hops return the *old* object,
so a rule set only reaches the gold answer when retrieval actually fires.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .core import CaseRecord, DecompositionStep, FactEdit, normalize_entity
from .evaluation import EvalCase
from .llm import ScriptedBackend, ScriptedRule, render_history

CATCH_ALL = (
    ("[JUDGE]", "0"),
    ("[REWRITE]", ""),
    ("[ANSWER]", "unknown"),
    ("[DECOMPOSE]", "Final answer: unknown"),
)


@dataclass(frozen=True)
class SkipSpec:
    """An edited hop the unguided model phrases at the wrong granularity.

    Without guidance the model asks ``subquestion`` (which misses the edit),
    gets ``parametric_answer`` back, and stops with that as its final answer.
    """

    hop: int
    subquestion: str
    parametric_answer: str


def hop_edits(case: EvalCase) -> list[FactEdit | None]:
    by_slot = {e.slot: e for e in case.edits}
    return [
        by_slot.get((normalize_entity(t.subject), normalize_entity(t.relation)))
        for t in case.gold_chain
    ]


def hop_subquestions(case: EvalCase) -> list[str]:
    out = []
    for i, (triple, edit) in enumerate(zip(case.gold_chain, hop_edits(case))):
        if edit is not None:
            out.append(edit.atomic_question)
        elif case.hop_questions:
            out.append(case.hop_questions[i])
        else:
            out.append(f"What is the {triple.relation} of {triple.subject}?")
    return out


def gold_steps(case: EvalCase) -> list[DecompositionStep]:
    return [
        DecompositionStep(q, t.object, e)
        for q, t, e in zip(hop_subquestions(case), case.gold_chain, hop_edits(case))
    ]


def gold_record(case: EvalCase, question_index: int = 0) -> CaseRecord:
    steps = tuple(gold_steps(case))
    return CaseRecord(case.questions[question_index], steps, steps[-1].answer)


def state_key(question: str, steps: Sequence[DecompositionStep]) -> str:
    return f"Current question: {question}\n{render_history(steps)}Your output:"


def judge_pattern(working_question: str, candidate: str, index: int) -> re.Pattern:
    head = re.escape(f"Question: {working_question}\nCandidates:\n")
    return re.compile(head + r"(?:[^\n]*\n)*?" + re.escape(f"{index}. {candidate}\n"))


def oracle_rules(
    case: EvalCase,
    rewrites: Sequence[str] | None = None,
    skips: Iterable[SkipSpec] = (),
    max_candidates: int = 10,
) -> list[ScriptedRule]:
    """Rules for one case; guided-only rules come first so they win over generic ones.

    ``rewrites[k]`` is the rewritten question after hop ``k``; by default it is
    the next hop's subquestion (and the final object after the last hop).
    """
    subqs = hop_subquestions(case)
    edits = hop_edits(case)
    objects = [t.object for t in case.gold_chain]
    n = len(subqs)
    if rewrites is None:
        rewrites = subqs[1:] + [objects[-1]]
    if len(rewrites) != n:
        raise ValueError(f"expected {n} rewrites, got {len(rewrites)}")
    skip_by_hop = {s.hop: s for s in skips}
    for hop in skip_by_hop:
        if edits[hop] is None:
            raise ValueError(f"hop {hop} has no edit to skip")
    steps = gold_steps(case)
    plain_steps = [DecompositionStep(s.subquestion, s.answer) for s in steps]

    # matcher -> (response, anchor line)
    guided: dict[object, tuple[str, str]] = {}
    generic: dict[object, tuple[str, str]] = {}
    for question in case.questions:
        working = [question, *rewrites]
        current = f"Current question: {question}"
        for k in range(n + 1):
            key = state_key(question, plain_steps[:k])
            if k == n:
                generic[key] = (f"Final answer: {case.gold_answer}", current)
                continue
            skip = skip_by_hop.get(k)
            if skip is not None:
                guided[f"Reference: {subqs[k]}\n{key}"] = (f"Subquestion: {subqs[k]}", current)
                generic[key] = (f"Subquestion: {skip.subquestion}", current)
                miss = plain_steps[:k] + [DecompositionStep(skip.subquestion, skip.parametric_answer)]
                generic[state_key(question, miss)] = (f"Final answer: {skip.parametric_answer}", current)
            else:
                generic[key] = (f"Subquestion: {subqs[k]}", current)
            asked = f"Question: {working[k]}"
            rewrite_key = f"{asked}\nSubquestion: {subqs[k]}\nAnswer: {objects[k]}\nRewritten question:"
            generic[rewrite_key] = (working[k + 1], asked)
            if edits[k] is not None:
                for i in range(1, max_candidates + 1):
                    pattern = judge_pattern(working[k], edits[k].atomic_question, i)
                    generic[pattern] = (str(i), asked)

    for k, subq in enumerate(subqs):
        # parametric knowledge predates the edits
        answer = (edits[k].old_object or "unknown") if edits[k] is not None else objects[k]
        line = f"Question to answer: {subq}"
        generic[f"{line}\nShort answer:"] = (answer, line)
    for skip in skip_by_hop.values():
        line = f"Question to answer: {skip.subquestion}"
        generic[f"{line}\nShort answer:"] = (skip.parametric_answer, line)

    return [ScriptedRule(m, r, a) for m, (r, a) in guided.items()] + [
        ScriptedRule(m, r, a) for m, (r, a) in generic.items()
    ]


def oracle_backend(
    cases: Sequence[EvalCase],
    extras: Mapping[str, dict] | None = None,
    max_candidates: int = 10,
) -> ScriptedBackend:
    """One scripted backend covering ``cases``.

    ``extras`` maps case_id to optional ``{"rewrites": [...], "skips": [...]}``
    (the ``synthetic`` block the suite generator stores in each record).
    """
    extras = extras or {}
    guided: list[ScriptedRule] = []
    generic: list[ScriptedRule] = []
    for case in cases:
        extra = extras.get(case.case_id) or {}
        skips = [SkipSpec(**s) for s in extra.get("skips", [])]
        for rule in oracle_rules(case, extra.get("rewrites"), skips, max_candidates):
            is_guided = isinstance(rule.matcher, str) and rule.matcher.startswith("Reference: ")
            (guided if is_guided else generic).append(rule)
    rules = guided + generic + [ScriptedRule(m, r) for m, r in CATCH_ALL]
    return ScriptedBackend(rules)


def extras_from_records(records: Sequence[dict]) -> dict[str, dict]:
    return {
        str(r.get("case_id", i)): r["synthetic"]
        for i, r in enumerate(records)
        if isinstance(r.get("synthetic"), dict)
    }
