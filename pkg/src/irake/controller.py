"""The retrieve-then-decompose solve loop with state backtracking."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Any

from .cases import CaseLibrary
from .core import (
    DecompositionStep,
    EngineConfig,
    FactEdit,
    GuidancePayload,
    GuidedBy,
    ReasoningState,
)
from .errors import AbortedCase, UnparseableDecomposition, UnparseableJudgment
from .llm import (
    FinalAnswer,
    LlmBackend,
    LlmReply,
    PromptCatalog,
    parse_decomposition,
    parse_judgment,
    parse_short_answer,
    render_candidates,
    render_case_examples,
    render_history,
)
from .memory import EditedFactMemory

logger = logging.getLogger(__name__)

FORMAT_REMINDER = "\nReply with one line starting with \"Subquestion:\" or \"Final answer:\".\n"


@dataclass
class SolveResult:
    final_answer: str
    trace: list[DecompositionStep]
    backtrack_count: int = 0
    guidance_uses: dict[str, int] = field(default_factory=lambda: {"fact": 0, "case": 0})
    truncated: bool = False
    final_stack_depth: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    llm_calls: int = 0

    @property
    def retrieved_edit_count(self) -> int:
        return sum(1 for s in self.trace if s.retrieved_edit is not None)

    @property
    def retrieved_edits(self) -> list[FactEdit]:
        return [s.retrieved_edit for s in self.trace if s.retrieved_edit is not None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "final_answer": self.final_answer,
            "trace": [s.to_dict() for s in self.trace],
            "retrieved_edit_count": self.retrieved_edit_count,
            "backtrack_count": self.backtrack_count,
            "guidance_uses": dict(self.guidance_uses),
            "truncated": self.truncated,
            "final_stack_depth": self.final_stack_depth,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "llm_calls": self.llm_calls,
        }


class Solver:
    """Runs one question at a time against a fixed memory, case library and backend.

    A solver holds no per-question state, so one instance may serve many
    concurrent :meth:`solve` calls over read-only memory and library.
    """

    def __init__(
        self,
        memory: EditedFactMemory,
        library: CaseLibrary | None,
        config: EngineConfig,
        backend: LlmBackend,
        prompts: PromptCatalog | None = None,
    ) -> None:
        self.memory = memory
        self.library = library
        self.config = config
        self.backend = backend
        self.prompts = prompts or PromptCatalog.load()

    def solve(self, question: str) -> SolveResult:
        if not question or not question.strip():
            raise ValueError("question must be non-empty")
        return _Run(self, question).execute()


def solve(
    question: str,
    memory: EditedFactMemory,
    library: CaseLibrary | None,
    config: EngineConfig,
    backend: LlmBackend,
    prompts: PromptCatalog | None = None,
) -> SolveResult:
    return Solver(memory, library, config, backend, prompts).solve(question)


class _Run:
    def __init__(self, solver: Solver, question: str) -> None:
        self.s = solver
        self.cfg = solver.config
        self.state = ReasoningState(original_question=question, working_question=question)
        self.backtracks = 0
        self.uses = {"fact": 0, "case": 0}
        self.tokens_in = 0
        self.tokens_out = 0
        self.calls = 0

    def _generate(self, prompt: str) -> LlmReply:
        reply = self.s.backend.generate(
            prompt, temperature=self.cfg.llm_temperature, max_tokens=self.cfg.llm_max_tokens
        )
        self.tokens_in += reply.input_tokens
        self.tokens_out += reply.output_tokens
        self.calls += 1
        return reply

    def _result(self, answer: str, truncated: bool = False) -> SolveResult:
        return SolveResult(
            final_answer=answer,
            trace=list(self.state.trace),
            backtrack_count=self.backtracks,
            guidance_uses=dict(self.uses),
            truncated=truncated,
            final_stack_depth=len(self.state.backtrack_stack),
            input_tokens=self.tokens_in,
            output_tokens=self.tokens_out,
            llm_calls=self.calls,
        )

    def _case_prompt(self) -> str:
        lib = self.s.library
        if not self.cfg.case_guidance_enabled or lib is None:
            return ""
        question = self.state.original_question
        record = lib.lookup(question, self.cfg.case_similarity_threshold)
        if record is not None and self.cfg.case_selection == "random":
            rng = random.Random(f"{self.cfg.seed}:{question}")
            record = lib.random_record(rng)
        if record is None:
            return ""
        self.uses["case"] += 1
        return render_case_examples(record.render())

    def _fact_guidance(self) -> str | None:
        state = self.state
        query = state.original_question if state.hop_index == 0 else state.working_question
        candidates = self.s.memory.pre_retrieve(query, self.cfg.pre_retrieval_n)
        if not candidates:
            return None
        prompt = self.s.prompts["judge"].render(
            question=state.working_question,
            candidates=render_candidates([c.atomic_question for c in candidates]),
        )
        try:
            choice = parse_judgment(self._generate(prompt).text, len(candidates))
        except UnparseableJudgment:
            logger.debug("unparseable judgment treated as no guidance")
            return None
        if choice is None:
            return None
        edit = candidates[choice - 1]
        if self.cfg.guidance_payload is GuidancePayload.FACT_STATEMENT:
            return edit.statement
        return edit.atomic_question

    def _decompose(self, case_examples: str, guidance: str | None):
        history = render_history(self.state.trace)
        if guidance is None:
            prompt = self.s.prompts["decompose_static"].render(
                case_examples=case_examples, question=self.state.original_question, history=history
            )
        else:
            prompt = self.s.prompts["decompose_guided"].render(
                case_examples=case_examples,
                guidance=guidance,
                question=self.state.original_question,
                history=history,
            )
        try:
            return parse_decomposition(self._generate(prompt).text)
        except UnparseableDecomposition:
            pass
        try:
            return parse_decomposition(self._generate(prompt + FORMAT_REMINDER).text)
        except UnparseableDecomposition as exc:
            raise AbortedCase(str(exc), self.state.trace) from exc

    def _answer(self, subquestion: str) -> tuple[str, FactEdit | None]:
        edit = self.s.memory.precise_retrieve(subquestion, self.cfg.precise_retrieval_threshold)
        if edit is not None:
            return edit.new_object, edit
        reply = self._generate(self.s.prompts["answer"].render(question=subquestion))
        return parse_short_answer(reply.text), None

    def _rewrite(self, subquestion: str, answer: str) -> str:
        prompt = self.s.prompts["rewrite"].render(
            question=self.state.working_question, subquestion=subquestion, answer=answer
        )
        text = parse_short_answer(self._generate(prompt).text)
        return text or self.state.working_question

    def execute(self) -> SolveResult:
        cfg = self.cfg
        state = self.state
        case_examples = self._case_prompt()
        forced_unguided = False
        while True:
            guidance = None
            if cfg.fact_guidance_enabled and not forced_unguided:
                guidance = self._fact_guidance()
            saved = state.snapshot()
            output = self._decompose(case_examples, guidance)

            if isinstance(output, FinalAnswer):
                if cfg.backtracking_enabled and state.backtrack_stack and self.backtracks < cfg.max_backtracks:
                    state.restore(state.backtrack_stack.pop())
                    self.backtracks += 1
                    forced_unguided = True
                    logger.debug("backtracked to hop %d", state.hop_index)
                    continue
                return self._result(output.text)

            if guidance is not None:
                self.uses["fact"] += 1
                # stack is tracked even when backtracking is off so callers can
                # see unresolved guidance at termination; pops stay gated
                state.backtrack_stack.append(saved)

            answer, edit = self._answer(output.text)
            if edit is not None:
                state.backtrack_stack.clear()
            state.trace.append(
                DecompositionStep(
                    subquestion=output.text,
                    answer=answer,
                    retrieved_edit=edit,
                    guided_by=GuidedBy.of(guidance is not None, bool(case_examples)),
                )
            )
            state.working_question = self._rewrite(output.text, answer)
            state.hop_index += 1
            forced_unguided = False
            if state.hop_index >= cfg.max_hops:
                return self._result(answer, truncated=True)
