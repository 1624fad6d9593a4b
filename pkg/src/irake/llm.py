"""LLM backends, prompt templates and output parsers.

Templates live as UTF-8 text files (``prompts/<name>.txt``) with ``${slot}``
placeholders so their wording can be edited without touching code.
"""

from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence, Union

import httpx

from .core import DecompositionStep
from .errors import (
    BackendTimeout,
    BackendUnavailable,
    EmptyCompletion,
    TemplateError,
    UnparseableDecomposition,
    UnparseableJudgment,
)

logger = logging.getLogger(__name__)

TEMPLATE_NAMES = ("judge", "rewrite", "decompose_static", "decompose_guided", "answer")
_SLOT_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    static_text: str

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(_SLOT_RE.findall(self.static_text))

    def render(self, **values: str) -> str:
        missing = self.slots - values.keys()
        if missing:
            raise TemplateError(f"template {self.name!r} is missing slot(s): {sorted(missing)}")
        # single pass, so slot values containing "${...}" are never re-expanded
        return _SLOT_RE.sub(lambda m: str(values[m.group(1)]), self.static_text)


class PromptCatalog:
    """The five templates the controller needs, loaded from a directory."""

    def __init__(self, templates: dict[str, PromptTemplate]) -> None:
        missing = set(TEMPLATE_NAMES) - templates.keys()
        if missing:
            raise TemplateError(f"missing template(s): {sorted(missing)}")
        self.templates = templates

    def __getitem__(self, name: str) -> PromptTemplate:
        return self.templates[name]

    @classmethod
    def load(cls, prompts_dir: str | Path | None = None) -> PromptCatalog:
        """Load templates from ``prompts_dir``; files absent there fall back to the bundled ones."""
        bundled = resources.files("irake") / "prompts"
        templates = {}
        for name in TEMPLATE_NAMES:
            path = Path(prompts_dir) / f"{name}.txt" if prompts_dir else None
            if path is not None and path.exists():
                text = path.read_text(encoding="utf-8")
            else:
                text = (bundled / f"{name}.txt").read_text(encoding="utf-8")
            templates[name] = PromptTemplate(name, text)
        return cls(templates)


# --- rendering helpers shared by the controller and scripted-rule builders ---

def render_candidates(questions: Sequence[str]) -> str:
    return "".join(f"{i}. {q}\n" for i, q in enumerate(questions, start=1))


def render_history(steps: Iterable[DecompositionStep]) -> str:
    return "".join(f"Subquestion: {s.subquestion}\nAnswer: {s.answer}\n" for s in steps)


def render_case_examples(rendered_record: str | None) -> str:
    if not rendered_record:
        return ""
    return "\nHere is how a similar question was solved:\n" + rendered_record + "\n"


# --- replies, usage and backends ---

@dataclass(frozen=True)
class LlmReply:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


def estimate_tokens(text: str) -> int:
    return len(text.split())


class UsageCounter:
    """Thread-safe running totals; only :meth:`reset` moves them down."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls = 0
        self.input_tokens = 0
        self.output_tokens = 0

    def add(self, reply: LlmReply) -> None:
        with self._lock:
            self.calls += 1
            self.input_tokens += reply.input_tokens
            self.output_tokens += reply.output_tokens

    def reset(self) -> None:
        with self._lock:
            self.calls = self.input_tokens = self.output_tokens = 0


class LlmBackend(Protocol):
    backend_id: str
    usage: UsageCounter

    def generate(self, prompt: str, temperature: float = 0.0, max_tokens: int = 200) -> LlmReply: ...


Matcher = Union[str, re.Pattern]


@dataclass(frozen=True)
class ScriptedRule:
    """``matcher`` must hit the prompt; if ``anchor`` is set it must also be a whole line of it.

    Anchors let :class:`ScriptedBackend` skip rules cheaply on large rule sets.
    """

    matcher: Matcher
    response: str
    anchor: str | None = None

    def _body_matches(self, prompt: str) -> bool:
        if isinstance(self.matcher, str):
            return self.matcher in prompt
        return self.matcher.search(prompt) is not None

    def matches(self, prompt: str) -> bool:
        if self.anchor is not None and self.anchor not in prompt.split("\n"):
            return False
        return self._body_matches(prompt)

    def to_dict(self) -> dict:
        if isinstance(self.matcher, str):
            out = {"match": self.matcher, "response": self.response}
        else:
            out = {"pattern": self.matcher.pattern, "response": self.response}
        if self.anchor is not None:
            out["anchor"] = self.anchor
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ScriptedRule:
        anchor = data.get("anchor")
        if "pattern" in data:
            return cls(re.compile(data["pattern"], re.S), data["response"], anchor)
        return cls(data["match"], data["response"], anchor)


class ScriptedBackend:
    """Deterministic backend: the first rule whose matcher hits the prompt answers it.

    Matchers are plain substrings or compiled regular expressions (``search``
    semantics). Every prompt is appended to :attr:`call_log`.
    """

    def __init__(self, rules: Iterable[ScriptedRule | tuple] = (), default_response: str = "") -> None:
        self.rules: tuple[ScriptedRule, ...] = tuple(
            r if isinstance(r, ScriptedRule) else ScriptedRule(*r) for r in rules
        )
        self.default_response = default_response
        self.backend_id = "scripted"
        self.usage = UsageCounter()
        self.call_log: list[str] = []
        self._log_lock = threading.Lock()
        self._free: list[int] = []
        self._by_anchor: dict[str, list[int]] = {}
        for i, rule in enumerate(self.rules):
            if rule.anchor is None:
                self._free.append(i)
            else:
                self._by_anchor.setdefault(rule.anchor, []).append(i)

    def respond(self, prompt: str) -> str:
        order = list(self._free)
        for line in set(prompt.split("\n")):
            order.extend(self._by_anchor.get(line, ()))
        for i in sorted(order):
            if self.rules[i]._body_matches(prompt):
                return self.rules[i].response
        return self.default_response

    def generate(self, prompt: str, temperature: float = 0.0, max_tokens: int = 200) -> LlmReply:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        text = self.respond(prompt)
        reply = LlmReply(text, estimate_tokens(prompt), estimate_tokens(text))
        with self._log_lock:
            self.call_log.append(prompt)
        self.usage.add(reply)
        return reply

    def to_dict(self) -> dict:
        return {"rules": [r.to_dict() for r in self.rules], "default_response": self.default_response}

    @classmethod
    def from_dict(cls, data: dict) -> ScriptedBackend:
        return cls([ScriptedRule.from_dict(r) for r in data.get("rules", [])], data.get("default_response", ""))


class OpenAIChatBackend:
    """OpenAI-compatible ``/chat/completions`` client.

    A timed-out request is retried once; a second timeout raises
    :class:`BackendTimeout` (a :class:`BackendUnavailable`).
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        repetition_penalty: float | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        url = endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        self.url = url
        self.model = model
        self.repetition_penalty = repetition_penalty
        self.backend_id = f"openai:{url}:{model}"
        self.usage = UsageCounter()
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout_s, headers=headers)

    def _payload(self, prompt: str, temperature: float, max_tokens: int) -> dict:
        payload: dict = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        if self.repetition_penalty is not None:
            # not part of the OpenAI schema; vLLM-style servers honour it
            payload["repetition_penalty"] = self.repetition_penalty
        return payload

    def generate(self, prompt: str, temperature: float = 0.0, max_tokens: int = 200) -> LlmReply:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        payload = self._payload(prompt, temperature, max_tokens)
        response = None
        for attempt in (1, 2):
            try:
                response = self._client.post(self.url, json=payload)
                break
            except httpx.TimeoutException as exc:
                logger.warning("chat request timed out (attempt %d): %s", attempt, exc)
                if attempt == 2:
                    raise BackendTimeout(f"chat request timed out twice: {exc}") from exc
            except httpx.HTTPError as exc:
                raise BackendUnavailable(f"chat request failed: {exc}") from exc
        assert response is not None
        if response.status_code >= 400:
            raise BackendUnavailable(f"chat endpoint returned HTTP {response.status_code}: {response.text[:200]}")
        data = response.json()
        choices = data.get("choices") or []
        content = ""
        if choices:
            content = (choices[0].get("message") or {}).get("content") or ""
        if not content.strip():
            raise EmptyCompletion("chat endpoint returned an empty completion")
        usage = data.get("usage") or {}
        reply = LlmReply(
            content,
            int(usage.get("prompt_tokens", estimate_tokens(prompt))),
            int(usage.get("completion_tokens", estimate_tokens(content))),
        )
        self.usage.add(reply)
        return reply


# --- parsers ---

@dataclass(frozen=True)
class Subquestion:
    text: str


@dataclass(frozen=True)
class FinalAnswer:
    text: str


StepOutput = Union[Subquestion, FinalAnswer]

_INT_RE = re.compile(r"-?\d+")


def parse_judgment(text: str, candidate_count: int) -> int | None:
    """1-based candidate index from a judge reply; None means "no guidance"."""
    if candidate_count < 1:
        raise ValueError("candidate_count must be >= 1")
    match = _INT_RE.search(text)
    if match is None:
        raise UnparseableJudgment(f"no integer in judgment reply: {text!r}")
    value = int(match.group())
    if 1 <= value <= candidate_count:
        return value
    return None


def parse_decomposition(text: str) -> StepOutput:
    """Find a "Final answer:" or "Subquestion:" line; the final answer wins if both appear."""
    subquestion = None
    for line in text.splitlines():
        stripped = line.strip()
        lowered = stripped.lower()
        if lowered.startswith("final answer:"):
            return FinalAnswer(stripped[len("final answer:"):].strip())
        if subquestion is None and lowered.startswith("subquestion:"):
            subquestion = stripped[len("subquestion:"):].strip() or None
    if subquestion is not None:
        return Subquestion(subquestion)
    raise UnparseableDecomposition(f"no Subquestion/Final answer line in: {text!r}")


def parse_short_answer(text: str) -> str:
    line = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
    for prefix in ("short answer:", "answer:"):
        if line.lower().startswith(prefix):
            line = line[len(prefix):].strip()
    return line
