"""Hand-scripted scenarios that exercise edit skipping and state backtracking.

Each scenario bundles a question, its edits and a scripted model. The script
plays a model that phrases subquestions at the wrong granularity unless fact
guidance steers it, and answers parametrically from pre-edit knowledge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import DecompositionStep, FactEdit
from .embedding import Embedder, HashingEmbedder
from .llm import ScriptedBackend, ScriptedRule
from .memory import EditedFactMemory
from .oracle import CATCH_ALL, judge_pattern, state_key


class _Script:
    """Collects rules in the order the backend must try them."""

    def __init__(self, question: str) -> None:
        self.question = question
        self.guided: list[ScriptedRule] = []
        self.generic: list[ScriptedRule] = []

    def decompose(self, history: list[tuple[str, str]], response: str, reference: str | None = None) -> None:
        key = state_key(self.question, [DecompositionStep(s, a) for s, a in history])
        anchor = f"Current question: {self.question}"
        if reference is None:
            self.generic.append(ScriptedRule(key, response, anchor))
        else:
            self.guided.append(ScriptedRule(f"Reference: {reference}\n{key}", response, anchor))

    def judge(self, working: str, candidate: str, max_candidates: int = 10) -> None:
        for i in range(1, max_candidates + 1):
            self.generic.append(ScriptedRule(judge_pattern(working, candidate, i), str(i), f"Question: {working}"))

    def answer(self, subquestion: str, answer: str) -> None:
        line = f"Question to answer: {subquestion}"
        self.generic.append(ScriptedRule(f"{line}\nShort answer:", answer, line))

    def rewrite(self, working: str, subquestion: str, answer: str, rewritten: str) -> None:
        line = f"Question: {working}"
        key = f"{line}\nSubquestion: {subquestion}\nAnswer: {answer}\nRewritten question:"
        self.generic.append(ScriptedRule(key, rewritten, line))

    def rules(self) -> list[ScriptedRule]:
        return self.guided + self.generic


@dataclass
class Scenario:
    name: str
    question: str
    gold_answer: str
    edits: list[FactEdit]
    rules: list[ScriptedRule]
    # what the model ends up answering when the relevant mechanism is off
    misled_answer: str
    gold_path: list[str] = field(default_factory=list)

    def backend(self) -> ScriptedBackend:
        return ScriptedBackend(self.rules + [ScriptedRule(m, r) for m, r in CATCH_ALL])

    def memory(self, embedder: Embedder | None = None) -> EditedFactMemory:
        return EditedFactMemory(embedder or HashingEmbedder(), self.edits)

    def script_dict(self) -> dict:
        return self.backend().to_dict()

    def export(self, directory: str | Path) -> Path:
        """Write ``edits.json``, ``script.json`` and ``question.txt`` under ``directory/name``."""
        out = Path(directory) / self.name
        out.mkdir(parents=True, exist_ok=True)
        (out / "edits.json").write_text(json.dumps([e.to_dict() for e in self.edits], indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        (out / "script.json").write_text(json.dumps(self.script_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        (out / "question.txt").write_text(self.question + "\n", encoding="utf-8")
        return out


def olympics() -> Scenario:
    """Two edited hops; unguided, the second subquestion asks for a state instead of a continent."""
    q = "On which continent is the city that will host the 2028 Summer Olympics located?"
    host = FactEdit(
        "2028 Summer Olympics", "host city", "Brisbane", "Los Angeles",
        "Which city will host the 2028 Summer Olympics?",
        "The 2028 Summer Olympics will be hosted by Los Angeles",
    )
    continent = FactEdit(
        "Los Angeles", "continent", "North America", "Asia",
        "On which continent is Los Angeles located?",
        "Los Angeles is located in the continent of Asia",
    )
    s = _Script(q)
    w1 = "On which continent is Los Angeles located?"
    s.judge(q, host.atomic_question)
    s.judge(w1, continent.atomic_question)
    # hop 0: both paths land on the host-city edit
    s.decompose([], f"Subquestion: {host.atomic_question}", reference=host.atomic_question)
    s.decompose([], "Subquestion: Which country will host the 2028 Summer Olympics?")
    s.rewrite(q, host.atomic_question, "Los Angeles", w1)
    s.rewrite(q, "Which country will host the 2028 Summer Olympics?", "Los Angeles", w1)
    for first in (host.atomic_question, "Which country will host the 2028 Summer Olympics?"):
        h1 = [(first, "Los Angeles")]
        s.decompose(h1, f"Subquestion: {continent.atomic_question}", reference=continent.atomic_question)
        s.decompose(h1, "Subquestion: Which state is Los Angeles located in?")
        s.decompose(h1 + [(continent.atomic_question, "Asia")], "Final answer: Asia")
        s.decompose(h1 + [("Which state is Los Angeles located in?", "California")], "Final answer: North America")
    s.rewrite(w1, continent.atomic_question, "Asia", "Asia")
    s.answer("Which state is Los Angeles located in?", "California")
    s.answer(host.atomic_question, "Brisbane")
    s.answer(continent.atomic_question, "North America")
    return Scenario(
        "olympics", q, "Asia", [host, continent], s.rules(), "North America",
        [host.atomic_question, continent.atomic_question],
    )


def first_lady() -> Scenario:
    """One edit in the first of three hops; the unguided first subquestion is coarser than the edit."""
    q = "Where was the current First Lady of the United States born?"
    president = FactEdit(
        "United States", "head of state", "Joe Biden", "Donald Trump",
        "Who is the president of the United States?",
        "The president of the United States is Donald Trump",
    )
    coarse = "Who is the current First Lady of the United States?"
    spouse_q = "Who is the spouse of Donald Trump?"
    born_q = "Where was Melania Trump born?"
    s = _Script(q)
    s.judge(q, president.atomic_question)
    s.decompose([], f"Subquestion: {president.atomic_question}", reference=president.atomic_question)
    s.decompose([], f"Subquestion: {coarse}")
    guided = [(president.atomic_question, "Donald Trump")]
    s.decompose(guided, f"Subquestion: {spouse_q}")
    s.decompose(guided + [(spouse_q, "Melania Trump")], f"Subquestion: {born_q}")
    s.decompose(guided + [(spouse_q, "Melania Trump"), (born_q, "Novo Mesto")], "Final answer: Novo Mesto")
    s.decompose([(coarse, "Jill Biden")], "Subquestion: Where was Jill Biden born?")
    s.decompose([(coarse, "Jill Biden"), ("Where was Jill Biden born?", "Hammonton")], "Final answer: Hammonton")
    s.rewrite(q, president.atomic_question, "Donald Trump", "Where was the spouse of Donald Trump born?")
    s.rewrite("Where was the spouse of Donald Trump born?", spouse_q, "Melania Trump", born_q)
    s.rewrite(born_q, born_q, "Novo Mesto", "Novo Mesto")
    s.rewrite(q, coarse, "Jill Biden", "Where was Jill Biden born?")
    s.answer(president.atomic_question, "Joe Biden")
    s.answer(coarse, "Jill Biden")
    s.answer(spouse_q, "Melania Trump")
    s.answer(born_q, "Novo Mesto")
    s.answer("Where was Jill Biden born?", "Hammonton")
    return Scenario(
        "first_lady", q, "Novo Mesto", [president], s.rules(), "Hammonton",
        [president.atomic_question, spouse_q, born_q],
    )


def danse_macabre() -> Scenario:
    """Misleading guidance sends the first hop down an unedited path; one pop recovers it."""
    q = "What is the name of the political leader of the country of origin of Danse Macabre?"
    misleading = FactEdit(
        "Danse Russe", "author", "William Carlos Williams", "Camille Saint-Saëns",
        "Who wrote Danse Russe?",
        "The writer of Danse Russe is Camille Saint-Saëns",
    )
    origin = FactEdit(
        "Danse Macabre", "country of origin", "Sweden", "France",
        "Where was the theme of Danse Macabre created?",
        "Danse Macabre was created in France",
    )
    wrote = "Who wrote Danse Macabre?"
    music = "Which country is the music of Camille Saint-Saëns from?"
    leader_se = "Who is the political leader of Sweden?"
    leader_fr = "Who is the political leader of France?"
    s = _Script(q)
    # the judge is fooled into picking the Danse Russe edit on the original question
    s.judge(q, misleading.atomic_question)
    s.decompose([], f"Subquestion: {wrote}", reference=misleading.atomic_question)
    s.decompose([], f"Subquestion: {origin.atomic_question}")
    misled = [(wrote, "Camille Saint-Saëns")]
    s.decompose(misled, f"Subquestion: {music}")
    s.decompose(misled + [(music, "Sweden")], f"Subquestion: {leader_se}")
    s.decompose(misled + [(music, "Sweden"), (leader_se, "Ulf Kristersson")], "Final answer: Ulf Kristersson")
    fixed = [(origin.atomic_question, "France")]
    s.decompose(fixed, f"Subquestion: {leader_fr}")
    s.decompose(fixed + [(leader_fr, "Emmanuel Macron")], "Final answer: Emmanuel Macron")
    w_misled = "What is the name of the political leader of the country of origin of the music of Camille Saint-Saëns?"
    s.rewrite(q, wrote, "Camille Saint-Saëns", w_misled)
    s.rewrite(w_misled, music, "Sweden", leader_se)
    s.rewrite(leader_se, leader_se, "Ulf Kristersson", "Ulf Kristersson")
    s.rewrite(q, origin.atomic_question, "France", leader_fr)
    s.rewrite(leader_fr, leader_fr, "Emmanuel Macron", "Emmanuel Macron")
    s.answer(wrote, "Camille Saint-Saëns")
    s.answer(music, "Sweden")
    s.answer(leader_se, "Ulf Kristersson")
    s.answer(leader_fr, "Emmanuel Macron")
    s.answer(origin.atomic_question, "Sweden")
    return Scenario(
        "danse_macabre", q, "Emmanuel Macron", [misleading, origin], s.rules(), "Ulf Kristersson",
        [origin.atomic_question, leader_fr],
    )


SCENARIOS = {"olympics": olympics, "first_lady": first_lady, "danse_macabre": danse_macabre}


def export_all(directory: str | Path) -> list[Path]:
    return [factory().export(directory) for factory in SCENARIOS.values()]
