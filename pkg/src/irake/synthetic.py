"""Synthetic MQuAKE-format suites for offline evaluation.

Entities are invented two-word names whose tokens are unique across a suite,
so hop questions only collide where a suite deliberately makes them collide.
Hop/edit counts are drawn from the joint distribution of the MQuAKE-2002 split.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from .core import FactEdit
from .embedding import Embedder, HashingEmbedder
from .evaluation import EvalCase, case_from_record
from .memory import EditedFactMemory
from .oracle import hop_edits, hop_subquestions

# (hops, edits) -> number of MQuAKE-2002 cases
MQUAKE_2002_SHAPE = {
    (2, 1): 479, (3, 1): 71, (4, 1): 7,
    (2, 2): 487, (3, 2): 244, (4, 2): 20,
    (3, 3): 310, (4, 3): 116,
    (4, 4): 268,
}


@dataclass(frozen=True)
class Relation:
    rid: str
    label: str

    def question(self, subject: str) -> str:
        return f"What is the {self.label} of {subject}?"


RELATIONS = tuple(
    Relation(f"R{i}", label)
    for i, label in enumerate(
        [
            "capital", "currency", "spouse", "birthplace", "founder", "headquarters",
            "continent", "anthem", "mascot", "employer", "sport", "genre",
            "composer", "architect", "sponsor", "mayor", "owner", "creator",
        ],
        start=1,
    )
)

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kl", "st", "tr", "gr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "n", "r", "l", "k", "th", "s", "x"]


class NameForge:
    """Invents capitalized two-word names; no token is ever handed out twice."""

    def __init__(self, rng: random.Random) -> None:
        self.rng = rng
        self.used: set[str] = set()

    def _word(self) -> str:
        while True:
            syllables = self.rng.randint(2, 3)
            word = "".join(
                self.rng.choice(_ONSETS) + self.rng.choice(_VOWELS) for _ in range(syllables)
            ) + self.rng.choice(_CODAS)
            if word not in self.used:
                self.used.add(word)
                return word.capitalize()

    def name(self) -> str:
        return f"{self._word()} {self._word()}"


def _phrase(relations: Sequence[Relation], subject: str) -> str:
    """'mayor of the capital of X' for relations applied in order [capital, mayor]."""
    labels = [r.label for r in reversed(relations)]
    return " of the ".join(labels) + f" of {subject}"


def _shape_sampler(rng: random.Random):
    shapes = list(MQUAKE_2002_SHAPE)
    weights = [MQUAKE_2002_SHAPE[s] for s in shapes]
    return lambda: rng.choices(shapes, weights)[0]


@dataclass
class SyntheticSuite:
    records: list[dict]
    distractors: list[FactEdit] = field(default_factory=list)

    @property
    def cases(self) -> list[EvalCase]:
        return [case_from_record(r, i) for i, r in enumerate(self.records)]


def make_record(
    case_id: str,
    hops: int,
    n_edits: int,
    forge: NameForge,
    rng: random.Random,
    skip_edited_hop: bool = False,
) -> dict:
    relations = rng.sample(RELATIONS, hops)
    edited = sorted(rng.sample(range(hops), n_edits))
    entities = [forge.name() for _ in range(hops + 1)]
    old_objects = {k: forge.name() for k in edited}
    subjects, objects = entities[:-1], entities[1:]
    phrase = _phrase(relations, subjects[0])
    questions = [
        f"What is the {phrase}?",
        f"Which entity is the {phrase}?",
        f"Can you name the {phrase}?",
    ]
    rewrites = [
        f"What is the {_phrase(relations[k + 1:], objects[k])}?" if k + 1 < hops else objects[k]
        for k in range(hops)
    ]
    gold = objects[-1]
    record = {
        "case_id": case_id,
        "questions": questions,
        "new_answer": gold,
        "new_answer_alias": [gold.split()[0]],
        "requested_rewrite": [
            {
                "subject": subjects[k],
                "prompt": f"The {relations[k].label} of {{}} is",
                "relation_id": relations[k].rid,
                "question": relations[k].question(subjects[k]),
                "target_true": {"str": old_objects[k]},
                "target_new": {"str": objects[k]},
            }
            for k in edited
        ],
        "new_triples": [[subjects[k], relations[k].rid, objects[k]] for k in range(hops)],
        "new_triples_labeled": [[subjects[k], relations[k].label, objects[k]] for k in range(hops)],
        "new_single_hops": [
            {"question": relations[k].question(subjects[k]), "answer": objects[k]} for k in range(hops)
        ],
        "synthetic": {"rewrites": rewrites, "skips": []},
    }
    if skip_edited_hop:
        k = rng.choice(edited)
        record["synthetic"]["skips"].append(
            {
                "hop": k,
                "subquestion": f"Which {relations[k].label} is linked to {subjects[k]}?",
                "parametric_answer": old_objects[k],
            }
        )
    return record


def _ambiguous(cases: Sequence[EvalCase], records: Sequence[dict], memory: EditedFactMemory, tau: float) -> set[str]:
    """Case ids whose hop questions would be mis-retrieved in ``memory``."""
    bad = set()
    for case, record in zip(cases, records):
        for q, edit in zip(hop_subquestions(case), hop_edits(case)):
            if memory.precise_retrieve(q, tau) != edit:
                bad.add(case.case_id)
        for skip in record["synthetic"]["skips"]:
            if memory.precise_retrieve(skip["subquestion"], tau) is not None:
                bad.add(case.case_id)
    return bad


def generate_suite(
    n_cases: int,
    seed: int = 0,
    skip_fraction: float = 0.0,
    prefix: str = "syn",
    embedder: Embedder | None = None,
    tau: float = 0.85,
    max_rounds: int = 50,
) -> SyntheticSuite:
    """``n_cases`` records whose gold hop questions retrieve exactly their own edits.

    ``skip_fraction`` of the cases get a skip entry on one edited hop.
    Cases that turn out ambiguous under ``embedder`` (hash collisions) are redrawn.
    """
    rng = random.Random(seed)
    forge = NameForge(rng)
    shape = _shape_sampler(rng)
    embedder = embedder or HashingEmbedder()

    def draw(i: int) -> dict:
        hops, n_edits = shape()
        return make_record(f"{prefix}-{i}", hops, n_edits, forge, rng, rng.random() < skip_fraction)

    records = [draw(i) for i in range(n_cases)]
    for _ in range(max_rounds):
        cases = [case_from_record(r, i) for i, r in enumerate(records)]
        memory = EditedFactMemory(embedder, (e for c in cases for e in c.edits))
        bad = _ambiguous(cases, records, memory, tau)
        if not bad:
            return SyntheticSuite(records)
        records = [draw(i) if r["case_id"] in bad else r for i, r in enumerate(records)]
    raise RuntimeError("could not draw an unambiguous synthetic suite")


def same_subject_distractors(
    suite: SyntheticSuite,
    count: int,
    seed: int = 0,
    embedder: Embedder | None = None,
    tau: float = 0.85,
) -> list[FactEdit]:
    """Edits on the subjects of unedited hops that sit before an edited hop.

    Each distractor changes a *different* relation of that subject, so its atomic
    question differs from the hop question by one word. In a shared memory the
    thresholded retriever can confuse the two, derail the chain and miss the
    later edit; a one-edited memory never contains them. Remaining slots are
    filled with edits on fresh subjects.
    """
    rng = random.Random(seed)
    forge = NameForge(rng)
    for record in suite.records:
        for triple in record["new_triples_labeled"]:
            for name in (triple[0], triple[2]):
                forge.used.update(name.lower().split())
    embedder = embedder or HashingEmbedder()
    cases = suite.cases
    targeted: list[FactEdit] = []
    for case in cases:
        edits = hop_edits(case)
        first_edit = next(i for i, e in enumerate(edits) if e is not None)
        for k in range(first_edit):
            triple = case.gold_chain[k]
            hop_q = hop_subquestions(case)[k]
            for rel in RELATIONS:
                if rel.rid == triple.relation:
                    continue
                obj = forge.name()
                cand = FactEdit(
                    triple.subject, rel.rid, "", obj, rel.question(triple.subject),
                    f"The {rel.label} of {triple.subject} is {obj}",
                )
                if EditedFactMemory(embedder, [cand]).precise_retrieve(hop_q, tau) is not None:
                    targeted.append(cand)
                    break
    rng.shuffle(targeted)
    out = targeted[:count]
    while len(out) < count:
        rel = rng.choice(RELATIONS)
        subject = forge.name()
        obj = forge.name()
        out.append(FactEdit(subject, rel.rid, "", obj, rel.question(subject), f"The {rel.label} of {subject} is {obj}"))
    return out
