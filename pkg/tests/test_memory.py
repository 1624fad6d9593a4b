from __future__ import annotations

import random

import pytest

from irake.core import FactEdit
from irake.memory import EditedFactMemory, token_overlap
from irake.scenarios import olympics

from conftest import oracle_cosine


def edit(subject: str, relation: str, new: str, question: str | None = None) -> FactEdit:
    q = question or f"What is the {relation} of {subject}?"
    return FactEdit(subject, relation, "", new, q, f"The {relation} of {subject} is {new}")


def test_insert_and_replace(embedder):
    mem = EditedFactMemory(embedder)
    mem.insert(edit("France", "capital", "Lyon"))
    assert len(mem) == 1
    mem.insert(edit("France", "capital", "Nice"))
    assert len(mem) == 1
    assert mem.edits[0].new_object == "Nice"


def test_replacement_keeps_insertion_slot(embedder):
    mem = EditedFactMemory(embedder, [edit("A", "r", "x"), edit("B", "r", "y")])
    mem.insert(edit("A", "r", "z"))
    assert [e.new_object for e in mem.edits] == ["z", "y"]


def test_hundred_edits_each_self_retrievable(embedder):
    edits = [edit(f"Entity{i} Name{i}", "capital", f"City{i}") for i in range(100)]
    mem = EditedFactMemory(embedder, edits)
    assert len(mem) == 100
    for e in edits:
        i = mem.edits.index(e)
        assert mem.scores(e.atomic_question)[i] == pytest.approx(1.0)
        hit = mem.precise_retrieve(e.atomic_question)
        # 256 hash buckets can collide; then the earliest vector-identical edit wins the tie
        j = mem.edits.index(hit)
        assert j <= i
        assert embedder.embed(hit.atomic_question) == embedder.embed(e.atomic_question)


def test_pre_retrieve_fewer_than_n(embedder):
    edits = [edit("A", "capital", "x"), edit("B", "capital", "y")]
    mem = EditedFactMemory(embedder, edits)
    assert set(mem.pre_retrieve("What is the capital of A?")) == set(edits)
    assert mem.pre_retrieve("anything", n=3)
    assert EditedFactMemory(embedder).pre_retrieve("q") == []
    with pytest.raises(ValueError):
        mem.pre_retrieve("q", n=0)


VOCAB = [
    "who", "what", "is", "the", "of", "capital", "spouse", "born", "city", "country",
    "paris", "france", "leader", "wrote", "song", "team", "river", "asia", "europe", "head",
]


def _phrase(rng: random.Random) -> str:
    return " ".join(rng.choice(VOCAB) for _ in range(rng.randint(2, 7)))


def test_pre_retrieve_matches_exhaustive_oracle(embedder):
    rng = random.Random(11)
    edits = [edit(f"S{i}", f"r{i}", f"o{i}", _phrase(rng) + "?") for i in range(50)]
    mem = EditedFactMemory(embedder, edits)
    for _ in range(20):
        query = _phrase(rng)
        scored = [(round(oracle_cosine(query, e.atomic_question), 12), i) for i, e in enumerate(edits)]
        expected = [edits[i] for _, i in sorted(scored, key=lambda t: (-t[0], t[1]))[:3]]
        assert mem.pre_retrieve(query, 3) == expected


def test_precise_identical_question(embedder):
    target = edit("Los Angeles", "continent", "Asia", "On which continent is Los Angeles located?")
    mem = EditedFactMemory(embedder, [edit("A", "b", "c"), target])
    assert mem.precise_retrieve("On which continent is Los Angeles located?") == target


def test_precise_case_study_subquestion(embedder):
    scenario = olympics()
    mem = scenario.memory(embedder)
    hit = mem.precise_retrieve("In which continent is Los Angeles located?")
    assert hit is not None and hit.statement == "Los Angeles is located in the continent of Asia"


def test_precise_disjoint_vocabulary_returns_none(embedder):
    mem = EditedFactMemory(embedder, [edit("France", "capital", "Lyon"), edit("Spain", "king", "Bob")])
    query = "zebra quantum marmalade"
    assert all(oracle_cosine(query, e.atomic_question) < 0.85 for e in mem.edits)
    assert mem.precise_retrieve(query) is None


def test_precise_rerank_overlap_gate():
    class Constant:
        backend_id = "constant"

        def embed(self, text):
            from irake.embedding import EmbeddingVector
            return EmbeddingVector([1.0, 0.0])

    mem = EditedFactMemory(Constant(), [edit("France", "capital", "Lyon")])
    # cosine is 1.0 but no token overlap with the stored question
    assert mem.precise_retrieve("zebra marmalade") is None
    assert mem.precise_retrieve("capital of France?") is not None


def test_precise_rejects_empty(embedder):
    with pytest.raises(ValueError):
        EditedFactMemory(embedder).precise_retrieve("  ")


def test_token_overlap():
    assert token_overlap("a b c", "a b c d e") == 1.0
    assert token_overlap("a x", "a b") == 0.5
    assert token_overlap("", "a") == 0.0


def test_json_round_trip(embedder, tmp_path):
    mem = EditedFactMemory(embedder, [edit("A", "r", "x"), edit("B", "r", "y")])
    path = tmp_path / "mem.json"
    mem.export(path)
    import json
    again = EditedFactMemory.from_json(json.loads(path.read_text()), embedder)
    assert again.edits == mem.edits
