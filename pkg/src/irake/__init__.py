"""Retrieve-then-decompose knowledge editing for multi-hop question answering."""

from __future__ import annotations

from .cases import CaseLibrary
from .controller import SolveResult, Solver, solve
from .core import (
    CaseRecord,
    DecompositionStep,
    EngineConfig,
    FactEdit,
    FactTriple,
    GuidancePayload,
    GuidedBy,
)
from .embedding import CachedEmbedder, HashingEmbedder, HttpEmbedder
from .evaluation import BatchSetting, EvalCase, EvalReport, load_dataset, run_eval, score_case
from .llm import OpenAIChatBackend, PromptCatalog, ScriptedBackend, ScriptedRule
from .memory import EditedFactMemory

__all__ = [
    "BatchSetting", "CachedEmbedder", "CaseLibrary", "CaseRecord", "DecompositionStep",
    "EditedFactMemory", "EngineConfig", "EvalCase", "EvalReport", "FactEdit", "FactTriple",
    "GuidancePayload", "GuidedBy", "HashingEmbedder", "HttpEmbedder", "OpenAIChatBackend",
    "PromptCatalog", "ScriptedBackend", "ScriptedRule", "SolveResult", "Solver",
    "load_dataset", "run_eval", "score_case", "solve",
]
