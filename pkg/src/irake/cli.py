"""Command-line entry point: ``irake {solve,eval,build-library,synth,config}``.

Settings resolve as flag > config file > default. Exit codes: 2 for
configuration or input errors, 3 for backend failures, 4 when a solve aborts
on unparseable model output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .cases import CaseLibrary
from .controller import Solver
from .core import CaseRecord, EngineConfig, FactEdit
from .embedding import CachedEmbedder, Embedder, HashingEmbedder, HttpEmbedder
from .errors import AbortedCase, BackendUnavailable, ConfigError, EmptyCompletion, IrakeError
from .evaluation import BatchSetting, EvalCase, load_dataset, run_eval
from .llm import LlmBackend, OpenAIChatBackend, PromptCatalog, ScriptedBackend
from .memory import EditedFactMemory
from .oracle import extras_from_records, gold_record, oracle_backend

logger = logging.getLogger("irake")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_ABORT = 0, 2, 3, 4

DEFAULT_BACKENDS: dict[str, Any] = {
    "chat_endpoint": None,
    "chat_model": None,
    "embed_endpoint": None,
    "embed_model": None,
    # case-library retrieval may use its own encoder; unset means "same as embed_*"
    "case_embed_endpoint": None,
    "case_embed_model": None,
    "api_key_env_var": "OPENAI_API_KEY",
    "offline": False,
}
DEFAULT_PATHS: dict[str, Any] = {
    "dataset": None,
    "prompts_dir": None,
    "case_library": None,
    "report_out": None,
}

# flag dest -> EngineConfig field
ENGINE_FLAGS = {
    "pre_n": "pre_retrieval_n",
    "theta": "case_similarity_threshold",
    "tau": "precise_retrieval_threshold",
    "max_hops": "max_hops",
    "max_backtracks": "max_backtracks",
    "fact_guidance": "fact_guidance_enabled",
    "case_guidance": "case_guidance_enabled",
    "backtrack": "backtracking_enabled",
    "guidance_payload": "guidance_payload",
    "temperature": "llm_temperature",
    "max_tokens": "llm_max_tokens",
    "repetition_penalty": "repetition_penalty",
    "case_selection": "case_selection",
    "seed": "seed",
}


@dataclass
class RunConfig:
    engine: EngineConfig
    backends: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_BACKENDS))
    paths: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_PATHS))

    def to_dict(self) -> dict[str, Any]:
        return {"engine": self.engine.to_dict(), "backends": dict(self.backends), "paths": dict(self.paths)}

    def require_path(self, name: str, flag: str) -> str:
        value = self.paths.get(name)
        if not value:
            raise ConfigError(f"missing required setting paths.{name} (pass {flag} or set it in the config file)")
        return value


def _read_config_file(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(data) - {"engine", "backends", "paths"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    return data


def _merge_section(name: str, defaults: dict[str, Any], from_file: dict[str, Any]) -> dict[str, Any]:
    unknown = set(from_file) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {name} field(s): {sorted(unknown)}")
    return {**defaults, **from_file}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = _read_config_file(getattr(args, "config", None))
    engine = dict(data.get("engine") or {})
    for dest, name in ENGINE_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            engine[name] = value
    backends = _merge_section("backends", DEFAULT_BACKENDS, data.get("backends") or {})
    paths = _merge_section("paths", DEFAULT_PATHS, data.get("paths") or {})
    if getattr(args, "offline", False):
        backends["offline"] = True
    for dest, name in (("dataset", "dataset"), ("prompts_dir", "prompts_dir"),
                       ("case_library", "case_library"), ("report", "report_out")):
        value = getattr(args, dest, None)
        if value is not None:
            paths[name] = value
    return RunConfig(EngineConfig.from_dict(engine), backends, paths)


# --- backend construction ---

def _api_key(cfg: RunConfig) -> str | None:
    var = cfg.backends.get("api_key_env_var")
    return os.environ.get(var) if var else None


def make_embedder(cfg: RunConfig, role: str = "fact") -> Embedder:
    b = cfg.backends
    prefix = "case_embed" if role == "case" and b.get("case_embed_endpoint") else "embed"
    endpoint, model = b.get(f"{prefix}_endpoint"), b.get(f"{prefix}_model")
    if b["offline"] or not endpoint:
        return HashingEmbedder()
    if not model:
        raise ConfigError(f"missing required setting backends.{prefix}_model")
    return CachedEmbedder(HttpEmbedder(endpoint, model, _api_key(cfg)))


def make_chat_backend(cfg: RunConfig) -> LlmBackend:
    b = cfg.backends
    for name in ("chat_endpoint", "chat_model"):
        if not b.get(name):
            raise ConfigError(f"missing required setting backends.{name} (or run with --offline)")
    return OpenAIChatBackend(
        b["chat_endpoint"], b["chat_model"], _api_key(cfg), repetition_penalty=cfg.engine.repetition_penalty
    )


def load_script(path: str) -> ScriptedBackend:
    try:
        return ScriptedBackend.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except FileNotFoundError as exc:
        raise ConfigError(f"script file not found: {path}") from exc


def load_edits(path: str) -> list[FactEdit]:
    try:
        rows = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"edits file not found: {path}") from exc
    if not isinstance(rows, list):
        raise ConfigError(f"{path}: edits file must hold a JSON array")
    return [FactEdit.from_dict(r) for r in rows]


def _dataset(cfg: RunConfig) -> tuple[list[EvalCase], list[dict]]:
    path = cfg.require_path("dataset", "--dataset")
    try:
        records = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"dataset not found: {path}") from exc
    return load_dataset(path), records


def _library(cfg: RunConfig, embedder: Embedder, append: bool) -> CaseLibrary | None:
    path = cfg.paths.get("case_library")
    if not path:
        return None
    if not Path(path).exists():
        raise ConfigError(f"case library not found: {path}")
    return CaseLibrary.load(path, embedder, frozen=not append)


def _write_json(path: str | Path, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# --- subcommands ---

def cmd_solve(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    embedder = make_embedder(cfg)
    question = args.question
    case = None
    if args.edits:
        edits = load_edits(args.edits)
    elif args.case_id is not None:
        cases, records = _dataset(cfg)
        by_id = {c.case_id: (c, r) for c, r in zip(cases, records)}
        if args.case_id not in by_id:
            raise ConfigError(f"case id {args.case_id!r} not in dataset")
        case, record = by_id[args.case_id]
        edits = list(case.edits)
        question = question or case.questions[0]
    else:
        raise ConfigError("no memory source: pass --edits FILE or --dataset with --case-id")
    if not question:
        raise ConfigError("no question given")

    if args.script:
        backend = load_script(args.script)
    elif cfg.backends["offline"]:
        if case is None:
            raise ConfigError("offline solve needs --script or a dataset case (--case-id)")
        backend = oracle_backend([case], extras_from_records([record]))
    else:
        backend = make_chat_backend(cfg)

    memory = EditedFactMemory(embedder, edits)
    library = _library(cfg, make_embedder(cfg, "case"), append=False)
    prompts = PromptCatalog.load(cfg.paths.get("prompts_dir"))
    result = Solver(memory, library, cfg.engine, backend, prompts).solve(question)
    print(result.final_answer)
    trace_path = args.trace or "trace.json"
    _write_json(trace_path, {"question": question, "config": cfg.to_dict(), **result.to_dict()})
    logger.info("trace written to %s", trace_path)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    cases, records = _dataset(cfg)
    if args.limit:
        cases, records = cases[: args.limit], records[: args.limit]
    embedder = make_embedder(cfg)
    if args.script:
        backend = load_script(args.script)
    elif cfg.backends["offline"]:
        backend = oracle_backend(cases, extras_from_records(records))
    else:
        backend = make_chat_backend(cfg)
    extra = load_edits(args.extra_edits) if args.extra_edits else []
    library = _library(cfg, make_embedder(cfg, "case"), append=args.library_append)
    prompts = PromptCatalog.load(cfg.paths.get("prompts_dir"))
    report = run_eval(
        cases, BatchSetting.from_flag(args.setting), cfg.engine, backend, embedder,
        library=library, prompts=prompts, extra_edits=extra, parallel=args.parallel,
        library_append=args.library_append,
    )
    report.config = cfg.to_dict()
    json_path, csv_path = report.write(cfg.paths.get("report_out") or "report.json")
    if args.library_append and library is not None:
        library.save(cfg.paths["case_library"])
    print(report.summary())
    print(f"Case-guided questions {report.case_guided_questions}")
    logger.info("report written to %s and %s", json_path, csv_path)
    return EXIT_OK


def cmd_build_library(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    cases, _ = _dataset(cfg)
    if args.sample_size < 0:
        raise ConfigError("--sample-size must be >= 0")
    records: list[CaseRecord] = [gold_record(c) for c in cases]
    library = CaseLibrary.seed_from_cases(records, args.sample_size, cfg.engine.seed, HashingEmbedder())
    out = args.out or cfg.paths.get("case_library")
    if not out:
        raise ConfigError("missing required setting paths.case_library (pass --out)")
    try:
        library.save(out)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from exc
    print(f"wrote {len(library)} case records to {out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    from .synthetic import generate_suite, same_subject_distractors

    suite = generate_suite(args.cases, seed=args.seed or 0, skip_fraction=args.skip_fraction)
    _write_json(args.out, suite.records)
    print(f"wrote {len(suite.records)} cases to {args.out}")
    if args.distractors:
        extra = same_subject_distractors(suite, args.distractors, seed=args.seed or 0)
        _write_json(args.distractors_out, [e.to_dict() for e in extra])
        print(f"wrote {len(extra)} distractor edits to {args.distractors_out}")
    return EXIT_OK


def cmd_config(args: argparse.Namespace) -> int:
    print(json.dumps(resolve_config(args).to_dict(), indent=2))
    return EXIT_OK


# --- parser ---

def _engine_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("engine")
    g.add_argument("--config", help="JSON config file with engine/backends/paths sections")
    g.add_argument("--theta", type=float, help="case similarity threshold")
    g.add_argument("--tau", type=float, help="precise retrieval threshold")
    g.add_argument("--pre-n", type=int, help="number of pre-retrieved edits shown to the judge")
    g.add_argument("--max-hops", type=int)
    g.add_argument("--max-backtracks", type=int)
    g.add_argument("--no-fact-guidance", dest="fact_guidance", action="store_const", const=False)
    g.add_argument("--no-case-guidance", dest="case_guidance", action="store_const", const=False)
    g.add_argument("--no-backtrack", dest="backtrack", action="store_const", const=False)
    g.add_argument("--guidance-payload", choices=["question", "fact"])
    g.add_argument("--temperature", type=float)
    g.add_argument("--max-tokens", type=int)
    g.add_argument("--repetition-penalty", type=float)
    g.add_argument("--case-selection", choices=["similar", "random"])
    g.add_argument("--seed", type=int)
    g.add_argument("--offline", action="store_true", help="scripted/offline backends only; no network")
    g.add_argument("--prompts-dir", help="directory overriding the bundled prompt templates")
    g.add_argument("--case-library", help="case library JSON file")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parent = _engine_parent()
    parser = argparse.ArgumentParser(prog="irake", description="Retrieve-then-decompose knowledge editing for multi-hop QA.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[parent], help="answer one question against an edit memory")
    p.add_argument("question", nargs="?")
    p.add_argument("--edits", help="JSON array of edits")
    p.add_argument("--dataset")
    p.add_argument("--case-id", help="take edits (and the question, if omitted) from this dataset case")
    p.add_argument("--script", help="scripted backend JSON")
    p.add_argument("--trace", help="where to write the trace JSON (default trace.json)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", parents=[parent], help="evaluate a MQuAKE-format dataset")
    p.add_argument("--dataset")
    p.add_argument("--setting", choices=["1", "100", "all"], default="all")
    p.add_argument("--script", help="scripted backend JSON (default offline: gold oracle)")
    p.add_argument("--extra-edits", help="JSON array of extra edits added to shared memories")
    p.add_argument("--library-append", action="store_true", help="append successful solves to the case library")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--limit", type=int, help="evaluate only the first N cases")
    p.add_argument("--report", help="report JSON path; the CSV goes next to it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("build-library", parents=[parent], help="seed a case library from gold chains")
    p.add_argument("--dataset")
    p.add_argument("--sample-size", type=int, default=500)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_library)

    p = sub.add_parser("synth", parents=[parent], help="write a synthetic MQuAKE-format suite")
    p.add_argument("--cases", type=int, default=24)
    p.add_argument("--skip-fraction", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--distractors-out", default="distractors.json")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("config", parents=[parent], help="print the effective configuration")
    p.add_argument("--dataset")
    p.add_argument("--report")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except AbortedCase as exc:
        print(f"error: decomposition aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (BackendUnavailable, EmptyCompletion) as exc:
        print(f"error: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, IrakeError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
