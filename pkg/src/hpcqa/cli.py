"""Command-line entry point: ingest, ask, staged eval, bench, serve.

Exit codes are fixed for scriptability: 0 success, 1 runtime error,
2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import autoeval
from .appconfig import AppConfig, ConfigError, load_config, make_gateway, make_sandbox
from .commands import COMMAND_CHUNK_PREFIX, CommandRegistry, load_registry
from .corpus import (
    Chunk,
    ChunkingPolicy,
    chunk_document,
    ingest_directory,
    load_corpus,
    save_corpus,
)
from .gateway import ModelGateway, TokenOverlapReranker
from .pipeline import PipelineConfig, RagEngine
from .retrieval import VectorIndex, build_index, load_index, save_index
from .simbench import compare_arms, load_default_fixtures, load_fixtures, render_report

logger = logging.getLogger(__name__)


def _load_app(args) -> AppConfig:
    return load_config(args.config)


def _require(path: str, what: str) -> None:
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")


def _engine_parts(
    config: AppConfig, hyce_enabled: bool, prompt_style: str | None = None
) -> tuple[list[Chunk], VectorIndex, CommandRegistry, PipelineConfig, ModelGateway]:
    """Load persisted artifacts and prepare the universe for one pipeline arm."""
    _require(config.corpus_path, "corpus file (run `hpcqa ingest` first)")
    _require(config.index_path, "index file (run `hpcqa ingest` first)")
    _require(config.registry_path, "command registry")
    corpus = load_corpus(config.corpus_path)
    index = load_index(config.index_path)
    registry = load_registry(config.registry_path)
    doc_chunks = [c for c in corpus if c.kind == "documentation"]
    if not hyce_enabled:
        index = index.subset(lambda cid: not cid.startswith(COMMAND_CHUNK_PREFIX))
    pipeline = dataclasses.replace(
        config.pipeline,
        hyce_enabled=hyce_enabled,
        prompt_style=prompt_style or config.pipeline.prompt_style,
    )
    return doc_chunks, index, registry, pipeline, make_gateway(config)


def _build_engine(config: AppConfig, hyce_enabled: bool, prompt_style: str | None = None) -> RagEngine:
    doc_chunks, index, registry, pipeline, gateway = _engine_parts(
        config, hyce_enabled, prompt_style
    )
    return RagEngine(
        doc_chunks, registry, pipeline, gateway, sandbox=make_sandbox(config), index=index
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    config = _load_app(args)
    _require(config.docs_dir, "docs directory")
    _require(config.registry_path, "command registry")
    Path(config.artifacts_dir).mkdir(parents=True, exist_ok=True)

    documents, warnings = ingest_directory(config.docs_dir, kind="documentation")
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    policy = ChunkingPolicy()
    doc_chunks: list[Chunk] = []
    for document in documents:
        doc_chunks.extend(chunk_document(document, policy))

    registry = load_registry(config.registry_path)
    from .pipeline import assemble_chunks

    all_chunks = assemble_chunks(doc_chunks, registry, hyce_enabled=True)
    save_corpus(all_chunks, config.corpus_path)

    gateway = make_gateway(config)
    index = build_index(all_chunks, gateway.embed_texts)
    save_index(index, config.index_path)

    command_count = sum(1 for c in all_chunks if c.kind == "command")
    print(f"doc_chunks: {len(doc_chunks)}")
    print(f"command_chunks: {command_count}")
    print(f"corpus: {config.corpus_path}")
    print(f"index: {config.index_path}")
    return 0


def cmd_ask(args) -> int:
    config = _load_app(args)
    hyce = config.pipeline.hyce_enabled and not args.no_hyce
    style = "cot" if args.cot else None
    engine = _build_engine(config, hyce, style)
    bundle = engine.ask(args.query)
    if args.json:
        print(bundle.to_json())
        return 0
    print(bundle.answer)
    print()
    print("--- provenance ---")
    for context in bundle.contexts:
        tag = "CMD" if context.provenance == "command_execution" else "DOC"
        print(f"[{tag}] {context.chunk_id}")
    if bundle.commands_executed:
        print(f"commands executed: {', '.join(bundle.commands_executed)}")
    return 0


def _artifact(config: AppConfig, name: str) -> Path:
    return Path(config.artifacts_dir) / name


def cmd_eval_generate(args) -> int:
    config = _load_app(args)
    _require(config.corpus_path, "corpus file (run `hpcqa ingest` first)")
    _require(config.registry_path, "command registry")
    Path(config.artifacts_dir).mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(config.corpus_path)
    registry = load_registry(config.registry_path)
    gateway = make_gateway(config)
    pairs = autoeval.generate_qa(
        corpus,
        n_doc=args.n_doc,
        n_cmd=args.n_cmd,
        gateway=gateway,
        registry=registry,
        seed=args.seed,
        sandbox=make_sandbox(config),
    )
    produced_doc = sum(1 for p in pairs if p.origin == "documentation")
    autoeval.write_stage_artifact(
        _artifact(config, "pairs.jsonl"),
        [dataclasses.asdict(p) for p in pairs],
        seed=args.seed,
        extra_header={
            "requested_doc": args.n_doc,
            "requested_cmd": args.n_cmd,
            "produced_doc": produced_doc,
            "produced_cmd": len(pairs) - produced_doc,
        },
    )
    print(f"generated {len(pairs)} pairs -> {_artifact(config, 'pairs.jsonl')}")
    return 0


def _read_pairs(path: Path) -> tuple[dict, list[autoeval.QAPair]]:
    header, rows = autoeval.read_stage_artifact(path)
    return header, [autoeval.QAPair(**row) for row in rows]


def cmd_eval_filter(args) -> int:
    config = _load_app(args)
    header, pairs = _read_pairs(_artifact(config, "pairs.jsonl"))
    corpus = load_corpus(config.corpus_path)
    lookup = {c.id: c for c in corpus}
    gateway = make_gateway(config)
    kept, verdicts = autoeval.filter_qa(pairs, lookup, gateway)
    seed = header.get("seed", 0)
    autoeval.write_stage_artifact(
        _artifact(config, "verdicts.jsonl"),
        [dataclasses.asdict(v) for v in verdicts],
        seed=seed,
    )
    autoeval.write_stage_artifact(
        _artifact(config, "kept.jsonl"),
        [dataclasses.asdict(p) for p in kept],
        seed=seed,
        extra_header={"kept": len(kept), "total": len(pairs)},
    )
    print(f"kept {len(kept)}/{len(pairs)} pairs -> {_artifact(config, 'kept.jsonl')}")
    return 0


def cmd_eval_answer(args) -> int:
    config = _load_app(args)
    header, kept = _read_pairs(_artifact(config, "kept.jsonl"))
    label = args.label or ("RAG baseline" if args.no_hyce else "+ HyCE")
    hyce = not args.no_hyce
    engine = _build_engine(config, hyce, "cot" if args.cot else None)
    records = autoeval.run_rag_on_set(kept, {label: engine})
    safe_label = label.replace(" ", "_").replace("/", "_")
    out = _artifact(config, f"predictions_{safe_label}.jsonl")
    autoeval.write_stage_artifact(
        out,
        [dataclasses.asdict(r) for r in records],
        seed=header.get("seed", 0),
        config_label=label,
    )
    print(f"answered {len(records)} -> {out}")
    return 0


def cmd_eval_judge(args) -> int:
    config = _load_app(args)
    predictions_path = Path(args.predictions)
    header, rows = autoeval.read_stage_artifact(predictions_path)
    records = [autoeval.PredictedRecord(**row) for row in rows]
    _, pairs = _read_pairs(_artifact(config, "pairs.jsonl"))
    pair_map = {p.id: p for p in pairs}
    corpus = load_corpus(config.corpus_path)
    lookup = {c.id: c for c in corpus}
    gateway = make_gateway(config)
    judged = autoeval.judge(records, pair_map, lookup, gateway)
    label = header.get("config_label", "")
    out = predictions_path.parent / predictions_path.name.replace("predictions_", "judged_")
    autoeval.write_stage_artifact(
        out,
        [dataclasses.asdict(r) for r in judged],
        seed=header.get("seed", 0),
        config_label=label,
    )
    print(f"judged {len(judged)} -> {out}")
    return 0


def cmd_eval_report(args) -> int:
    config = _load_app(args)
    scores = []
    for judged_path in args.judged:
        header, rows = autoeval.read_stage_artifact(Path(judged_path))
        judged = [autoeval.JudgedRecord(**row) for row in rows]
        scores.append(autoeval.score(judged, mode=args.mode))
    table, payload = autoeval.incremental_report(scores)
    Path(config.artifacts_dir).mkdir(parents=True, exist_ok=True)
    _artifact(config, "report.txt").write_text(table + "\n", encoding="utf-8")
    _artifact(config, "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    print(table)
    return 0


def cmd_bench(args) -> int:
    fixtures = load_fixtures(args.fixtures) if args.fixtures else load_default_fixtures()
    scorer = TokenOverlapReranker()
    avg_cmd, avg_desc = compare_arms(fixtures, scorer.rerank)
    print(render_report(avg_cmd, avg_desc, scorer.model_id))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _load_app(args)
    engine = _build_engine(config, config.pipeline.hyce_enabled)
    app = create_app(engine, config)
    host = args.host or config.host
    port = args.port or config.port
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpcqa", description="Question answering for HPC clusters"
    )
    parser.add_argument("--config", default="hpcqa.yaml", help="path to the config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="chunk docs, embed, and write corpus/index artifacts")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("ask", help="answer one query")
    p.add_argument("query")
    p.add_argument("--no-hyce", action="store_true", help="documentation-only retrieval")
    p.add_argument("--cot", action="store_true", help="chain-of-thought prompt style")
    p.add_argument("--json", action="store_true", help="emit the full answer bundle as JSON")
    p.set_defaults(handler=cmd_ask)

    p = sub.add_parser("eval", help="run one stage of the evaluation pipeline")
    eval_sub = p.add_subparsers(dest="stage", required=True)

    g = eval_sub.add_parser("generate", help="generate synthetic Q&A pairs")
    g.add_argument("--n-doc", type=int, default=90)
    g.add_argument("--n-cmd", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(handler=cmd_eval_generate)

    f = eval_sub.add_parser("filter", help="filter generated pairs")
    f.set_defaults(handler=cmd_eval_filter)

    a = eval_sub.add_parser("answer", help="answer kept pairs under one configuration")
    a.add_argument("--label", default=None, help="configuration label for the report")
    a.add_argument("--no-hyce", action="store_true")
    a.add_argument("--cot", action="store_true")
    a.set_defaults(handler=cmd_eval_answer)

    j = eval_sub.add_parser("judge", help="judge one predictions file")
    j.add_argument("--predictions", required=True)
    j.set_defaults(handler=cmd_eval_judge)

    r = eval_sub.add_parser("report", help="incremental score report over judged files")
    r.add_argument("--judged", action="append", required=True)
    r.add_argument("--mode", default="both_criteria", choices=["both_criteria", "correctness_only"])
    r.set_defaults(handler=cmd_eval_report)

    p = sub.add_parser("bench", help="similarity comparison: raw command vs description")
    p.add_argument("--fixtures", default=None, help="fixtures JSON (default: shipped set)")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP chat service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, autoeval.MissingArtifact) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.debug("unhandled failure", exc_info=True)
        print(f"error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
