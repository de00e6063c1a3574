"""Command-line interface: one subcommand per pipeline stage plus eval.

Exit codes: 0 success, 1 validation error, 2 backend failure, 3 dataset
error. The model API key is read from the MODEL_API_KEY environment
variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

from .config import MODES, PipelineConfig, parse_config
from .conflict import resolve as resolve_paths
from .errors import (
    BackendUnavailable,
    DuplicateId,
    FallbackExhausted,
    LogprobsUnsupported,
    ParseError,
    PipelineError,
    ScriptMiss,
    ValidationError,
)
from .evaluation import (
    load_dataset,
    run_eval,
    write_results_csv,
    write_summary_json,
    write_timings_json,
)
from .graph import build_graph, extract_triples, load_graph, save_graph, segment
from .pipeline import answer_query, build_gateway, paths_from_dicts
from .retrieval import (
    EmbeddingCache,
    contextualize,
    enumerate_paths,
    extract_key_elements,
    score_path,
    select_super_paths,
    top_k_important,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BACKEND = 2
EXIT_DATASET = 3


class _CliError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; code 2 is reserved for backend failures."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise _CliError(EXIT_VALIDATION, f"usage error: {message}")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--model-url", dest="model_url")
    parser.add_argument("--model-id", dest="model_id")
    parser.add_argument("--embed-url", dest="embed_url")
    parser.add_argument("--embed-model-id", dest="embed_model_id")
    parser.add_argument("--mock-script", dest="mock_script")
    parser.add_argument("--tau", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--k", dest="k_similar", type=int)
    parser.add_argument("--paths-k", dest="paths_k", type=int)
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--fallback", choices=["top_delta", "raw_context"])
    parser.add_argument("--max-segment-tokens", dest="max_segment_tokens", type=int)
    parser.add_argument("--max-tokens", dest="max_tokens", type=int)
    parser.add_argument("--logprob-top-k", dest="logprob_top_k", type=int)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--trace", action="store_const", const=True, default=None)
    parser.add_argument("--skip-errors", dest="skip_errors",
                        action="store_const", const=True, default=None)
    parser.add_argument("--out", help="output file or directory")


_OVERRIDE_KEYS = [
    "model_url", "model_id", "embed_url", "embed_model_id", "mock_script",
    "tau", "alpha", "beta", "k_similar", "paths_k", "mode", "fallback",
    "max_segment_tokens", "max_tokens", "logprob_top_k", "temperature",
    "parallelism", "trace", "skip_errors",
]


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides = {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}
    return parse_config(args.config, overrides)


def _gateway_or_exit(cfg: PipelineConfig):
    try:
        return build_gateway(cfg)
    except ValidationError:
        raise
    except (ParseError, OSError) as exc:
        raise _CliError(EXIT_BACKEND, f"backend setup failed: {exc}")


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _CliError(EXIT_VALIDATION, f"cannot read {path}: {exc}")


def _write_json(path: str, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _append_trace(out_dir: Path, trace_dict: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "trace.jsonl").open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(trace_dict, sort_keys=True) + "\n")


def _cmd_build_graph(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not args.out:
        raise _CliError(EXIT_VALIDATION, "build-graph requires --out GRAPH_JSON")
    content = _read_text(args.context)
    gateway = _gateway_or_exit(cfg)
    segments = segment(content, cfg.max_segment_tokens)
    extractions = []
    skipped = 0
    for seg in segments:
        try:
            extractions.extend(
                extract_triples(seg, gateway, max_tokens=cfg.max_tokens,
                                logprob_top_k=cfg.logprob_top_k,
                                model_id=cfg.model_id or None)
            )
        except ParseError as exc:
            skipped += 1
            log.warning("skipping segment %d: %s", seg.id, exc)
    graph = build_graph(extractions)
    save_graph(graph, args.out)
    stats = graph.stats()
    print(
        f"graph: {stats['entities']} entities, {stats['relations']} relations, "
        f"{stats['triples']} triples ({len(segments)} segments, {skipped} skipped) "
        f"-> {args.out}"
    )
    return EXIT_OK


def _cmd_retrieve_paths(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not args.out:
        raise _CliError(EXIT_VALIDATION, "retrieve-paths requires --out PATHS_JSON")
    graph = load_graph(args.graph)
    gateway = _gateway_or_exit(cfg)
    key = extract_key_elements(args.question, gateway,
                               max_tokens=cfg.max_tokens,
                               logprob_top_k=cfg.logprob_top_k,
                               model_id=cfg.model_id or None)
    cache = EmbeddingCache(gateway)
    important = top_k_important(graph, key, cfg.retrieval, gateway, cache)
    p_init = enumerate_paths(graph, important)
    for path in p_init:
        path.score = score_path(path, important, cfg.retrieval)
    p_super = select_super_paths(p_init, cfg.retrieval)
    for path in p_super:
        contextualize(path, graph, important)
    payload = {
        "schema_version": 1,
        "question": args.question,
        "key_elements": {
            "target_entities": list(key.target_entities),
            "target_relations": list(key.target_relations),
            "intent": key.intent,
        },
        "important_entities": [list(pair) for pair in important.entities],
        "important_relations": [list(pair) for pair in important.relations],
        "p_init_count": len(p_init),
        "paths": [
            {
                "nodes": list(p.nodes),
                "edges": [
                    {"relation": e.relation, "triple_index": e.triple_index,
                     "direction": e.direction}
                    for e in p.edges
                ],
                "score": p.score,
                "rendered_context": p.rendered_context,
            }
            for p in p_super
        ],
    }
    _write_json(args.out, payload)
    print(f"{len(p_super)} paths (of {len(p_init)} candidates) -> {args.out}")
    return EXIT_OK


def _cmd_resolve(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    raw = json.loads(_read_text(args.paths))
    if raw.get("schema_version") != 1:
        raise _CliError(EXIT_VALIDATION,
                        f"paths file schema version {raw.get('schema_version')!r}")
    p_super = paths_from_dicts(raw["paths"])
    question = args.question or raw.get("question")
    if not question:
        raise _CliError(EXIT_VALIDATION, "resolve needs --question (not in paths file)")
    raw_context = _read_text(args.context) if args.context else None
    gateway = _gateway_or_exit(cfg)
    outcome = resolve_paths(question, p_super, gateway, cfg.resolution(),
                            raw_context=raw_context, parallelism=cfg.parallelism)
    payload = {
        "response": outcome.response,
        "fallback_used": outcome.fallback_used,
        "corrective_paths": [list(p.nodes) for p in outcome.corrective_paths],
        "report": outcome.report.to_dict(),
    }
    if args.out:
        _write_json(args.out, payload)
    print(outcome.response)
    return EXIT_OK


def _cmd_answer(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if cfg.trace and not args.out:
        raise _CliError(EXIT_VALIDATION, "--trace requires --out RUN_DIR")
    context = _read_text(args.context) if args.context else ""
    gateway = _gateway_or_exit(cfg)
    response, trace = answer_query(args.question, context, cfg, gateway)
    if cfg.trace and args.out:
        _append_trace(Path(args.out), trace.to_dict())
    print(response)
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if not args.out:
        raise _CliError(EXIT_VALIDATION, "eval requires --out RUN_DIR")
    try:
        records = load_dataset(args.dataset)
    except (ParseError, DuplicateId, OSError) as exc:
        raise _CliError(EXIT_DATASET, f"dataset error: {exc}")
    gateway = _gateway_or_exit(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    trace_sink = None
    if cfg.trace:
        lock = threading.Lock()

        def trace_sink(trace) -> None:
            with lock:
                _append_trace(out_dir, trace.to_dict())

    result = run_eval(records, cfg, gateway, trace_sink=trace_sink)
    write_results_csv(result, out_dir / "results.csv")
    write_summary_json(result, out_dir / "summary.json")
    write_timings_json(result, out_dir / "timings.json")
    print(
        f"mode={result.mode} records={len(result.rows)} "
        f"skipped={len(result.skipped)} accuracy={result.accuracy:.4f}"
    )
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgconflict", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", parents=[], help="segment + extract + build")
    _add_common_flags(p)
    p.add_argument("--context", required=True, help="text file with retrieved content")
    p.set_defaults(func=_cmd_build_graph)

    p = sub.add_parser("retrieve-paths", help="rank and render reasoning paths")
    _add_common_flags(p)
    p.add_argument("--graph", required=True, help="graph JSON from build-graph")
    p.add_argument("--question", required=True)
    p.set_defaults(func=_cmd_retrieve_paths)

    p = sub.add_parser("resolve", help="entropy-filter paths and answer")
    _add_common_flags(p)
    p.add_argument("--paths", required=True, help="paths JSON from retrieve-paths")
    p.add_argument("--question")
    p.add_argument("--context", help="raw context file for fallback")
    p.set_defaults(func=_cmd_resolve)

    p = sub.add_parser("answer", help="full pipeline for one question")
    _add_common_flags(p)
    p.add_argument("--question", required=True)
    p.add_argument("--context", help="text file with retrieved content")
    p.set_defaults(func=_cmd_answer)

    p = sub.add_parser("eval", help="run a dataset through the pipeline")
    _add_common_flags(p)
    p.add_argument("--dataset", required=True, help="JSONL eval records")
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    # Dataset parse errors are wrapped into _CliError(3) at the call site, so
    # any ParseError reaching this handler is a backend protocol violation.
    except (BackendUnavailable, LogprobsUnsupported, ScriptMiss, ParseError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ValidationError, FallbackExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
