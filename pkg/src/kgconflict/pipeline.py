"""End-to-end query pipeline.

Phase 1 builds the knowledge graph from the retrieved context, phase 2
retrieves and renders reasoning paths for the question, and phase 3 runs
entropy-based conflict resolution and generates the answer. Ablation modes
switch individual phases off.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .conflict import (
    CONTEXT_DELIMITER,
    EntropyReport,
    ResolutionOutcome,
    entropy_filtered_response,
    resolve,
)
from .config import PipelineConfig
from .errors import ExtractionParseError, FallbackExhausted, ValidationError
from .gateway import GenerationRequest, ModelGateway, load_mock_script
from .graph import KnowledgeGraph, Segment, Triple, build_graph, extract_triples, segment
from .http_gateway import HttpGateway
from .prompts import ANSWER_AUGMENTED, ANSWER_PARAMETRIC, render
from .retrieval import (
    EmbeddingCache,
    PathEdge,
    QueryKeyElements,
    ReasoningPath,
    contextualize,
    enumerate_paths,
    extract_key_elements,
    score_path,
    select_super_paths,
    top_k_important,
)

log = logging.getLogger(__name__)


@dataclass
class QueryTrace:
    """Complete audit trail of one query: every stage's decisions."""

    mode: str
    question: str
    segments: list[Segment] = field(default_factory=list)
    triples: list[Triple] = field(default_factory=list)
    graph_stats: dict[str, int] = field(default_factory=dict)
    key_elements: QueryKeyElements | None = None
    important_entities: list[tuple[str, float]] = field(default_factory=list)
    important_relations: list[tuple[str, float]] = field(default_factory=list)
    p_init_count: int = 0
    p_super: list[ReasoningPath] = field(default_factory=list)
    report: EntropyReport | None = None
    response: str = ""
    final_context: str = ""
    fallback_used: str = ""
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "question": self.question,
            "segments": [
                {"id": s.id, "text": s.text, "char_range": list(s.char_range)}
                for s in self.segments
            ],
            "triples": [
                {
                    "head": t.head,
                    "relation": t.relation,
                    "tail": t.tail,
                    "source_segment": t.source_segment,
                    "evidence": t.evidence,
                }
                for t in self.triples
            ],
            "graph_stats": dict(self.graph_stats),
            "key_elements": None
            if self.key_elements is None
            else {
                "target_entities": list(self.key_elements.target_entities),
                "target_relations": list(self.key_elements.target_relations),
                "intent": self.key_elements.intent,
            },
            "important_entities": [list(pair) for pair in self.important_entities],
            "important_relations": [list(pair) for pair in self.important_relations],
            "p_init_count": self.p_init_count,
            "p_super": [
                {
                    "nodes": list(p.nodes),
                    "edges": [
                        {
                            "relation": e.relation,
                            "triple_index": e.triple_index,
                            "direction": e.direction,
                        }
                        for e in p.edges
                    ],
                    "score": p.score,
                    "rendered_context": p.rendered_context,
                }
                for p in self.p_super
            ],
            "report": None if self.report is None else self.report.to_dict(),
            "response": self.response,
            "final_context": self.final_context,
            "fallback_used": self.fallback_used,
            "timings": dict(self.timings),
        }


def paths_from_dicts(raw_paths: list[dict]) -> list[ReasoningPath]:
    """Rebuild ReasoningPath objects from their trace/JSON form."""
    out = []
    for raw in raw_paths:
        out.append(
            ReasoningPath(
                nodes=tuple(raw["nodes"]),
                edges=tuple(
                    PathEdge(
                        relation=e["relation"],
                        triple_index=e["triple_index"],
                        direction=e["direction"],
                    )
                    for e in raw["edges"]
                ),
                score=raw.get("score", 0.0),
                rendered_context=raw.get("rendered_context"),
            )
        )
    return out


def build_gateway(cfg: PipelineConfig) -> ModelGateway:
    """Construct the backend the config describes (mock script wins)."""
    if cfg.mock_script:
        return load_mock_script(cfg.mock_script)
    if cfg.model_url:
        return HttpGateway(
            base_url=cfg.model_url,
            model_id=cfg.model_id or "default",
            embed_url=cfg.embed_url or None,
            embed_model_id=cfg.embed_model_id or None,
        )
    raise ValidationError("no backend configured: set mock_script or model_url")


def _direct_answer(question: str, gateway: ModelGateway, cfg: PipelineConfig,
                   context: str | None) -> str:
    if context is None:
        prompt = render(ANSWER_PARAMETRIC, question=question)
    else:
        prompt = render(ANSWER_AUGMENTED, context=context, question=question)
    result = gateway.generate(
        GenerationRequest(
            prompt=prompt,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            logprob_top_k=cfg.logprob_top_k,
            model_id=cfg.model_id or None,
        )
    )
    return result.text


def _build_phase(context: str, cfg: PipelineConfig,
                 gateway: ModelGateway, trace: QueryTrace) -> KnowledgeGraph:
    if context.strip():
        trace.segments = segment(context, cfg.max_segment_tokens)
    extractions = []
    for seg in trace.segments:
        try:
            extractions.extend(
                extract_triples(
                    seg,
                    gateway,
                    max_tokens=cfg.max_tokens,
                    logprob_top_k=cfg.logprob_top_k,
                    model_id=cfg.model_id or None,
                )
            )
        except ExtractionParseError as exc:
            log.warning("skipping segment %d: %s", seg.id, exc)
    graph = build_graph(extractions)
    trace.triples = list(graph.triples)
    trace.graph_stats = graph.stats()
    return graph


def _retrieve_phase(question: str, graph: KnowledgeGraph, cfg: PipelineConfig,
                    gateway: ModelGateway, trace: QueryTrace) -> list[ReasoningPath]:
    if graph.is_empty():
        return []
    key = extract_key_elements(
        question,
        gateway,
        max_tokens=cfg.max_tokens,
        logprob_top_k=cfg.logprob_top_k,
        model_id=cfg.model_id or None,
    )
    trace.key_elements = key
    cache = EmbeddingCache(gateway)
    important = top_k_important(graph, key, cfg.retrieval, gateway, cache)
    trace.important_entities = list(important.entities)
    trace.important_relations = list(important.relations)
    p_init = enumerate_paths(graph, important)
    trace.p_init_count = len(p_init)
    for path in p_init:
        path.score = score_path(path, important, cfg.retrieval)
    p_super = select_super_paths(p_init, cfg.retrieval)
    for path in p_super:
        contextualize(path, graph, important)
    trace.p_super = p_super
    return p_super


def answer_query(
    question: str,
    context: str,
    cfg: PipelineConfig,
    gateway: ModelGateway | None = None,
) -> tuple[str, QueryTrace]:
    """Run the configured pipeline mode for one (question, context) pair.

    Under the mock backend this is a pure function of (question, context,
    script, config): everything except wall-clock timings is reproduced
    bit-identically.
    """
    if not question or not question.strip():
        raise ValidationError("answer_query: question must be non-empty")
    cfg.validate()
    gateway = gateway or build_gateway(cfg)
    trace = QueryTrace(mode=cfg.mode, question=question)

    t0 = time.perf_counter()
    if cfg.mode == "no_rag":
        t1 = t2 = time.perf_counter()
        trace.response = _direct_answer(question, gateway, cfg, context=None)
        t3 = time.perf_counter()
    elif cfg.mode == "standard_rag":
        t1 = t2 = time.perf_counter()
        if not context.strip():
            raise FallbackExhausted("standard_rag: no context to answer from")
        trace.final_context = context
        trace.response = _direct_answer(question, gateway, cfg, context=context)
        t3 = time.perf_counter()
    elif cfg.mode == "no_kg":
        chunks = segment(context, cfg.max_segment_tokens) if context.strip() else []
        trace.segments = chunks
        t1 = t2 = time.perf_counter()
        response, report, fallback_used, final_context, _idx = (
            entropy_filtered_response(
                question,
                [c.text for c in chunks],
                gateway,
                cfg.resolution(),
                raw_context=context if context.strip() else None,
                parallelism=cfg.parallelism,
            )
        )
        trace.response = response
        trace.report = report
        trace.fallback_used = fallback_used
        trace.final_context = final_context
        t3 = time.perf_counter()
    else:  # full or no_conflict
        graph = _build_phase(context, cfg, gateway, trace)
        t1 = time.perf_counter()
        p_super = _retrieve_phase(question, graph, cfg, gateway, trace)
        t2 = time.perf_counter()
        raw = context if context.strip() else None
        if cfg.mode == "no_conflict":
            if p_super:
                trace.final_context = CONTEXT_DELIMITER.join(
                    p.rendered_context or "" for p in p_super
                )
                trace.fallback_used = "none"
            elif raw is not None:
                trace.final_context = raw
                trace.fallback_used = "raw_context"
            else:
                raise FallbackExhausted("no_conflict: no paths and no raw context")
            trace.response = _direct_answer(
                question, gateway, cfg, context=trace.final_context
            )
        else:
            outcome: ResolutionOutcome = resolve(
                question,
                p_super,
                gateway,
                cfg.resolution(),
                raw_context=raw,
                parallelism=cfg.parallelism,
            )
            trace.response = outcome.response
            trace.report = outcome.report
            trace.fallback_used = outcome.fallback_used
            trace.final_context = outcome.final_context
        t3 = time.perf_counter()

    trace.timings = {
        "phase1_construction": t1 - t0,
        "phase2_retrieval": t2 - t1,
        "phase3_resolution": t3 - t2,
        "total": t3 - t0,
    }
    return trace.response, trace
