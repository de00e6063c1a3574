"""Knowledge-graph grounded RAG with entropy-based conflict resolution.

The pipeline turns retrieved content into a knowledge graph, retrieves
query-relevant reasoning paths, detects facts that conflict with the
model's parametric knowledge through per-token entropy deltas, and answers
from the corrective paths only.
"""

from .config import PipelineConfig, parse_config
from .conflict import (
    EntropyReport,
    ResolutionConfig,
    ResolutionOutcome,
    augmented_entropy,
    filter_corrective,
    mean_token_entropy,
    parametric_baseline,
    resolve,
)
from .errors import (
    BackendUnavailable,
    DanglingReference,
    DuplicateId,
    EmptyContent,
    EmptyInput,
    EmptySequence,
    ExtractionParseError,
    FallbackExhausted,
    LogprobsUnsupported,
    MissingGoldSpans,
    ParseError,
    PipelineError,
    SchemaVersionMismatch,
    ScriptMiss,
    ValidationError,
)
from .evaluation import (
    EvalRecord,
    EvalResult,
    confidence_logprob,
    cpr,
    is_correct,
    load_dataset,
    run_eval,
)
from .gateway import (
    EmbeddingVector,
    GenerationRequest,
    GenerationResult,
    MockGateway,
    ModelGateway,
    TokenCandidate,
    TokenLogprobs,
    TokenPosition,
    load_mock_script,
)
from .graph import (
    Entity,
    KnowledgeGraph,
    Relation,
    Segment,
    Triple,
    TripleExtraction,
    build_graph,
    extract_triples,
    load_graph,
    normalize_name,
    save_graph,
    segment,
)
from .http_gateway import HttpGateway
from .pipeline import QueryTrace, answer_query, build_gateway
from .retrieval import (
    EmbeddingCache,
    ImportantSets,
    PathEdge,
    QueryKeyElements,
    ReasoningPath,
    RetrievalConfig,
    contextualize,
    cosine,
    enumerate_paths,
    extract_key_elements,
    score_path,
    select_super_paths,
    similarity,
    top_k_important,
)

__version__ = "0.1.0"

__all__ = [
    "BackendUnavailable",
    "DanglingReference",
    "DuplicateId",
    "EmbeddingCache",
    "EmbeddingVector",
    "EmptyContent",
    "EmptyInput",
    "EmptySequence",
    "Entity",
    "EntropyReport",
    "EvalRecord",
    "EvalResult",
    "ExtractionParseError",
    "FallbackExhausted",
    "GenerationRequest",
    "GenerationResult",
    "HttpGateway",
    "ImportantSets",
    "KnowledgeGraph",
    "LogprobsUnsupported",
    "MissingGoldSpans",
    "MockGateway",
    "ModelGateway",
    "ParseError",
    "PathEdge",
    "PipelineConfig",
    "PipelineError",
    "QueryKeyElements",
    "QueryTrace",
    "ReasoningPath",
    "Relation",
    "ResolutionConfig",
    "ResolutionOutcome",
    "RetrievalConfig",
    "SchemaVersionMismatch",
    "ScriptMiss",
    "Segment",
    "TokenCandidate",
    "TokenLogprobs",
    "TokenPosition",
    "Triple",
    "TripleExtraction",
    "ValidationError",
    "answer_query",
    "augmented_entropy",
    "build_gateway",
    "build_graph",
    "confidence_logprob",
    "contextualize",
    "cosine",
    "cpr",
    "enumerate_paths",
    "extract_key_elements",
    "extract_triples",
    "filter_corrective",
    "is_correct",
    "load_dataset",
    "load_graph",
    "load_mock_script",
    "mean_token_entropy",
    "normalize_name",
    "parametric_baseline",
    "parse_config",
    "resolve",
    "run_eval",
    "save_graph",
    "score_path",
    "segment",
    "select_super_paths",
    "similarity",
    "top_k_important",
]
