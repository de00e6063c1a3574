"""Model gateway: request/response types and the deterministic mock backend.

A gateway exposes two operations: ``generate`` (text plus per-token top-k
candidate log-probabilities) and ``embed`` (dense vectors). The mock backend
answers both from a JSON Lines script so the whole pipeline runs offline and
bit-identically across runs.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import EmptyInput, ParseError, ScriptMiss, ValidationError

# Raw top-k probability masses may legitimately sum to slightly above 1
# through float rounding; anything above this is a malformed distribution.
PROB_MASS_TOLERANCE = 1e-6

DEFAULT_MOCK_EMBEDDING_DIM = 64


@dataclass(frozen=True)
class GenerationRequest:
    """A single text-generation call.

    ``logprob_top_k`` controls how many candidate tokens the backend must
    report per generated position; the entropy metric is computed over that
    candidate set.
    """

    prompt: str
    temperature: float = 0.0
    max_tokens: int = 256
    logprob_top_k: int = 10
    model_id: str | None = None

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValidationError("GenerationRequest.prompt: must be non-empty")
        if self.temperature < 0:
            raise ValidationError(
                f"GenerationRequest.temperature: must be >= 0, got {self.temperature}"
            )
        if self.max_tokens < 1:
            raise ValidationError(
                f"GenerationRequest.max_tokens: must be >= 1, got {self.max_tokens}"
            )
        if self.logprob_top_k < 1:
            raise ValidationError(
                f"GenerationRequest.logprob_top_k: must be >= 1, got {self.logprob_top_k}"
            )


@dataclass(frozen=True)
class TokenCandidate:
    token: str
    logprob: float  # natural log of the token probability, <= 0


@dataclass(frozen=True)
class TokenPosition:
    """One generated position: the chosen token and its top-k candidates."""

    token: str
    candidates: tuple[TokenCandidate, ...]

    def chosen_logprob(self) -> float:
        for cand in self.candidates:
            if cand.token == self.token:
                return cand.logprob
        raise ValueError(
            f"chosen token {self.token!r} not among its own candidates"
        )


@dataclass(frozen=True)
class TokenLogprobs:
    """Per-position candidate distributions for a generated sequence."""

    positions: tuple[TokenPosition, ...]

    def __len__(self) -> int:
        return len(self.positions)

    def validate(self) -> None:
        """Enforce the distribution invariants on every position.

        Each position must have a non-empty candidate list, candidate
        logprobs <= 0, a total exponentiated mass <= 1 + tolerance, and the
        chosen token present among the candidates.
        """
        for i, pos in enumerate(self.positions, start=1):
            if not pos.candidates:
                raise ValidationError(f"token position {i}: empty candidate list")
            mass = 0.0
            for cand in pos.candidates:
                if not math.isfinite(cand.logprob) or cand.logprob > 0.0:
                    raise ValidationError(
                        f"token position {i}: candidate {cand.token!r} has "
                        f"invalid logprob {cand.logprob}"
                    )
                mass += math.exp(cand.logprob)
            if mass > 1.0 + PROB_MASS_TOLERANCE:
                raise ValidationError(
                    f"token position {i}: candidate masses sum to {mass:.9f} > 1"
                )
            try:
                pos.chosen_logprob()
            except ValueError as exc:
                raise ValidationError(f"token position {i}: {exc}") from None


@dataclass(frozen=True)
class GenerationResult:
    text: str
    tokens: TokenLogprobs
    model_id: str
    latency: float  # seconds


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in self.values):
            raise ValidationError("EmbeddingVector: non-finite component")


@runtime_checkable
class ModelGateway(Protocol):
    """Uniform interface over generative + embedding backends."""

    def generate(self, req: GenerationRequest) -> GenerationResult: ...

    def embed(self, texts: list[str]) -> list[EmbeddingVector]: ...


def _check_texts(texts: list[str]) -> None:
    if not texts:
        raise EmptyInput("embed: empty input list")
    for t in texts:
        if not t:
            raise EmptyInput("embed: empty text in input list")


@dataclass(frozen=True)
class _ScriptEntry:
    kind: str  # "generate" | "embed"
    match: str
    regex: bool
    pattern: re.Pattern | None
    text: str = ""
    tokens: TokenLogprobs | None = None
    vector: tuple[float, ...] = ()

    def matches(self, prompt: str) -> bool:
        if self.regex:
            assert self.pattern is not None
            return self.pattern.search(prompt) is not None
        return prompt == self.match


def _hash_unit_vector(text: str, dim: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector derived from the text bytes."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # cannot happen with standard_normal, defensive
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


class MockGateway:
    """Scripted backend: a pure function of (script, request).

    Generate requests are answered by the first script entry whose ``match``
    hits the prompt (exact string, or ``re.search`` when the entry sets
    ``regex``). Embeddings come from script overrides when present, otherwise
    from hash-seeded deterministic unit vectors. The instance is immutable
    after construction and safe to share across threads.

    Tokenization rule: the concatenation of the chosen tokens equals the
    response text exactly (validated at load).
    """

    def __init__(
        self,
        entries: list[_ScriptEntry],
        embedding_dim: int = DEFAULT_MOCK_EMBEDDING_DIM,
        model_id: str = "mock-chat",
        embed_model_id: str = "mock-embed",
    ) -> None:
        self._generate_entries = tuple(e for e in entries if e.kind == "generate")
        self._embed_entries = tuple(e for e in entries if e.kind == "embed")
        self._dim = embedding_dim
        self.model_id = model_id
        self.embed_model_id = embed_model_id

    @property
    def embedding_dim(self) -> int:
        return self._dim

    def generate(self, req: GenerationRequest) -> GenerationResult:
        for entry in self._generate_entries:
            if entry.matches(req.prompt):
                assert entry.tokens is not None
                return GenerationResult(
                    text=entry.text,
                    tokens=entry.tokens,
                    model_id=req.model_id or self.model_id,
                    latency=0.0,
                )
        preview = req.prompt if len(req.prompt) <= 120 else req.prompt[:117] + "..."
        raise ScriptMiss(f"no script entry matches prompt: {preview!r}")

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        _check_texts(texts)
        out = []
        for text in texts:
            vec = None
            for entry in self._embed_entries:
                if entry.matches(text):
                    vec = entry.vector
                    break
            if vec is None:
                vec = tuple(float(v) for v in _hash_unit_vector(text, self._dim))
            out.append(EmbeddingVector(values=vec, model_id=self.embed_model_id))
        return out


def _parse_tokens(raw: object, line_no: int) -> TokenLogprobs:
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"script line {line_no}: 'tokens' must be a non-empty array")
    positions = []
    for raw_pos in raw:
        if not isinstance(raw_pos, dict):
            raise ParseError(f"script line {line_no}: token entry must be an object")
        token = raw_pos.get("token")
        raw_cands = raw_pos.get("candidates")
        if not isinstance(token, str) or not isinstance(raw_cands, list) or not raw_cands:
            raise ParseError(
                f"script line {line_no}: token entry needs 'token' and non-empty 'candidates'"
            )
        cands = []
        for raw_cand in raw_cands:
            if (
                not isinstance(raw_cand, (list, tuple))
                or len(raw_cand) != 2
                or not isinstance(raw_cand[0], str)
                or not isinstance(raw_cand[1], (int, float))
            ):
                raise ParseError(
                    f"script line {line_no}: candidate must be [token, logprob]"
                )
            cands.append(TokenCandidate(token=raw_cand[0], logprob=float(raw_cand[1])))
        positions.append(TokenPosition(token=token, candidates=tuple(cands)))
    tokens = TokenLogprobs(positions=tuple(positions))
    try:
        tokens.validate()
    except ValidationError as exc:
        raise ParseError(f"script line {line_no}: {exc}") from exc
    return tokens


def _parse_entry(obj: dict, line_no: int) -> _ScriptEntry:
    kind = obj.get("kind")
    if kind not in ("generate", "embed"):
        raise ParseError(f"script line {line_no}: 'kind' must be 'generate' or 'embed'")
    match = obj.get("match")
    if not isinstance(match, str):
        raise ParseError(f"script line {line_no}: 'match' must be a string")
    regex = obj.get("regex", False)
    if not isinstance(regex, bool):
        raise ParseError(f"script line {line_no}: 'regex' must be a boolean")
    pattern = None
    if regex:
        try:
            pattern = re.compile(match)
        except re.error as exc:
            raise ParseError(f"script line {line_no}: bad regex: {exc}") from exc
    response = obj.get("response")
    if not isinstance(response, dict):
        raise ParseError(f"script line {line_no}: 'response' must be an object")

    if kind == "generate":
        text = response.get("text")
        if not isinstance(text, str):
            raise ParseError(f"script line {line_no}: generate response needs 'text'")
        tokens = _parse_tokens(response.get("tokens"), line_no)
        joined = "".join(pos.token for pos in tokens.positions)
        if joined != text:
            raise ParseError(
                f"script line {line_no}: chosen tokens concatenate to {joined!r}, "
                f"which does not reconstruct text {text!r}"
            )
        return _ScriptEntry(kind=kind, match=match, regex=regex, pattern=pattern,
                            text=text, tokens=tokens)

    vector = response.get("vector")
    if (
        not isinstance(vector, list)
        or not vector
        or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vector)
    ):
        raise ParseError(
            f"script line {line_no}: embed response needs a non-empty finite 'vector'"
        )
    return _ScriptEntry(kind=kind, match=match, regex=regex, pattern=pattern,
                        vector=tuple(float(v) for v in vector))


def load_mock_script(path: str | Path) -> MockGateway:
    """Load a JSON Lines mock script into an immutable backend.

    Each line is an object ``{"kind": "generate"|"embed", "match": str,
    "regex": bool (optional, default false), "response": {...}}``. Generate
    responses carry ``text`` plus ``tokens`` (chosen token + candidate
    ``[token, logprob]`` pairs, natural-log); embed responses carry
    ``vector``. Blank lines are ignored. Raises ParseError with the
    offending line number.
    """
    path = Path(path)
    entries: list[_ScriptEntry] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"script line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"script line {line_no}: entry must be an object")
            entries.append(_parse_entry(obj, line_no))

    dims = {len(e.vector) for e in entries if e.kind == "embed"}
    if len(dims) > 1:
        raise ParseError(
            f"embed override vectors disagree on dimension: {sorted(dims)}"
        )
    dim = dims.pop() if dims else DEFAULT_MOCK_EMBEDDING_DIM
    return MockGateway(entries, embedding_dim=dim)
