"""Pipeline configuration: defaults, file parsing, CLI overrides.

Config files are flat ``key = value`` text: one pair per line, ``#`` starts
a comment line, values may be quoted. Every key has a CLI flag twin.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .conflict import FALLBACK_RAW_CONTEXT, FALLBACK_TOP_DELTA, ResolutionConfig
from .errors import ValidationError
from .retrieval import RetrievalConfig

MODES = ("full", "no_kg", "no_conflict", "standard_rag", "no_rag")

DEFAULT_TAU = 1.0
# Model-specific threshold defaults, applied when tau is not set explicitly;
# matched as case-insensitive substrings of the model id.
MODEL_TAU_DEFAULTS = {
    "gpt-4o-mini": 1.0,
    "mistral-7b": 1.0,
    "qwen2.5-7b": 3.0,
}


@dataclass(frozen=True)
class PipelineConfig:
    # Backends: either a mock script or an OpenAI-compatible endpoint.
    mock_script: str = ""
    model_url: str = ""
    model_id: str = ""
    embed_url: str = ""
    embed_model_id: str = ""
    # Conflict filtering. None means "resolve from the model id table".
    tau: float | None = None
    fallback: str = FALLBACK_TOP_DELTA
    # Generation.
    temperature: float = 0.0
    max_tokens: int = 256
    logprob_top_k: int = 10
    # Graph construction.
    max_segment_tokens: int = 256
    # Retrieval.
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    # Orchestration.
    mode: str = "full"
    parallelism: int = 1
    trace: bool = False
    skip_errors: bool = False

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(
                f"mode: {self.mode!r} is not one of {', '.join(MODES)}"
            )
        if self.fallback not in (FALLBACK_TOP_DELTA, FALLBACK_RAW_CONTEXT):
            raise ValidationError(f"fallback: unknown value {self.fallback!r}")
        if self.temperature < 0:
            raise ValidationError(f"temperature: must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValidationError(f"max_tokens: must be >= 1, got {self.max_tokens}")
        if self.logprob_top_k < 1:
            raise ValidationError(
                f"logprob_top_k: must be >= 1, got {self.logprob_top_k}"
            )
        if self.max_segment_tokens < 1:
            raise ValidationError(
                f"max_segment_tokens: must be >= 1, got {self.max_segment_tokens}"
            )
        if self.parallelism < 1:
            raise ValidationError(f"parallelism: must be >= 1, got {self.parallelism}")
        self.retrieval.validate()

    @property
    def effective_tau(self) -> float:
        """Explicit tau, else the model-id override table, else 1.0."""
        if self.tau is not None:
            return self.tau
        model = self.model_id.casefold()
        for needle, value in MODEL_TAU_DEFAULTS.items():
            if needle in model:
                return value
        return DEFAULT_TAU

    def resolution(self) -> ResolutionConfig:
        return ResolutionConfig(
            tau=self.effective_tau,
            fallback=self.fallback,
            logprob_top_k=self.logprob_top_k,
            max_tokens=self.max_tokens,
            temperature=self.temperature,
            model_id=self.model_id or None,
        )


_STR_KEYS = {
    "mock_script", "model_url", "model_id", "embed_url", "embed_model_id",
    "mode", "fallback",
}
_FLOAT_KEYS = {"tau", "alpha", "beta", "temperature"}
_INT_KEYS = {
    "k_similar", "paths_k", "logprob_top_k", "max_tokens",
    "max_segment_tokens", "parallelism",
}
_BOOL_KEYS = {"trace", "skip_errors"}
ALL_KEYS = _STR_KEYS | _FLOAT_KEYS | _INT_KEYS | _BOOL_KEYS


def _coerce(key: str, raw: str, where: str) -> object:
    if key in _STR_KEYS:
        return raw
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            raise ValidationError(
                f"{where}: {key} expects a number, got {raw!r}"
            ) from None
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            raise ValidationError(
                f"{where}: {key} expects an integer, got {raw!r}"
            ) from None
    lowered = raw.casefold()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValidationError(f"{where}: {key} expects a boolean, got {raw!r}")


def _read_config_file(path: str | Path) -> dict[str, object]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    values: dict[str, object] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{line_no}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip().strip("\"'")
        if key not in ALL_KEYS:
            raise ValidationError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = _coerce(key, raw, f"{path}:{line_no}")
    return values


def _build(values: dict[str, object]) -> PipelineConfig:
    retrieval_kwargs = {}
    plain: dict[str, object] = {}
    for key, value in values.items():
        if key in ("alpha", "beta", "k_similar", "paths_k"):
            retrieval_kwargs[key] = value
        else:
            plain[key] = value
    cfg = PipelineConfig(retrieval=RetrievalConfig(**retrieval_kwargs), **plain)
    cfg.validate()
    return cfg


def parse_config(
    path: str | Path | None = None, overrides: dict[str, object] | None = None
) -> PipelineConfig:
    """Build a validated config from an optional file plus CLI overrides.

    Override values win over file values; both win over defaults. Raises
    ValidationError with a field-path message on any bad key or bound.
    """
    values = _read_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in ALL_KEYS:
            raise ValidationError(f"override: unknown key {key!r}")
        values[key] = value
    return _build(values)


def with_mode(cfg: PipelineConfig, mode: str) -> PipelineConfig:
    out = replace(cfg, mode=mode)
    out.validate()
    return out
