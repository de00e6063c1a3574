"""OpenAI-compatible HTTP backend.

Speaks POST {base}/chat/completions with logprobs enabled and POST
{base}/embeddings. The API key is read from the MODEL_API_KEY environment
variable only; it never appears in config files.
"""

from __future__ import annotations

import logging
import os
import time

import requests

from .errors import BackendUnavailable, LogprobsUnsupported, ParseError
from .gateway import (
    EmbeddingVector,
    GenerationRequest,
    GenerationResult,
    TokenCandidate,
    TokenLogprobs,
    TokenPosition,
    _check_texts,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "MODEL_API_KEY"

# HTTP statuses worth retrying; auth errors are not (a retry cannot fix them).
_RETRYABLE_STATUSES = {408, 429, 500, 502, 503, 504}


class HttpGateway:
    """Client for any endpoint speaking the OpenAI chat/embeddings protocol.

    Stateless between calls (no shared session), so one instance can serve
    concurrent callers. Transient failures are retried ``max_attempts`` times
    with exponential backoff before raising BackendUnavailable.

    Tokenization note: the response text is taken from message.content and
    the per-token candidates from the logprobs block; their correspondence
    (including whitespace handling) is whatever the server's tokenizer does,
    and is not re-validated here.
    """

    def __init__(
        self,
        base_url: str,
        model_id: str,
        embed_url: str | None = None,
        embed_model_id: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.embed_url = (embed_url or base_url).rstrip("/")
        self.embed_model_id = embed_model_id or model_id
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _post(self, url: str, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = requests.post(
                    url, json=payload, headers=self._headers(), timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                log.warning("POST %s failed (attempt %d): %s", url, attempt + 1, exc)
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise ParseError(f"non-JSON response from {url}: {exc}") from exc
            if resp.status_code in (401, 403):
                raise BackendUnavailable(
                    f"auth failure from {url}: HTTP {resp.status_code}"
                )
            if resp.status_code in _RETRYABLE_STATUSES:
                last_error = BackendUnavailable(
                    f"HTTP {resp.status_code} from {url}: {resp.text[:200]}"
                )
                log.warning("POST %s returned %d (attempt %d)", url, resp.status_code,
                            attempt + 1)
                continue
            raise BackendUnavailable(
                f"HTTP {resp.status_code} from {url}: {resp.text[:200]}"
            )
        raise BackendUnavailable(
            f"giving up on {url} after {self.max_attempts} attempts: {last_error}"
        )

    def generate(self, req: GenerationRequest) -> GenerationResult:
        payload = {
            "model": req.model_id or self.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "logprobs": True,
            "top_logprobs": req.logprob_top_k,
        }
        start = time.perf_counter()
        body = self._post(f"{self.base_url}/chat/completions", payload)
        latency = time.perf_counter() - start
        return _parse_chat_response(body, req, self.model_id, latency)

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        _check_texts(texts)
        payload = {"model": self.embed_model_id, "input": texts}
        body = self._post(f"{self.embed_url}/embeddings", payload)
        data = body.get("data")
        if not isinstance(data, list) or len(data) != len(texts):
            raise ParseError(
                f"embeddings response has {0 if not isinstance(data, list) else len(data)} "
                f"rows for {len(texts)} inputs"
            )
        rows = sorted(data, key=lambda d: d.get("index", 0))
        out = []
        for row in rows:
            values = row.get("embedding")
            if not isinstance(values, list) or not values:
                raise ParseError("embeddings response row lacks 'embedding'")
            out.append(
                EmbeddingVector(
                    values=tuple(float(v) for v in values),
                    model_id=self.embed_model_id,
                )
            )
        dims = {len(v.values) for v in out}
        if len(dims) > 1:
            raise ParseError(f"embedding rows disagree on dimension: {sorted(dims)}")
        return out


def _parse_chat_response(
    body: dict, req: GenerationRequest, default_model: str, latency: float
) -> GenerationResult:
    choices = body.get("choices")
    if not isinstance(choices, list) or not choices:
        raise ParseError("chat response has no choices")
    choice = choices[0]
    message = choice.get("message") or {}
    text = message.get("content")
    if not isinstance(text, str):
        raise ParseError("chat response choice has no message content")

    logprobs = choice.get("logprobs")
    content = (logprobs or {}).get("content")
    if not isinstance(content, list) or not content:
        raise LogprobsUnsupported(
            "backend returned no per-token logprobs; entropy cannot be computed"
        )

    positions = []
    for item in content:
        token = item.get("token")
        chosen_lp = item.get("logprob")
        if not isinstance(token, str) or not isinstance(chosen_lp, (int, float)):
            raise ParseError("logprobs content entry lacks token/logprob")
        raw_top = item.get("top_logprobs") or []
        cands = []
        for cand in raw_top:
            ctok = cand.get("token")
            clp = cand.get("logprob")
            if not isinstance(ctok, str) or not isinstance(clp, (int, float)):
                raise ParseError("top_logprobs entry lacks token/logprob")
            # Float noise can push a certain token's logprob slightly above 0.
            cands.append(TokenCandidate(token=ctok, logprob=min(float(clp), 0.0)))
        if not any(c.token == token for c in cands):
            # Guarantee the chosen token carries its own logprob; evict the
            # weakest candidate rather than exceed the top-k length bound.
            if len(cands) >= req.logprob_top_k:
                cands.sort(key=lambda c: c.logprob, reverse=True)
                cands = cands[: req.logprob_top_k - 1]
            cands.append(TokenCandidate(token=token, logprob=min(float(chosen_lp), 0.0)))
        positions.append(TokenPosition(token=token, candidates=tuple(cands)))

    tokens = TokenLogprobs(positions=tuple(positions))
    try:
        tokens.validate()
    except Exception as exc:
        raise ParseError(f"chat response logprobs violate invariants: {exc}") from exc
    return GenerationResult(
        text=text,
        tokens=tokens,
        model_id=req.model_id or default_model,
        latency=latency,
    )
