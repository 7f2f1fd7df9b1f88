"""Client for OpenAI-compatible ``/chat/completions`` and ``/embeddings`` endpoints."""

from __future__ import annotations

import logging
import os
import time
import warnings

import httpx
import numpy as np

from ..errors import BackendError, DimensionMismatch, TruncationWarning
from ..validation import check_texts
from .base import Backend, GenerationRequest, GenerationResult, RerankRequest
from .mock import keyword_coverage

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "TABTEXTQA_API_KEY"


class HTTPBackend(Backend):
    """OpenAI-compatible backend.

    Transport errors and 5xx responses are retried ``max_attempts`` times with
    exponential backoff; 4xx responses fail immediately. Re-rank scores come
    from ``rerank_url`` when set (a POST of ``{question, keywords, context}``
    answered by ``{"score": float}``, e.g. an extractive-QA confidence
    service); otherwise the lexical keyword-coverage score is used.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        embedding_model: str | None = None,
        api_key: str | None = None,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        backend_id: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        rerank_url: str | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.embedding_model = embedding_model or model
        self.backend_id = backend_id or f"http:{model}"
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.rerank_url = rerank_url
        key = api_key if api_key is not None else os.environ.get(api_key_env)
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, url: str, payload: dict) -> dict:
        last_error: BackendError | None = None
        for attempt in range(self.max_attempts):
            try:
                response = self._client.post(url, json=payload)
            except httpx.TimeoutException as exc:
                last_error = BackendError(f"timeout calling {url}: {exc}")
            except httpx.TransportError as exc:
                last_error = BackendError(f"transport error calling {url}: {exc}")
            else:
                if response.status_code < 400:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise BackendError(f"invalid JSON from {url}: {exc}", status=response.status_code)
                error = BackendError(
                    f"{url} returned {response.status_code}: {response.text[:200]}",
                    status=response.status_code,
                )
                if response.status_code < 500:
                    raise error
                last_error = error
            if attempt + 1 < self.max_attempts:
                delay = self.backoff * (2**attempt)
                logger.warning("retrying %s in %.2fs (%s)", url, delay, last_error)
                time.sleep(delay)
        assert last_error is not None
        raise last_error

    def embed_batch(self, texts):
        texts = check_texts(texts, "texts")
        body = self._post(f"{self.base_url}/embeddings", {"model": self.embedding_model, "input": texts})
        try:
            data = sorted(body["data"], key=lambda d: d.get("index", 0))
            vectors = [np.asarray(d["embedding"], dtype=float) for d in data]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed embeddings response: {exc}")
        if len(vectors) != len(texts):
            raise BackendError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        dims = {v.shape[0] for v in vectors}
        if len(dims) != 1:
            raise DimensionMismatch(f"backend returned embeddings of dims {sorted(dims)}")
        if not all(np.all(np.isfinite(v)) for v in vectors):
            raise BackendError("backend returned non-finite embedding values")
        return vectors

    def _chat(self, request: GenerationRequest, n: int) -> list[tuple[str, bool]]:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": n,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        body = self._post(f"{self.base_url}/chat/completions", payload)
        try:
            return [
                (c["message"]["content"] or "", c.get("finish_reason") == "length")
                for c in body["choices"]
            ]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc}")

    def generate(self, request: GenerationRequest) -> GenerationResult:
        samples: list[tuple[str, bool]] = []
        # some servers ignore n > 1; top up with further calls
        while len(samples) < request.n_samples:
            got = self._chat(request, request.n_samples - len(samples))
            if not got:
                raise BackendError("chat response contained no choices")
            samples.extend(got)
        samples = samples[: request.n_samples]
        truncated = [t for _, t in samples]
        if any(truncated):
            warnings.warn(f"{self.backend_id}: completion hit max_tokens", TruncationWarning, stacklevel=2)
        return GenerationResult(samples=[s for s, _ in samples], backend_id=self.backend_id, truncated=truncated)

    def rerank_score(self, request: RerankRequest) -> float:
        if not self.rerank_url:
            return keyword_coverage(request.question, request.keywords, request.passage_text)
        body = self._post(
            self.rerank_url,
            {"question": request.question, "keywords": list(request.keywords), "context": request.passage_text},
        )
        try:
            score = float(body["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed rerank response: {exc}")
        return min(1.0, max(0.0, score))
