"""Deterministic offline backend.

Embeddings are hashed bags of tokens: 256 dimensions, each lowercased token
adds 1.0 at ``fnv1a_64(token) % 256``, then the vector is L2-normalized (a
text with no tokens maps to the zero vector). Similarity between two mock
embeddings is therefore a pure function of lexical overlap.

Generation is scripted. A script is an ordered list of rules; the first rule
whose ``contains`` substrings all occur in the prompt (and, if given, whose
``endswith`` string ends the prompt) supplies the response::

    {"backend_id": "mock",
     "default_response": "",
     "rules": [{"contains": ["Sub-question:"], "response": "..."},
               {"contains": ["Question: X"], "response": ["A", "A", "B"]},
               {"contains": ["Question: Y"], "error": "scripted failure"}]}

A list response is used sample by sample (cycling) when ``n_samples > 1``.
A rule with ``error`` raises :class:`BackendError` instead of answering.

Re-rank scores are keyword coverage: the fraction of distinct keyword tokens
present in the passage, or of the question's content tokens when no
keywords are given.
"""

from __future__ import annotations

import json
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BackendError, TruncationWarning
from ..text import content_tokens, fnv1a_64, tokenize
from ..validation import check_texts
from .base import Backend, CallCounter, GenerationRequest, GenerationResult, RerankRequest

MOCK_DIM = 256


def mock_embedding(text: str, dim: int = MOCK_DIM) -> np.ndarray:
    vec = np.zeros(dim, dtype=float)
    for tok in tokenize(text):
        vec[fnv1a_64(tok) % dim] += 1.0
    norm = float(np.sqrt(np.dot(vec, vec)))
    if norm > 0.0:
        vec /= norm
    return vec


def keyword_coverage(question: str, keywords, passage_text: str) -> float:
    passage = set(tokenize(passage_text))
    targets: set[str] = set()
    for kw in keywords:
        targets.update(tokenize(kw))
    if not targets:
        targets = set(content_tokens(question)) or set(tokenize(question))
    if not targets:
        return 0.0
    return len(targets & passage) / len(targets)


@dataclass(frozen=True)
class ScriptRule:
    contains: tuple[str, ...] = ()
    response: tuple[str, ...] = ("",)
    error: str | None = None
    endswith: str | None = None

    def matches(self, prompt: str) -> bool:
        if self.endswith is not None and not prompt.rstrip().endswith(self.endswith.rstrip()):
            return False
        return all(fragment in prompt for fragment in self.contains)


def _parse_rule(raw: dict) -> ScriptRule:
    contains = raw.get("contains", [])
    if isinstance(contains, str):
        contains = [contains]
    response = raw.get("response", "")
    if isinstance(response, str):
        response = [response]
    return ScriptRule(
        contains=tuple(contains), response=tuple(response), error=raw.get("error"), endswith=raw.get("endswith")
    )


class MockBackend(Backend):
    """Scripted, thread-safe backend with call counters and a prompt log."""

    def __init__(
        self,
        rules=None,
        *,
        default_response: str = "",
        backend_id: str = "mock",
        dim: int = MOCK_DIM,
    ):
        self.rules = [r if isinstance(r, ScriptRule) else _parse_rule(r) for r in (rules or [])]
        self.default_response = default_response
        self.backend_id = backend_id
        self.dim = dim
        self.calls = CallCounter()
        self.prompts: list[str] = []
        self._lock = threading.Lock()

    @classmethod
    def from_script(cls, script, *, backend_id: str | None = None) -> "MockBackend":
        if isinstance(script, (str, Path)):
            with open(script, encoding="utf-8") as fh:
                script = json.load(fh)
        return cls(
            script.get("rules", []),
            default_response=script.get("default_response", ""),
            backend_id=backend_id or script.get("backend_id", "mock"),
            dim=script.get("dim", MOCK_DIM),
        )

    def embed_batch(self, texts):
        texts = check_texts(texts, "texts")
        with self._lock:
            self.calls.embed += 1
        return [mock_embedding(t, self.dim) for t in texts]

    def _match(self, prompt: str) -> ScriptRule | None:
        for rule in self.rules:
            if rule.matches(prompt):
                return rule
        return None

    def generate(self, request: GenerationRequest) -> GenerationResult:
        with self._lock:
            self.calls.generate += 1
            self.prompts.append(request.prompt)
        rule = self._match(request.prompt)
        if rule is not None and rule.error is not None:
            raise BackendError(rule.error)
        responses = rule.response if rule is not None else (self.default_response,)
        samples = [responses[i % len(responses)] for i in range(request.n_samples)]
        truncated = [len(tokenize(s)) >= request.max_tokens for s in samples]
        if any(truncated):
            warnings.warn("mock sample reached max_tokens", TruncationWarning, stacklevel=2)
        return GenerationResult(samples=samples, backend_id=self.backend_id, truncated=truncated)

    def rerank_score(self, request: RerankRequest) -> float:
        with self._lock:
            self.calls.rerank += 1
        return keyword_coverage(request.question, request.keywords, request.passage_text)
