"""Counting and throttling wrappers around a backend."""

from __future__ import annotations

import threading

from .base import Backend, CallCounter, GenerationRequest, GenerationResult, RerankRequest


class CountingBackend(Backend):
    """Counts calls that reach ``inner``; place it beneath the cache to count real invocations."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.calls = CallCounter()
        self._lock = threading.Lock()

    def embed_batch(self, texts):
        with self._lock:
            self.calls.embed += 1
        return self.inner.embed_batch(texts)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        with self._lock:
            self.calls.generate += 1
        return self.inner.generate(request)

    def rerank_score(self, request: RerankRequest) -> float:
        with self._lock:
            self.calls.rerank += 1
        return self.inner.rerank_score(request)


class ThrottledBackend(Backend):
    """Caps the number of concurrent in-flight calls to ``inner`` at ``limit``."""

    def __init__(self, inner: Backend, limit: int = 4):
        if limit < 1:
            raise ValueError("parallelism limit must be >= 1")
        self.inner = inner
        self.limit = limit
        self.backend_id = inner.backend_id
        self._semaphore = threading.BoundedSemaphore(limit)

    def embed_batch(self, texts):
        with self._semaphore:
            return self.inner.embed_batch(texts)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        with self._semaphore:
            return self.inner.generate(request)

    def rerank_score(self, request: RerankRequest) -> float:
        with self._semaphore:
            return self.inner.rerank_score(request)
