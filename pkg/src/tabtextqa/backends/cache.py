"""Persistent content-addressed response cache.

Each entry is one file named by the SHA-256 of its key, holding
``{key, response, checksum, created}``, where ``response`` is the JSON text of
the backend's answer and ``checksum`` its SHA-256. Entries are written to a
temporary file and hard-linked into place, so concurrent writers never leave
a partial entry and the first stored value for a key wins.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..errors import CacheCorrupt
from ..validation import check_texts
from .base import Backend, GenerationRequest, GenerationResult, RerankRequest

OPERATIONS = ("embed", "generate", "rerank")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class CacheKey:
    backend_id: str
    operation: str
    content_hash: str

    @classmethod
    def for_request(cls, backend_id: str, operation: str, payload) -> "CacheKey":
        if operation not in OPERATIONS:
            raise ValueError(f"unknown cache operation {operation!r}")
        digest = hashlib.sha256(
            _canonical({"backend_id": backend_id, "operation": operation, "request": payload}).encode("utf-8")
        ).hexdigest()
        return cls(backend_id, operation, digest)

    def to_dict(self) -> dict:
        return {"backend_id": self.backend_id, "operation": self.operation, "content_hash": self.content_hash}


class DiskCache:
    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self.corrupt = 0
        self._lock = threading.Lock()

    def path_for(self, key: CacheKey) -> Path:
        return self.directory / f"{key.content_hash}.json"

    def get(self, key: CacheKey, *, count: bool = True):
        path = self.path_for(key)
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            if count:
                with self._lock:
                    self.misses += 1
            return None
        try:
            record = json.loads(raw)
            response = record["response"]
            ok = hashlib.sha256(response.encode("utf-8")).hexdigest() == record["checksum"]
            value = json.loads(response) if ok else None
        except (ValueError, KeyError, TypeError, AttributeError):
            ok = False
        if not ok:
            warnings.warn(f"cache entry {path.name} failed its checksum; recomputing", CacheCorrupt, stacklevel=2)
            path.unlink(missing_ok=True)
            with self._lock:
                self.corrupt += 1
                self.misses += 1
            return None
        if count:
            with self._lock:
                self.hits += 1
        return value

    def put(self, key: CacheKey, value) -> None:
        response = _canonical(value)
        record = {
            "key": key.to_dict(),
            "response": response,
            "checksum": hashlib.sha256(response.encode("utf-8")).hexdigest(),
            "created": datetime.now(timezone.utc).isoformat(),
        }
        final = self.path_for(key)
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False))
            try:
                os.link(tmp, final)
            except FileExistsError:
                pass
        finally:
            os.unlink(tmp)

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json"))


class CachedBackend(Backend):
    """Backend wrapper serving repeated identical requests from a :class:`DiskCache`."""

    def __init__(self, inner: Backend, store: DiskCache):
        self.inner = inner
        self.store = store
        self.backend_id = inner.backend_id

    def embed_batch(self, texts):
        texts = check_texts(texts, "texts")
        keys = [CacheKey.for_request(self.backend_id, "embed", {"text": t}) for t in texts]
        found: dict[str, list[float]] = {}
        missing: list[str] = []
        for text, key in zip(texts, keys):
            if text in found or text in missing:
                continue
            value = self.store.get(key)
            if value is None:
                missing.append(text)
            else:
                found[text] = value
        if missing:
            vectors = self.inner.embed_batch(missing)
            for text, vec in zip(missing, vectors):
                values = [float(x) for x in np.asarray(vec, dtype=float)]
                self.store.put(CacheKey.for_request(self.backend_id, "embed", {"text": text}), values)
                found[text] = values
        return [np.asarray(found[t], dtype=float) for t in texts]

    def generate(self, request: GenerationRequest) -> GenerationResult:
        key = CacheKey.for_request(self.backend_id, "generate", request.to_dict())
        value = self.store.get(key)
        if value is not None:
            return GenerationResult(
                samples=value["samples"], backend_id=self.backend_id, cached=True, truncated=value["truncated"]
            )
        result = self.inner.generate(request)
        self.store.put(key, {"samples": list(result.samples), "truncated": list(result.truncated)})
        # re-read so concurrent writers of a sampled request agree on the first stored value
        stored = self.store.get(key, count=False)
        if stored is not None and stored["samples"] != list(result.samples):
            return GenerationResult(
                samples=stored["samples"], backend_id=self.backend_id, cached=True, truncated=stored["truncated"]
            )
        return GenerationResult(samples=result.samples, backend_id=self.backend_id, truncated=result.truncated)

    def rerank_score(self, request: RerankRequest) -> float:
        key = CacheKey.for_request(self.backend_id, "rerank", request.to_dict())
        value = self.store.get(key)
        if value is not None:
            return float(value)
        score = float(self.inner.rerank_score(request))
        self.store.put(key, score)
        return score


def with_cache(backend: Backend, cache_store) -> CachedBackend:
    if not isinstance(cache_store, DiskCache):
        cache_store = DiskCache(cache_store)
    return CachedBackend(backend, cache_store)
