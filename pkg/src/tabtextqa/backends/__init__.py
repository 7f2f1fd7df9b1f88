"""Model backends: the shared contract, a scripted mock, an HTTP client and a disk cache."""

from .base import Backend, CallCounter, GenerationRequest, GenerationResult, RerankRequest
from .cache import CachedBackend, CacheKey, DiskCache, with_cache
from .http import HTTPBackend
from .mock import MOCK_DIM, MockBackend, keyword_coverage, mock_embedding
from .wrappers import CountingBackend, ThrottledBackend

__all__ = [
    "Backend",
    "CacheKey",
    "CachedBackend",
    "CallCounter",
    "CountingBackend",
    "DiskCache",
    "GenerationRequest",
    "GenerationResult",
    "HTTPBackend",
    "MOCK_DIM",
    "MockBackend",
    "RerankRequest",
    "ThrottledBackend",
    "keyword_coverage",
    "mock_embedding",
    "with_cache",
]
