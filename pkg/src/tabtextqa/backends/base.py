"""Request/response types and the backend contract used by every pipeline stage."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..validation import check_positive_int, check_text, check_unit_interval

DEFAULT_TEMPERATURE = 0.5


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 256
    n_samples: int = 1
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.prompt, str) or not self.prompt.strip():
            raise ValueError("prompt must be a non-empty string")
        check_unit_interval(self.temperature, "temperature")
        check_positive_int(self.max_tokens, "max_tokens")
        check_positive_int(self.n_samples, "n_samples")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stop_sequences"] = list(self.stop_sequences)
        return d


@dataclass(frozen=True)
class GenerationResult:
    samples: tuple[str, ...]
    backend_id: str
    cached: bool = False
    truncated: tuple[bool, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "truncated", tuple(self.truncated) or (False,) * len(self.samples))


@dataclass(frozen=True)
class RerankRequest:
    question: str
    keywords: tuple[str, ...]
    passage_text: str

    def __post_init__(self):
        check_text(self.question, "question")
        object.__setattr__(self, "keywords", tuple(self.keywords))

    def to_dict(self) -> dict:
        return {"question": self.question, "keywords": list(self.keywords), "passage_text": self.passage_text}


@dataclass
class CallCounter:
    embed: int = 0
    generate: int = 0
    rerank: int = 0

    def to_dict(self) -> dict[str, int]:
        return {"embed": self.embed, "generate": self.generate, "rerank": self.rerank}


class Backend:
    """Contract shared by the mock, HTTP and caching backends.

    ``embed_batch`` returns one 1-D float array per input text. ``generate``
    returns ``request.n_samples`` completions. ``rerank_score`` returns a
    relevance score in [0, 1].
    """

    backend_id: str = "backend"

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        raise NotImplementedError

    def generate(self, request: GenerationRequest) -> GenerationResult:
        raise NotImplementedError

    def rerank_score(self, request: RerankRequest) -> float:
        raise NotImplementedError

    def __deepcopy__(self, memo):
        # backends are shared service handles; sklearn.clone must not duplicate them
        return self

