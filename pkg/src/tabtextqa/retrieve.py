"""Table-then-text retrieval cascade.

For one question over its linked table:

1. every row is linearized and the ``k_rows`` rows most similar to the
   question are kept;
2. for each kept row the query ``alpha * q + (1 - alpha) * row`` is formed
   and scored against the passages that row hyperlinks to; the pooled
   candidates are deduplicated and the global top ``k_text`` kept;
3. the candidates are re-scored by a re-ranker fed the question and its
   keywords, and the top ``k_final`` are handed to the reader.

Similarity is the dot product of L2-normalized vectors. Ties always break
toward the earlier item (lower row index, earlier pool position, prior rank).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .backends.base import Backend, GenerationRequest, RerankRequest
from .corpus import Corpus, Question, Table, linked_passages
from .errors import BackendError, DimensionMismatch, tag_stage
from .linearize import LinearizationStyle, linearize_table
from .text import content_tokens
from .validation import (
    check_choice,
    check_positive_int,
    check_same_dim,
    check_text,
    check_unit_interval,
    check_vector,
    l2_normalize,
)

MAX_KEYWORDS = 8
KEYWORD_MODES = ("rule", "backend")

_KEYWORD_PROMPT = (
    "List the keywords of the question below, separated by commas.\n"
    "Question: {question}\n"
    "Keywords:"
)


@dataclass(frozen=True)
class RetrieverConfig:
    alpha: float = 0.2
    k_rows: int = 3
    k_text: int = 6
    k_final: int = 3
    similarity: str = "dot_on_normalized"
    keyword_mode: str = "rule"
    linearization: str = "template"
    include_title: bool = False

    def __post_init__(self):
        check_unit_interval(self.alpha, "alpha")
        check_positive_int(self.k_rows, "k_rows")
        check_positive_int(self.k_text, "k_text")
        check_positive_int(self.k_final, "k_final")
        if self.k_final > self.k_text:
            raise ValueError(f"k_final ({self.k_final}) must not exceed k_text ({self.k_text})")
        check_choice(self.similarity, "similarity", ("dot_on_normalized",))
        check_choice(self.keyword_mode, "keyword_mode", KEYWORD_MODES)
        LinearizationStyle(self.linearization, self.include_title)

    @property
    def style(self) -> LinearizationStyle:
        return LinearizationStyle(self.linearization, self.include_title)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RowCandidate:
    table_id: str
    row_index: int
    sentence: str
    score: float


@dataclass(frozen=True)
class PassageCandidate:
    passage_id: str
    score: float
    source_row_index: int


@dataclass(frozen=True)
class RetrievalResult:
    question_id: str
    rows: tuple[RowCandidate, ...] = ()
    passages: tuple[PassageCandidate, ...] = ()
    intermediate_passages: tuple[PassageCandidate, ...] = ()
    keywords: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "rows": [asdict(r) for r in self.rows],
            "passages": [asdict(p) for p in self.passages],
            "intermediate_passages": [asdict(p) for p in self.intermediate_passages],
            "keywords": list(self.keywords),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalResult":
        return cls(
            question_id=d["question_id"],
            rows=tuple(RowCandidate(**r) for r in d.get("rows", [])),
            passages=tuple(PassageCandidate(**p) for p in d.get("passages", [])),
            intermediate_passages=tuple(PassageCandidate(**p) for p in d.get("intermediate_passages", [])),
            keywords=tuple(d.get("keywords", [])),
        )


def _embed(backend: Backend, texts: list[str]) -> list[np.ndarray]:
    vectors = [l2_normalize(check_vector(v, "embedding")) for v in backend.embed_batch(texts)]
    if len(vectors) != len(texts):
        raise BackendError(f"expected {len(texts)} embeddings, got {len(vectors)}")
    if vectors:
        check_same_dim(*vectors)
    return vectors


def embed_question(backend: Backend, question: str) -> np.ndarray:
    check_text(question, "question")
    try:
        return _embed(backend, [question])[0]
    except BackendError as exc:
        raise tag_stage(exc, "retrieve")


def combine_embeddings(question_vec, row_vec, alpha: float) -> np.ndarray:
    """Blend ``alpha * question + (1 - alpha) * row`` and L2-normalize (zero stays zero)."""
    q = check_vector(question_vec, "question_vec")
    r = check_vector(row_vec, "row_vec")
    if q.shape != r.shape:
        raise DimensionMismatch(f"question_vec has dim {q.shape[0]}, row_vec has dim {r.shape[0]}")
    alpha = check_unit_interval(alpha, "alpha")
    if alpha in (0.0, 1.0):
        # endpoints select one input; a unit input comes back bit-for-bit instead of re-divided by ~1.0
        chosen = q if alpha == 1.0 else r
        if abs(float(np.linalg.norm(chosen)) - 1.0) <= 1e-12:
            return chosen.astype(float, copy=True)
        return l2_normalize(chosen)
    return l2_normalize(alpha * q + (1.0 - alpha) * r)


def _top_k(scores, k: int) -> list[int]:
    # stable: equal scores keep their original order
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    return order[:k]


def retrieve_rows(
    backend: Backend,
    question: str,
    table: Table,
    config: RetrieverConfig = RetrieverConfig(),
    *,
    question_vec: np.ndarray | None = None,
    return_vectors: bool = False,
    linearize_backend: Backend | None = None,
):
    """Top ``config.k_rows`` rows of ``table`` by similarity between question and row sentence."""
    if table.n_rows == 0:
        raise ValueError(f"table {table.id!r} has no rows")
    if question_vec is None:
        question_vec = embed_question(backend, question)
    sentences = linearize_table(table, config.style, linearize_backend or backend)
    try:
        row_vecs = _embed(backend, sentences)
    except BackendError as exc:
        raise tag_stage(exc, "retrieve")
    check_same_dim(question_vec, *row_vecs)
    scores = [float(np.dot(question_vec, v)) for v in row_vecs]
    top = _top_k(scores, config.k_rows)
    rows = [RowCandidate(table.id, i, sentences[i], scores[i]) for i in top]
    if return_vectors:
        return rows, [row_vecs[i] for i in top]
    return rows


def retrieve_passages(
    backend: Backend,
    question_vec,
    row_candidates,
    corpus: Corpus,
    config: RetrieverConfig = RetrieverConfig(),
    *,
    row_vectors=None,
) -> list[PassageCandidate]:
    """Score the passages linked from the retrieved rows against per-row blended queries.

    A passage linked from several rows keeps its best score and the row that
    produced it. The global top ``config.k_text`` are returned.
    """
    if not row_candidates:
        return []
    question_vec = l2_normalize(check_vector(question_vec, "question_vec"))
    if row_vectors is None:
        try:
            row_vectors = _embed(backend, [rc.sentence for rc in row_candidates])
        except BackendError as exc:
            raise tag_stage(exc, "retrieve")

    pool: list[tuple[int, str]] = []
    for rank, rc in enumerate(row_candidates):
        for passage in linked_passages(corpus, rc.table_id, rc.row_index):
            pool.append((rank, passage.id))
    if not pool:
        return []

    unique_ids = list(dict.fromkeys(pid for _, pid in pool))
    try:
        passage_vecs = dict(zip(unique_ids, _embed(backend, [corpus.passage(p).content for p in unique_ids])))
    except BackendError as exc:
        raise tag_stage(exc, "retrieve")

    queries = [combine_embeddings(question_vec, rv, config.alpha) for rv in row_vectors]
    best: dict[str, tuple[float, int]] = {}
    order: list[str] = []
    for rank, pid in pool:
        score = float(np.dot(queries[rank], passage_vecs[pid]))
        if pid not in best:
            order.append(pid)
            best[pid] = (score, rank)
        elif score > best[pid][0]:
            best[pid] = (score, rank)
    scores = [best[pid][0] for pid in order]
    top = _top_k(scores, config.k_text)
    return [
        PassageCandidate(order[i], scores[i], row_candidates[best[order[i]][1]].row_index) for i in top
    ]


def extract_keywords(question: str, backend: Backend | None = None, *, mode: str = "rule") -> list[str]:
    """Question keywords: content tokens (rule mode) or a comma-separated backend completion."""
    check_text(question, "question")
    check_choice(mode, "mode", KEYWORD_MODES)
    if mode == "rule":
        return list(dict.fromkeys(content_tokens(question)))[:MAX_KEYWORDS]
    if backend is None:
        raise ValueError("backend keyword mode requires a backend")
    request = GenerationRequest(prompt=_KEYWORD_PROMPT.format(question=question), temperature=0.0, max_tokens=32)
    try:
        completion = backend.generate(request).samples[0]
    except BackendError as exc:
        raise tag_stage(exc, "keywords")
    words = [w.strip() for w in completion.strip().splitlines()[0].split(",")] if completion.strip() else []
    return list(dict.fromkeys(w for w in words if w))[:MAX_KEYWORDS]


def rerank_passages(
    backend: Backend, question: str, keywords, candidates, k_final: int, corpus: Corpus
) -> list[PassageCandidate]:
    """Re-score ``candidates`` with the re-ranker and keep the top ``k_final``."""
    check_positive_int(k_final, "k_final")
    scored = []
    for cand in candidates:
        request = RerankRequest(
            question=question, keywords=tuple(keywords), passage_text=corpus.passage(cand.passage_id).content
        )
        try:
            score = float(backend.rerank_score(request))
        except BackendError as exc:
            raise tag_stage(exc, "rerank")
        scored.append(replace(cand, score=score))
    top = _top_k([c.score for c in scored], k_final)
    return [scored[i] for i in top]


@dataclass
class RetrievalBackends:
    """Backends for each retrieval stage; ``embed`` is required, the rest default to it."""

    embed: Backend
    rerank: Backend | None = None
    keywords: Backend | None = None
    linearize: Backend | None = None

    def __post_init__(self):
        self.rerank = self.rerank or self.embed
        self.keywords = self.keywords or self.embed
        self.linearize = self.linearize or self.embed


def retrieve(backend, question: Question, corpus: Corpus, config: RetrieverConfig = RetrieverConfig()) -> RetrievalResult:
    """Run the full cascade for one question; every intermediate list is kept in the result."""
    backends = backend if isinstance(backend, RetrievalBackends) else RetrievalBackends(backend)
    table = corpus.table(question.table_id)
    q_vec = embed_question(backends.embed, question.text)

    rows, top_vecs = retrieve_rows(
        backends.embed,
        question.text,
        table,
        config,
        question_vec=q_vec,
        return_vectors=True,
        linearize_backend=backends.linearize,
    )

    intermediate = retrieve_passages(backends.embed, q_vec, rows, corpus, config, row_vectors=top_vecs)
    keywords = extract_keywords(question.text, backends.keywords, mode=config.keyword_mode)
    final = rerank_passages(backends.rerank, question.text, keywords, intermediate, config.k_final, corpus)
    return RetrievalResult(
        question_id=question.id,
        rows=tuple(rows),
        passages=tuple(final),
        intermediate_passages=tuple(intermediate),
        keywords=tuple(keywords),
    )


class TableTextRetriever(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` binds a corpus, ``transform`` maps questions to retrieval results.

    ``transform`` accepts :class:`Question` objects or question ids of the
    fitted corpus.
    """

    def __init__(
        self,
        backend: Backend | None = None,
        alpha: float = 0.2,
        k_rows: int = 3,
        k_text: int = 6,
        k_final: int = 3,
        keyword_mode: str = "rule",
        linearization: str = "template",
        include_title: bool = False,
    ):
        self.backend = backend
        self.alpha = alpha
        self.k_rows = k_rows
        self.k_text = k_text
        self.k_final = k_final
        self.keyword_mode = keyword_mode
        self.linearization = linearization
        self.include_title = include_title

    def _config(self) -> RetrieverConfig:
        return RetrieverConfig(
            alpha=self.alpha,
            k_rows=self.k_rows,
            k_text=self.k_text,
            k_final=self.k_final,
            keyword_mode=self.keyword_mode,
            linearization=self.linearization,
            include_title=self.include_title,
        )

    def fit(self, X: Corpus, y=None):
        if not isinstance(X, Corpus):
            raise TypeError("TableTextRetriever.fit expects a Corpus")
        if self.backend is None:
            raise ValueError("TableTextRetriever requires a backend")
        self.config_ = self._config()
        self.corpus_ = X
        return self

    def _resolve(self, questions) -> list[Question]:
        if isinstance(questions, (Question, str)):
            questions = [questions]
        return [self.corpus_.question(q) if isinstance(q, str) else q for q in questions]

    def transform(self, X) -> list[RetrievalResult]:
        check_is_fitted(self, "corpus_")
        return [retrieve(self.backend, q, self.corpus_, self.config_) for q in self._resolve(X)]


__all__ = [
    "PassageCandidate",
    "RetrievalBackends",
    "RetrievalResult",
    "RetrieverConfig",
    "RowCandidate",
    "TableTextRetriever",
    "combine_embeddings",
    "embed_question",
    "extract_keywords",
    "rerank_passages",
    "retrieve",
    "retrieve_passages",
    "retrieve_rows",
]
