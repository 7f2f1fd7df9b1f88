"""End-to-end estimator: retrieval followed by the breakdown reader."""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Corpus
from .evaluate import exact_match
from .reader import BreakdownReader
from .retrieve import RetrievalBackends, TableTextRetriever


class TableTextQA(BaseEstimator):
    """Question answering over a linked table-text corpus.

    ``backends`` is either one backend used everywhere or a mapping from stage
    name (``embed``, ``rerank``, ``keywords``, ``linearize``, ``summarize``,
    ``decompose``, ``sub_qa``, ``main_qa``) to backend, with an optional
    ``default`` entry.

    >>> qa = TableTextQA(backend).fit(corpus)       # doctest: +SKIP
    >>> qa.predict(["q1", "q2"])                    # doctest: +SKIP
    """

    def __init__(self, backends=None, alpha: float = 0.2, k_rows: int = 3, k_text: int = 6, k_final: int = 3,
                 keyword_mode: str = "rule", linearization: str = "template", mode: str = "ttqa_rs",
                 shots: int = 2, self_consistency_samples: int = 1, temperature: float = 0.5):
        self.backends = backends
        self.alpha = alpha
        self.k_rows = k_rows
        self.k_text = k_text
        self.k_final = k_final
        self.keyword_mode = keyword_mode
        self.linearization = linearization
        self.mode = mode
        self.shots = shots
        self.self_consistency_samples = self_consistency_samples
        self.temperature = temperature

    def _backend(self, stage):
        b = self.backends
        if isinstance(b, dict):
            return b.get(stage) or b.get("default")
        return b

    def fit(self, X: Corpus, y=None):
        if self.backends is None:
            raise ValueError("TableTextQA requires backends")
        embed = self._backend("embed")
        if embed is None:
            raise ValueError("no backend for stage 'embed'")
        stages = RetrievalBackends(embed, self._backend("rerank"), self._backend("keywords"), self._backend("linearize"))
        self.retriever_ = TableTextRetriever(
            backend=stages, alpha=self.alpha, k_rows=self.k_rows, k_text=self.k_text, k_final=self.k_final,
            keyword_mode=self.keyword_mode, linearization=self.linearization,
        ).fit(X)
        reader_backends = self.backends if not isinstance(self.backends, dict) else dict(self.backends)
        self.reader_ = BreakdownReader(
            backends=reader_backends, mode=self.mode, shots=self.shots,
            self_consistency_samples=self.self_consistency_samples, temperature=self.temperature,
        ).fit(X)
        self.corpus_ = X
        return self

    def _questions(self, X):
        return [self.corpus_.question(x) if isinstance(x, str) else x for x in X]

    def predict(self, X) -> list[str]:
        check_is_fitted(self, "corpus_")
        questions = self._questions(X)
        self.retrievals_ = self.retriever_.transform(questions)
        answers = self.reader_.predict(questions, self.retrievals_)
        self.traces_ = self.reader_.traces_
        return answers

    def score(self, X, y=None) -> float:
        """Mean exact match against ``y`` (default: the questions' gold answers)."""
        questions = self._questions(X)
        gold = list(y) if y is not None else [q.gold_answer for q in questions]
        preds = self.predict(questions)
        return sum(exact_match(p, g) for p, g in zip(preds, gold)) / max(len(preds), 1)
