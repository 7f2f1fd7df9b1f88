"""Breakdown reader: stage operations, baseline modes and the estimator wrapper."""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..corpus import Corpus
from .core import (
    BACKEND_STAGES,
    MODES,
    STAGES,
    EntityType,
    Evidence,
    ReaderConfig,
    ReaderFailure,
    ReaderTrace,
    answer_question,
    answer_subquestion,
    decompose,
    decompose_prompt,
    majority_vote,
    parse_answer,
    predict_entity_type,
    qa_prompt,
    run,
    summarize,
    summarize_prompt,
    vote_counts,
)
from .prompts import (
    DEFAULT_TEMPLATES,
    ShotExample,
    TemplateSet,
    decomposition_exemplars,
    qa_exemplars,
    render,
)


class BreakdownReader(BaseEstimator):
    """Estimator wrapper around :func:`run`.

    ``fit`` binds the corpus that holds passage texts; ``predict`` takes
    questions and their retrieval results and returns final answers, keeping
    the full traces in ``traces_``. Questions whose final stage fails are
    predicted as ``""``.
    """

    def __init__(self, backends=None, mode: str = "ttqa_rs", shots: int = 2,
                 self_consistency_samples: int = 1, temperature: float = 0.5, template_dir=None):
        self.backends = backends
        self.mode = mode
        self.shots = shots
        self.self_consistency_samples = self_consistency_samples
        self.temperature = temperature
        self.template_dir = template_dir

    def fit(self, X: Corpus, y=None):
        if self.backends is None:
            raise ValueError("BreakdownReader requires backends")
        self.config_ = ReaderConfig(
            mode=self.mode,
            shots=self.shots,
            self_consistency_samples=self.self_consistency_samples,
            temperature=self.temperature,
        )
        self.templates_ = TemplateSet(self.template_dir)
        self.corpus_ = X
        return self

    def predict(self, questions, retrievals) -> list[str]:
        check_is_fitted(self, "corpus_")
        if len(questions) != len(retrievals):
            raise ValueError("questions and retrievals must have the same length")
        self.traces_ = []
        answers = []
        for question, retrieval in zip(questions, retrievals):
            try:
                trace = run(self.backends, retrieval, question, self.config_, self.corpus_, templates=self.templates_)
            except ReaderFailure as exc:
                trace = exc.trace
            self.traces_.append(trace)
            answers.append(trace.final_answer)
        return answers


__all__ = [
    "BACKEND_STAGES",
    "BreakdownReader",
    "DEFAULT_TEMPLATES",
    "EntityType",
    "Evidence",
    "MODES",
    "ReaderConfig",
    "ReaderFailure",
    "ReaderTrace",
    "STAGES",
    "ShotExample",
    "TemplateSet",
    "answer_question",
    "answer_subquestion",
    "decompose",
    "decompose_prompt",
    "decomposition_exemplars",
    "majority_vote",
    "parse_answer",
    "predict_entity_type",
    "qa_exemplars",
    "qa_prompt",
    "render",
    "run",
    "summarize",
    "summarize_prompt",
    "vote_counts",
]
