"""Retrieve-then-read multi-hop question answering over linked tables and text."""

from .corpus import (
    Cell,
    Corpus,
    LoadReport,
    Passage,
    Question,
    Table,
    linked_passages,
    load_corpus_dir,
    load_hybridqa,
    load_ottqa_dev,
    validate_corpus,
    write_corpus,
)
from .evaluate import EvalReport, compare_ablations, evaluate_run, exact_match, hit_at_k, normalize_answer, token_f1
from .linearize import LinearizationStyle, RowLinearizer, linearize_table, row_to_sentence
from .pipeline import TableTextQA
from .reader import BreakdownReader, ReaderConfig, ReaderTrace, majority_vote
from .retrieve import RetrievalResult, RetrieverConfig, TableTextRetriever, combine_embeddings, retrieve

__version__ = "0.1.0"

__all__ = [
    "BreakdownReader",
    "Cell",
    "Corpus",
    "EvalReport",
    "LinearizationStyle",
    "LoadReport",
    "Passage",
    "Question",
    "ReaderConfig",
    "ReaderTrace",
    "RetrievalResult",
    "RetrieverConfig",
    "RowLinearizer",
    "Table",
    "TableTextQA",
    "TableTextRetriever",
    "combine_embeddings",
    "compare_ablations",
    "evaluate_run",
    "exact_match",
    "hit_at_k",
    "linked_passages",
    "linearize_table",
    "load_corpus_dir",
    "load_hybridqa",
    "load_ottqa_dev",
    "majority_vote",
    "normalize_answer",
    "retrieve",
    "row_to_sentence",
    "token_f1",
    "validate_corpus",
    "write_corpus",
]
