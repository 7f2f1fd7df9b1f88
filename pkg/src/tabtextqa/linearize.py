"""Row-to-sentence linearization applied to tables before retrieval.

Template mode is deterministic: ``"<header> is <cell>"`` clauses joined by
``"; "`` and closed with a period, with an optional ``"In <page> (<section>), "``
prefix. Generative mode asks a generation backend for one sentence and falls
back to the template when the backend returns nothing. ``raw`` mode joins the
cell strings with no header context and exists only for the sentence-vs-raw
retrieval ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

from sklearn.base import BaseEstimator, TransformerMixin

from .backends.base import Backend, GenerationRequest
from .corpus import Table
from .errors import BackendError, RowIndexOutOfRange, tag_stage
from .validation import check_choice

MODES = ("template", "generative", "raw")
GENERATIVE_MAX_TOKENS = 50

_GENERATIVE_PROMPT = (
    "Rewrite the table row below as one fluent English sentence. "
    "Keep every value and explain what each value means.\n"
    "Table: {title}\n"
    "Row: {cells}\n"
    "Sentence:"
)


@dataclass(frozen=True)
class LinearizationStyle:
    mode: str = "template"
    include_title: bool = False

    def __post_init__(self):
        check_choice(self.mode, "mode", MODES)


TEMPLATE = LinearizationStyle()


def _check_row(table: Table, row_index: int) -> None:
    if not 0 <= row_index < table.n_rows:
        raise RowIndexOutOfRange(
            f"row {row_index} out of range for table {table.id!r} with {table.n_rows} rows"
        )


def _title_prefix(table: Table) -> str:
    if table.section_title:
        return f"In {table.page_title} ({table.section_title}), "
    return f"In {table.page_title}, "


def row_to_sentence(table: Table, row_index: int, style: LinearizationStyle = TEMPLATE) -> str:
    _check_row(table, row_index)
    row = table.rows[row_index]
    if style.mode == "raw":
        return " ".join(cell.text.strip() for cell in row if cell.text.strip())
    clauses = []
    for header, cell in zip(table.headers, row):
        value = cell.text.strip() or "unknown"
        clauses.append(f"{header} is {value}")
    sentence = "; ".join(clauses) + "."
    if style.include_title:
        sentence = _title_prefix(table) + sentence
    return sentence


def generative_prompt(table: Table, row_index: int) -> str:
    _check_row(table, row_index)
    cells = " | ".join(
        f"{h}: {c.text.strip() or 'unknown'}" for h, c in zip(table.headers, table.rows[row_index])
    )
    title = table.page_title + (f" ({table.section_title})" if table.section_title else "")
    return _GENERATIVE_PROMPT.format(title=title, cells=cells)


def generative_row_to_sentence(
    backend: Backend, table: Table, row_index: int, *, include_title: bool = False
) -> str:
    """One backend-written sentence for a row; template output if the backend returns blank."""
    request = GenerationRequest(
        prompt=generative_prompt(table, row_index),
        temperature=0.0,
        max_tokens=GENERATIVE_MAX_TOKENS,
        n_samples=1,
        stop_sequences=("\n",),
    )
    try:
        result = backend.generate(request)
    except BackendError as exc:
        raise tag_stage(exc, "linearize")
    text = result.samples[0].strip() if result.samples else ""
    if not text:
        return row_to_sentence(table, row_index, LinearizationStyle("template", include_title))
    return text


def linearize_table(
    table: Table, style: LinearizationStyle = TEMPLATE, backend: Backend | None = None
) -> list[str]:
    if style.mode == "generative":
        if backend is None:
            raise ValueError("generative linearization requires a generation backend")
        return [
            generative_row_to_sentence(backend, table, i, include_title=style.include_title)
            for i in range(table.n_rows)
        ]
    return [row_to_sentence(table, i, style) for i in range(table.n_rows)]


class RowLinearizer(TransformerMixin, BaseEstimator):
    """Transformer mapping a sequence of tables to per-table lists of row sentences.

    Stateless; ``fit`` only validates parameters so the object composes with
    sklearn-style pipelines.
    """

    def __init__(self, mode: str = "template", include_title: bool = False, backend: Backend | None = None):
        self.mode = mode
        self.include_title = include_title
        self.backend = backend

    def fit(self, X=None, y=None):
        self.style_ = LinearizationStyle(self.mode, self.include_title)
        if self.mode == "generative" and self.backend is None:
            raise ValueError("mode='generative' requires a backend")
        return self

    def transform(self, X):
        style = LinearizationStyle(self.mode, self.include_title)
        if isinstance(X, Table):
            X = [X]
        return [linearize_table(table, style, self.backend) for table in X]
