"""Data model for linked table-text corpora and the canonical JSON-lines format.

The canonical format is three UTF-8 JSON-lines files::

    tables.jsonl     {id, page_title, section_title, headers: [...],
                      rows: [[{text, links: [...]}, ...], ...]}
    passages.jsonl   {id, title, text}
    questions.jsonl  {id, text, gold_answer, table_id, split}

Unknown fields are ignored. Converters from the public dataset dumps live in
:mod:`tabtextqa.ingest`; everything else in the package reads this format only.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .errors import CorpusWarning, MalformedRecord, RowIndexOutOfRange, UnknownTable

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Cell:
    text: str
    link_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Table:
    id: str
    page_title: str
    section_title: str
    headers: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...]

    @property
    def n_rows(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str

    @property
    def content(self) -> str:
        """Title and body as one string, the form that gets embedded and scored."""
        if self.title:
            return f"{self.title}. {self.text}"
        return self.text


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answer: str
    table_id: str
    split: str = "dev"


@dataclass
class LoadReport:
    """Counters collected while loading; not part of corpus equality."""

    n_tables: int = 0
    n_passages: int = 0
    n_questions: int = 0
    dangling_links: list[tuple[str, int, int, str]] = field(default_factory=list)

    @property
    def n_dangling(self) -> int:
        return len(self.dangling_links)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tables": self.n_tables,
            "passages": self.n_passages,
            "questions": self.n_questions,
            "dangling_links": [
                {"table_id": t, "row": r, "cell": c, "link": link}
                for t, r, c, link in self.dangling_links
            ],
        }


@dataclass(frozen=True)
class Corpus:
    """Immutable collection of tables, passages and questions.

    Tables and passages are stored as tuples in file order so that invariant
    violations such as duplicate ids stay representable for
    :func:`validate_corpus`; id lookups go through ``table()``/``passage()``.
    """

    tables: tuple[Table, ...]
    passages: tuple[Passage, ...]
    questions: tuple[Question, ...]
    name: str = "corpus"
    load_report: LoadReport = field(default_factory=LoadReport, compare=False, repr=False)
    _table_index: dict = field(default=None, init=False, compare=False, repr=False)
    _passage_index: dict = field(default=None, init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_table_index", {t.id: t for t in self.tables})
        object.__setattr__(self, "_passage_index", {p.id: p for p in self.passages})

    def table(self, table_id: str) -> Table:
        try:
            return self._table_index[table_id]
        except KeyError:
            raise UnknownTable(table_id) from None

    def passage(self, passage_id: str) -> Passage:
        return self._passage_index[passage_id]

    def has_table(self, table_id: str) -> bool:
        return table_id in self._table_index

    def has_passage(self, passage_id: str) -> bool:
        return passage_id in self._passage_index

    def question(self, question_id: str) -> Question:
        for q in self.questions:
            if q.id == question_id:
                return q
        raise KeyError(question_id)


@dataclass(frozen=True)
class Violation:
    entity_id: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.entity_id}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


def validate_corpus(corpus: Corpus) -> list[Violation]:
    """Check every corpus invariant and return the violations found (empty if valid)."""
    out: list[Violation] = []
    seen_tables: set[str] = set()
    for table in corpus.tables:
        if table.id in seen_tables:
            out.append(Violation(table.id, "duplicate table id"))
        seen_tables.add(table.id)
        if not table.headers:
            out.append(Violation(table.id, "headers empty"))
        for r, row in enumerate(table.rows):
            if len(row) != len(table.headers):
                out.append(
                    Violation(
                        table.id,
                        "row cell count differs from header count",
                        f"row {r}: {len(row)} cells, {len(table.headers)} headers",
                    )
                )
            for c, cell in enumerate(row):
                for link in cell.link_ids:
                    if not corpus.has_passage(link):
                        out.append(
                            Violation(table.id, "dangling link", f"row {r} cell {c} -> {link}")
                        )

    seen_passages: set[str] = set()
    for passage in corpus.passages:
        if passage.id in seen_passages:
            out.append(Violation(passage.id, "duplicate passage id"))
        elif passage.id in seen_tables:
            out.append(Violation(passage.id, "passage id collides with a table id"))
        seen_passages.add(passage.id)
        if not passage.text.strip():
            out.append(Violation(passage.id, "passage text empty"))

    seen_questions: set[str] = set()
    for q in corpus.questions:
        if q.id in seen_questions:
            out.append(Violation(q.id, "duplicate question id"))
        seen_questions.add(q.id)
        if not corpus.has_table(q.table_id):
            out.append(Violation(q.id, "question table_id does not resolve", q.table_id))
        if q.split not in SPLITS:
            out.append(Violation(q.id, "unknown split", q.split))
        if q.split in ("train", "dev") and not q.gold_answer.strip():
            out.append(Violation(q.id, "gold answer empty"))
    return out


def linked_passages(corpus: Corpus, table_id: str, row_index: int) -> list[Passage]:
    """Passages hyperlinked from one row, in cell order then link order, deduplicated."""
    table = corpus.table(table_id)
    if not 0 <= row_index < table.n_rows:
        raise RowIndexOutOfRange(
            f"row {row_index} out of range for table {table_id!r} with {table.n_rows} rows"
        )
    out: list[Passage] = []
    seen: set[str] = set()
    for cell in table.rows[row_index]:
        for link in cell.link_ids:
            if link in seen or not corpus.has_passage(link):
                continue
            seen.add(link)
            out.append(corpus.passage(link))
    return out


# -- canonical format --------------------------------------------------------


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON ({exc.msg})", path=str(path), index=index)
            if not isinstance(record, dict):
                raise MalformedRecord("record is not a JSON object", path=str(path), index=index)
            yield index, record


def _require(record: dict, key: str, kind: type, path: Path, index: int):
    if key not in record:
        raise MalformedRecord(f"missing field {key!r}", path=str(path), index=index)
    value = record[key]
    if not isinstance(value, kind):
        raise MalformedRecord(
            f"field {key!r} must be {kind.__name__}, got {type(value).__name__}",
            path=str(path),
            index=index,
        )
    return value


def _parse_passage(record: dict, path: Path, index: int) -> Passage:
    pid = _require(record, "id", str, path, index)
    text = _require(record, "text", str, path, index)
    if not text.strip():
        raise MalformedRecord(f"passage {pid!r} has empty text", path=str(path), index=index)
    title = record.get("title", "") or ""
    return Passage(id=pid, title=str(title), text=text)


def _parse_table(
    record: dict, path: Path, index: int, passage_ids: set[str], report: LoadReport
) -> Table:
    tid = _require(record, "id", str, path, index)
    headers = _require(record, "headers", list, path, index)
    if not headers:
        raise MalformedRecord(f"table {tid!r} has no headers", path=str(path), index=index)
    raw_rows = _require(record, "rows", list, path, index)
    rows = []
    for r, raw_row in enumerate(raw_rows):
        if not isinstance(raw_row, list) or len(raw_row) != len(headers):
            raise MalformedRecord(
                f"table {tid!r} row {r} must have {len(headers)} cells",
                path=str(path),
                index=index,
            )
        cells = []
        for c, raw_cell in enumerate(raw_row):
            if isinstance(raw_cell, str):
                raw_cell = {"text": raw_cell}
            if not isinstance(raw_cell, dict) or not isinstance(raw_cell.get("text", ""), str):
                raise MalformedRecord(
                    f"table {tid!r} row {r} cell {c} is not a {{text, links}} object",
                    path=str(path),
                    index=index,
                )
            links = []
            for link in raw_cell.get("links", []) or []:
                link = str(link)
                if link in passage_ids:
                    links.append(link)
                else:
                    report.dangling_links.append((tid, r, c, link))
            cells.append(Cell(text=raw_cell.get("text", ""), link_ids=tuple(links)))
        rows.append(tuple(cells))
    return Table(
        id=tid,
        page_title=str(record.get("page_title", "") or ""),
        section_title=str(record.get("section_title", "") or ""),
        headers=tuple(str(h) for h in headers),
        rows=tuple(rows),
    )


def _parse_question(record: dict, path: Path, index: int, forced_split: str | None) -> Question:
    qid = _require(record, "id", str, path, index)
    text = _require(record, "text", str, path, index)
    table_id = _require(record, "table_id", str, path, index)
    split = forced_split or record.get("split", "dev")
    if split not in SPLITS:
        raise MalformedRecord(f"question {qid!r} has unknown split {split!r}", path=str(path), index=index)
    gold = record.get("gold_answer", "")
    if gold is None:
        gold = ""
    if not isinstance(gold, str):
        raise MalformedRecord(f"question {qid!r} gold_answer must be a string", path=str(path), index=index)
    if split in ("train", "dev") and not gold.strip():
        raise MalformedRecord(
            f"question {qid!r} in split {split!r} has no gold answer", path=str(path), index=index
        )
    return Question(id=qid, text=text, gold_answer=gold, table_id=table_id, split=split)


def _load_canonical(
    table_file_path, passage_file_path, question_file_path, *, name: str | None, forced_split: str | None
) -> Corpus:
    table_path, passage_path, question_path = map(Path, (table_file_path, passage_file_path, question_file_path))
    report = LoadReport()

    passages: list[Passage] = []
    passage_lines: dict[str, int] = {}
    for index, record in _iter_jsonl(passage_path):
        p = _parse_passage(record, passage_path, index)
        if p.id in passage_lines:
            raise MalformedRecord(
                f"duplicate passage id {p.id!r} (first at line {passage_lines[p.id] + 1})",
                path=str(passage_path),
                index=index,
            )
        passage_lines[p.id] = index
        passages.append(p)
    passage_ids = set(passage_lines)

    tables: list[Table] = []
    table_ids: set[str] = set()
    for index, record in _iter_jsonl(table_path):
        t = _parse_table(record, table_path, index, passage_ids, report)
        if t.id in table_ids:
            raise MalformedRecord(f"duplicate table id {t.id!r}", path=str(table_path), index=index)
        if t.id in passage_ids:
            raise MalformedRecord(f"table id {t.id!r} collides with a passage id", path=str(table_path), index=index)
        table_ids.add(t.id)
        tables.append(t)

    questions: list[Question] = []
    question_ids: set[str] = set()
    for index, record in _iter_jsonl(question_path):
        q = _parse_question(record, question_path, index, forced_split)
        if q.table_id not in table_ids:
            raise MalformedRecord(
                f"question {q.id!r} references unknown table {q.table_id!r}",
                path=str(question_path),
                index=index,
            )
        if q.id in question_ids:
            raise MalformedRecord(f"duplicate question id {q.id!r}", path=str(question_path), index=index)
        question_ids.add(q.id)
        questions.append(q)

    report.n_tables, report.n_passages, report.n_questions = len(tables), len(passages), len(questions)
    if report.n_dangling:
        warnings.warn(
            f"dropped {report.n_dangling} dangling link(s) while loading {table_path}",
            CorpusWarning,
            stacklevel=3,
        )
    if not questions:
        warnings.warn(f"no questions found in {question_path}", CorpusWarning, stacklevel=3)
    logger.info(
        "loaded corpus: %d tables, %d passages, %d questions, %d dangling links",
        len(tables), len(passages), len(questions), report.n_dangling,
    )
    return Corpus(
        tables=tuple(tables),
        passages=tuple(passages),
        questions=tuple(questions),
        name=name or table_path.parent.name or "corpus",
        load_report=report,
    )


def load_hybridqa(table_file_path, passage_file_path, question_file_path, *, name: str | None = None) -> Corpus:
    """Load a HybridQA-style corpus from canonical JSON-lines files.

    Raises :class:`MalformedRecord` for unparsable or invariant-violating
    records. Cell links to unknown passages are dropped and listed in
    ``corpus.load_report.dangling_links`` with a :class:`CorpusWarning`.
    """
    return _load_canonical(
        table_file_path, passage_file_path, question_file_path, name=name, forced_split=None
    )


def load_ottqa_dev(table_file_path, passage_file_path, question_file_path, *, name: str | None = None) -> Corpus:
    """Load an OTT-QA development-set corpus; every question is forced to ``split="dev"``."""
    return _load_canonical(
        table_file_path, passage_file_path, question_file_path, name=name, forced_split="dev"
    )


def load_corpus_dir(directory, *, fmt: str = "hybridqa", name: str | None = None) -> Corpus:
    directory = Path(directory)
    loader = load_ottqa_dev if fmt == "ottqa_dev" else load_hybridqa
    return loader(
        directory / "tables.jsonl",
        directory / "passages.jsonl",
        directory / "questions.jsonl",
        name=name or directory.name,
    )


def table_to_record(table: Table) -> dict:
    return {
        "id": table.id,
        "page_title": table.page_title,
        "section_title": table.section_title,
        "headers": list(table.headers),
        "rows": [[{"text": c.text, "links": list(c.link_ids)} for c in row] for row in table.rows],
    }


def write_corpus(corpus: Corpus, directory) -> dict[str, Path]:
    """Export ``corpus`` to canonical files in ``directory``; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "tables": directory / "tables.jsonl",
        "passages": directory / "passages.jsonl",
        "questions": directory / "questions.jsonl",
    }
    records = {
        "tables": [table_to_record(t) for t in corpus.tables],
        "passages": [{"id": p.id, "title": p.title, "text": p.text} for p in corpus.passages],
        "questions": [
            {"id": q.id, "text": q.text, "gold_answer": q.gold_answer, "table_id": q.table_id, "split": q.split}
            for q in corpus.questions
        ],
    }
    for key, path in paths.items():
        with open(path, "w", encoding="utf-8") as fh:
            for record in records[key]:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return paths
