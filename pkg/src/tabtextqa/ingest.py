"""Adapters from raw public-dataset dumps to the canonical corpus files.

Two raw layouts are recognised.

``hybridqa``: a directory holding ``tables_tok/`` (or ``tables/``) with one
``<table_id>.json`` per table, ``request_tok/`` (or ``request/``) with one
``<table_id>.json`` mapping link ids to passage text, and question files
``train.json`` / ``dev.json`` / ``test.json``, either at the top level or
under ``released_data/``. A table file looks like::

    {"title": ..., "section_title": ..., "header": [[name, links], ...],
     "data": [[[cell_text, [link, ...]], ...], ...]}

``ottqa``: ``traindev_tables.json`` (table id -> table object as above),
``traindev_request.json`` (link id -> passage text) and ``dev.json``.

Question records carry ``question_id``, ``question``, ``table_id`` and
``answer-text``. Headers and cells may also be plain strings.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Cell, Corpus, Passage, Question, Table, write_corpus
from .errors import MalformedRecord

logger = logging.getLogger(__name__)

FORMATS = ("hybridqa", "ottqa")
_SPLITS = ("train", "dev", "test")


@dataclass
class IngestReport:
    format: str
    n_tables: int = 0
    n_passages: int = 0
    n_questions: int = 0
    questions_per_split: dict = field(default_factory=dict)
    dangling_links: list = field(default_factory=list)
    conflicting_passages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": self.format,
            "n_tables": self.n_tables,
            "n_passages": self.n_passages,
            "n_questions": self.n_questions,
            "questions_per_split": dict(self.questions_per_split),
            "n_dangling_links": len(self.dangling_links),
            "dangling_links": [list(d) for d in self.dangling_links],
            "conflicting_passages": list(self.conflicting_passages),
        }


def _read_json(path: Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON ({exc.msg})", path=str(path), index=exc.lineno - 1) from None


def _title_from_link(link: str) -> str:
    # raw link ids look like "/wiki/Andrew_Voss"; the readable part makes a usable passage title
    tail = link.rsplit("/", 1)[-1]
    return tail.replace("_", " ").strip()


def _split_cell(raw, path: Path, index: int) -> tuple[str, list[str]]:
    if isinstance(raw, str):
        return raw, []
    if isinstance(raw, (list, tuple)) and len(raw) == 2 and isinstance(raw[0], str) and isinstance(raw[1], list):
        return raw[0], [str(x) for x in raw[1]]
    if isinstance(raw, dict) and isinstance(raw.get("text", ""), str):
        return raw.get("text", ""), [str(x) for x in raw.get("links", []) or []]
    raise MalformedRecord(f"unrecognised cell {raw!r:.60}", path=str(path), index=index)


def _convert_table(tid: str, raw: dict, passage_ids: set[str], report: IngestReport, path: Path, index: int) -> Table:
    if not isinstance(raw, dict):
        raise MalformedRecord(f"table {tid!r} is not a JSON object", path=str(path), index=index)
    if "header" not in raw or "data" not in raw:
        raise MalformedRecord(f"table {tid!r} needs 'header' and 'data'", path=str(path), index=index)
    headers = [_split_cell(h, path, index)[0] for h in raw["header"]]
    if not headers:
        raise MalformedRecord(f"table {tid!r} has no headers", path=str(path), index=index)
    rows = []
    for r, raw_row in enumerate(raw["data"]):
        if not isinstance(raw_row, list) or len(raw_row) != len(headers):
            raise MalformedRecord(f"table {tid!r} row {r} must have {len(headers)} cells", path=str(path), index=index)
        cells = []
        for c, raw_cell in enumerate(raw_row):
            text, links = _split_cell(raw_cell, path, index)
            kept = []
            for link in links:
                if link in passage_ids:
                    kept.append(link)
                else:
                    report.dangling_links.append((tid, r, c, link))
            cells.append(Cell(text=text, link_ids=tuple(kept)))
        rows.append(tuple(cells))
    return Table(
        id=tid,
        page_title=str(raw.get("title", "") or ""),
        section_title=str(raw.get("section_title", "") or ""),
        headers=tuple(headers),
        rows=tuple(rows),
    )


def _add_passages(mapping, passages: dict[str, Passage], report: IngestReport, path: Path) -> None:
    if not isinstance(mapping, dict):
        raise MalformedRecord("passage file must map link ids to text", path=str(path), index=0)
    for link, text in mapping.items():
        if not isinstance(text, str):
            raise MalformedRecord(f"passage {link!r} text is not a string", path=str(path), index=0)
        if not text.strip():
            continue
        if link in passages:
            if passages[link].text != text:
                report.conflicting_passages.append(link)
            continue
        passages[link] = Passage(id=link, title=_title_from_link(link), text=text)


def _convert_questions(records, split: str | None, path: Path, table_ids: set[str]) -> list[Question]:
    if not isinstance(records, list):
        raise MalformedRecord("question file must hold a JSON list", path=str(path), index=0)
    out = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise MalformedRecord("question record is not an object", path=str(path), index=i)
        for key in ("question_id", "question", "table_id"):
            if key not in rec:
                raise MalformedRecord(f"question record {i} missing {key!r}", path=str(path), index=i)
        if rec["table_id"] not in table_ids:
            raise MalformedRecord(
                f"question {rec['question_id']!r} references unknown table {rec['table_id']!r}", path=str(path), index=i
            )
        q_split = split or rec.get("split", "dev")
        gold = rec.get("answer-text", rec.get("answer", "")) or ""
        if q_split != "test" and not str(gold).strip():
            raise MalformedRecord(f"question {rec['question_id']!r} has no answer-text", path=str(path), index=i)
        out.append(Question(id=str(rec["question_id"]), text=rec["question"], gold_answer=str(gold),
                            table_id=rec["table_id"], split=q_split))
    return out


def _first_existing(base: Path, names) -> Path | None:
    for name in names:
        if (base / name).exists():
            return base / name
    return None


def _ingest_hybridqa(src: Path, report: IngestReport) -> Corpus:
    table_dir = _first_existing(src, ("tables_tok", "tables"))
    request_dir = _first_existing(src, ("request_tok", "request"))
    qdir = _first_existing(src, ("released_data",)) or src
    question_files = [(s, qdir / f"{s}.json") for s in _SPLITS if (qdir / f"{s}.json").exists()]
    missing = []
    if table_dir is None:
        missing.append(str(src / "tables_tok/"))
    if request_dir is None:
        missing.append(str(src / "request_tok/"))
    if not question_files:
        missing.append(str(qdir / "{train,dev,test}.json"))
    if missing:
        raise FileNotFoundError("missing input: " + ", ".join(missing))

    passages: dict[str, Passage] = {}
    for path in sorted(request_dir.glob("*.json")):
        _add_passages(_read_json(path), passages, report, path)
    pids = set(passages)
    tables = []
    for path in sorted(table_dir.glob("*.json")):
        tables.append(_convert_table(path.stem, _read_json(path), pids, report, path, 0))
    table_ids = {t.id for t in tables}
    questions = []
    for split, path in question_files:
        questions += _convert_questions(_read_json(path), split, path, table_ids)
    return Corpus(tables=tuple(tables), passages=tuple(passages.values()), questions=tuple(questions), name=src.name)


def _ingest_ottqa(src: Path, report: IngestReport) -> Corpus:
    names = ("traindev_tables.json", "traindev_request.json", "dev.json")
    missing = [str(src / n) for n in names if not (src / n).exists()]
    if missing:
        raise FileNotFoundError("missing input: " + ", ".join(missing))
    passages: dict[str, Passage] = {}
    _add_passages(_read_json(src / names[1]), passages, report, src / names[1])
    pids = set(passages)
    raw_tables = _read_json(src / names[0])
    if not isinstance(raw_tables, dict):
        raise MalformedRecord("table file must map table ids to tables", path=str(src / names[0]), index=0)
    tables = [_convert_table(tid, raw, pids, report, src / names[0], i) for i, (tid, raw) in enumerate(raw_tables.items())]
    table_ids = {t.id for t in tables}
    questions = _convert_questions(_read_json(src / names[2]), "dev", src / names[2], table_ids)
    return Corpus(tables=tuple(tables), passages=tuple(passages.values()), questions=tuple(questions), name=src.name)


def ingest(fmt: str, input_dir, output_dir) -> IngestReport:
    """Convert a raw dump to canonical files plus ``ingest_report.json`` in ``output_dir``."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown source format {fmt!r}; expected one of {FORMATS}")
    src = Path(input_dir)
    if not src.is_dir():
        raise FileNotFoundError(f"input directory not found: {src}")
    report = IngestReport(format=fmt)
    corpus = _ingest_hybridqa(src, report) if fmt == "hybridqa" else _ingest_ottqa(src, report)
    report.n_tables, report.n_passages, report.n_questions = len(corpus.tables), len(corpus.passages), len(corpus.questions)
    for q in corpus.questions:
        report.questions_per_split[q.split] = report.questions_per_split.get(q.split, 0) + 1
    out = Path(output_dir)
    write_corpus(corpus, out)
    (out / "ingest_report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("ingested %d tables, %d passages, %d questions (%d dangling links)",
                report.n_tables, report.n_passages, report.n_questions, len(report.dangling_links))
    return report
