from __future__ import annotations

import dataclasses
import json
import random
from pathlib import Path

import pytest

from tabtextqa.backends import MockBackend
from tabtextqa.corpus import Cell, Corpus, Passage, Question, Table, load_corpus_dir
from tabtextqa.runner import load_config

FIXTURES = Path(__file__).resolve().parent / "fixtures"
GOLDEN = FIXTURES / "golden"
RANK = FIXTURES / "rank"


def make_table(tid, headers, rows, page="Page", section=""):
    """rows: lists of str or (str, [links])."""
    cells = []
    for row in rows:
        cells.append(tuple(
            Cell(c[0], tuple(c[1])) if isinstance(c, tuple) else Cell(c) for c in row
        ))
    return Table(id=tid, page_title=page, section_title=section, headers=tuple(headers), rows=tuple(cells))


@pytest.fixture
def toy_corpus() -> Corpus:
    table = make_table(
        "t1",
        ["Name", "Team", "Year"],
        [
            [("Alice Smith", ["p1"]), ("Red Hawks", ["p2", "p1"]), "1999"],
            ["Bob Jones", "Blue Sharks", "2001"],
        ],
        page="Players",
        section="Roster",
    )
    passages = (
        Passage("p1", "Alice Smith", "Alice Smith was born in Dover in 1975."),
        Passage("p2", "Red Hawks", "The Red Hawks play at Elm Park."),
    )
    question = Question("q1", "Where was the Red Hawks player born ?", "Dover", "t1", "dev")
    return Corpus(tables=(table,), passages=passages, questions=(question,), name="toy")


@pytest.fixture(scope="session")
def golden_corpus() -> Corpus:
    return load_corpus_dir(GOLDEN, name="golden")


@pytest.fixture(scope="session")
def golden_expected() -> dict:
    return json.loads((GOLDEN / "expected.json").read_text())


@pytest.fixture(scope="session")
def golden_script() -> dict:
    return json.loads((GOLDEN / "mock_script.json").read_text())


@pytest.fixture
def golden_config(tmp_path):
    """Golden ttqa_rs config writing into a temp directory, with a private cache."""

    def make(name="config.json", **changes):
        cfg = load_config(GOLDEN / name)
        changes.setdefault("output_dir", str(tmp_path / "runs"))
        return dataclasses.replace(cfg, **changes)

    return make


@pytest.fixture
def golden_mock(golden_script):
    def make(extra_rules=()):
        return MockBackend(list(extra_rules) + golden_script["rules"], backend_id="mock")

    return make


def build_hit_corpus(n_questions: int = 15, seed: int = 7) -> Corpus:
    """Tables with linked passages; gold answers sit in cells, passages, or nowhere."""
    rng = random.Random(seed)
    words = ["amber", "birch", "cedar", "delta", "ember", "fjord", "grove", "harbor", "iris", "juniper",
             "kestrel", "lumen", "maple", "north", "opal", "pine", "quartz", "river", "slate", "tundra"]
    tables, passages, questions = [], [], []
    for q in range(n_questions):
        tid, rows = f"h{q:02d}", []
        for r in range(5):
            links = []
            for j in range(rng.randint(0, 2)):
                pid = f"h{q:02d}_p{r}_{j}"
                text = " ".join(rng.sample(words, 6)) + f" token{q}x{r}x{j}"
                passages.append(Passage(pid, f"Title {q} {r} {j}", text))
                links.append(pid)
            rows.append([(f"{rng.choice(words)} {r}", links), f"{rng.choice(words)} {rng.choice(words)}"])
        tables.append(make_table(tid, ["Name", "Place"], rows, page=f"Hit table {q}"))
        kind = q % 3
        if kind == 0:
            gold = rows[rng.randrange(5)][1]
        elif kind == 1:
            linked = [p for p in passages if p.id.startswith(f"h{q:02d}_")]
            gold = linked[rng.randrange(len(linked))].text.split()[-1] if linked else "absent answer"
        else:
            gold = "nowhere to be found"
        questions.append(Question(f"hq{q:02d}", f"Which {rng.choice(words)} {rng.choice(words)} place ?", gold, tid))
    return Corpus(tables=tuple(tables), passages=tuple(passages), questions=tuple(questions), name="hit15")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
