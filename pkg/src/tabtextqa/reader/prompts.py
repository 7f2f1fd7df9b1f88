"""Prompt templates, slot rendering and few-shot exemplars.

Templates are UTF-8 text files named ``<mode>.<stage>.txt`` with ``{{slot}}``
placeholders. A line whose slot renders empty is dropped as a whole, so an
absent section (no passages, no summary in baseline modes) leaves no stub.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from ..corpus import Passage

SLOTS = ("rows", "passages", "summary", "entity_type", "sub_question", "sub_answer", "shots", "question")
TEMPLATE_NAMES = (
    "ttqa_rs.summarize",
    "ttqa_rs.decompose",
    "ttqa_rs.sub_qa",
    "ttqa_rs.main_qa",
    "cot.main_qa",
    "standard.main_qa",
    "ltm.main_qa",
)
_SLOT = re.compile(r"\{\{\s*(\w+)\s*\}\}")


@dataclass(frozen=True)
class ShotExample:
    question: str
    answer: str = ""
    context: str = ""
    reasoning: str = ""
    sub_question: str = ""


class TemplateSet:
    """Lookup of prompt templates, from the packaged defaults or an override directory."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._cache: dict[str, str] = {}

    def get(self, name: str) -> str:
        if name not in self._cache:
            if self.directory is not None and (self.directory / f"{name}.txt").exists():
                text = (self.directory / f"{name}.txt").read_text(encoding="utf-8")
            else:
                text = (
                    resources.files("tabtextqa.reader")
                    .joinpath(f"templates/{name}.txt")
                    .read_text(encoding="utf-8")
                )
            self._cache[name] = text
        return self._cache[name]

    def hashes(self) -> dict[str, str]:
        return {name: hashlib.sha256(self.get(name).encode("utf-8")).hexdigest() for name in TEMPLATE_NAMES}


DEFAULT_TEMPLATES = TemplateSet()


def render(template: str, **slots: str) -> str:
    unknown = set(slots) - set(SLOTS)
    if unknown:
        raise KeyError(f"unknown template slots: {sorted(unknown)}")
    out_lines = []
    for line in template.splitlines():
        names = _SLOT.findall(line)
        if names and any(not slots.get(n, "") for n in names):
            continue
        out_lines.append(_SLOT.sub(lambda m: slots.get(m.group(1), ""), line))
    return "\n".join(out_lines)


def format_rows(sentences) -> str:
    sentences = [s for s in sentences if s]
    if not sentences:
        return ""
    return "Table rows:\n" + "\n".join(f"- {s}" for s in sentences)


def format_passages(passages: list[Passage]) -> str:
    if not passages:
        return ""
    lines = ["Passages:"]
    for p in passages:
        lines.append(f"- [{p.title}] {p.text}" if p.title else f"- {p.text}")
    return "\n".join(lines)


def format_qa_shots(shots, mode: str) -> str:
    """Exemplar block for a QA prompt.

    Standard shots give the bare answer. Other modes insert reasoning before
    the same answer tokens, so a standard block is always a token
    subsequence of the matching reasoning block.
    """
    blocks = []
    for i, shot in enumerate(shots, 1):
        if mode == "standard" or not shot.reasoning:
            answer = shot.answer
        elif mode == "ltm" and shot.sub_question:
            answer = (
                f"Let's break the question down. First: {shot.sub_question} "
                f"{shot.reasoning} So the answer is {shot.answer}"
            )
        else:
            answer = f"Let's think step by step. {shot.reasoning} So the answer is {shot.answer}"
        blocks.append(f"Example {i}\nContext: {shot.context}\nQuestion: {shot.question}\nAnswer: {answer}")
    return "\n".join(blocks)


def format_decompose_shots(shots) -> str:
    return "\n".join(f"Question: {s.question}\nSub-question: {s.sub_question}" for s in shots)


@lru_cache(maxsize=1)
def _exemplar_data() -> dict:
    raw = resources.files("tabtextqa").joinpath("data/exemplars.json").read_text(encoding="utf-8")
    return json.loads(raw)


def qa_exemplars() -> list[ShotExample]:
    return [ShotExample(**d) for d in _exemplar_data()["qa"]]


def decomposition_exemplars() -> list[ShotExample]:
    return [ShotExample(question=d["question"], sub_question=d["sub_question"]) for d in _exemplar_data()["decomposition"]]


def select_shots(pool, n: int, exclude_question: str | None = None) -> list[ShotExample]:
    """First ``n`` exemplars of ``pool``, skipping one whose question equals ``exclude_question``."""
    key = " ".join(exclude_question.split()).lower() if exclude_question else None
    chosen = [s for s in pool if key is None or " ".join(s.question.split()).lower() != key]
    return chosen[:n]
