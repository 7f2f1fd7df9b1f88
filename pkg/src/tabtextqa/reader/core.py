"""Reader stages and the per-question pipeline.

``ttqa_rs`` mode runs five sequential stages: summarize the evidence,
decompose the question into an independent sub-question, type the expected
answers, answer the sub-question, then answer the original question with
the sub-question and its answer in the prompt. ``standard``, ``cot`` and
``ltm`` are single-prompt baselines over the same evidence. Self-consistency
samples only the final stage and takes a majority vote.
"""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources

from ..backends.base import Backend, GenerationRequest
from ..corpus import Corpus, Passage, Question
from ..errors import BackendError, EmptyDecomposition, tag_stage
from ..evaluate import normalize_answer
from ..retrieve import RetrievalResult
from ..validation import check_choice, check_positive_int, check_text, check_unit_interval
from .prompts import (
    DEFAULT_TEMPLATES,
    ShotExample,
    TemplateSet,
    decomposition_exemplars,
    format_decompose_shots,
    format_passages,
    format_qa_shots,
    format_rows,
    qa_exemplars,
    render,
    select_shots,
)

logger = logging.getLogger(__name__)

MODES = ("standard", "cot", "ltm", "ttqa_rs")
STAGES = ("summarize", "decompose", "entity_type", "sub_qa", "main_qa")
BACKEND_STAGES = ("summarize", "decompose", "sub_qa", "main_qa")


class EntityType(str, Enum):
    PERSON = "PERSON"
    DATE = "DATE"
    NUMBER = "NUMBER"
    LOCATION = "LOCATION"
    ORGANIZATION = "ORGANIZATION"
    EVENT = "EVENT"
    WORK = "WORK"
    OTHER = "OTHER"

    @property
    def hint(self) -> str:
        return self.value.lower()


@dataclass(frozen=True)
class ReaderConfig:
    mode: str = "ttqa_rs"
    shots: int = 2
    self_consistency_samples: int = 1
    temperature: float = 0.5
    decompose_shots: int = 2
    max_tokens: int = 256

    def __post_init__(self):
        check_choice(self.mode, "mode", MODES)
        check_positive_int(self.shots, "shots", allow_zero=True)
        if self.shots > len(qa_exemplars()):
            raise ValueError(f"shots={self.shots} exceeds the {len(qa_exemplars())} available exemplars")
        check_positive_int(self.decompose_shots, "decompose_shots", allow_zero=True)
        if self.decompose_shots > len(decomposition_exemplars()) - 1:
            raise ValueError("decompose_shots exceeds the available decomposition exemplars")
        n = check_positive_int(self.self_consistency_samples, "self_consistency_samples")
        if n > 1 and n % 2 == 0:
            raise ValueError("self_consistency_samples must be odd when greater than 1")
        check_unit_interval(self.temperature, "temperature")
        check_positive_int(self.max_tokens, "max_tokens")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReaderTrace:
    question_id: str
    mode: str
    summary: str = ""
    sub_question: str = ""
    sub_answer: str = ""
    entity_type_sub: str = ""
    entity_type_main: str = ""
    prompts: dict[str, str] = field(default_factory=dict)
    raw_completions: dict[str, list[str]] = field(default_factory=dict)
    final_answer: str = ""
    votes: dict[str, int] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)
    failed_stage: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReaderTrace":
        names = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class Evidence:
    """Reader-side view of a retrieval: row sentences and passage objects in rank order."""

    rows: tuple[str, ...]
    passages: tuple[Passage, ...]

    @classmethod
    def from_retrieval(cls, retrieval: RetrievalResult, corpus: Corpus) -> "Evidence":
        return cls(
            rows=tuple(r.sentence for r in retrieval.rows),
            passages=tuple(corpus.passage(p.passage_id) for p in retrieval.passages),
        )

    def slots(self) -> dict[str, str]:
        return {"rows": format_rows(self.rows), "passages": format_passages(list(self.passages))}


# -- answer parsing and voting ---------------------------------------------

_MARKER = re.compile(r"answer is|answer:", re.IGNORECASE)
_STRIP = " \t\r\n\"'`“”‘’.,;:!?*()[]"


def parse_answer(completion: str) -> str:
    """Answer span after the last "answer is" / "Answer:" marker, else the last non-empty line."""
    if not completion:
        return ""
    matches = list(_MARKER.finditer(completion))
    if matches:
        tail = completion[matches[-1].end():].strip().splitlines()
        if tail:
            answer = tail[0].strip(_STRIP)
            if answer:
                return answer
    lines = [line.strip(_STRIP) for line in completion.splitlines()]
    lines = [line for line in lines if line]
    return lines[-1] if lines else ""


def vote_counts(answers) -> dict[str, int]:
    """Votes per answer class (answers equal after normalization), keyed by first spelling."""
    if not answers:
        raise ValueError("vote_counts needs at least one answer")
    reps: dict[str, str] = {}
    counts: dict[str, int] = {}
    for ans in answers:
        key = normalize_answer(ans)
        if key not in reps:
            reps[key] = ans.strip(_STRIP) or ans
            counts[reps[key]] = 0
        counts[reps[key]] += 1
    return counts


def majority_vote(answers) -> str:
    counts = vote_counts(answers)
    best = max(counts.values())
    # dicts keep first-occurrence order, so the earliest class wins ties
    return next(rep for rep, c in counts.items() if c == best)


# -- entity typing -----------------------------------------------------------


@lru_cache(maxsize=1)
def _entity_rules() -> tuple[tuple[re.Pattern, EntityType], ...]:
    raw = json.loads(resources.files("tabtextqa").joinpath("data/entity_types.json").read_text(encoding="utf-8"))
    rules = []
    for rule in raw["rules"]:
        prefix = raw["near"] if rule.get("near") else raw["head"] if rule.get("head") else ""
        pattern = prefix + rule["pattern"]
        rules.append((re.compile(pattern, re.IGNORECASE), EntityType(rule["label"])))
    return tuple(rules)


def predict_entity_type(question: str) -> EntityType:
    """Coarse expected-answer type from a first-match-wins rule table; ``OTHER`` if nothing matches."""
    for pattern, label in _entity_rules():
        if pattern.search(question):
            return label
    return EntityType.OTHER


# -- stages ------------------------------------------------------------------


def _generate(backend: Backend, prompt: str, stage: str, config: ReaderConfig, *, n: int = 1, max_tokens=None):
    request = GenerationRequest(
        prompt=prompt,
        temperature=config.temperature,
        max_tokens=max_tokens or config.max_tokens,
        n_samples=n,
    )
    try:
        return list(backend.generate(request).samples)
    except BackendError as exc:
        raise tag_stage(exc, stage)


def summarize_prompt(rows, passages, templates: TemplateSet = DEFAULT_TEMPLATES) -> str:
    rows, passages = list(rows), list(passages)
    if not rows and not passages:
        raise ValueError("summarize needs at least one row or passage")
    return render(templates.get("ttqa_rs.summarize"), rows=format_rows(rows), passages=format_passages(passages))


def summarize(backend: Backend, rows, passages, config: ReaderConfig = ReaderConfig(), *, trace=None,
              templates: TemplateSet = DEFAULT_TEMPLATES) -> str:
    """Zero-shot summary of the retrieved rows (sentences) and passages."""
    prompt = summarize_prompt(rows, passages, templates)
    if trace is not None:
        trace.prompts["summarize"] = prompt
    samples = _generate(backend, prompt, "summarize", config)
    if trace is not None:
        trace.raw_completions["summarize"] = samples
    return samples[0].strip()


def decompose_prompt(question: str, shots: int = 2, templates: TemplateSet = DEFAULT_TEMPLATES) -> str:
    chosen = select_shots(decomposition_exemplars(), shots, exclude_question=question)
    return render(templates.get("ttqa_rs.decompose"), shots=format_decompose_shots(chosen), question=question)


def _clean_sub_question(completion: str) -> str:
    for line in completion.splitlines():
        line = line.strip()
        if line.lower().startswith("sub-question:"):
            line = line[len("sub-question:"):].strip()
        if line:
            return line.strip("\"'“”")
    return ""


def decompose(backend: Backend, question: str, shots: int = 2, config: ReaderConfig = ReaderConfig(), *,
              trace=None, templates: TemplateSet = DEFAULT_TEMPLATES) -> str:
    """Independent sub-question for ``question``; raises :class:`EmptyDecomposition` on blank output."""
    check_text(question, "question")
    prompt = decompose_prompt(question, shots, templates)
    if trace is not None:
        trace.prompts["decompose"] = prompt
    samples = _generate(backend, prompt, "decompose", config, max_tokens=64)
    if trace is not None:
        trace.raw_completions["decompose"] = samples
    sub = _clean_sub_question(samples[0])
    if not sub:
        raise EmptyDecomposition(f"blank decomposition for {question!r}")
    return sub


def qa_prompt(
    mode: str,
    evidence: Evidence,
    question: str,
    shots: list[ShotExample],
    *,
    summary: str = "",
    entity_type: EntityType | None = None,
    sub_question: str = "",
    sub_answer: str = "",
    stage: str = "main_qa",
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> str:
    """Assemble a QA prompt; ``stage="sub_qa"`` uses the sub-question template of ``ttqa_rs``."""
    check_choice(mode, "mode", MODES)
    slots = evidence.slots()
    slots["shots"] = format_qa_shots(shots, mode)
    if mode == "ttqa_rs":
        slots["summary"] = summary
        slots["entity_type"] = entity_type.hint if entity_type is not None else ""
        if stage == "sub_qa":
            slots["sub_question"] = question
            return render(templates.get("ttqa_rs.sub_qa"), **slots)
        slots.update(sub_question=sub_question, sub_answer=sub_answer)
    slots["question"] = question
    return render(templates.get(f"{mode}.main_qa"), **slots)


def answer_subquestion(backend: Backend, evidence: Evidence, summary: str, sub_question: str,
                       entity_type: EntityType, shots, config: ReaderConfig = ReaderConfig(), *, trace=None,
                       templates: TemplateSet = DEFAULT_TEMPLATES) -> str:
    check_text(sub_question, "sub_question")
    prompt = qa_prompt("ttqa_rs", evidence, sub_question, list(shots), summary=summary,
                       entity_type=entity_type, stage="sub_qa", templates=templates)
    if trace is not None:
        trace.prompts["sub_qa"] = prompt
    samples = _generate(backend, prompt, "sub_qa", config)
    if trace is not None:
        trace.raw_completions["sub_qa"] = samples
    answer = parse_answer(samples[0])
    if not answer and trace is not None:
        trace.flags.append("sub_qa_unparsable")
    return answer


def answer_question(backend: Backend, evidence: Evidence, summary: str, question: str,
                    entity_type: EntityType | None, sub_question: str, sub_answer: str, shots,
                    config: ReaderConfig = ReaderConfig(), *, trace=None,
                    templates: TemplateSet = DEFAULT_TEMPLATES) -> str:
    """Final answer for ``question`` in ``config.mode``, majority-voted over the sampled completions."""
    check_text(question, "question")
    prompt = qa_prompt(config.mode, evidence, question, list(shots), summary=summary, entity_type=entity_type,
                       sub_question=sub_question, sub_answer=sub_answer, templates=templates)
    if trace is not None:
        trace.prompts["main_qa"] = prompt
    samples = _generate(backend, prompt, "main_qa", config, n=config.self_consistency_samples)
    if trace is not None:
        trace.raw_completions["main_qa"] = samples
    answers = [parse_answer(s) for s in samples]
    counts = vote_counts(answers)
    final = majority_vote(answers)
    if trace is not None:
        trace.votes = counts
        if not final:
            trace.flags.append("main_qa_unparsable")
    return final


def _backend_for(backends, stage: str) -> Backend:
    if isinstance(backends, Backend):
        return backends
    if isinstance(backends, Mapping):
        if stage in backends:
            return backends[stage]
        if "default" in backends:
            return backends["default"]
    raise KeyError(f"no backend routed for stage {stage!r}")


class ReaderFailure(BackendError):
    """The final stage failed; ``trace`` holds everything produced before the failure."""

    def __init__(self, cause: BackendError, trace: ReaderTrace):
        super().__init__(cause.message, status=cause.status, stage=cause.stage)
        self.trace = trace


def run(backends, retrieval: RetrievalResult, question: Question, config: ReaderConfig, corpus: Corpus, *,
        templates: TemplateSet = DEFAULT_TEMPLATES) -> ReaderTrace:
    """Run the reader for one question.

    Non-final stage failures fall back and are recorded in ``trace.errors``
    and ``trace.flags``; a final-stage failure raises :class:`ReaderFailure`.
    """
    trace = ReaderTrace(question_id=question.id, mode=config.mode)
    evidence = Evidence.from_retrieval(retrieval, corpus)
    shots = qa_exemplars()[: config.shots]
    summary = sub_question = sub_answer = ""
    main_type = None

    if config.mode == "ttqa_rs":
        if evidence.rows or evidence.passages:
            try:
                summary = summarize(_backend_for(backends, "summarize"), evidence.rows, evidence.passages,
                                    config, trace=trace, templates=templates)
            except BackendError as exc:
                trace.errors["summarize"] = str(exc)
                trace.flags.append("summarize_fallback_empty")
        trace.summary = summary

        try:
            sub_question = decompose(_backend_for(backends, "decompose"), question.text, config.decompose_shots,
                                     config, trace=trace, templates=templates)
        except (BackendError, EmptyDecomposition) as exc:
            trace.errors["decompose"] = str(exc)
            trace.flags.append("decompose_fallback_original_question")
            sub_question = question.text
        trace.sub_question = sub_question

        sub_type = predict_entity_type(sub_question)
        main_type = predict_entity_type(question.text)
        trace.entity_type_sub, trace.entity_type_main = sub_type.value, main_type.value

        try:
            sub_answer = answer_subquestion(_backend_for(backends, "sub_qa"), evidence, summary, sub_question,
                                            sub_type, shots, config, trace=trace, templates=templates)
        except BackendError as exc:
            trace.errors["sub_qa"] = str(exc)
            trace.flags.append("sub_qa_fallback_empty")
        trace.sub_answer = sub_answer

    try:
        trace.final_answer = answer_question(_backend_for(backends, "main_qa"), evidence, summary, question.text,
                                             main_type, sub_question, sub_answer, shots, config, trace=trace,
                                             templates=templates)
    except BackendError as exc:
        trace.errors["main_qa"] = str(exc)
        trace.failed_stage = "main_qa"
        raise ReaderFailure(exc, trace) from exc
    return trace
