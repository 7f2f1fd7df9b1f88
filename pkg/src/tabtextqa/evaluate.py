"""Answer normalization, EM / token F1, HIT@k, run reports and ablation tables.

Normalization follows the usual extractive-QA convention: lowercase, strip
ASCII punctuation, drop the articles ``a``/``an``/``the``, collapse
whitespace.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass, field

from .corpus import Corpus, linked_passages
from .errors import MissingTrace, MismatchedCorpus
from .retrieve import RetrievalResult
from .validation import check_positive_int

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def token_f1(pred: str, gold: str) -> float:
    pred_toks = normalize_answer(pred).split()
    gold_toks = normalize_answer(gold).split()
    if not pred_toks or not gold_toks:
        return float(pred_toks == gold_toks)
    overlap = sum((Counter(pred_toks) & Counter(gold_toks)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_toks)
    recall = overlap / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def _contains_run(haystack: list[str], needle: list[str]) -> bool:
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def retrieval_units(retrieval: RetrievalResult, corpus: Corpus) -> list[str]:
    """One text per retrieved row, in rank order: the row sentence followed by its linked passages."""
    units = []
    for rc in retrieval.rows:
        texts = [rc.sentence] + [p.content for p in linked_passages(corpus, rc.table_id, rc.row_index)]
        units.append(" ".join(texts))
    return units


def hit_at_k(retrieval: RetrievalResult, gold: str, k: int, corpus: Corpus) -> bool:
    """True iff the normalized gold answer occurs as a token run in one of the top-``k`` units."""
    check_positive_int(k, "k")
    needle = normalize_answer(gold).split()
    if not needle:
        return False
    return any(
        _contains_run(normalize_answer(unit).split(), needle) for unit in retrieval_units(retrieval, corpus)[:k]
    )


@dataclass(frozen=True)
class QuestionResult:
    question_id: str
    prediction: str
    gold: str
    em: int
    f1: float
    hit1: bool
    hit3: bool
    trace_ref: str
    failed_stage: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    corpus_name: str
    split: str
    config: dict
    results: list[QuestionResult]
    failures: dict[str, int] = field(default_factory=dict)
    label: str = ""

    def _mean(self, attr: str) -> float:
        return 100.0 * sum(float(getattr(r, attr)) for r in self.results) / len(self.results)

    @property
    def em(self) -> float:
        return self._mean("em")

    @property
    def f1(self) -> float:
        return self._mean("f1")

    @property
    def hit1(self) -> float:
        return self._mean("hit1")

    @property
    def hit3(self) -> float:
        return self._mean("hit3")

    def aggregates(self) -> dict[str, float]:
        return {"EM": self.em, "F1": self.f1, "HIT@1": self.hit1, "HIT@3": self.hit3}

    def summary_line(self) -> str:
        return f"EM {self.em:.2f} / F1 {self.f1:.2f} / HIT@1 {self.hit1:.2f} / HIT@3 {self.hit3:.2f}"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "corpus_name": self.corpus_name,
            "split": self.split,
            "config": self.config,
            "n_questions": len(self.results),
            "aggregates": self.aggregates(),
            "failures": dict(sorted(self.failures.items())),
            "results": [r.to_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for r in self.results)

    def to_text(self) -> str:
        name = self.label or "run"
        width = max(len(name), len("Model"))
        em_f1 = f"{self.em:.2f} / {self.f1:.2f}"
        lines = [
            f"{self.corpus_name} ({self.split}), {len(self.results)} questions",
            f"{'Model':<{width}} | {'EM / F1':<15} | {'HIT@1':>6} | {'HIT@3':>6}",
            f"{'-' * width}-+-{'-' * 15}-+-{'-' * 6}-+-{'-' * 6}",
            f"{name:<{width}} | {em_f1:<15} | {self.hit1:6.2f} | {self.hit3:6.2f}",
        ]
        if self.failures:
            lines.append("failures: " + ", ".join(f"{k}={v}" for k, v in sorted(self.failures.items())))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            corpus_name=d["corpus_name"],
            split=d["split"],
            config=d["config"],
            results=[QuestionResult(**r) for r in d["results"]],
            failures=d.get("failures", {}),
            label=d.get("label", ""),
        )


def _get(obj, key, default=None):
    if isinstance(obj, dict):
        return obj.get(key, default)
    return getattr(obj, key, default)


def evaluate_run(
    traces,
    retrievals,
    corpus: Corpus,
    *,
    question_ids=None,
    config: dict | None = None,
    label: str = "",
) -> EvalReport:
    """Score a run.

    ``traces`` and ``retrievals`` map (or list) per-question records; a trace
    records ``final_answer`` and, for failed questions, ``failed_stage``.
    Failed questions score zero and are counted under their stage. Results
    are sorted by question id so the report does not depend on run order.
    """
    traces = {(_get(t, "question_id")): t for t in traces} if not isinstance(traces, dict) else dict(traces)
    retrievals = (
        {(_get(r, "question_id")): r for r in retrievals} if not isinstance(retrievals, dict) else dict(retrievals)
    )
    if question_ids is None:
        question_ids = list(traces)
    question_ids = sorted(set(question_ids))
    if not question_ids:
        raise ValueError("nothing to aggregate: the run contains no questions")
    missing = [qid for qid in question_ids if qid not in traces]
    if missing:
        raise MissingTrace(missing)

    results: list[QuestionResult] = []
    failures: Counter = Counter()
    splits = set()
    for qid in question_ids:
        question = corpus.question(qid)
        splits.add(question.split)
        trace = traces[qid]
        failed_stage = _get(trace, "failed_stage")
        prediction = "" if failed_stage else (_get(trace, "final_answer") or "")
        if failed_stage:
            failures[failed_stage] += 1
        retrieval = retrievals.get(qid)
        if isinstance(retrieval, dict):
            retrieval = RetrievalResult.from_dict(retrieval)
        hit1 = hit3 = False
        if retrieval is not None:
            hit1 = hit_at_k(retrieval, question.gold_answer, 1, corpus)
            hit3 = hit1 or hit_at_k(retrieval, question.gold_answer, 3, corpus)
        results.append(
            QuestionResult(
                question_id=qid,
                prediction=prediction,
                gold=question.gold_answer,
                em=exact_match(prediction, question.gold_answer),
                f1=token_f1(prediction, question.gold_answer),
                hit1=hit1,
                hit3=hit3,
                trace_ref=f"traces.jsonl#{qid}",
                failed_stage=failed_stage,
            )
        )
    return EvalReport(
        corpus_name=corpus.name,
        split="+".join(sorted(splits)),
        config=config or {},
        results=results,
        failures=dict(failures),
        label=label,
    )


METRICS = ("EM", "F1", "HIT@1", "HIT@3")


@dataclass
class ComparisonTable:
    baseline: str
    rows: list[dict]

    def to_dict(self) -> dict:
        return {"baseline": self.baseline, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        width = max([len("Variant")] + [len(r["label"]) for r in self.rows])
        header = f"{'Variant':<{width}} | " + " | ".join(f"{m:>7} {'Δ':>7}" for m in METRICS)
        lines = [header, "-" * len(header)]
        for row in self.rows:
            cells = " | ".join(f"{row[m]:7.2f} {row['delta'][m]:+7.2f}" for m in METRICS)
            lines.append(f"{row['label']:<{width}} | {cells}")
        lines.append(f"(deltas vs {self.baseline})")
        return "\n".join(lines) + "\n"


def compare_ablations(reports, baseline: str | None = None) -> ComparisonTable:
    """Tabulate reports side by side with per-metric deltas against ``baseline`` (default: first)."""
    reports = list(reports)
    if not reports:
        raise ValueError("compare_ablations needs at least one report")
    ref = (reports[0].corpus_name, reports[0].split)
    for rep in reports[1:]:
        if (rep.corpus_name, rep.split) != ref:
            raise MismatchedCorpus(
                f"report {rep.label!r} is on {rep.corpus_name}/{rep.split}, expected {ref[0]}/{ref[1]}"
            )
    labels = [rep.label or f"run{i}" for i, rep in enumerate(reports)]
    if baseline is None:
        baseline = labels[0]
    if baseline not in labels:
        raise ValueError(f"baseline {baseline!r} is not among {labels}")
    base = reports[labels.index(baseline)].aggregates()
    rows = []
    for label, rep in zip(labels, reports):
        agg = rep.aggregates()
        rows.append({"label": label, **agg, "delta": {m: agg[m] - base[m] for m in METRICS}})
    return ComparisonTable(baseline=baseline, rows=rows)
