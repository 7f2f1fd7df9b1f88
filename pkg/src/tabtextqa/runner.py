"""Run configuration, resumable orchestration and run-directory I/O.

A run directory holds::

    manifest.json     config snapshot, per-question status, backend-call counters
    traces.jsonl      one record per finished question (appended as it finishes)
    retrievals.jsonl  retrieval state for each finished question
    report.json       written by evaluate_run_dir
    report.txt
    results.jsonl     per-question scores

The directory name carries a hash of the run's semantic configuration
(corpus, retriever, reader, backends, routing, question selection, template
hashes). Execution-only settings (worker count, cache and output paths)
are excluded, so rerunning the same experiment resumes the same directory
and produces the same report regardless of parallelism.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import logging
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .backends import CachedBackend, CountingBackend, DiskCache, HTTPBackend, MockBackend, ThrottledBackend
from .backends.base import Backend
from .corpus import Corpus, Question, load_hybridqa, load_ottqa_dev
from .errors import ConfigError, MissingTrace, TabTextQAError, UnknownQuestion
from .evaluate import EvalReport, compare_ablations, evaluate_run
from .reader import ReaderConfig, ReaderFailure, ReaderTrace, TemplateSet
from .reader import run as read
from .retrieve import RetrievalBackends, RetrieverConfig, retrieve

logger = logging.getLogger(__name__)

ROUTED_STAGES = ("embed", "rerank", "keywords", "linearize", "summarize", "decompose", "sub_qa", "main_qa")
CORPUS_FORMATS = ("hybridqa", "ottqa_dev")


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "mock"
    script: str | None = None
    base_url: str | None = None
    model: str | None = None
    embedding_model: str | None = None
    api_key_env: str = "TABTEXTQA_API_KEY"
    rerank_url: str | None = None
    timeout: float = 60.0
    parallelism: int = 4

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"backend kind must be 'mock' or 'http', got {self.kind!r}")
        if self.kind == "http" and not (self.base_url and self.model):
            raise ConfigError("http backends need base_url and model")
        if self.parallelism < 1:
            raise ConfigError("backend parallelism must be >= 1")

    def snapshot(self) -> dict:
        d = asdict(self)
        d.pop("parallelism")
        d.pop("timeout")
        return d


@dataclass(frozen=True)
class CorpusSpec:
    tables: str
    passages: str
    questions: str
    name: str | None = None
    format: str = "hybridqa"

    def __post_init__(self):
        if self.format not in CORPUS_FORMATS:
            raise ConfigError(f"corpus format must be one of {CORPUS_FORMATS}, got {self.format!r}")

    def load(self) -> Corpus:
        loader = load_ottqa_dev if self.format == "ottqa_dev" else load_hybridqa
        return loader(self.tables, self.passages, self.questions, name=self.name)


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusSpec
    retriever: RetrieverConfig = RetrieverConfig()
    reader: ReaderConfig = ReaderConfig()
    backends: dict = field(default_factory=lambda: {"mock": BackendSpec()})
    routing: dict = field(default_factory=dict)
    name: str = ""
    cache_dir: str | None = None
    output_dir: str = "runs"
    question_ids: tuple[str, ...] | None = None
    limit: int | None = None
    seed: int = 0
    parallelism: int = 4
    template_dir: str | None = None

    def __post_init__(self):
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.limit is not None and self.limit < 1:
            raise ConfigError("limit must be >= 1")
        unknown = set(self.routing) - set(ROUTED_STAGES) - {"default"}
        if unknown:
            raise ConfigError(f"unknown routing stages: {sorted(unknown)}")
        for stage, backend_id in self.routing.items():
            if backend_id not in self.backends:
                raise ConfigError(f"stage {stage!r} routed to undefined backend {backend_id!r}")
        if not self.backends:
            raise ConfigError("at least one backend must be configured")

    @property
    def label(self) -> str:
        return self.name or f"{self.reader.mode}-{self.reader.shots}shot"

    def backend_for(self, stage: str) -> str:
        return self.routing.get(stage) or self.routing.get("default") or next(iter(self.backends))

    def snapshot(self) -> dict:
        """Semantic configuration: everything that can change results, nothing that cannot."""
        return {
            "name": self.name,
            "corpus": asdict(self.corpus),
            "retriever": self.retriever.to_dict(),
            "reader": self.reader.to_dict(),
            "backends": {k: v.snapshot() for k, v in sorted(self.backends.items())},
            "routing": {stage: self.backend_for(stage) for stage in ROUTED_STAGES},
            "selection": {
                "question_ids": list(self.question_ids) if self.question_ids is not None else None,
                "limit": self.limit,
                "seed": self.seed,
            },
            "templates": TemplateSet(self.template_dir).hashes(),
        }

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.snapshot(), sort_keys=True).encode("utf-8")).hexdigest()

    def run_dir(self, out: str | Path | None = None) -> Path:
        base = Path(out) if out is not None else Path(self.output_dir)
        slug = re.sub(r"[^A-Za-z0-9_.-]+", "-", self.name).strip("-")
        short = self.config_hash()[:12]
        return base / (f"{slug}-{short}" if slug else short)


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p).resolve())


def config_from_dict(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    """Build a :class:`RunConfig` from its JSON form; relative paths resolve against ``base_dir``."""
    base = Path(base_dir)
    try:
        c = dict(raw["corpus"])
        if "dir" in c:
            d = Path(c.pop("dir"))
            c.setdefault("tables", str(d / "tables.jsonl"))
            c.setdefault("passages", str(d / "passages.jsonl"))
            c.setdefault("questions", str(d / "questions.jsonl"))
        for key in ("tables", "passages", "questions"):
            c[key] = _resolve(base, c[key])
        corpus = CorpusSpec(**c)
        backends = {}
        for bid, spec in (raw.get("backends") or {"mock": {"kind": "mock"}}).items():
            spec = dict(spec)
            if spec.get("script"):
                spec["script"] = _resolve(base, spec["script"])
            backends[bid] = BackendSpec(**spec)
        ids = raw.get("question_ids")
        return RunConfig(
            corpus=corpus,
            retriever=RetrieverConfig(**raw.get("retriever", {})),
            reader=ReaderConfig(**raw.get("reader", {})),
            backends=backends,
            routing=dict(raw.get("routing", {})),
            name=raw.get("name", ""),
            cache_dir=_resolve(base, raw.get("cache_dir")),
            output_dir=_resolve(base, raw.get("output_dir", "runs")),
            question_ids=tuple(ids) if ids is not None else None,
            limit=raw.get("limit"),
            seed=raw.get("seed", 0),
            parallelism=raw.get("parallelism", 4),
            template_dir=_resolve(base, raw.get("template_dir")),
        )
    except KeyError as exc:
        raise ConfigError(f"missing config field {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return config_from_dict(raw, path.parent)


def select_questions(corpus: Corpus, config: RunConfig) -> list[Question]:
    questions = list(corpus.questions)
    if config.question_ids is not None:
        wanted = set(config.question_ids)
        known = {q.id for q in questions}
        missing = sorted(wanted - known)
        if missing:
            raise ConfigError(f"unknown question ids: {', '.join(missing)}")
        questions = [q for q in questions if q.id in wanted]
    if config.limit is not None and config.limit < len(questions):
        keep = set(random.Random(config.seed).sample(range(len(questions)), config.limit))
        questions = [q for i, q in enumerate(questions) if i in keep]
    return questions


# -- backends ----------------------------------------------------------------


@dataclass
class BackendStack:
    """Per-id backends as used by the pipeline, plus the counters beneath their caches."""

    routed: dict[str, Backend]
    counters: dict[str, CountingBackend]
    cache: DiskCache | None = None

    def for_stage(self, config: RunConfig, stage: str) -> Backend:
        return self.routed[config.backend_for(stage)]

    def call_counts(self) -> dict[str, dict[str, int]]:
        return {bid: c.calls.to_dict() for bid, c in sorted(self.counters.items())}


def build_backend(spec: BackendSpec, backend_id: str) -> Backend:
    if spec.kind == "mock":
        if spec.script:
            return MockBackend.from_script(spec.script, backend_id=backend_id)
        return MockBackend(backend_id=backend_id)
    return HTTPBackend(
        spec.base_url,
        spec.model,
        embedding_model=spec.embedding_model,
        api_key_env=spec.api_key_env,
        backend_id=backend_id,
        timeout=spec.timeout,
        rerank_url=spec.rerank_url,
    )


def build_backends(config: RunConfig, raw: dict[str, Backend] | None = None) -> BackendStack:
    raw = dict(raw or {})
    cache = DiskCache(config.cache_dir) if config.cache_dir else None
    routed, counters = {}, {}
    for bid, spec in config.backends.items():
        inner = raw.get(bid) or build_backend(spec, bid)
        counting = CountingBackend(inner)
        counting.backend_id = bid
        backend: Backend = ThrottledBackend(counting, spec.parallelism)
        if cache is not None:
            backend = CachedBackend(backend, cache)
        counters[bid] = counting
        routed[bid] = backend
    return BackendStack(routed, counters, cache)


# -- running -----------------------------------------------------------------


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    if not path.exists():
        return records
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                # a run killed mid-write leaves at most one torn trailing line
                logger.warning("skipping unreadable line in %s", path)
    return records


def latest_records(path: Path) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for record in _read_jsonl(path):
        out[record["question_id"]] = record
    return out


def process_question(question: Question, corpus: Corpus, config: RunConfig, stack: BackendStack,
                     templates: TemplateSet) -> tuple[dict, dict | None]:
    """Retrieve and read one question; failures are captured in the returned record."""
    retrieval_backends = RetrievalBackends(
        embed=stack.for_stage(config, "embed"),
        rerank=stack.for_stage(config, "rerank"),
        keywords=stack.for_stage(config, "keywords"),
        linearize=stack.for_stage(config, "linearize"),
    )
    reader_backends = {stage: stack.for_stage(config, stage) for stage in ("summarize", "decompose", "sub_qa", "main_qa")}
    record = {"question_id": question.id, "status": "ok", "failed_stage": None, "error": None}
    try:
        retrieval = retrieve(retrieval_backends, question, corpus, config.retriever)
    except TabTextQAError as exc:
        stage = getattr(exc, "stage", None) or "retrieve"
        logger.warning("question %s failed at %s: %s", question.id, stage, exc)
        trace = ReaderTrace(question_id=question.id, mode=config.reader.mode, failed_stage=stage,
                            errors={stage: str(exc)})
        record.update(status="failed", failed_stage=stage, error=str(exc), trace=trace.to_dict())
        return record, None
    try:
        trace = read(reader_backends, retrieval, question, config.reader, corpus, templates=templates)
    except ReaderFailure as exc:
        logger.warning("question %s failed at %s: %s", question.id, exc.stage, exc)
        record.update(status="failed", failed_stage=exc.trace.failed_stage, error=str(exc), trace=exc.trace.to_dict())
        return record, retrieval.to_dict()
    record["trace"] = trace.to_dict()
    return record, retrieval.to_dict()


@dataclass
class RunOutcome:
    run_dir: Path
    manifest: dict
    n_ok: int
    n_failed: int
    n_skipped: int

    @property
    def all_failed(self) -> bool:
        return self.n_ok == 0 and self.n_failed > 0


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    tmp.replace(path)


def run_experiment(config: RunConfig, *, backends: dict[str, Backend] | None = None,
                   out: str | Path | None = None, corpus: Corpus | None = None) -> RunOutcome:
    """Run (or resume) every selected question and persist traces incrementally.

    ``backends`` optionally supplies ready backend objects by id in place of
    the ones described in the config (tests inject mocks this way).
    """
    started = time.monotonic()
    corpus = corpus if corpus is not None else config.corpus.load()
    questions = select_questions(corpus, config)
    run_dir = config.run_dir(out)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = run_dir / "manifest.json"
    traces_path = run_dir / "traces.jsonl"
    retrievals_path = run_dir / "retrievals.jsonl"

    snapshot = config.snapshot()
    config_hash = config.config_hash()
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("config_hash") != config_hash:
            raise ConfigError(f"{run_dir} belongs to a different configuration")
    else:
        now = datetime.now(timezone.utc)
        manifest = {
            "run_id": f"{now.strftime('%Y%m%dT%H%M%SZ')}-{config_hash[:12]}",
            "config_hash": config_hash,
            "config": snapshot,
            "label": config.label,
            "questions": [q.id for q in questions],
            "status": {},
            "sessions": [],
            "backend_calls": {},
        }
    manifest["questions"] = [q.id for q in questions]

    done = {qid for qid, rec in latest_records(traces_path).items() if rec.get("status") == "ok"}
    pending = [q for q in questions if q.id not in done]
    stack = build_backends(config, backends)
    templates = TemplateSet(config.template_dir)
    status = {qid: "ok" for qid in done if qid in manifest["questions"]}
    n_ok = n_failed = 0
    session = {"started_at": datetime.now(timezone.utc).isoformat(), "completed": False}

    def checkpoint():
        manifest["status"] = {qid: status.get(qid, "pending") for qid in manifest["questions"]}
        session["questions_processed"] = n_ok + n_failed
        session["backend_calls"] = stack.call_counts()
        session["wall_clock_seconds"] = round(time.monotonic() - started, 3)
        totals: dict[str, dict[str, int]] = {}
        for s in manifest["sessions"] + [session]:
            for bid, counts in s.get("backend_calls", {}).items():
                agg = totals.setdefault(bid, {"embed": 0, "generate": 0, "rerank": 0})
                for op, n in counts.items():
                    agg[op] += n
        manifest["backend_calls"] = totals
        _write_json(manifest_path, {**manifest, "sessions": manifest["sessions"] + [session]})

    logger.info("%s: %d questions, %d already done, %d to run", run_dir.name, len(questions), len(done), len(pending))
    executor = ThreadPoolExecutor(max_workers=config.parallelism)
    try:
        futures = {
            executor.submit(process_question, q, corpus, config, stack, templates): q.id for q in pending
        }
        with open(traces_path, "a", encoding="utf-8") as traces_fh, open(retrievals_path, "a", encoding="utf-8") as retr_fh:
            for future in as_completed(futures):
                record, retrieval = future.result()
                if retrieval is not None:
                    retr_fh.write(json.dumps(retrieval, sort_keys=True, ensure_ascii=False) + "\n")
                    retr_fh.flush()
                traces_fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
                traces_fh.flush()
                status[record["question_id"]] = record["status"]
                if record["status"] == "ok":
                    n_ok += 1
                else:
                    n_failed += 1
    except BaseException:
        executor.shutdown(wait=True, cancel_futures=True)
        checkpoint()
        raise
    executor.shutdown(wait=True)
    session["completed"] = True
    checkpoint()
    manifest["sessions"].append(session)
    return RunOutcome(run_dir, manifest, n_ok, n_failed, len(questions) - len(pending))


# -- evaluation and inspection -----------------------------------------------


def _load_manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{run_dir} has no manifest.json")
    return json.loads(path.read_text(encoding="utf-8"))


def _corpus_from_manifest(manifest: dict) -> Corpus:
    return CorpusSpec(**manifest["config"]["corpus"]).load()


def evaluate_run_dir(run_dir, *, corpus: Corpus | None = None) -> EvalReport:
    """Score a run directory and write report.json, report.txt and results.jsonl into it."""
    run_dir = Path(run_dir)
    manifest = _load_manifest(run_dir)
    corpus = corpus if corpus is not None else _corpus_from_manifest(manifest)
    traces = {qid: rec["trace"] | {"failed_stage": rec.get("failed_stage")}
              for qid, rec in latest_records(run_dir / "traces.jsonl").items()}
    retrievals = latest_records(run_dir / "retrievals.jsonl")
    missing = [qid for qid in manifest["questions"] if qid not in traces]
    if missing:
        raise MissingTrace(missing)
    report = evaluate_run(
        traces,
        retrievals,
        corpus,
        question_ids=manifest["questions"],
        config={"config_hash": manifest["config_hash"], **manifest["config"]},
        label=manifest.get("label", ""),
    )
    (run_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (run_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (run_dir / "results.jsonl").write_text(report.to_jsonl(), encoding="utf-8")
    return report


def run_ablation(configs, *, out=None, baseline: str | None = None, backends=None):
    """Run or resume each config, evaluate it, and tabulate the reports."""
    reports = []
    for config in configs:
        outcome = run_experiment(config, backends=backends, out=out)
        reports.append(evaluate_run_dir(outcome.run_dir))
    return compare_ablations(reports, baseline=baseline), reports


STAGE_ORDER = ("summarize", "decompose", "entity_type", "sub_qa", "main_qa")


def format_trace(run_dir, question_id: str) -> str:
    """Human-readable dump of one question's trace, stages in pipeline order."""
    records = latest_records(Path(run_dir) / "traces.jsonl")
    if question_id not in records:
        nearest = difflib.get_close_matches(question_id, list(records), n=3, cutoff=0.0)
        raise UnknownQuestion(question_id, nearest)
    record = records[question_id]
    trace = record["trace"]
    bar = "=" * 72
    lines = [bar, f"question {question_id}  mode={trace['mode']}  status={record['status']}"]
    if record.get("failed_stage"):
        lines.append(f"FAILED at stage {record['failed_stage']}: {record.get('error')}")
    lines.append(bar)
    for stage in STAGE_ORDER:
        if stage == "entity_type":
            if trace.get("entity_type_main"):
                lines += ["[entity_type]", f"sub-question type: {trace['entity_type_sub']}",
                          f"question type: {trace['entity_type_main']}", ""]
            continue
        if stage not in trace["prompts"] and stage not in trace["errors"]:
            continue
        header = f"[{stage}]"
        if stage in trace["errors"]:
            header += "  FAILED: " + trace["errors"][stage]
        lines.append(header)
        if stage in trace["prompts"]:
            lines += ["--- prompt ---", trace["prompts"][stage]]
        for i, completion in enumerate(trace["raw_completions"].get(stage, [])):
            lines += [f"--- completion {i + 1} ---", completion]
        output = {
            "summarize": ("summary", trace.get("summary")),
            "decompose": ("sub-question", trace.get("sub_question")),
            "sub_qa": ("sub-answer", trace.get("sub_answer")),
            "main_qa": ("final answer", trace.get("final_answer")),
        }[stage]
        lines.append(f">>> {output[0]}: {output[1]}")
        lines.append("")
    if trace.get("votes") and len(trace["raw_completions"].get("main_qa", [])) > 1:
        lines.append("votes: " + ", ".join(f"{k}={v}" for k, v in trace["votes"].items()))
    if trace.get("flags"):
        lines.append("fallbacks/flags: " + ", ".join(trace["flags"]))
    lines.append(f"final answer: {trace.get('final_answer', '')}")
    return "\n".join(lines) + "\n"


__all__ = [
    "BackendSpec",
    "CorpusSpec",
    "RunConfig",
    "RunOutcome",
    "build_backends",
    "config_from_dict",
    "evaluate_run_dir",
    "format_trace",
    "load_config",
    "process_question",
    "run_ablation",
    "run_experiment",
    "select_questions",
]
