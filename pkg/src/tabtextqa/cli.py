"""``tabtextqa`` command line: ingest | run | eval | ablate | trace.

Exit codes: 0 success (partial question failures included), 2 usage or
configuration error, 3 every question of a run failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import TabTextQAError
from .ingest import FORMATS, ingest
from .runner import evaluate_run_dir, format_trace, load_config, run_ablation, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_ALL_FAILED = 0, 2, 3


def _apply_overrides(config, args):
    changes = {}
    if getattr(args, "limit", None) is not None:
        changes["limit"] = args.limit
    if getattr(args, "ids", None):
        changes["question_ids"] = tuple(i.strip() for i in args.ids.split(",") if i.strip())
    if getattr(args, "parallelism", None) is not None:
        changes["parallelism"] = args.parallelism
    return dataclasses.replace(config, **changes) if changes else config


def cmd_ingest(args) -> int:
    report = ingest(args.format, args.input, args.out)
    print(
        f"wrote {report.n_tables} tables, {report.n_passages} passages, {report.n_questions} questions "
        f"to {args.out} ({len(report.dangling_links)} dangling links dropped)"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    outcome = run_experiment(config, out=args.out)
    print(f"{outcome.run_dir}: {outcome.n_ok} ok, {outcome.n_failed} failed, {outcome.n_skipped} already done")
    if outcome.all_failed:
        return EXIT_ALL_FAILED
    if args.eval:
        print(evaluate_run_dir(outcome.run_dir).summary_line())
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate_run_dir(args.run_dir)
    print(report.summary_line())
    if report.failures:
        print("failures: " + ", ".join(f"{k}={v}" for k, v in sorted(report.failures.items())))
    return EXIT_OK


def cmd_ablate(args) -> int:
    configs = [_apply_overrides(load_config(p), args) for p in args.config]
    table, _ = run_ablation(configs, out=args.out, baseline=args.baseline)
    out = Path(args.out) if args.out else Path(configs[0].output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(table.to_json(), encoding="utf-8")
    (out / "ablation.txt").write_text(table.to_text(), encoding="utf-8")
    print(table.to_text(), end="")
    return EXIT_OK


def cmd_trace(args) -> int:
    print(format_trace(args.run_dir, args.question_id), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabtextqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a raw dataset dump to canonical corpus files")
    p.add_argument("--format", required=True, choices=FORMATS)
    p.add_argument("--input", required=True, help="raw dump directory")
    p.add_argument("--out", required=True, help="output directory for the canonical files")
    p.set_defaults(func=cmd_ingest)

    def selection(p):
        p.add_argument("--limit", type=int)
        p.add_argument("--ids", help="comma-separated question ids")
        p.add_argument("--parallelism", type=int)
        p.add_argument("--out", help="directory holding run directories (default: config output_dir)")

    p = sub.add_parser("run", help="run (or resume) a configured experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--eval", action="store_true", help="evaluate the run directory afterwards")
    selection(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run several configs on one corpus and compare them")
    p.add_argument("--config", required=True, nargs="+")
    p.add_argument("--baseline", help="label of the baseline row (default: first config)")
    selection(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("trace", help="print one question's trace")
    p.add_argument("run_dir")
    p.add_argument("question_id")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (TabTextQAError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("interrupted; rerun the same command to resume", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
