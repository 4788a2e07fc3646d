"""Command-line interface.

Commands: run (answer one question), bench (run a dataset), optimize
(rewrite a plan file), eval (score prediction/gold files), trace (inspect a
stored run). Exit codes: 0 success, 1 usage error, 2 pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import TandemError
from .evaluation import (
    format_report,
    load_dataset,
    relaxed_exact_match,
    run_benchmark,
    write_report,
)
from .gateway import Gateway, make_backend
from .optimizer import format_optimization_report, optimize
from .pipeline import PipelineConfig, answer_question, run_id_for
from .plan import parse_executable_plan, serialize_plan
from .tables import load_table_file, sanitize_schema


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we want status 1
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="tandemqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="answer one question over a table")
    run.add_argument("--table", required=True, help="CSV/TSV file")
    run.add_argument("--question", required=True)
    run.add_argument("--paragraph", default=None,
                     help="optional context paragraph (text or @file)")
    run.add_argument("--backend", default=None,
                     help="scripted:<path> | live:<model> | echo")
    run.add_argument("--config", default=None, help="JSON config file")
    run.add_argument("--trace-dir", default=None)
    run.add_argument("--no-optimize", action="store_true")

    bench = sub.add_parser("bench", help="run a JSONL dataset")
    bench.add_argument("--dataset", required=True)
    bench.add_argument("--config", default=None)
    bench.add_argument("--backend", default=None)
    bench.add_argument("--report-out", required=True,
                       help="path prefix for .txt and .json reports")
    bench.add_argument("--review-out", default=None,
                       help="review queue file (default: <report-out>.review.jsonl)")

    opt = sub.add_parser("optimize", help="rewrite a stored plan file")
    opt.add_argument("--plan", required=True)
    opt.add_argument("--out", required=True)
    opt.add_argument("--base-table", default="base")
    opt.add_argument("--stats", default=None,
                     help="also write counters as JSON to this path")

    ev = sub.add_parser("eval", help="score line-aligned pred/gold files")
    ev.add_argument("--pred-file", required=True)
    ev.add_argument("--gold-file", required=True)
    ev.add_argument("--backend", default=None,
                    help="backend for answer normalization (optional)")
    ev.add_argument("--review-out", default=None)

    tr = sub.add_parser("trace", help="summarize a stored run")
    tr.add_argument("--run-id", required=True)
    tr.add_argument("--trace-dir", default="trace")
    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except TandemError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _load_config(args) -> PipelineConfig:
    config = (
        PipelineConfig.from_file(args.config)
        if getattr(args, "config", None)
        else PipelineConfig()
    )
    if getattr(args, "backend", None):
        config.backend = args.backend
    if getattr(args, "trace_dir", None):
        config.trace_dir = args.trace_dir
    if getattr(args, "no_optimize", False):
        config.optimize = False
    return config


def _cmd_run(args) -> int:
    config = _load_config(args)
    table = load_table_file(args.table)
    paragraph = args.paragraph
    if paragraph and paragraph.startswith("@"):
        paragraph = Path(paragraph[1:]).read_text(encoding="utf-8")
    result = answer_question(table, args.question, paragraph, config)
    print(result.answer)
    return 0


def _cmd_bench(args) -> int:
    config = _load_config(args)
    records = load_dataset(args.dataset)
    review = args.review_out or f"{args.report_out}.review.jsonl"
    report = run_benchmark(
        records,
        config,
        base_dir=Path(args.dataset).parent,
        review_path=review,
    )
    text_path, json_path = write_report(report, args.report_out)
    print(format_report(report))
    print(f"\nreport written to {text_path} and {json_path}")
    return 0


def _cmd_optimize(args) -> int:
    text = Path(args.plan).read_text(encoding="utf-8")
    plan = parse_executable_plan(text, args.base_table)
    rewritten, stats = optimize(plan)
    Path(args.out).write_text(serialize_plan(rewritten), encoding="utf-8")
    print(format_optimization_report(stats))
    if args.stats:
        Path(args.stats).write_text(
            json.dumps(stats.as_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return 0


def _cmd_eval(args) -> int:
    preds = Path(args.pred_file).read_text(encoding="utf-8").splitlines()
    golds = Path(args.gold_file).read_text(encoding="utf-8").splitlines()
    if len(preds) != len(golds):
        print(
            f"error: {len(preds)} predictions vs {len(golds)} gold answers",
            file=sys.stderr,
        )
        return 1
    gateway = Gateway(make_backend(args.backend)) if args.backend else None
    counts = {"match": 0, "mismatch": 0, "needs_review": 0}
    for i, (pred, gold) in enumerate(zip(preds, golds)):
        outcome = relaxed_exact_match(
            pred, gold, "", gateway,
            review_path=args.review_out, record_id=str(i))
        counts[outcome.verdict] += 1
    total = len(preds) or 1
    print(f"records        {len(preds)}")
    print(f"match          {counts['match']} ({counts['match'] / total:.1%})")
    print(f"mismatch       {counts['mismatch']}")
    print(f"needs_review   {counts['needs_review']}")
    return 0


def _cmd_trace(args) -> int:
    path = Path(args.trace_dir) / args.run_id / "trace.json"
    payload = json.loads(path.read_text(encoding="utf-8"))
    print(f"run            {args.run_id}")
    print(f"base table     {payload['base_table']}")
    print(f"final table    {payload['final_table']}")
    print(f"fallback used  {payload['fallback_used']}")
    print(f"answer         {payload.get('answer', '')}")
    print(f"calls          {len(payload.get('calls', []))}")
    for step in payload.get("steps", []):
        line = (
            f"  step {step['index']} [{step['kind']}] "
            f"{step['input_table']} -> {step['output_table']}: {step['status']}"
        )
        if step.get("error"):
            line += f" ({step['error']})"
        print(line)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "bench": _cmd_bench,
    "optimize": _cmd_optimize,
    "eval": _cmd_eval,
    "trace": _cmd_trace,
}


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
