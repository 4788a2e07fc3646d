"""Relaxed exact match, dataset loading, benchmark runs, and report layout.

REM is three staged checks: normalize the prediction toward the gold format
with one model call, exact-match the normalized strings (case and whitespace
insensitive), and divert residual cases where normalization changed the
prediction but still missed into a review queue. Review items are never
auto-counted as correct.
"""

from __future__ import annotations

import json
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import DatasetMalformed, TandemError
from .gateway import CallLog, Gateway
from .optimizer import OptimizationStats, format_optimization_report
from .pipeline import PipelineConfig, QaResult, answer_question
from .plan import LlmStep, SqlStep
from .tables import Table, load_table_file, table_from_rows


@dataclass
class EvalRecord:
    id: str
    question: str
    gold: str
    table: Table | None = None
    table_path: str | None = None
    paragraph: str | None = None

    def resolve_table(self, base_dir: Path | None = None) -> Table:
        if self.table is not None:
            return self.table
        if not self.table_path:
            raise DatasetMalformed(self.id, "no table or table_path")
        path = Path(self.table_path)
        if base_dir and not path.is_absolute():
            path = base_dir / path
        return load_table_file(path)


@dataclass
class EvalReport:
    n_records: int = 0
    em_accuracy: float = 0.0
    rem_accuracy: float = 0.0
    matches: int = 0
    mismatches: int = 0
    needs_review: int = 0
    avg_calls_per_query: float = 0.0
    llm_steps: int = 0
    sql_steps: int = 0
    optimization: OptimizationStats = field(default_factory=OptimizationStats)
    error_breakdown: dict[str, float] = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)


def load_dataset(path: str | Path) -> list[EvalRecord]:
    """Read line-delimited JSON records.

    Each record needs id, question, and answer, plus either table_path or an
    inline table {name, columns, rows}. paragraph and transcript are optional.
    """
    records = []
    base = Path(path)
    for line_no, line in enumerate(base.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetMalformed(f"line {line_no}", str(exc))
        record_id = str(payload.get("id", f"line_{line_no}"))
        question = payload.get("question")
        gold = payload.get("answer")
        if not question:
            raise DatasetMalformed(record_id, "missing question")
        if gold is None or str(gold) == "":
            raise DatasetMalformed(record_id, "missing gold answer")
        inline = payload.get("table")
        table = None
        if inline:
            table = table_from_rows(
                inline.get("name", record_id),
                inline["columns"],
                inline["rows"],
            )
        records.append(EvalRecord(
            id=record_id,
            question=str(question),
            gold=str(gold),
            table=table,
            table_path=payload.get("table_path"),
            paragraph=payload.get("paragraph"),
        ))
    if not records:
        raise DatasetMalformed("dataset", "no records")
    return records


# --- relaxed exact match -----------------------------------------------------

def _canon(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip().casefold())


def normalize_answer(
    pred: str, gold: str, question: str, gateway: Gateway | None
) -> str:
    """One formatting-alignment call; the prediction comes back unchanged when
    the backend is absent, fails, or declines to convert."""
    if gateway is None:
        return pred
    try:
        text = gateway.ask(
            "answer_format",
            table_name="",
            table="",
            question=question,
            answer=pred,
            gold_answer=gold,
        )
    except TandemError:
        return pred
    text = text.strip()
    match = re.search(r"your output\s*:\s*(.*)$", text, re.IGNORECASE | re.DOTALL)
    if match:
        text = match.group(1).strip()
    return text or pred


@dataclass(frozen=True)
class RemOutcome:
    verdict: str  # match | mismatch | needs_review
    normalized: str


def relaxed_exact_match(
    pred: str,
    gold: str,
    question: str,
    gateway: Gateway | None,
    review_path: str | Path | None = None,
    record_id: str = "",
) -> RemOutcome:
    """Three-step REM verdict.

    A raw match never needs normalization (so EM match always implies REM
    match). When normalization changed the prediction but the result still
    differs from gold, the pair goes to the review queue instead of being
    scored either way automatically.
    """
    if _canon(pred) == _canon(gold):
        return RemOutcome("match", pred)
    normalized = normalize_answer(pred, gold, question, gateway)
    if _canon(normalized) == _canon(gold):
        return RemOutcome("match", normalized)
    if _canon(normalized) != _canon(pred):
        if review_path is not None:
            _queue_review(review_path, record_id, pred, normalized, gold, question)
        return RemOutcome("needs_review", normalized)
    return RemOutcome("mismatch", normalized)


def _queue_review(path, record_id, pred, normalized, gold, question) -> None:
    entry = {
        "id": record_id,
        "pred": pred,
        "normalized": normalized,
        "gold": gold,
        "question": question,
    }
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


# --- error taxonomy -----------------------------------------------------------

def classify_error(result: QaResult) -> str:
    """sql_error for engine failures, plan_error for generation/validation
    failures, none otherwise."""
    from .plan import ERROR_ISSUES

    for record in result.trace.steps:
        if record.status == "failed" and record.kind == "SQL":
            return "sql_error"
    if result.failure in {"plan", "codegen"}:
        return "plan_error"
    if any(issue.kind in ERROR_ISSUES for issue in result.issues):
        return "plan_error"
    return "none"


# --- benchmark ------------------------------------------------------------------

def run_benchmark(
    records: Sequence[EvalRecord],
    config: PipelineConfig,
    *,
    base_dir: Path | None = None,
    backend_factory: Callable[[EvalRecord], object] | None = None,
    review_path: str | Path | None = None,
) -> EvalReport:
    """Answer every record and aggregate accuracy plus accounting.

    Normalization calls go through a separate CallLog so pipeline call counts
    stay comparable; they are not part of avg_calls_per_query.
    """
    report = EvalReport(n_records=len(records))
    call_counts: list[int] = []
    em_hits = 0
    errors = {"sql_error": 0, "plan_error": 0, "none": 0}
    for record in records:
        table = record.resolve_table(base_dir)
        backend = (
            backend_factory(record) if backend_factory
            else config.make_gateway().backend
        )
        gateway = Gateway(
            backend, temperature=config.temperature, max_tokens=config.max_tokens)
        result = answer_question(
            table, record.question, record.paragraph, config, gateway)
        eval_gateway = Gateway(
            backend, temperature=config.temperature, max_tokens=config.max_tokens,
            call_log=CallLog())
        em_match = _canon(result.answer) == _canon(record.gold)
        outcome = relaxed_exact_match(
            result.answer, record.gold, record.question, eval_gateway,
            review_path=review_path, record_id=record.id)
        em_hits += em_match
        if outcome.verdict == "match":
            report.matches += 1
        elif outcome.verdict == "mismatch":
            report.mismatches += 1
        else:
            report.needs_review += 1
        call_counts.append(len(result.trace.call_log))
        for step_record in result.trace.steps:
            if step_record.status == "ok":
                if step_record.kind == "LLM":
                    report.llm_steps += 1
                else:
                    report.sql_steps += 1
        if result.stats:
            report.optimization.add(result.stats)
        errors[classify_error(result)] += 1
        report.records.append({
            "id": record.id,
            "answer": result.answer,
            "gold": record.gold,
            "verdict": outcome.verdict,
            "normalized": outcome.normalized,
            "calls": len(result.trace.call_log),
            "error": classify_error(result),
            "fallback_used": result.trace.fallback_used,
        })
    report.em_accuracy = em_hits / len(records)
    report.rem_accuracy = report.matches / len(records)
    report.avg_calls_per_query = statistics.fmean(call_counts)
    report.error_breakdown = {
        kind: count / len(records) for kind, count in errors.items()
    }
    return report


def format_report(report: EvalReport) -> str:
    lines = [
        f"Records evaluated      {report.n_records}",
        f"EM accuracy            {report.em_accuracy:.3f}",
        f"REM accuracy           {report.rem_accuracy:.3f}",
        f"Needs review           {report.needs_review}",
        "",
        "API calls per query",
        f"  average              {report.avg_calls_per_query:.2f}",
        "",
        "Steps executed",
        f"  LLM Steps            {report.llm_steps}",
        f"  SQL Steps            {report.sql_steps}",
        f"  Total                {report.llm_steps + report.sql_steps}",
        "",
        format_optimization_report(report.optimization),
        "",
        "Error breakdown",
        f"  SQL Error            {report.error_breakdown.get('sql_error', 0.0):.1%}",
        f"  Plan Generation      {report.error_breakdown.get('plan_error', 0.0):.1%}",
        f"  None                 {report.error_breakdown.get('none', 0.0):.1%}",
    ]
    return "\n".join(lines)


def write_report(report: EvalReport, out_prefix: str | Path) -> tuple[Path, Path]:
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    text_path = out_prefix.with_suffix(".txt")
    json_path = out_prefix.with_suffix(".json")
    text_path.write_text(format_report(report) + "\n", encoding="utf-8")
    payload = {
        "n_records": report.n_records,
        "em_accuracy": report.em_accuracy,
        "rem_accuracy": report.rem_accuracy,
        "matches": report.matches,
        "mismatches": report.mismatches,
        "needs_review": report.needs_review,
        "avg_calls_per_query": report.avg_calls_per_query,
        "llm_steps": report.llm_steps,
        "sql_steps": report.sql_steps,
        "optimization": report.optimization.as_dict(),
        "error_breakdown": report.error_breakdown,
        "records": report.records,
    }
    json_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return text_path, json_path
