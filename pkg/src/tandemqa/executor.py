"""Sequential plan execution against an embedded sqlite engine.

The engine executes the SELECT / CREATE-TABLE-AS subset (WHERE, GROUP BY,
ORDER BY, JOIN, aggregates, CASE, LIMIT). Statements written for MySQL are
adapted best-effort: backtick quoting becomes double quotes and a small
function-alias table (YEAR, MONTH, DAY, CONCAT, SUBSTRING, NOW, CURDATE,
RAND, IF) is rewritten to sqlite equivalents. Anything else passes through
and either runs or fails at execution time, where the fallback contract takes
over: on the first failed step the run stops and the most recent successful
intermediate table becomes the final table.

After an LLM step the augmented rows are materialized under
``<source>_llm<index>`` and the source name is re-pointed at them, so later
SQL may keep referencing the source table and see the new column, matching
how generated SQL is written in practice.
"""

from __future__ import annotations

import json
import re
import sqlite3
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import sqltext
from .errors import EngineUnavailable, StepFailed, TandemError, UnknownColumn
from .gateway import (
    CallLog,
    Gateway,
    generate_column_chunked,
    generate_columns_batched,
)
from .plan import LlmStep, Plan, PlanStep, SqlStep, llm_output_name, serialize_plan
from .tables import Table, column_strings, infer_declared_type, to_csv

_SQLITE_TYPES = {
    "integer": "INTEGER",
    "real": "REAL",
    "date": "TEXT",
    "text": "TEXT",
    "unknown": "TEXT",
}


@dataclass(frozen=True)
class StepRecord:
    index: int
    kind: str
    input_table: str
    output_table: str
    status: str  # ok | failed | skipped
    snapshot: str | None = None
    error: str | None = None


@dataclass
class ExecutionTrace:
    base_table: str
    steps: list[StepRecord] = field(default_factory=list)
    final_table: str = ""
    fallback_used: bool = False
    call_log: CallLog = field(default_factory=CallLog)
    snapshots: dict[str, Table] = field(default_factory=dict)

    @property
    def ok_steps(self) -> int:
        return sum(1 for s in self.steps if s.status == "ok")

    @property
    def failed(self) -> bool:
        return any(s.status == "failed" for s in self.steps)

    def executed_kinds(self) -> list[str]:
        return [s.kind for s in self.steps if s.status == "ok"]


class Engine:
    """One in-memory sqlite connection; the run's private namespace."""

    def __init__(self):
        try:
            self._conn = sqlite3.connect(":memory:")
        except sqlite3.Error as exc:  # pragma: no cover - environment failure
            raise EngineUnavailable(str(exc)) from exc

    def close(self) -> None:
        self._conn.close()

    def run(self, statement: str) -> None:
        self._conn.execute(statement)

    def exists(self, name: str) -> bool:
        row = self._conn.execute(
            "SELECT COUNT(*) FROM sqlite_master WHERE name = ?", (name,)
        ).fetchone()
        return row[0] > 0

    def relation_kind(self, name: str) -> str | None:
        row = self._conn.execute(
            "SELECT type FROM sqlite_master WHERE name = ?", (name,)
        ).fetchone()
        return row[0] if row else None

    def load_table(self, table: Table, name: str | None = None) -> None:
        name = name or table.name
        decls = ", ".join(
            f"{sqltext.quote_ident(c.name)} {_SQLITE_TYPES[c.declared_type]}"
            for c in table.columns
        )
        self.run(f"CREATE TABLE {sqltext.quote_ident(name)} ({decls})")
        placeholders = ", ".join("?" for _ in table.columns)
        rows = [
            tuple(_to_sqlite(v) for v in row)
            for row in table.rows()
        ]
        self._conn.executemany(
            f"INSERT INTO {sqltext.quote_ident(name)} VALUES ({placeholders})",
            rows,
        )

    def read_table(self, name: str) -> Table:
        cursor = self._conn.execute(f"SELECT * FROM {sqltext.quote_ident(name)}")
        names = [d[0] for d in cursor.description]
        rows = cursor.fetchall()
        from .tables import Column

        columns = []
        for j, col_name in enumerate(names):
            values = tuple(row[j] for row in rows)
            columns.append(Column(col_name, infer_declared_type(values), values))
        return Table(name, tuple(columns))

    def repoint(self, source: str, target: str) -> None:
        """Make ``source`` an alias (view) of ``target``."""
        kind = self.relation_kind(source)
        if kind == "table":
            self.run(f"DROP TABLE {sqltext.quote_ident(source)}")
        elif kind == "view":
            self.run(f"DROP VIEW {sqltext.quote_ident(source)}")
        self.run(
            f"CREATE VIEW {sqltext.quote_ident(source)} AS "
            f"SELECT * FROM {sqltext.quote_ident(target)}"
        )


def _to_sqlite(value):
    if value is None or isinstance(value, (int, float, str)):
        return value
    return str(value)


# --- dialect adaptation ----------------------------------------------------

_BACKTICK_RE = re.compile(r"`([^`]*)`")

_FUNC_REWRITES = {
    "YEAR": lambda args: f"CAST(STRFTIME('%Y', {args[0]}) AS INTEGER)",
    "MONTH": lambda args: f"CAST(STRFTIME('%m', {args[0]}) AS INTEGER)",
    "DAY": lambda args: f"CAST(STRFTIME('%d', {args[0]}) AS INTEGER)",
    "CONCAT": lambda args: "(" + " || ".join(args) + ")",
    "SUBSTRING": lambda args: "SUBSTR(" + ", ".join(args) + ")",
    "IF": lambda args: "IIF(" + ", ".join(args) + ")",
    "NOW": lambda args: "DATETIME('now')",
    "CURDATE": lambda args: "DATE('now')",
    "RAND": lambda args: "RANDOM()",
}


def adapt_sql(sql_text: str, output_table: str | None = None) -> str:
    """Best-effort rewrite of a MySQL-flavored statement for sqlite.

    Normalizes identifier quoting, rewrites known function aliases, and when
    ``output_table`` is given wraps a bare SELECT into CREATE TABLE AS form.
    Unknown constructs pass through unchanged.
    """
    adapted = _BACKTICK_RE.sub(lambda m: '"' + m.group(1) + '"', sql_text)
    for name, rewrite in _FUNC_REWRITES.items():
        adapted = _rewrite_calls(adapted, name, rewrite)
    if output_table and sqltext.first_keyword(adapted) in {"SELECT", "WITH"}:
        adapted = (
            f"CREATE TABLE {sqltext.quote_ident(output_table)} AS {adapted}"
        )
    return adapted


def _rewrite_calls(sql: str, func: str, rewrite) -> str:
    pattern = re.compile(rf"\b{func}\s*\(", re.IGNORECASE)
    out = sql
    pos = 0
    while True:
        match = pattern.search(out, pos)
        if not match:
            return out
        open_paren = match.end() - 1
        close_paren = _matching_paren(out, open_paren)
        if close_paren is None:
            return out
        inner = out[match.end():close_paren]
        args = [a.strip() for a in _split_args(inner)] if inner.strip() else []
        replacement = rewrite(args)
        out = out[:match.start()] + replacement + out[close_paren + 1:]
        pos = match.start() + len(replacement)


def _matching_paren(text: str, open_index: int) -> int | None:
    depth = 0
    quote: str | None = None
    for i in range(open_index, len(text)):
        ch = text[i]
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"`":
            quote = ch
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return i
    return None


def _split_args(text: str) -> list[str]:
    args, depth, buf = [], 0, []
    quote: str | None = None
    for ch in text:
        if quote:
            buf.append(ch)
            if ch == quote:
                quote = None
        elif ch in "'\"`":
            quote = ch
            buf.append(ch)
        elif ch == "(":
            depth += 1
            buf.append(ch)
        elif ch == ")":
            depth -= 1
            buf.append(ch)
        elif ch == "," and depth == 0:
            args.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    args.append("".join(buf))
    return args


# --- execution -------------------------------------------------------------

def execute_llm_step(
    step: LlmStep,
    gateway: Gateway,
    engine: Engine,
    step_index: int,
    *,
    question: str = "",
    context: str | None = None,
    chunk_size: int = 30,
    parallelism: int = 4,
    batch_budget: int = 100,
) -> str:
    """Run one LLM step; returns the materialized output table name.

    Row count and order are preserved; the new column(s) are appended after
    the source columns and the source name is re-pointed at the result.
    """
    source = engine.read_table(step.source_table)
    for col in step.input_columns:
        if col not in source.column_names:
            raise UnknownColumn(col)

    prompt_suffix = f"\nRelevant information: {context}" if context else ""
    if len(step.targets) == 1:
        if len(step.input_columns) == 1:
            values = column_strings(source.column(step.input_columns[0]))
        else:
            cols = [source.column(c) for c in step.input_columns]
            values = [
                "; ".join(
                    f"{c.name}={v}" for c, v in zip(cols, row)
                )
                for row in zip(*(column_strings(c) for c in cols))
            ]
        generated = generate_column_chunked(
            gateway,
            values,
            step.prompt + prompt_suffix,
            question,
            chunk_size=chunk_size,
            parallelism=parallelism,
        )
        new_values = {step.new_column: generated}
    else:
        cols = [source.column(c) for c in step.input_columns]
        rows = list(zip(*(column_strings(c) for c in cols))) if cols else []
        specs = [(prompt + prompt_suffix, name) for prompt, name in step.targets]
        new_values = generate_columns_batched(
            gateway,
            step.input_columns,
            rows,
            specs,
            question,
            budget=batch_budget,
        )

    from .tables import Column

    out_name = llm_output_name(step.source_table, step_index)
    new_columns = list(source.columns)
    for name in step.new_columns:
        new_columns.append(Column(name, "text", tuple(new_values[name])))
    augmented = Table(out_name, tuple(new_columns))
    engine.load_table(augmented)
    engine.repoint(step.source_table, out_name)
    return out_name


def execute_plan(
    plan: Plan,
    base: Table,
    gateway: Gateway,
    *,
    question: str = "",
    context: str | None = None,
    chunk_size: int = 30,
    parallelism: int = 4,
    batch_budget: int = 100,
    engine: Engine | None = None,
) -> ExecutionTrace:
    """Run the plan's steps in order, snapshotting every intermediate table.

    Per-step failures are recorded, never raised: the trace's final table is
    the output of the last successful step (or the base table) and
    ``fallback_used`` is set.
    """
    own_engine = engine is None
    engine = engine or Engine()
    trace = ExecutionTrace(base_table=plan.base_table, call_log=gateway.call_log)
    try:
        engine.load_table(base, plan.base_table)
        trace.snapshots[plan.base_table] = engine.read_table(plan.base_table)
        current = plan.base_table
        failed_at: int | None = None
        for index, step in enumerate(plan.steps, start=1):
            if failed_at is not None:
                trace.steps.append(StepRecord(
                    index, step.kind, current,
                    _intended_output(step, index), "skipped"))
                continue
            input_table = step.source_table if isinstance(step, LlmStep) else current
            try:
                output = _run_step(
                    step, index, gateway, engine,
                    question=question, context=context,
                    chunk_size=chunk_size, parallelism=parallelism,
                    batch_budget=batch_budget,
                )
                trace.snapshots[output] = engine.read_table(output)
                trace.steps.append(StepRecord(
                    index, step.kind, input_table, output, "ok", snapshot=output))
                current = output
            except (TandemError, sqlite3.Error) as exc:
                failed_at = index
                trace.steps.append(StepRecord(
                    index, step.kind, input_table,
                    _intended_output(step, index), "failed", error=str(exc)))
        trace.final_table = current
        trace.fallback_used = failed_at is not None
        return trace
    finally:
        if own_engine:
            engine.close()


def _intended_output(step: PlanStep, index: int) -> str:
    if isinstance(step, SqlStep):
        return step.output_table
    return llm_output_name(step.source_table, index)


def _run_step(
    step: PlanStep,
    index: int,
    gateway: Gateway,
    engine: Engine,
    *,
    question: str,
    context: str | None,
    chunk_size: int,
    parallelism: int,
    batch_budget: int,
) -> str:
    if isinstance(step, LlmStep):
        return execute_llm_step(
            step, gateway, engine, index,
            question=question, context=context,
            chunk_size=chunk_size, parallelism=parallelism,
            batch_budget=batch_budget,
        )
    statements = sqltext.split_statements(step.sql_text)
    if not statements:
        raise StepFailed("empty SQL step")
    sql_statements = [s for s in statements if sqltext.looks_like_sql(s)]
    if not sql_statements:
        raise StepFailed("no executable statements in SQL step")
    for i, stmt in enumerate(sql_statements):
        is_last = i == len(sql_statements) - 1
        wrap = (
            step.output_table
            if is_last and not engine.exists(step.output_table)
            else None
        )
        engine.run(adapt_sql(stmt, output_table=wrap))
    if not engine.exists(step.output_table):
        raise StepFailed(f"output table {step.output_table!r} was not created")
    return step.output_table


# --- trace persistence ------------------------------------------------------

def write_trace(
    trace: ExecutionTrace,
    run_dir: str | Path,
    *,
    plan_text: str | None = None,
    optimized_plan_text: str | None = None,
    extra: dict | None = None,
) -> Path:
    """Write plan.txt, step_<n>.csv snapshots, and trace.json.

    Output is byte-stable for a fixed trace: no timestamps or latencies are
    serialized.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if plan_text is not None:
        (run_dir / "plan.txt").write_text(plan_text, encoding="utf-8")
    if optimized_plan_text is not None:
        (run_dir / "plan_optimized.txt").write_text(
            optimized_plan_text, encoding="utf-8")
    (run_dir / "step_0.csv").write_text(
        to_csv(trace.snapshots[trace.base_table]), encoding="utf-8")
    for record in trace.steps:
        if record.status == "ok" and record.snapshot:
            (run_dir / f"step_{record.index}.csv").write_text(
                to_csv(trace.snapshots[record.snapshot]), encoding="utf-8")
    payload = {
        "base_table": trace.base_table,
        "final_table": trace.final_table,
        "fallback_used": trace.fallback_used,
        "steps": [
            {
                "index": r.index,
                "kind": r.kind,
                "input_table": r.input_table,
                "output_table": r.output_table,
                "status": r.status,
                "snapshot": r.snapshot,
                "error": r.error,
            }
            for r in trace.steps
        ],
        "calls": [
            {
                "template_id": e.template_id,
                "input_tokens": e.input_tokens,
                "output_tokens": e.output_tokens,
                "outcome": e.outcome,
            }
            for e in trace.call_log
        ],
    }
    if extra:
        payload.update(extra)
    (run_dir / "trace.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return run_dir
