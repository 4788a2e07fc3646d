"""Plan rewrite passes that cut steps without changing the final answer.

Four passes run in order, each to a fixed point, and the whole sequence
repeats until the plan stops changing (which makes optimize idempotent):

1. dead-step elimination: steps whose output nothing ever reads
2. SQL reorder: pull a pure filter ahead of an adjacent LLM step so the LLM
   sees fewer rows
3. SQL merge: fuse consecutive SQL steps by subquery inlining
4. LLM merge: fuse consecutive LLM steps on one source into a column-batched
   step

Every pass is conservative: if the SQL cannot be resolved by identifier
scanning, or a later step might observe the difference, the pass does
nothing. Any oracle-detected divergence is treated as a pass bug, never an
accepted accuracy cost.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from . import sqltext
from .errors import NoStepsFound, TandemError
from .executor import execute_plan
from .gateway import Gateway
from .plan import (
    ERROR_ISSUES,
    LlmStep,
    Plan,
    PlanStep,
    SqlStep,
    parse_executable_plan,
    serialize_plan,
    validate_plan,
)
from .tables import Table

DEFAULT_PASSES = ("drop_dead", "reorder_sql", "merge_sql", "merge_llm")

_LLM_NAME_RE = re.compile(r"_llm\d+$")


@dataclass
class OptimizationStats:
    llm_drops: int = 0
    sql_drops: int = 0
    sql_merges: int = 0
    sql_reorders: int = 0
    llm_merges: int = 0
    steps_before: int = 0
    steps_after: int = 0
    llm_before: int = 0
    llm_after: int = 0
    sql_before: int = 0
    sql_after: int = 0

    def add(self, other: "OptimizationStats") -> None:
        for name in (
            "llm_drops", "sql_drops", "sql_merges", "sql_reorders",
            "llm_merges", "steps_before", "steps_after",
            "llm_before", "llm_after", "sql_before", "sql_after",
        ):
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def optimize(
    plan: Plan,
    passes: Sequence[str] = DEFAULT_PASSES,
) -> tuple[Plan, OptimizationStats]:
    """Apply the enabled passes; returns the rewritten plan and counters."""
    stats = OptimizationStats(
        steps_before=len(plan.steps),
        llm_before=plan.count("LLM"),
        sql_before=plan.count("SQL"),
    )
    steps = list(plan.steps)
    if not _references_llm_materializations(steps):
        for _ in range(10):
            before = list(steps)
            if "drop_dead" in passes:
                steps = _drop_dead(steps, stats)
            if "reorder_sql" in passes:
                steps = _reorder_sql(steps, stats)
            if "merge_sql" in passes:
                steps = _merge_sql(steps, stats)
            if "merge_llm" in passes:
                steps = _merge_llm(steps, stats)
            if steps == before:
                break
    result = Plan(tuple(steps), plan.base_table)
    stats.steps_after = len(result.steps)
    stats.llm_after = result.count("LLM")
    stats.sql_after = result.count("SQL")
    return result, stats


def _references_llm_materializations(steps: Sequence[PlanStep]) -> bool:
    """Rewrites shift step indices, which renames ``<src>_llm<i>`` outputs;
    if anything refers to one of those names by hand, skip all passes."""
    for step in steps:
        names: set[str] = set()
        if isinstance(step, SqlStep):
            names = sqltext.identifiers(step.sql_text)
        else:
            names = {step.source_table, *step.input_columns}
        if any(_LLM_NAME_RE.search(name) for name in names):
            return True
    return False


def _mentions(step: PlanStep, name: str) -> bool:
    if isinstance(step, SqlStep):
        return name in sqltext.identifiers(step.sql_text)
    if name == step.source_table or name in step.input_columns:
        return True
    return any(
        re.search(rf"\b{re.escape(name)}\b", prompt) for prompt, _ in step.targets
    )


def _projects_explicit_columns(step: PlanStep, excluding: Sequence[str]) -> bool:
    """True when a later SQL step reads its source through an explicit column
    list that cannot observe any of ``excluding``."""
    if not isinstance(step, SqlStep):
        return False
    stmt = sqltext.single_select(step.sql_text)
    if stmt is None:
        return False
    body = sqltext.select_body(stmt)
    match = re.match(r"\s*SELECT\s+(.*?)\s+FROM\s", body, re.IGNORECASE | re.DOTALL)
    if not match or "*" in match.group(1):
        return False
    idents = sqltext.identifiers(stmt)
    return not any(col in idents for col in excluding)


def _drop_dead(steps: list[PlanStep], stats: OptimizationStats) -> list[PlanStep]:
    changed = True
    while changed:
        changed = False
        for i, step in enumerate(steps):
            if i == len(steps) - 1:
                continue
            later = steps[i + 1:]
            if isinstance(step, SqlStep):
                if sqltext.single_select(step.sql_text) is None:
                    continue  # non-SELECT statements may have side effects
                if any(_mentions(s, step.output_table) for s in later):
                    continue
                stats.sql_drops += 1
            else:
                if any(
                    any(_mentions(s, col) for col in step.new_columns)
                    for s in later
                ):
                    continue
                # a later reader of the source would observe the appended
                # column through SELECT * or another LLM materialization
                source_readers = [s for s in later if _mentions(s, step.source_table)]
                if any(
                    not _projects_explicit_columns(s, step.new_columns)
                    for s in source_readers
                ):
                    continue
                stats.llm_drops += 1
            steps = steps[:i] + steps[i + 1:]
            changed = True
            break
    return steps


def _reorder_sql(steps: list[PlanStep], stats: OptimizationStats) -> list[PlanStep]:
    changed = True
    while changed:
        changed = False
        for i in range(len(steps) - 1):
            llm, sql = steps[i], steps[i + 1]
            if not isinstance(llm, LlmStep) or not isinstance(sql, SqlStep):
                continue
            stmt = sqltext.single_select(sql.sql_text)
            if stmt is None:
                continue
            simple = sqltext.simple_filter_projection(stmt)
            if simple is None:
                continue
            source, predicate = simple
            if source != llm.source_table:
                continue
            predicate_idents = sqltext.identifiers(f"SELECT 1 WHERE {predicate}") if predicate else set()
            if any(col in predicate_idents for col in llm.new_columns):
                continue
            if sql.output_table == llm.source_table:
                continue
            # after the swap the source is never augmented, so nothing later
            # may read it directly
            if any(_mentions(s, llm.source_table) for s in steps[i + 2:]):
                continue
            steps = (
                steps[:i]
                + [sql, replace(llm, source_table=sql.output_table)]
                + steps[i + 2:]
            )
            stats.sql_reorders += 1
            changed = True
            break
    return steps


def _merge_sql(steps: list[PlanStep], stats: OptimizationStats) -> list[PlanStep]:
    changed = True
    while changed:
        changed = False
        for i in range(len(steps) - 1):
            first, second = steps[i], steps[i + 1]
            if not isinstance(first, SqlStep) or not isinstance(second, SqlStep):
                continue
            first_stmt = sqltext.single_select(first.sql_text)
            second_stmt = sqltext.single_select(second.sql_text)
            if first_stmt is None or second_stmt is None:
                continue
            if sqltext.referenced_tables(second_stmt) != {first.output_table}:
                continue
            if any(_mentions(s, first.output_table) for s in steps[i + 2:]):
                continue
            body = sqltext.select_body(first_stmt)
            merged_sql = sqltext.inline_table(
                second_stmt, first.output_table, body
            )
            steps = (
                steps[:i]
                + [SqlStep(merged_sql, second.output_table)]
                + steps[i + 2:]
            )
            stats.sql_merges += 1
            changed = True
            break
    return steps


def _merge_llm(steps: list[PlanStep], stats: OptimizationStats) -> list[PlanStep]:
    changed = True
    while changed:
        changed = False
        for i in range(len(steps) - 1):
            first, second = steps[i], steps[i + 1]
            if not isinstance(first, LlmStep) or not isinstance(second, LlmStep):
                continue
            if first.source_table != second.source_table:
                continue
            # the second step must not consume what the first produced
            if any(
                col in second.input_columns
                or re.search(rf"\b{re.escape(col)}\b", prompt)
                for col in first.new_columns
                for prompt, _ in second.targets
            ):
                continue
            if any(col in second.input_columns for col in first.new_columns):
                continue
            merged_inputs = list(first.input_columns)
            for col in second.input_columns:
                if col not in merged_inputs:
                    merged_inputs.append(col)
            reason = "; ".join(r for r in (first.reason, second.reason) if r)
            merged = LlmStep(
                reason=reason,
                source_table=first.source_table,
                input_columns=tuple(merged_inputs),
                prompt=first.prompt,
                new_column=first.new_column,
                extra_targets=first.extra_targets + second.targets,
            )
            steps = steps[:i] + [merged] + steps[i + 2:]
            stats.llm_merges += 1
            changed = True
            break
    return steps


def llm_optimize(plan: Plan, gateway: Gateway, question: str = "") -> Plan:
    """Ask the model to rewrite the plan; degrade to identity on any failure."""
    try:
        response = gateway.ask(
            "plan_optimization",
            plan=serialize_plan(plan),
            question=question,
        )
        candidate = parse_executable_plan(response, plan.base_table)
    except TandemError:
        return plan
    issues = validate_plan(candidate, {plan.base_table: None})
    if any(issue.kind in ERROR_ISSUES for issue in issues):
        return plan
    return candidate


# --- equivalence oracle -----------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    status: str  # equivalent | divergent | inconclusive
    detail: str = ""

    def __bool__(self) -> bool:
        return self.status == "equivalent"


def check_equivalence(
    plan_a: Plan,
    plan_b: Plan,
    table: Table,
    backend,
    *,
    question: str = "",
) -> Verdict:
    """Execute both plans and compare final tables as row multisets.

    The backend must be deterministic and stateless across runs (a scripted
    per-value mapper). Column names are lowercased and column order ignored.
    Any execution failure yields an inconclusive verdict.
    """
    outcomes = []
    for plan in (plan_a, plan_b):
        trace = execute_plan(plan, table, Gateway(backend), question=question)
        if trace.failed:
            reasons = [s.error for s in trace.steps if s.status == "failed"]
            return Verdict("inconclusive", f"execution failed: {reasons}")
        outcomes.append(trace.snapshots[trace.final_table])
    left, right = (_canonical(t) for t in outcomes)
    if left[0] != right[0]:
        return Verdict("divergent", f"columns differ: {left[0]} vs {right[0]}")
    if left[1] != right[1]:
        missing = len([r for r in left[1] if r not in right[1]])
        return Verdict("divergent", f"row multisets differ ({missing} unmatched)")
    return Verdict("equivalent")


def _canonical(table: Table) -> tuple[list[str], list[tuple]]:
    order = sorted(range(len(table.columns)), key=lambda j: table.columns[j].name.lower())
    names = [table.columns[j].name.lower() for j in order]
    rows = sorted(
        tuple(_canon_value(row[j]) for j in order) for row in table.rows()
    )
    return names, rows


def _canon_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


# --- reporting ---------------------------------------------------------------

def format_optimization_report(stats: OptimizationStats) -> str:
    """Render the optimization-effect accounting block."""
    lines = [
        "#LLM Optimization Effect",
        f"#LLM Drops    {stats.llm_drops:>6}",
        f"#SQL Drops    {stats.sql_drops:>6}",
        f"#SQL Merge    {stats.sql_merges:>6}",
        f"#SQL Reorder  {stats.sql_reorders:>6}",
        f"#LLM Merge    {stats.llm_merges:>6}",
        "",
        f"{'':14}{'Before Opt.':>12}{'After Opt.':>12}",
        f"{'#LLM':14}{stats.llm_before:>12}{stats.llm_after:>12}",
        f"{'#SQL':14}{stats.sql_before:>12}{stats.sql_after:>12}",
        f"{'#Total Steps':14}{stats.steps_before:>12}{stats.steps_after:>12}",
    ]
    return "\n".join(lines)
