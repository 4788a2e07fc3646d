"""Plan intermediate representation and the two textual plan grammars.

Draft plans are numbered prose lines::

    Step 1: SQL - Standardize the Year column ...
    Step 2: LLM - ...

Executable plans are step blocks. SQL blocks carry statements verbatim; LLM
blocks carry labeled fields::

    Step_1 - LLM:
    - Reason: ...
    - Table name: ...
    - original column to be used: ...
    - LLM prompt: ...
    - New column name: ...
    Step_2 - SQL:
    CREATE TABLE out AS SELECT ...

Model output drifts between "Step 1:", "Step_1 -", and "LLM_Step -" headers;
the parsers accept every variant observed in the wild and renumber steps
contiguously. There is no formal upstream grammar; this module is the
reference for what the rest of the package emits and accepts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from . import sqltext
from .errors import MalformedLlmStep, NoStepsFound, UnknownStepKind

KNOWN_KINDS = {"SQL", "LLM"}
# Kinds the wider ecosystem uses but this engine does not execute.
REJECTED_KINDS = {"VLM", "PYTHON", "CODE", "VISION"}


@dataclass(frozen=True)
class DraftStep:
    index: int
    kind: str  # SQL | LLM
    description: str


@dataclass(frozen=True)
class SqlStep:
    sql_text: str
    output_table: str

    @property
    def kind(self) -> str:
        return "SQL"


@dataclass(frozen=True)
class LlmStep:
    reason: str
    source_table: str
    input_columns: tuple[str, ...]
    prompt: str
    new_column: str
    extra_targets: tuple[tuple[str, str], ...] = ()

    @property
    def kind(self) -> str:
        return "LLM"

    @property
    def targets(self) -> tuple[tuple[str, str], ...]:
        """All (prompt, new_column) pairs this step produces."""
        return ((self.prompt, self.new_column), *self.extra_targets)

    @property
    def new_columns(self) -> tuple[str, ...]:
        return tuple(name for _, name in self.targets)


PlanStep = SqlStep | LlmStep


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]
    base_table: str

    @property
    def kinds(self) -> list[str]:
        return [step.kind for step in self.steps]

    def count(self, kind: str) -> int:
        return sum(1 for step in self.steps if step.kind == kind)


def llm_output_name(source_table: str, step_index: int) -> str:
    """Materialization name for the table an LLM step produces."""
    return f"{source_table}_llm{step_index}"


# --- draft plans -----------------------------------------------------------

_DRAFT_STEP_RE = re.compile(
    r"^\s*(?:[#>*]+\s*)?(?:(?:new\s+|revised\s+)?plan\s*:\s*)?"
    r"(?:[#>*]+\s*)?step[\s_]*(\d+)\s*[:.\-–—]\s*"
    r"([A-Za-z]+)\s*(?:[:.\-–—]\s*)?(.*)$",
    re.IGNORECASE,
)


def parse_draft_plan(text: str) -> list[DraftStep]:
    """Extract numbered SQL/LLM steps from free-form planner output.

    Prose around the plan is ignored; continuation lines attach to the open
    step. Raises NoStepsFound when nothing matches and UnknownStepKind when a
    step announces a kind this engine cannot run (VLM and friends).
    """
    steps: list[DraftStep] = []
    current: list[str] | None = None
    current_kind = ""
    for raw_line in text.splitlines():
        line = raw_line.strip().strip("`")
        match = _DRAFT_STEP_RE.match(line)
        if match:
            kind = match.group(2).upper()
            if kind in KNOWN_KINDS:
                if current is not None:
                    steps.append(DraftStep(len(steps) + 1, current_kind, " ".join(current).strip()))
                current_kind = kind
                current = [match.group(3).strip()] if match.group(3).strip() else []
                continue
            if kind in REJECTED_KINDS:
                raise UnknownStepKind(raw_line)
            # anything else is prose that merely mentions a step
        if current is not None and line:
            current.append(line)
    if current is not None:
        steps.append(DraftStep(len(steps) + 1, current_kind, " ".join(current).strip()))
    if not steps:
        raise NoStepsFound("no plan steps in text")
    return steps


def draft_to_text(steps: Sequence[DraftStep]) -> str:
    return "\n".join(f"Step {s.index}: {s.kind} - {s.description}" for s in steps)


# --- executable plans ------------------------------------------------------

_BLOCK_HEADER_RE = re.compile(
    r"^\s*(?:"
    r"step[\s_]*(?P<num>\d+)\s*[-:.]*\s*(?P<kind>SQL|LLM)\b"
    r"|(?P<kind2>SQL|LLM)[\s_]*step(?:[\s_]*(?P<num2>\d+))?"
    r")\s*[-:]*\s*(?P<rest>.*)$",
    re.IGNORECASE,
)

_LLM_FIELD_RE = re.compile(
    r"^\s*-?\s*(?P<label>reason|table\s+name|original\s+columns?\s+to\s+be\s+used"
    r"|columns?\s+to\s+be\s+used|llm\s+prompt|prompt|new\s+column\s+name)"
    r"\s*[:\-]\s*(?P<value>.*)$",
    re.IGNORECASE,
)

_TABLE_HINT_RE = re.compile(
    r"^\s*(?:--\s*)?table(?:\s+name)?(?:\s+to\s+be\s+used[^:]*)?\s*(?:created)?\s*:\s*"
    r"[`\"]?(?P<name>[A-Za-z_][A-Za-z0-9_]*)[`\"]?\s*\.?\s*$",
    re.IGNORECASE,
)


def _clean_ident(value: str) -> str:
    return value.strip().strip("`\"'").rstrip(".").strip()


def parse_executable_plan(text: str, base_table: str) -> Plan:
    """Parse codegen output into a Plan over ``base_table``."""
    lines = text.splitlines()
    blocks: list[tuple[str, list[str]]] = []
    current: list[str] | None = None
    for raw_line in lines:
        stripped = raw_line.strip()
        if stripped.startswith("```"):
            continue
        match = _BLOCK_HEADER_RE.match(stripped)
        if match and (match.group("kind") or match.group("kind2")):
            kind = (match.group("kind") or match.group("kind2")).upper()
            rest = match.group("rest").strip()
            current = [rest] if rest else []
            blocks.append((kind, current))
            continue
        if current is not None:
            current.append(raw_line.rstrip())
    if not blocks:
        raise NoStepsFound("no executable steps in text")

    steps: list[PlanStep] = []
    for index, (kind, content) in enumerate(blocks, start=1):
        if kind == "SQL":
            steps.append(_parse_sql_block(content, index))
        else:
            steps.append(_parse_llm_block(content))
    return Plan(tuple(steps), base_table)


def _parse_sql_block(content: list[str], index: int) -> SqlStep:
    hint: str | None = None
    sql_lines: list[str] = []
    for line in content:
        hint_match = _TABLE_HINT_RE.match(line)
        if hint_match:
            hint = hint_match.group("name")
            continue
        sql_lines.append(line)
    sql = "\n".join(sql_lines).strip()
    # drop trailing commentary that is not SQL (e.g. "Dataframe created ...")
    kept = [
        stmt for stmt in sqltext.split_statements(sql)
        if sqltext.looks_like_sql(stmt)
    ]
    sql = ";\n".join(kept) + (";" if kept and sql.rstrip().endswith(";") else "")
    sql = sql.strip()
    output = hint
    if output is None:
        for stmt in sqltext.split_statements(sql):
            created = sqltext.create_table_name(stmt)
            if created:
                output = created
    if output is None:
        output = f"step_{index}"
    return SqlStep(sql, output)


_FIELD_KEYS = {
    "reason": "reason",
    "table name": "table",
    "original column to be used": "columns",
    "original columns to be used": "columns",
    "column to be used": "columns",
    "columns to be used": "columns",
    "llm prompt": "prompt",
    "prompt": "prompt",
    "new column name": "new_column",
}


def _parse_llm_block(content: list[str]) -> LlmStep:
    # buckets keyed by field; prompts and new-column names may repeat for
    # column-batched steps, so those collect into lists of buckets
    scalars: dict[str, list[str]] = {}
    prompts: list[list[str]] = []
    new_columns: list[list[str]] = []
    last: list[str] | None = None
    for line in content:
        match = _LLM_FIELD_RE.match(line)
        if match:
            label = re.sub(r"\s+", " ", match.group("label").lower())
            key = _FIELD_KEYS[label]
            bucket = [match.group("value").strip()]
            if key == "prompt":
                prompts.append(bucket)
            elif key == "new_column":
                new_columns.append(bucket)
            else:
                scalars[key] = bucket
            last = bucket
        elif line.strip() and last is not None:
            last.append(line.strip())

    def joined(bucket: list[str] | None) -> str:
        return " ".join(p for p in bucket if p).strip() if bucket else ""

    source = joined(scalars.get("table"))
    if not source:
        raise MalformedLlmStep("Table name")
    columns_raw = joined(scalars.get("columns"))
    if not columns_raw:
        raise MalformedLlmStep("original column to be used")
    prompt_values = [joined(b) for b in prompts if joined(b)]
    if not prompt_values:
        raise MalformedLlmStep("LLM prompt")
    column_values = [_clean_ident(joined(b)) for b in new_columns if joined(b)]
    if not column_values or len(prompt_values) != len(column_values):
        raise MalformedLlmStep("New column name")
    input_columns = tuple(
        _clean_ident(c) for c in columns_raw.split(",") if _clean_ident(c)
    )
    targets = list(zip(prompt_values, column_values))
    first_prompt, first_column = targets[0]
    return LlmStep(
        reason=joined(scalars.get("reason")),
        source_table=_clean_ident(source),
        input_columns=input_columns,
        prompt=first_prompt,
        new_column=first_column,
        extra_targets=tuple(targets[1:]),
    )


def serialize_plan(plan: Plan) -> str:
    """Emit the executable grammar; parse_executable_plan round-trips it."""
    parts: list[str] = []
    for index, step in enumerate(plan.steps, start=1):
        if isinstance(step, SqlStep):
            parts.append(f"Step_{index} - SQL:")
            parts.append(step.sql_text)
            created = {
                sqltext.create_table_name(stmt)
                for stmt in sqltext.split_statements(step.sql_text)
            }
            if step.output_table not in created:
                parts.append(f"Table name to be used: {step.output_table}")
        else:
            parts.append(f"Step_{index} - LLM:")
            parts.append(f"- Reason: {_oneline(step.reason)}")
            parts.append(f"- Table name: {step.source_table}")
            parts.append(
                f"- original column to be used: {', '.join(step.input_columns)}"
            )
            for prompt, new_column in step.targets:
                parts.append(f"- LLM prompt: {_oneline(prompt)}")
                parts.append(f"- New column name: {new_column}")
        parts.append("")
    return "\n".join(parts).strip() + ("\n" if parts else "")


def _oneline(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


# --- validation ------------------------------------------------------------

ISSUE_UNKNOWN_TABLE = "unknown_table"
ISSUE_UNKNOWN_COLUMN = "unknown_column"
ISSUE_COLUMN_COLLISION = "column_collision"
ISSUE_DEAD_STEP = "dead_step"

ERROR_ISSUES = {ISSUE_UNKNOWN_TABLE, ISSUE_UNKNOWN_COLUMN, ISSUE_COLUMN_COLLISION}


@dataclass(frozen=True)
class Issue:
    kind: str
    step_index: int
    detail: str


def validate_plan(plan: Plan, schema: Mapping[str, Sequence[str] | None]) -> list[Issue]:
    """Simulate schema evolution step by step and flag bad references.

    ``schema`` maps table name to its column list, or None for tables whose
    columns are unknown (opaque). Returns issues; an empty list means the
    plan is safe to execute against the registry.
    """
    known: dict[str, list[str] | None] = {
        name: (list(cols) if cols is not None else None)
        for name, cols in schema.items()
    }
    issues: list[Issue] = []
    if plan.base_table not in known:
        issues.append(Issue(ISSUE_UNKNOWN_TABLE, 0, plan.base_table))
        known[plan.base_table] = None

    for index, step in enumerate(plan.steps, start=1):
        if isinstance(step, SqlStep):
            statements = sqltext.split_statements(step.sql_text)
            created_here: set[str] = set()
            for stmt in statements:
                for table in sqltext.referenced_tables(stmt):
                    if table not in known and table not in created_here:
                        issues.append(Issue(ISSUE_UNKNOWN_TABLE, index, table))
                for col in _select_list_unknowns(stmt, known):
                    issues.append(Issue(ISSUE_UNKNOWN_COLUMN, index, col))
                created = sqltext.create_table_name(stmt)
                if created:
                    created_here.add(created)
                    known[created] = _derive_schema(stmt, known)
            if step.output_table not in known:
                known[step.output_table] = None
        else:
            if step.source_table not in known:
                issues.append(Issue(ISSUE_UNKNOWN_TABLE, index, step.source_table))
                known[step.source_table] = None
            source_cols = known[step.source_table]
            if source_cols is not None:
                for col in step.input_columns:
                    if col not in source_cols:
                        issues.append(Issue(ISSUE_UNKNOWN_COLUMN, index, col))
                for new_col in step.new_columns:
                    if new_col in source_cols:
                        issues.append(Issue(ISSUE_COLUMN_COLLISION, index, new_col))
            out_name = llm_output_name(step.source_table, index)
            augmented = (
                None if source_cols is None
                else source_cols + [c for c in step.new_columns if c not in source_cols]
            )
            known[out_name] = augmented
            # the source name now refers to the augmented table
            known[step.source_table] = augmented

    issues.extend(_dead_steps(plan))
    return issues


def _derive_schema(statement: str, known: Mapping[str, list[str] | None]) -> list[str] | None:
    """Output columns of a CREATE TABLE AS SELECT, when statically derivable."""
    body = sqltext.select_body(statement)
    match = re.match(r"\s*SELECT\s+(.*?)\s+FROM\s+", body, re.IGNORECASE | re.DOTALL)
    if not match:
        return None
    sources = sqltext.referenced_tables(body)
    select_list = _split_top_level(match.group(1))
    columns: list[str] = []
    for item in select_list:
        item = item.strip()
        if item == "*":
            if len(sources) != 1:
                return None
            source_cols = known.get(next(iter(sources)))
            if source_cols is None:
                return None
            columns.extend(source_cols)
            continue
        alias = re.search(r"\bAS\s+[`\"]?([A-Za-z_][A-Za-z0-9_]*)[`\"]?\s*$",
                          item, re.IGNORECASE)
        if alias:
            columns.append(alias.group(1))
            continue
        if re.fullmatch(r"[`\"]?[A-Za-z_][A-Za-z0-9_]*[`\"]?", item):
            columns.append(item.strip('`"'))
            continue
        return None
    return columns


def _select_list_unknowns(
    statement: str, known: Mapping[str, list[str] | None]
) -> list[str]:
    """Plain select-list identifiers absent from a single known source."""
    body = sqltext.select_body(statement)
    match = re.match(r"\s*SELECT\s+(.*?)\s+FROM\s+", body, re.IGNORECASE | re.DOTALL)
    if not match:
        return []
    sources = sqltext.referenced_tables(body)
    if len(sources) != 1:
        return []
    source_cols = known.get(next(iter(sources)))
    if source_cols is None:
        return []
    unknowns = []
    for item in _split_top_level(match.group(1)):
        item = item.strip()
        if re.fullmatch(r"[`\"]?[A-Za-z_][A-Za-z0-9_]*[`\"]?", item):
            name = item.strip('`"')
            if name != "*" and name not in source_cols:
                unknowns.append(name)
    return unknowns


def _split_top_level(text: str) -> list[str]:
    parts, depth, buf = [], 0, []
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
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return parts


def _dead_steps(plan: Plan) -> list[Issue]:
    issues = []
    for index, step in enumerate(plan.steps, start=1):
        if index == len(plan.steps):
            continue
        later = plan.steps[index:]
        if isinstance(step, SqlStep):
            if not _name_used_later(step.output_table, later):
                issues.append(Issue(ISSUE_DEAD_STEP, index, step.output_table))
        else:
            out_name = llm_output_name(step.source_table, index)
            used = _name_used_later(out_name, later) or any(
                _name_used_later(col, later) for col in step.new_columns
            )
            if not used:
                issues.append(Issue(ISSUE_DEAD_STEP, index, out_name))
    return issues


def _name_used_later(name: str, later: Sequence[PlanStep]) -> bool:
    for step in later:
        if isinstance(step, SqlStep):
            if name in sqltext.identifiers(step.sql_text):
                return True
        else:
            if name == step.source_table or name in step.input_columns:
                return True
            if any(re.search(rf"\b{re.escape(name)}\b", prompt)
                   for prompt, _ in step.targets):
                return True
    return False
