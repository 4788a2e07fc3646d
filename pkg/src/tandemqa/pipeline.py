"""End-to-end question answering over a single table.

Fixed stage order: sanitize, relevant-column selection, column description,
optional paragraph filtering, draft planning, one verification round,
executable codegen (with one repair retry), optional optimization, execution,
answer extraction. Without a paragraph that is exactly six completions plus
whatever the plan's LLM steps need; every stage's output is kept on the
QaResult for auditability.
"""

from __future__ import annotations

import ast
import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from . import sqltext
from .errors import (
    CodegenFailed,
    NoStepsFound,
    PipelineFailed,
    PlanGenerationFailed,
    TandemError,
    UnknownStepKind,
)
from .executor import ExecutionTrace, execute_plan, write_trace
from .gateway import (
    DEFAULT_BATCH_BUDGET,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_MAX_TOKENS,
    DEFAULT_PARALLELISM,
    DEFAULT_TEMPERATURE,
    Gateway,
    make_backend,
)
from .optimizer import OptimizationStats, llm_optimize, optimize
from .plan import (
    ERROR_ISSUES,
    DraftStep,
    Issue,
    Plan,
    draft_to_text,
    parse_draft_plan,
    parse_executable_plan,
    serialize_plan,
    validate_plan,
)
from .tables import (
    RenameMap,
    Table,
    project_columns,
    render_for_prompt,
    sanitize_schema,
)

NOT_PRESENT = "The answer is not present in the table."


@dataclass
class PipelineConfig:
    backend: str = "echo"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    chunk_size: int = DEFAULT_CHUNK_SIZE
    parallelism: int = DEFAULT_PARALLELISM
    batch_budget: int = DEFAULT_BATCH_BUDGET
    optimize: bool = True
    use_llm_optimizer: bool = False
    row_limit: int = 30
    trace_dir: str | None = None
    api_key_env: str = "TANDEMQA_API_KEY"

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in payload.items() if k in known})

    def make_gateway(self) -> Gateway:
        return Gateway(
            make_backend(self.backend),
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )


@dataclass
class ColumnMeta:
    name: str
    data_type: str = ""
    formatting_notes: str = ""
    description: str = ""


@dataclass
class QaContext:
    table: Table
    question: str
    paragraph: str | None = None
    table_description: str = ""
    column_meta: list[ColumnMeta] = field(default_factory=list)
    relevant_columns: list[str] = field(default_factory=list)
    filtered_context: str | None = None
    rename_map: RenameMap | None = None


@dataclass
class QaResult:
    answer: str
    trace: ExecutionTrace
    plan_draft: str = ""
    plan_verified: str = ""
    plan_executable: str = ""
    plan_optimized: str = ""
    stats: OptimizationStats | None = None
    issues: list[Issue] = field(default_factory=list)
    failure: str | None = None  # plan | codegen | None
    context: QaContext | None = None


def _fewshot_examples() -> str:
    return (
        resources.files("tandemqa.data")
        .joinpath("planning_fewshots.txt")
        .read_text(encoding="utf-8")
    )


# --- stages -----------------------------------------------------------------

def select_relevant_columns(
    table: Table, question: str, gateway: Gateway, row_limit: int = 30
) -> list[str]:
    """Ask for the columns worth keeping; fall back to all columns whenever
    the reply is unusable."""
    text = gateway.ask(
        "relevant_columns",
        table_name=table.name,
        table=render_for_prompt(table, row_limit),
        question=question,
    )
    names = _parse_name_list(text)
    known = set(table.column_names)
    picked = [n for n in names if n in known]
    return picked or list(table.column_names)


def _parse_name_list(text: str) -> list[str]:
    match = re.search(r"\[.*?\]", text, re.DOTALL)
    if not match:
        return []
    try:
        parsed = ast.literal_eval(match.group(0))
    except (ValueError, SyntaxError):
        parsed = [p.strip().strip("'\"") for p in match.group(0)[1:-1].split(",")]
    if not isinstance(parsed, list):
        return []
    return [str(p).strip() for p in parsed if str(p).strip()]


def describe_columns(
    table: Table, question: str, gateway: Gateway, row_limit: int = 30
) -> tuple[str, list[ColumnMeta]]:
    """Parse the pipe-table reply into per-column metadata.

    Rows naming unknown columns, and any prose, fold into the table
    description so nothing the model said is lost.
    """
    text = gateway.ask(
        "column_description",
        table_name=table.name,
        table=render_for_prompt(table, row_limit),
        question=question,
    )
    metas: list[ColumnMeta] = []
    described: set[str] = set()
    prose: list[str] = []
    known = set(table.column_names)
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("|") and set(stripped) <= {"|", "-", " ", ":"}:
            continue  # separator row
        cells = [c.strip() for c in stripped.strip("|").split("|")] if "|" in stripped else []
        if len(cells) >= 2 and cells[0] in known and cells[0] not in described:
            metas.append(ColumnMeta(
                name=cells[0],
                data_type=cells[1] if len(cells) > 1 else "",
                formatting_notes=cells[2] if len(cells) > 2 else "",
                description=cells[3] if len(cells) > 3 else "",
            ))
            described.add(cells[0])
        elif stripped and "|" not in stripped:
            prose.append(stripped)
    return "\n".join(prose).strip(), metas


def filter_paragraph(
    paragraph: str, question: str, table: Table, gateway: Gateway,
    row_limit: int = 30,
) -> str:
    text = gateway.ask(
        "paragraph_filter",
        table=render_for_prompt(table, row_limit),
        question=question,
        paragraph=paragraph,
    )
    return text.strip()


def _meta_text(ctx: QaContext) -> str:
    lines = [ctx.table_description] if ctx.table_description else []
    for meta in ctx.column_meta:
        lines.append(
            f"{meta.name} | {meta.data_type} | {meta.formatting_notes} | "
            f"{meta.description}"
        )
    return "\n".join(lines)


def generate_plan(ctx: QaContext, gateway: Gateway, row_limit: int = 30) -> list[DraftStep]:
    """Draft a plan; one retry on unusable output, then PlanGenerationFailed."""
    table = project_columns(ctx.table, ctx.relevant_columns or ctx.table.column_names)
    bindings = dict(
        examples=_fewshot_examples(),
        table_name=ctx.table.name,
        table=render_for_prompt(table, row_limit),
        question=ctx.question,
        description=_meta_text(ctx),
    )
    last_error: TandemError | None = None
    for _ in range(2):
        text = gateway.ask("planning", **bindings)
        try:
            return parse_draft_plan(text)
        except (NoStepsFound, UnknownStepKind) as exc:
            last_error = exc
    raise PlanGenerationFailed(str(last_error))


def verify_plan(
    ctx: QaContext, draft: list[DraftStep], gateway: Gateway, row_limit: int = 30
) -> list[DraftStep]:
    """One verification round; the draft stands when the reply has no plan."""
    table = project_columns(ctx.table, ctx.relevant_columns or ctx.table.column_names)
    text = gateway.ask(
        "verify_plan",
        table_name=ctx.table.name,
        table=render_for_prompt(table, row_limit),
        description=_meta_text(ctx),
        question=ctx.question,
        plan=draft_to_text(draft),
    )
    try:
        return parse_draft_plan(text)
    except TandemError:
        return draft


def generate_executable(
    ctx: QaContext,
    verified: list[DraftStep],
    gateway: Gateway,
    row_limit: int = 30,
) -> tuple[Plan, list[Issue]]:
    """Turn the verified draft into an executable plan.

    Validation runs against the full sanitized schema; hallucinated
    table/column references earn one repair retry with the issues appended to
    the prompt. Residual issues are returned, not raised, because the
    executor's fallback absorbs them.
    """
    table = project_columns(ctx.table, ctx.relevant_columns or ctx.table.column_names)
    schema = {ctx.table.name: list(ctx.table.column_names)}
    bindings = dict(
        table_name=ctx.table.name,
        schema=", ".join(ctx.table.column_names),
        description=_meta_text(ctx),
        table=render_for_prompt(table, row_limit),
        question=ctx.question,
        plan=draft_to_text(verified),
    )
    plan: Plan | None = None
    issues: list[Issue] = []
    parse_failures = 0
    for attempt in (0, 1):
        text = gateway.ask("code_execution", **bindings)
        try:
            plan = parse_executable_plan(text, ctx.table.name)
        except TandemError as exc:
            parse_failures += 1
            if parse_failures == 2:
                raise CodegenFailed(str(exc))
            continue
        issues = validate_plan(plan, schema)
        hallucinations = [i for i in issues if i.kind in ERROR_ISSUES]
        if not hallucinations or attempt == 1:
            break
        bindings["plan"] = (
            draft_to_text(verified)
            + "\nThe previous attempt had these problems, fix them:\n"
            + "\n".join(f"- {i.kind}: {i.detail}" for i in hallucinations)
        )
    if plan is None:
        raise CodegenFailed("no parseable plan")
    return plan, issues


def extract_answer(
    final_table: Table,
    question: str,
    context: str | None,
    gateway: Gateway,
    row_limit: int = 30,
) -> str:
    """Short answer from the final table; an empty table answers the
    not-present sentinel without spending a call."""
    if final_table.row_count == 0 or not final_table.columns:
        return NOT_PRESENT
    question_block = question
    if context:
        question_block += f"\nRelevant information: {context}"
    text = gateway.ask(
        "answer_extraction",
        table_name=final_table.name,
        table=render_for_prompt(final_table, row_limit),
        question=question_block,
    )
    return text.strip()


# --- orchestration ------------------------------------------------------------

def run_id_for(table: Table, question: str) -> str:
    return hashlib.sha256(f"{table.name}\x1f{question}".encode()).hexdigest()[:12]


def answer_question(
    table: Table,
    question: str,
    paragraph: str | None = None,
    config: PipelineConfig | None = None,
    gateway: Gateway | None = None,
) -> QaResult:
    """Run the whole pipeline for one question.

    Draft or codegen failure degrades to answering from the base table; only
    a hard backend failure on that degraded path raises PipelineFailed.
    """
    config = config or PipelineConfig()
    gateway = gateway or config.make_gateway()

    sanitized, rename_map = sanitize_schema(table)
    relevant = select_relevant_columns(sanitized, question, gateway, config.row_limit)
    projected = project_columns(sanitized, relevant)
    description, metas = describe_columns(projected, question, gateway, config.row_limit)
    ctx = QaContext(
        table=sanitized,
        question=question,
        paragraph=paragraph,
        table_description=description,
        column_meta=metas,
        relevant_columns=relevant,
        rename_map=rename_map,
    )
    if paragraph:
        ctx.filtered_context = filter_paragraph(
            paragraph, question, projected, gateway, config.row_limit)

    failure: str | None = None
    draft: list[DraftStep] = []
    verified: list[DraftStep] = []
    plan = Plan((), sanitized.name)
    issues: list[Issue] = []
    try:
        draft = generate_plan(ctx, gateway, config.row_limit)
        verified = verify_plan(ctx, draft, gateway, config.row_limit)
        plan, issues = generate_executable(ctx, verified, gateway, config.row_limit)
    except PlanGenerationFailed:
        failure = "plan"
    except CodegenFailed:
        failure = "codegen"

    stats: OptimizationStats | None = None
    executed = plan
    if plan.steps and config.use_llm_optimizer:
        executed = llm_optimize(executed, gateway, question)
    if plan.steps and config.optimize:
        executed, stats = optimize(executed)

    trace = execute_plan(
        executed,
        sanitized,
        gateway,
        question=question,
        context=ctx.filtered_context,
        chunk_size=config.chunk_size,
        parallelism=config.parallelism,
        batch_budget=config.batch_budget,
    )

    result = QaResult(
        answer="",
        trace=trace,
        plan_draft=draft_to_text(draft),
        plan_verified=draft_to_text(verified),
        plan_executable=serialize_plan(plan),
        plan_optimized=serialize_plan(executed) if executed is not plan else "",
        stats=stats,
        issues=issues,
        failure=failure,
        context=ctx,
    )
    run_dir = None
    if config.trace_dir:
        run_dir = Path(config.trace_dir) / run_id_for(sanitized, question)
        _persist(result, run_dir)

    try:
        result.answer = extract_answer(
            trace.snapshots[trace.final_table],
            question,
            ctx.filtered_context,
            gateway,
            config.row_limit,
        )
    except TandemError as exc:
        if run_dir is not None:
            _persist(result, run_dir)
        if failure is not None:
            raise PipelineFailed(
                f"planning failed ({failure}) and extraction failed: {exc}"
            ) from exc
        raise
    if run_dir is not None:
        _persist(result, run_dir)
    return result


def _persist(result: QaResult, run_dir: Path) -> None:
    write_trace(
        result.trace,
        run_dir,
        plan_text=result.plan_executable,
        optimized_plan_text=result.plan_optimized or None,
        extra={
            "answer": result.answer,
            "plan_draft": result.plan_draft,
            "plan_verified": result.plan_verified,
            "failure": result.failure,
            "issues": [
                {"kind": i.kind, "step": i.step_index, "detail": i.detail}
                for i in result.issues
            ],
            "optimization": result.stats.as_dict() if result.stats else None,
        },
    )
