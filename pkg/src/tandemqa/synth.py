"""Random tables and random valid plans for oracle-based testing.

Plans come out of a seeded Random so failures reproduce. Generated SQL stays
inside the subset the rewrite passes understand (single CREATE-AS selects
over one source) and every plan validates cleanly against its table before
being returned. LLM steps are answered by the deterministic MapperBackend,
whose outputs are a pure function of (value, step prompt), which is what
makes reordering and merging observable as strict equivalences.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .plan import ERROR_ISSUES, LlmStep, Plan, PlanStep, SqlStep, validate_plan
from .tables import Column, Table

_WORDS = (
    "amber", "basalt", "cedar", "delta", "ember", "fjord", "garnet",
    "harbor", "indigo", "jasper", "krill", "lagoon",
)


def random_table(rng: random.Random, max_cols: int = 8, max_rows: int = 50) -> Table:
    n_cols = rng.randint(2, max_cols)
    n_rows = rng.randint(1, max_rows)
    columns = []
    for j in range(n_cols):
        name = f"c{j + 1}"
        if rng.random() < 0.5:
            values = tuple(rng.randint(0, 20) for _ in range(n_rows))
            columns.append(Column(name, "integer", values))
        else:
            values = tuple(rng.choice(_WORDS) for _ in range(n_rows))
            columns.append(Column(name, "text", values))
    return Table(f"t{rng.randint(1, 99)}", tuple(columns))


@dataclass
class _Schema:
    name: str
    columns: list[str]
    int_columns: list[str]
    text_columns: list[str]


def _schema_of(table: Table) -> _Schema:
    ints = [c.name for c in table.columns if c.declared_type == "integer"]
    texts = [c.name for c in table.columns if c.declared_type != "integer"]
    return _Schema(table.name, list(table.column_names), ints, texts)


def _filter_step(rng, schema: _Schema, out: str) -> SqlStep:
    if schema.int_columns and rng.random() < 0.7:
        col = rng.choice(schema.int_columns)
        predicate = f"{col} {rng.choice(('>', '<', '>='))} {rng.randint(0, 15)}"
    elif schema.text_columns:
        col = rng.choice(schema.text_columns)
        predicate = f"{col} != '{rng.choice(_WORDS)}'"
    else:
        col = rng.choice(schema.columns)
        predicate = f"{col} IS NOT NULL"
    order = ""
    if rng.random() < 0.3:
        order = f" ORDER BY {rng.choice(schema.columns)}"
    sql = (
        f"CREATE TABLE {out} AS SELECT * FROM {schema.name} "
        f"WHERE {predicate}{order}"
    )
    return SqlStep(sql, out)


def _project_step(rng, schema: _Schema, out: str) -> tuple[SqlStep, list[str]]:
    k = rng.randint(1, len(schema.columns))
    kept = rng.sample(schema.columns, k)
    kept = [c for c in schema.columns if c in kept]  # table order
    sql = f"CREATE TABLE {out} AS SELECT {', '.join(kept)} FROM {schema.name}"
    return SqlStep(sql, out), kept


def _aggregate_step(rng, schema: _Schema, out: str) -> tuple[SqlStep, list[str]]:
    group = rng.choice(schema.columns)
    sql = (
        f"CREATE TABLE {out} AS SELECT {group}, COUNT(*) AS n_rows "
        f"FROM {schema.name} GROUP BY {group}"
    )
    return SqlStep(sql, out), [group, "n_rows"]


def _llm_step(rng, schema: _Schema, counter: int) -> tuple[LlmStep, str]:
    source_col = rng.choice(schema.columns)
    new_col = f"d{counter}"
    prompt = f"derive marker {counter} from {source_col}"
    step = LlmStep(
        reason=f"semantic tag {counter}",
        source_table=schema.name,
        input_columns=(source_col,),
        prompt=prompt,
        new_column=new_col,
    )
    return step, new_col


def random_plan(
    rng: random.Random,
    table: Table,
    max_steps: int = 6,
    allow_dead: bool = True,
) -> Plan:
    """A valid plan over ``table`` mixing filters, projections, aggregates,
    LLM derivations, and (optionally) dead side branches."""
    base = _schema_of(table)
    current = base
    steps: list[PlanStep] = []
    counter = 0
    n_steps = rng.randint(1, max_steps)
    while len(steps) < n_steps:
        counter += 1
        out = f"s{counter}_{rng.randint(100, 999)}"
        roll = rng.random()
        if roll < 0.35:
            steps.append(_filter_step(rng, current, out))
            current = _Schema(out, current.columns, current.int_columns,
                              current.text_columns)
        elif roll < 0.55:
            step, kept = _project_step(rng, current, out)
            steps.append(step)
            current = _Schema(
                out, kept,
                [c for c in current.int_columns if c in kept],
                [c for c in current.text_columns if c in kept],
            )
        elif roll < 0.7:
            step, cols = _aggregate_step(rng, current, out)
            steps.append(step)
            current = _Schema(out, cols, ["n_rows"], [cols[0]])
        elif roll < 0.9:
            step, new_col = _llm_step(rng, current, counter)
            steps.append(step)
            current = _Schema(
                current.name, current.columns + [new_col],
                current.int_columns, current.text_columns + [new_col],
            )
        elif allow_dead:
            # a side branch nothing reads: a dead filter off the current table
            steps.append(_filter_step(rng, current, out))
            # current schema unchanged; the branch output is never consumed
        else:
            steps.append(_filter_step(rng, current, out))
            current = _Schema(out, current.columns, current.int_columns,
                              current.text_columns)
    plan = Plan(tuple(steps), table.name)
    issues = validate_plan(plan, {table.name: list(table.column_names)})
    bad = [i for i in issues if i.kind in ERROR_ISSUES]
    if bad:  # pragma: no cover - generator invariant
        raise AssertionError(f"generator produced invalid plan: {bad}")
    return plan


def reorderable_plan(rng: random.Random, table: Table) -> Plan:
    """An [LLM, filter] pair the reorder pass should flip."""
    base = _schema_of(table)
    llm, new_col = _llm_step(rng, base, 1)
    int_col = base.int_columns[0] if base.int_columns else base.columns[0]
    predicate = (
        f"{int_col} > {rng.randint(0, 10)}"
        if base.int_columns else f"{int_col} IS NOT NULL"
    )
    sql = SqlStep(
        f"CREATE TABLE kept AS SELECT * FROM {base.name} WHERE {predicate}",
        "kept",
    )
    return Plan((llm, sql), table.name)


def mergeable_plan(rng: random.Random, table: Table) -> Plan:
    """Two chained filters the merge pass should fuse."""
    base = _schema_of(table)
    first = _filter_step(rng, base, "stage_a")
    second_schema = _Schema("stage_a", base.columns, base.int_columns,
                            base.text_columns)
    second = _filter_step(rng, second_schema, "stage_b")
    return Plan((first, second), table.name)


def dead_step_plan(rng: random.Random, table: Table) -> Plan:
    """A dead LLM derivation followed by an explicit projection."""
    base = _schema_of(table)
    llm, new_col = _llm_step(rng, base, 1)
    kept = base.columns[: max(1, len(base.columns) - 1)]
    sql = SqlStep(
        f"CREATE TABLE narrowed AS SELECT {', '.join(kept)} FROM {base.name}",
        "narrowed",
    )
    return Plan((llm, sql), table.name)


def rewrite_corpus(rng: random.Random, size: int = 50) -> list[tuple[Table, Plan]]:
    """Plans guaranteed to contain mergeable, reorderable, and dead steps."""
    corpus = []
    builders = (reorderable_plan, mergeable_plan, dead_step_plan)
    for i in range(size):
        table = random_table(rng, max_cols=6, max_rows=20)
        builder = builders[i % len(builders)]
        corpus.append((table, builder(rng, table)))
    return corpus
