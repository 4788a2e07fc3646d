import random

import pytest

from conftest import gateway_for, rec
from tandemqa import synth
from tandemqa.executor import execute_plan
from tandemqa.gateway import Gateway, MapperBackend
from tandemqa.optimizer import (
    check_equivalence,
    format_optimization_report,
    llm_optimize,
    optimize,
)
from tandemqa.plan import LlmStep, Plan, SqlStep
from tandemqa.tables import table_from_rows

MERGE_EXAMPLE = Plan(
    (
        SqlStep(
            "CREATE TABLE filtered AS SELECT * FROM events WHERE category = 'X'",
            "filtered",
        ),
        SqlStep(
            "CREATE TABLE ordered AS SELECT * FROM filtered ORDER BY event_date DESC",
            "ordered",
        ),
    ),
    "events",
)


@pytest.fixture
def events():
    return table_from_rows(
        "events",
        ["category", "event_date", "points"],
        [
            ["X", "2020-01-03", 4],
            ["Y", "2020-02-01", 1],
            ["X", "2020-01-01", 9],
            ["Z", "2020-03-05", 2],
            ["X", "2020-02-11", 7],
        ],
    )


def test_merge_example_becomes_single_step(events):
    merged, stats = optimize(MERGE_EXAMPLE)
    assert stats.sql_merges == 1
    assert len(merged.steps) == 1
    assert merged.steps[0].output_table == "ordered"
    verdict = check_equivalence(merged, MERGE_EXAMPLE, events, MapperBackend())
    assert verdict.status == "equivalent"


def test_merge_blocked_when_intermediate_used_later():
    plan = Plan(
        (
            SqlStep("CREATE TABLE a1 AS SELECT * FROM base WHERE c1 > 0", "a1"),
            SqlStep("CREATE TABLE a2 AS SELECT * FROM a1 ORDER BY c1", "a2"),
            SqlStep("CREATE TABLE a3 AS SELECT * FROM a1 WHERE c1 > 5", "a3"),
        ),
        "base",
    )
    _, stats = optimize(plan)
    assert stats.sql_merges == 0


def test_dead_llm_step_dropped():
    plan = Plan(
        (
            LlmStep("", "base", ("c1",), "derive tag", "tag"),
            SqlStep("CREATE TABLE kept AS SELECT c1, c2 FROM base", "kept"),
        ),
        "base",
    )
    optimized, stats = optimize(plan)
    assert stats.llm_drops == 1
    assert [s.kind for s in optimized.steps] == ["SQL"]
    table = table_from_rows("base", ["c1", "c2"], [[1, "a"], [2, "b"]])
    verdict = check_equivalence(optimized, plan, table, MapperBackend())
    assert verdict.status == "equivalent"


def test_live_llm_step_not_dropped():
    plan = Plan(
        (
            LlmStep("", "base", ("c1",), "derive tag", "tag"),
            SqlStep("CREATE TABLE kept AS SELECT c1, tag FROM base", "kept"),
        ),
        "base",
    )
    _, stats = optimize(plan)
    assert stats.llm_drops == 0


def test_dead_llm_blocked_by_select_star():
    plan = Plan(
        (
            LlmStep("", "base", ("c1",), "derive tag", "tag"),
            SqlStep("CREATE TABLE kept AS SELECT * FROM base WHERE c1 > 0", "kept"),
        ),
        "base",
    )
    _, stats = optimize(plan)
    # SELECT * observes the appended column, so the step stays
    assert stats.llm_drops == 0


def test_dead_sql_step_dropped(events):
    plan = Plan(
        (
            SqlStep("CREATE TABLE side AS SELECT * FROM events WHERE points > 3", "side"),
            SqlStep("CREATE TABLE final AS SELECT * FROM events ORDER BY points", "final"),
        ),
        "events",
    )
    optimized, stats = optimize(plan)
    assert stats.sql_drops == 1
    assert len(optimized.steps) == 1
    verdict = check_equivalence(optimized, plan, events, MapperBackend())
    assert verdict.status == "equivalent"


def test_reorder_pulls_filter_ahead(events):
    plan = Plan(
        (
            LlmStep("", "events", ("category",), "tag category", "cat_tag"),
            SqlStep(
                "CREATE TABLE kept AS SELECT * FROM events WHERE points > 3",
                "kept",
            ),
        ),
        "events",
    )
    optimized, stats = optimize(plan, passes=("reorder_sql",))
    assert stats.sql_reorders == 1
    assert [s.kind for s in optimized.steps] == ["SQL", "LLM"]
    assert optimized.steps[1].source_table == "kept"
    verdict = check_equivalence(optimized, plan, events, MapperBackend())
    assert verdict.status == "equivalent"


def test_reorder_blocked_when_filter_reads_new_column(events):
    plan = Plan(
        (
            LlmStep("", "events", ("category",), "tag category", "cat_tag"),
            SqlStep(
                "CREATE TABLE kept AS SELECT * FROM events WHERE cat_tag != 'x'",
                "kept",
            ),
        ),
        "events",
    )
    _, stats = optimize(plan, passes=("reorder_sql",))
    assert stats.sql_reorders == 0


def test_llm_merge_same_source(events):
    plan = Plan(
        (
            LlmStep("r1", "events", ("category",), "tag one", "t1"),
            LlmStep("r2", "events", ("event_date",), "tag two", "t2"),
        ),
        "events",
    )
    optimized, stats = optimize(plan, passes=("merge_llm",))
    assert stats.llm_merges == 1
    assert len(optimized.steps) == 1
    merged = optimized.steps[0]
    assert merged.new_columns == ("t1", "t2")
    assert merged.input_columns == ("category", "event_date")
    verdict = check_equivalence(optimized, plan, events, MapperBackend())
    assert verdict.status == "equivalent"


def test_llm_merge_blocked_on_dependency(events):
    plan = Plan(
        (
            LlmStep("", "events", ("category",), "tag one", "t1"),
            LlmStep("", "events", ("t1",), "tag from tag", "t2"),
        ),
        "events",
    )
    _, stats = optimize(plan, passes=("merge_llm",))
    assert stats.llm_merges == 0


def test_check_equivalence_reflexive(events):
    verdict = check_equivalence(MERGE_EXAMPLE, MERGE_EXAMPLE, events, MapperBackend())
    assert verdict.status == "equivalent"


def test_check_equivalence_divergent(events):
    without_filter = Plan((MERGE_EXAMPLE.steps[1],), "events")
    patched = Plan(
        (
            SqlStep(
                "CREATE TABLE filtered AS SELECT * FROM events", "filtered"),
            MERGE_EXAMPLE.steps[1],
        ),
        "events",
    )
    verdict = check_equivalence(MERGE_EXAMPLE, patched, events, MapperBackend())
    assert verdict.status == "divergent"


def test_check_equivalence_inconclusive(events):
    broken = Plan(
        (SqlStep("CREATE TABLE x AS SELECT * FROM missing", "x"),), "events")
    verdict = check_equivalence(broken, MERGE_EXAMPLE, events, MapperBackend())
    assert verdict.status == "inconclusive"


def test_counters_match_step_delta():
    rng = random.Random(7)
    for _ in range(40):
        table = synth.random_table(rng, max_cols=5, max_rows=12)
        plan = synth.random_plan(rng, table)
        optimized, stats = optimize(plan)
        drops_and_merges = (
            stats.llm_drops + stats.sql_drops + stats.sql_merges + stats.llm_merges
        )
        assert stats.steps_before - stats.steps_after == drops_and_merges
        assert stats.steps_after <= stats.steps_before


def test_idempotent_on_random_plans():
    rng = random.Random(11)
    for _ in range(40):
        table = synth.random_table(rng, max_cols=5, max_rows=12)
        plan = synth.random_plan(rng, table)
        once, _ = optimize(plan)
        twice, stats2 = optimize(once)
        assert once == twice
        assert stats2.steps_before == stats2.steps_after


def test_passes_skip_explicit_materialization_references():
    plan = Plan(
        (
            LlmStep("", "base", ("c1",), "tag", "t1"),
            SqlStep("CREATE TABLE kept AS SELECT c1 FROM base_llm1", "kept"),
        ),
        "base",
    )
    optimized, stats = optimize(plan)
    assert optimized == plan
    assert stats.steps_before == stats.steps_after


def test_llm_optimize_applies_scripted_rewrite():
    plan = Plan(
        (
            SqlStep("CREATE TABLE a AS SELECT * FROM base WHERE c = 'Kremlin Cup'", "a"),
            SqlStep("CREATE TABLE b AS SELECT * FROM a ORDER BY c", "b"),
            LlmStep("", "b", ("c",), "summarize", "summary"),
        ),
        "base",
    )
    rewritten_text = (
        "Step_1 - SQL:\n"
        "CREATE TABLE b AS SELECT * FROM base WHERE c = 'Kremlin Cup' ORDER BY c;\n"
        "Step_2 - LLM:\n"
        "- Reason: summarize\n"
        "- Table name: b\n"
        "- original column to be used: c\n"
        "- LLM prompt: summarize\n"
        "- New column name: summary\n"
    )
    gateway = gateway_for([rec("plan_optimization", rewritten_text)])
    out = llm_optimize(plan, gateway, "are both held in Russia?")
    assert len(out.steps) == 2
    assert out.kinds == ["SQL", "LLM"]


def test_llm_optimize_degrades_on_garbage():
    plan = Plan((SqlStep("CREATE TABLE a AS SELECT * FROM base", "a"),), "base")
    gateway = gateway_for([rec("plan_optimization", "I cannot help with that")])
    assert llm_optimize(plan, gateway) == plan
    # minimal plan comes back unchanged even when the reply parses
    gateway = gateway_for([
        rec("plan_optimization", "Step_1 - SQL:\nCREATE TABLE a AS SELECT * FROM base;"),
    ])
    out = llm_optimize(plan, gateway)
    assert out.kinds == plan.kinds


def test_report_layout():
    _, stats = optimize(MERGE_EXAMPLE)
    text = format_optimization_report(stats)
    assert "#LLM Drops" in text
    assert "#SQL Merge" in text
    assert "#SQL Reorder" in text
    assert "Before Opt." in text
    assert "#Total Steps" in text
