import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tandemqa.errors import MalformedLlmStep, NoStepsFound, UnknownStepKind
from tandemqa.plan import (
    ISSUE_COLUMN_COLLISION,
    ISSUE_DEAD_STEP,
    ISSUE_UNKNOWN_COLUMN,
    ISSUE_UNKNOWN_TABLE,
    LlmStep,
    Plan,
    SqlStep,
    parse_draft_plan,
    parse_executable_plan,
    serialize_plan,
    validate_plan,
)

DRAFT_SQL_ONLY = """\
Plan: Step 1: SQL - Standardize the Year column to a consistent format and extract
the year from entries like "Spring 1932" and "Fall 1932".
Step 2: SQL - Clean and standardize the National_Cup column to identify the years
when the team won the national cup.
Step 3: SQL - Filter the data to find the first year after 1936 when the
National_Cup column indicates a win.
"""

DRAFT_REVISED = """\
New Plan: ### Revised Plan:
Step 1: LLM - Standardize the Year column to a consistent format by extracting the
year from entries like "Spring 1932" and "Fall 1932". Convert all entries to a four-
digit year format (e.g., "1932" instead of "Spring 1932").
Step 2: SQL - Clean and standardize the National_Cup column to identify winning
entries. Define a clear criterion for a "win".
Step 3: SQL - Filter the data to find the first year after 1936 where the
National_Cup column indicates a win.
"""

EXECUTABLE = """\
Step_1 - LLM:
- Reason: Standardize the Year column to correct format.
- Table name: New_York_Americans_soccer
- original column to be used: Year
- LLM prompt: Extract the year from phrases like "Spring 1932" or "Fall 1932" and
standardize all entries to a YYYY format.
- New column name: Year_Formatted.
Step_2 - SQL:
CREATE TABLE standardized_national_cup AS
SELECT Year_Formatted, Division, League, Reg_Season, Playoffs,
    CASE WHEN National_Cup LIKE '%Champion%' THEN 'Win'
         WHEN National_Cup LIKE '%Round%' THEN 'Win'
         ELSE 'No Win' END AS National_Cup
FROM New_York_Americans_soccer;
Step_3 - SQL:
CREATE TABLE first_win_after_1936 AS
SELECT Year_Formatted, Division, League, Reg_Season, Playoffs, National_Cup
FROM standardized_national_cup
WHERE Year_Formatted > '1936' AND National_Cup = 'Win'
ORDER BY Year_Formatted
LIMIT 1;
"""

SOCCER_SCHEMA = {
    "New_York_Americans_soccer": [
        "Year", "Division", "League", "Reg_Season", "Playoffs", "National_Cup",
    ],
}


def test_draft_sql_only():
    steps = parse_draft_plan(DRAFT_SQL_ONLY)
    assert [s.kind for s in steps] == ["SQL", "SQL", "SQL"]
    assert steps[0].description.startswith("Standardize the Year column")
    assert [s.index for s in steps] == [1, 2, 3]


def test_draft_revised_plan():
    steps = parse_draft_plan(DRAFT_REVISED)
    assert [s.kind for s in steps] == ["LLM", "SQL", "SQL"]
    assert "four- digit year format" in steps[0].description


def test_draft_no_steps():
    with pytest.raises(NoStepsFound):
        parse_draft_plan("no plan here, sorry")


def test_draft_unknown_kind_rejected():
    with pytest.raises(UnknownStepKind):
        parse_draft_plan("Step 1: VLM - read the image column")


def test_draft_prose_mentioning_steps_is_ignored():
    text = "The step 3 above looks fine.\nStep 1: SQL - filter rows\n"
    steps = parse_draft_plan(text)
    assert len(steps) == 1


def test_draft_renumbers():
    steps = parse_draft_plan("Step 4: SQL - a\nStep 9: LLM - b")
    assert [s.index for s in steps] == [1, 2]


def test_executable_parse_llm_block():
    plan = parse_executable_plan(EXECUTABLE, "New_York_Americans_soccer")
    assert plan.kinds == ["LLM", "SQL", "SQL"]
    llm = plan.steps[0]
    assert isinstance(llm, LlmStep)
    assert llm.source_table == "New_York_Americans_soccer"
    assert llm.input_columns == ("Year",)
    assert llm.new_column == "Year_Formatted"  # trailing period stripped
    assert "YYYY format" in llm.prompt


def test_executable_parse_sql_outputs():
    plan = parse_executable_plan(EXECUTABLE, "New_York_Americans_soccer")
    assert plan.steps[1].output_table == "standardized_national_cup"
    assert plan.steps[2].output_table == "first_win_after_1936"
    assert "CREATE TABLE first_win_after_1936" in plan.steps[2].sql_text


def test_executable_unnumbered_step_variant():
    text = """\
LLM_Step -
- Reason: tag rows
- Table name: base
- original column to be used: a, b
- LLM prompt: derive the tag
- New column name: tag
SQL_Step -
SELECT * FROM base WHERE tag = 'x'
Table name to be used: kept
"""
    plan = parse_executable_plan(text, "base")
    assert plan.kinds == ["LLM", "SQL"]
    assert plan.steps[0].input_columns == ("a", "b")
    assert plan.steps[1].output_table == "kept"


def test_executable_code_fences_stripped():
    text = "Step_1 - SQL:\n```sql\nCREATE TABLE x AS SELECT * FROM base;\n```\n"
    plan = parse_executable_plan(text, "base")
    assert plan.steps[0].output_table == "x"
    assert "```" not in plan.steps[0].sql_text


def test_executable_missing_field():
    text = """\
Step_1 - LLM:
- Reason: tag rows
- Table name: base
- original column to be used: a
- LLM prompt: derive the tag
"""
    with pytest.raises(MalformedLlmStep) as exc:
        parse_executable_plan(text, "base")
    assert "New column name" in str(exc.value)


def test_executable_no_steps():
    with pytest.raises(NoStepsFound):
        parse_executable_plan("nothing to see", "base")


def test_serialize_contains_grammar_markers():
    plan = Plan((SqlStep("CREATE TABLE y AS SELECT * FROM base", "y"),), "base")
    text = serialize_plan(plan)
    assert "Step_1 - SQL:" in text
    assert serialize_plan(Plan((), "base")) == ""


def test_round_trip_soccer_plan():
    plan = parse_executable_plan(EXECUTABLE, "New_York_Americans_soccer")
    again = parse_executable_plan(
        serialize_plan(plan), "New_York_Americans_soccer")
    assert again == plan


def test_round_trip_multi_target_step():
    step = LlmStep(
        reason="two tags",
        source_table="base",
        input_columns=("a", "b"),
        prompt="derive u",
        new_column="u",
        extra_targets=(("derive v", "v"),),
    )
    plan = Plan((step,), "base")
    assert parse_executable_plan(serialize_plan(plan), "base") == plan


def test_validate_clean_soccer_plan():
    plan = parse_executable_plan(EXECUTABLE, "New_York_Americans_soccer")
    assert validate_plan(plan, SOCCER_SCHEMA) == []


def test_validate_unknown_table():
    plan = Plan(
        (SqlStep("CREATE TABLE x AS SELECT * FROM ghosts", "x"),),
        "New_York_Americans_soccer",
    )
    issues = validate_plan(plan, SOCCER_SCHEMA)
    assert any(i.kind == ISSUE_UNKNOWN_TABLE and i.detail == "ghosts" for i in issues)


def test_validate_column_collision():
    step = LlmStep("", "New_York_Americans_soccer", ("Year",), "normalize", "Year")
    issues = validate_plan(Plan((step,), "New_York_Americans_soccer"), SOCCER_SCHEMA)
    assert any(i.kind == ISSUE_COLUMN_COLLISION for i in issues)


def test_validate_unknown_input_column():
    step = LlmStep("", "New_York_Americans_soccer", ("Ghost",), "x", "g2")
    issues = validate_plan(Plan((step,), "New_York_Americans_soccer"), SOCCER_SCHEMA)
    assert any(i.kind == ISSUE_UNKNOWN_COLUMN for i in issues)


def test_validate_unknown_select_column():
    plan = Plan(
        (SqlStep(
            "CREATE TABLE x AS SELECT Ghost FROM New_York_Americans_soccer",
            "x",
        ),),
        "New_York_Americans_soccer",
    )
    issues = validate_plan(plan, SOCCER_SCHEMA)
    assert any(i.kind == ISSUE_UNKNOWN_COLUMN and i.detail == "Ghost" for i in issues)


def test_validate_dead_step_flagged():
    plan = Plan(
        (
            SqlStep("CREATE TABLE unused AS SELECT * FROM New_York_Americans_soccer", "unused"),
            SqlStep("CREATE TABLE final AS SELECT * FROM New_York_Americans_soccer", "final"),
        ),
        "New_York_Americans_soccer",
    )
    issues = validate_plan(plan, SOCCER_SCHEMA)
    assert any(i.kind == ISSUE_DEAD_STEP and i.detail == "unused" for i in issues)


def test_validate_topological_order():
    plan = Plan(
        (
            SqlStep("CREATE TABLE a AS SELECT * FROM later", "a"),
            SqlStep("CREATE TABLE later AS SELECT * FROM New_York_Americans_soccer", "later"),
        ),
        "New_York_Americans_soccer",
    )
    issues = validate_plan(plan, SOCCER_SCHEMA)
    assert any(i.kind == ISSUE_UNKNOWN_TABLE and i.detail == "later" for i in issues)


def _random_plan_text_free(rng: random.Random) -> Plan:
    # structural generator independent of synth: random mix of step shapes
    steps = []
    tables = ["base"]
    for i in range(rng.randint(1, 6)):
        out = f"t{i}_{rng.randint(10, 99)}"
        source = rng.choice(tables)
        if rng.random() < 0.5:
            steps.append(SqlStep(
                f"CREATE TABLE {out} AS SELECT * FROM {source} WHERE c{rng.randint(1, 5)} > {rng.randint(0, 9)}",
                out,
            ))
            tables.append(out)
        else:
            extra = ()
            if rng.random() < 0.3:
                extra = ((f"prompt {i} extra", f"x{i}_b"),)
            steps.append(LlmStep(
                reason=f"reason {i}",
                source_table=source,
                input_columns=(f"c{rng.randint(1, 5)}",),
                prompt=f"prompt {i}",
                new_column=f"x{i}",
                extra_targets=extra,
            ))
    return Plan(tuple(steps), "base")


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=200, deadline=None)
def test_serialize_parse_round_trip_random(seed):
    plan = _random_plan_text_free(random.Random(seed))
    assert parse_executable_plan(serialize_plan(plan), "base") == plan
