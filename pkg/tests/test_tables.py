import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tandemqa.errors import EmptyInput, RaggedRow, UnknownColumn
from tandemqa.tables import (
    RESERVED_WORDS,
    Column,
    Table,
    load_table,
    project_columns,
    render_for_prompt,
    sanitize_name,
    sanitize_schema,
    table_from_rows,
)


def test_load_small_csv():
    table = load_table("x,y\n1,a\n2,b\n3,c\n", name="small")
    assert table.row_count == 3
    assert table.column_names == ["x", "y"]
    assert table.column("x").declared_type == "integer"
    assert table.column("x").values == (1, 2, 3)


def test_load_soccer_table(soccer_table):
    assert soccer_table.name == "New_York_Americans_soccer"
    assert soccer_table.row_count == 27
    sanitized, _ = sanitize_schema(soccer_table)
    assert sanitized.column_names == [
        "Year", "Division", "League", "Reg_Season", "Playoffs", "National_Cup",
    ]


def test_null_tokens_load_as_null(soccer_table):
    division = soccer_table.column("Division")
    assert division.declared_type == "real"
    assert division.values[4] is None  # "NaN"
    cup = soccer_table.column("National Cup")
    assert cup.values[0] is None  # "None"
    assert cup.values[4] is None  # "?"
    assert cup.values[7] == "Champion"


def test_ragged_row_rejected():
    with pytest.raises(RaggedRow) as exc:
        load_table("a,b,c\n1,2,3,4\n")
    assert exc.value.expected == 3
    assert exc.value.actual == 4


def test_empty_input_rejected():
    with pytest.raises(EmptyInput):
        load_table(io.StringIO(""))


def test_headerless_load():
    table = load_table("1,2\n3,4\n", header=False)
    assert table.column_names == ["col_1", "col_2"]
    assert table.row_count == 2


def test_sanitize_examples():
    assert sanitize_name("Reg. Season") == "Reg_Season"
    assert sanitize_name("Rank") == "Rank_col"
    assert sanitize_name("Year") == "Year"


def test_sanitize_reserved_no_collision():
    # brute-force scan: suffixed names collide with nothing else in the table
    table = table_from_rows("t", ["Rank", "Rank_col"], [[1, 2]])
    sanitized, rename = sanitize_schema(table)
    names = sanitized.column_names
    assert len(set(names)) == len(names)
    assert rename.sanitized("Rank") != rename.sanitized("Rank_col")


def test_sanitize_collision_suffixes():
    table = table_from_rows("t", ["a b", "a-b", "a_b"], [[1, 2, 3]])
    sanitized, _ = sanitize_schema(table)
    assert sanitized.column_names == ["a_b", "a_b_2", "a_b_3"]


names_strategy = st.lists(
    st.text(
        alphabet=st.characters(min_codepoint=32, max_codepoint=126),
        min_size=1,
        max_size=12,
    ).filter(lambda s: s.strip()),
    min_size=1,
    max_size=8,
    unique=True,
)


@given(names_strategy)
@settings(max_examples=200)
def test_sanitize_idempotent_and_invertible(raw_names):
    table = table_from_rows("t", raw_names, [list(range(len(raw_names)))])
    once, rename = sanitize_schema(table)
    twice, rename2 = sanitize_schema(once)
    assert once.column_names == twice.column_names
    assert all(orig == new for orig, new in rename2.entries)
    # round trip: inverse map recovers originals
    inverse = rename.inverse()
    assert [inverse[n] for n in once.column_names] == raw_names
    for name in once.column_names:
        assert name.upper() not in RESERVED_WORDS


def test_projection_identity_and_subset(soccer_table):
    same = project_columns(soccer_table, soccer_table.column_names)
    assert same.column_names == soccer_table.column_names
    sanitized, _ = sanitize_schema(soccer_table)
    two = project_columns(sanitized, ["Year", "National_Cup"])
    assert two.column_names == ["Year", "National_Cup"]
    assert two.row_count == 27


def test_projection_composes(soccer_table):
    sanitized, _ = sanitize_schema(soccer_table)
    via_three = project_columns(
        project_columns(sanitized, ["Year", "Playoffs", "National_Cup"]),
        ["Year", "National_Cup"],
    )
    direct = project_columns(sanitized, ["Year", "National_Cup"])
    assert via_three == direct


def test_projection_unknown_column(soccer_table):
    with pytest.raises(UnknownColumn):
        project_columns(soccer_table, ["Ghost"])


def test_render_empty_table():
    table = table_from_rows("t", ["a", "b"], [])
    assert render_for_prompt(table) == "a  b"


def test_render_line_counts(soccer_table):
    full = render_for_prompt(soccer_table, row_limit=27)
    assert len(full.splitlines()) == 28
    big = table_from_rows("t", ["v"], [[i] for i in range(100)])
    truncated = render_for_prompt(big, row_limit=30)
    lines = truncated.splitlines()
    assert len(lines) == 32  # header + 30 rows + elision marker
    assert "more rows" in lines[-1]


@given(st.integers(min_value=0, max_value=60), st.integers(min_value=1, max_value=40))
@settings(max_examples=60)
def test_render_line_count_property(rows, limit):
    table = table_from_rows("t", ["v"], [[i] for i in range(rows)])
    rendered = render_for_prompt(table, row_limit=limit)
    expected = 1 + min(rows, limit) + (1 if rows > limit else 0)
    assert len(rendered.splitlines()) == expected


def test_table_invariants():
    with pytest.raises(ValueError):
        Table("t", (Column("a", "text", ("x",)), Column("a", "text", ("y",))))
    with pytest.raises(ValueError):
        Table("t", (Column("a", "text", ("x",)), Column("b", "text", ())))
    with pytest.raises(ValueError):
        Table("", ())
