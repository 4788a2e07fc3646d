"""In-memory table model: loading, schema sanitization, projection, rendering.

Tables are immutable after construction and safe to share across threads.
Cell values are ``str | int | float | datetime.date | None``.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import EmptyInput, RaggedRow, UnknownColumn

Cell = str | int | float | date | None

# Tokens that load as null. The sample tables in the wild mix pandas-style
# "NaN"/"None" markers with literal "?" placeholders.
DEFAULT_NULL_TOKENS = frozenset({"", "NaN", "None", "NULL", "null", "?", "N/A", "n/a"})

# Keywords that commonly collide with column headers; colliding names get a
# "_col" suffix so generated SQL never has to quote them.
RESERVED_WORDS = frozenset({
    "ALL", "ALTER", "AND", "AS", "ASC", "AVG", "BETWEEN", "BY", "CASE",
    "CAST", "CHECK", "COLUMN", "CONSTRAINT", "COUNT", "CREATE", "CROSS",
    "DEFAULT", "DELETE", "DESC", "DISTINCT", "DROP", "ELSE", "END", "EXISTS",
    "FOREIGN", "FROM", "FULL", "GROUP", "HAVING", "IN", "INDEX", "INNER",
    "INSERT", "INTO", "IS", "JOIN", "KEY", "LEFT", "LIKE", "LIMIT", "MAX",
    "MIN", "NOT", "NULL", "OFFSET", "ON", "OR", "ORDER", "OUTER", "OVER",
    "PARTITION", "PRIMARY", "RANK", "REFERENCES", "RIGHT", "ROW", "ROWS",
    "SELECT", "SET", "SUM", "TABLE", "THEN", "UNION", "UPDATE", "VALUES",
    "VIEW", "WHEN", "WHERE",
})

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class Column:
    """A named column; ``declared_type`` is one of text/integer/real/date/unknown."""

    name: str
    declared_type: str
    values: tuple

    def __post_init__(self):
        if self.declared_type not in {"text", "integer", "real", "date", "unknown"}:
            raise ValueError(f"bad declared_type: {self.declared_type!r}")


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]

    def __post_init__(self):
        if not self.name:
            raise ValueError("table name must be non-empty")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names: {names}")
        counts = {len(c.values) for c in self.columns}
        if len(counts) > 1:
            raise ValueError(f"columns have differing lengths: {counts}")

    @property
    def row_count(self) -> int:
        return len(self.columns[0].values) if self.columns else 0

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise UnknownColumn(name)

    def rows(self) -> Iterator[tuple]:
        return zip(*(c.values for c in self.columns)) if self.columns else iter(())


@dataclass(frozen=True)
class RenameMap:
    """Original-to-sanitized column name pairs; invertible by construction."""

    entries: tuple[tuple[str, str], ...]

    def sanitized(self, original: str) -> str:
        for orig, new in self.entries:
            if orig == original:
                return new
        raise UnknownColumn(original)

    def original(self, sanitized: str) -> str:
        for orig, new in self.entries:
            if new == sanitized:
                return orig
        raise UnknownColumn(sanitized)

    def inverse(self) -> dict[str, str]:
        return {new: orig for orig, new in self.entries}


def parse_cell(raw: str, null_tokens: frozenset[str] = DEFAULT_NULL_TOKENS):
    """Convert one raw string to a typed cell, independent of column type."""
    if raw in null_tokens:
        return None
    if _INT_RE.match(raw):
        try:
            return int(raw)
        except ValueError:
            return raw
    if _FLOAT_RE.match(raw):
        return float(raw)
    try:
        return date.fromisoformat(raw)
    except ValueError:
        return raw


def infer_declared_type(values: Sequence) -> str:
    """Majority vote (>= 90% of non-null cells) over the parsed cell types."""
    kinds = []
    for v in values:
        if v is None:
            continue
        if isinstance(v, bool):
            kinds.append("text")
        elif isinstance(v, int):
            kinds.append("integer")
        elif isinstance(v, float):
            kinds.append("real")
        elif isinstance(v, date):
            kinds.append("date")
        else:
            kinds.append("text")
    if not kinds:
        return "unknown"
    total = len(kinds)
    counts = {k: kinds.count(k) for k in set(kinds)}
    # Integers also count toward a real-typed majority (1 and 1.5 mix to real).
    counts["real"] = counts.get("real", 0) + (
        counts.get("integer", 0) if counts.get("real") else 0
    )
    for kind in ("integer", "real", "date", "text"):
        if counts.get(kind, 0) / total >= 0.9:
            return kind
    return "unknown"


def load_table(
    source: io.TextIOBase | str,
    *,
    delimiter: str = ",",
    header: bool = True,
    name: str = "table_1",
    null_tokens: frozenset[str] = DEFAULT_NULL_TOKENS,
) -> Table:
    """Load a delimited-text stream into a Table.

    Raises EmptyInput for a contentless stream and RaggedRow when a data row
    disagrees with the header width.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    rows = list(csv.reader(source, delimiter=delimiter))
    rows = [
        row for row in rows
        if row and not (len(row) == 1 and not row[0].strip())
    ]
    if not rows:
        raise EmptyInput("no rows in input")
    if header:
        raw_names, data = rows[0], rows[1:]
    else:
        width = len(rows[0])
        raw_names, data = [f"col_{i + 1}" for i in range(width)], rows
    width = len(raw_names)
    for i, row in enumerate(data):
        if len(row) != width:
            raise RaggedRow(i + 1, width, len(row))
    names = _dedupe([n.strip() or f"col_{i + 1}" for i, n in enumerate(raw_names)])
    columns = []
    for j, col_name in enumerate(names):
        cells = tuple(parse_cell(row[j].strip(), null_tokens) for row in data)
        columns.append(Column(col_name, infer_declared_type(cells), cells))
    return Table(clean_identifier(name) or "table_1", tuple(columns))


def load_table_file(path: str | Path, **kwargs) -> Table:
    path = Path(path)
    delimiter = "\t" if path.suffix.lower() in {".tsv", ".tab"} else ","
    kwargs.setdefault("delimiter", delimiter)
    kwargs.setdefault("name", path.stem)
    with open(path, encoding="utf-8", newline="") as fh:
        return load_table(fh, **kwargs)


def clean_identifier(raw: str) -> str:
    """Reduce a raw name to [A-Za-z_][A-Za-z0-9_]* without reserved-word handling."""
    cleaned = re.sub(r"[^A-Za-z0-9_]+", "_", raw.strip()).strip("_")
    cleaned = re.sub(r"_+", "_", cleaned)
    if cleaned and not re.match(r"^[A-Za-z_]", cleaned):
        cleaned = "_" + cleaned
    return cleaned


def sanitize_name(raw: str) -> str:
    cleaned = clean_identifier(raw) or "col"
    if cleaned.upper() in RESERVED_WORDS:
        cleaned += "_col"
    return cleaned


def sanitize_schema(table: Table) -> tuple[Table, RenameMap]:
    """Rename columns to SQL-safe identifiers.

    Whitespace and punctuation become underscores, reserved words gain a
    "_col" suffix, and residual collisions get numeric suffixes. Total and
    idempotent: already-clean names map to themselves.
    """
    entries = []
    seen: set[str] = set()
    new_columns = []
    for col in table.columns:
        candidate = sanitize_name(col.name)
        if candidate in seen:
            k = 2
            while f"{candidate}_{k}" in seen:
                k += 1
            candidate = f"{candidate}_{k}"
        seen.add(candidate)
        entries.append((col.name, candidate))
        new_columns.append(Column(candidate, col.declared_type, col.values))
    return (
        Table(table.name, tuple(new_columns)),
        RenameMap(tuple(entries)),
    )


def project_columns(table: Table, names: Iterable[str]) -> Table:
    """Return a new table with exactly the named columns, in the given order."""
    picked = [table.column(n) for n in names]
    return Table(table.name, tuple(picked))


def stringify_cell(value, declared_type: str = "text") -> str:
    if value is None:
        return "NaN" if declared_type == "real" else "None"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def column_strings(column: Column) -> list[str]:
    return [stringify_cell(v, column.declared_type) for v in column.values]


def render_for_prompt(table: Table, row_limit: int = 30) -> str:
    """Render a plain-text grid: header, up to ``row_limit`` rows, and an
    elision marker when rows were dropped."""
    shown = min(table.row_count, row_limit)
    grid = [[c.name for c in table.columns]]
    for i in range(shown):
        grid.append(
            [stringify_cell(c.values[i], c.declared_type) for c in table.columns]
        )
    widths = [
        max(len(row[j]) for row in grid) for j in range(len(table.columns))
    ] if table.columns else []
    lines = [
        "  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip()
        for row in grid
    ]
    if table.row_count > shown:
        lines.append(f"... ({table.row_count - shown} more rows)")
    return "\n".join(lines)


def to_csv(table: Table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.column_names)
    for row in table.rows():
        writer.writerow([
            "" if v is None else stringify_cell(v, "text") for v in row
        ])
    return buf.getvalue()


def table_from_rows(name: str, columns: Sequence[str], rows: Sequence[Sequence]) -> Table:
    cols = []
    for j, col_name in enumerate(columns):
        values = tuple(row[j] for row in rows)
        cols.append(Column(col_name, infer_declared_type(values), values))
    return Table(name, tuple(cols))


def _dedupe(names: list[str]) -> list[str]:
    out, seen = [], set()
    for n in names:
        candidate = n
        k = 2
        while candidate in seen:
            candidate = f"{n}_{k}"
            k += 1
        seen.add(candidate)
        out.append(candidate)
    return out
