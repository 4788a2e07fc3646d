"""Lightweight, conservative SQL text analysis.

These helpers do identifier-level scanning, not real parsing. Rewrite passes
treat anything they cannot resolve as unsafe, so false negatives here only
cost missed optimizations, never correctness.
"""

from __future__ import annotations

import re

SQL_VERBS = {
    "SELECT", "CREATE", "INSERT", "UPDATE", "DELETE", "DROP", "ALTER",
    "WITH", "PRAGMA", "REPLACE",
}

_KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "ORDER", "BY", "HAVING", "LIMIT",
    "OFFSET", "JOIN", "INNER", "LEFT", "RIGHT", "OUTER", "FULL", "CROSS",
    "ON", "AS", "AND", "OR", "NOT", "NULL", "IN", "IS", "BETWEEN", "LIKE",
    "EXISTS", "CASE", "WHEN", "THEN", "ELSE", "END", "CAST", "UNION", "ALL",
    "DISTINCT", "CREATE", "TABLE", "VIEW", "IF", "DROP", "ALTER", "INSERT",
    "INTO", "VALUES", "UPDATE", "SET", "DELETE", "ASC", "DESC", "COUNT",
    "SUM", "AVG", "MIN", "MAX", "WITH", "USING", "INTEGER", "TEXT", "REAL",
}

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def split_statements(sql: str) -> list[str]:
    """Split on semicolons that are outside quotes; drops empty fragments."""
    statements, buf = [], []
    quote: str | None = None
    i = 0
    while i < len(sql):
        ch = sql[i]
        if quote:
            buf.append(ch)
            if ch == quote:
                # doubled quote inside a literal stays inside it
                if i + 1 < len(sql) and sql[i + 1] == quote:
                    buf.append(sql[i + 1])
                    i += 1
                else:
                    quote = None
        elif ch in "'\"`":
            quote = ch
            buf.append(ch)
        elif ch == "-" and sql[i:i + 2] == "--":
            end = sql.find("\n", i)
            i = len(sql) if end == -1 else end
            continue
        elif ch == ";":
            statements.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
        i += 1
    statements.append("".join(buf).strip())
    return [s for s in statements if s]


def _masked(sql: str) -> str:
    """Replace quoted literals with spaces so regexes skip their contents."""
    out = []
    quote: str | None = None
    for ch in sql:
        if quote:
            out.append(" ")
            if ch == quote:
                quote = None
        elif ch in "'\"`":
            quote = ch
            out.append(" ")
        else:
            out.append(ch)
    return "".join(out)


def first_keyword(statement: str) -> str:
    match = _IDENT_RE.search(statement)
    return match.group(0).upper() if match else ""


def looks_like_sql(statement: str) -> bool:
    return first_keyword(statement) in SQL_VERBS


def create_table_name(statement: str) -> str | None:
    match = re.search(
        r"\bCREATE\s+(?:TEMP(?:ORARY)?\s+)?(?:TABLE|VIEW)\s+(?:IF\s+NOT\s+EXISTS\s+)?"
        r"[`\"]?([A-Za-z_][A-Za-z0-9_]*)[`\"]?",
        statement,
        re.IGNORECASE,
    )
    return match.group(1) if match else None


def referenced_tables(statement: str) -> set[str]:
    """Names appearing in table positions (FROM/JOIN/INTO/UPDATE)."""
    masked = _masked(statement)
    names = set()
    for match in re.finditer(
        r"\b(?:FROM|JOIN|INTO|UPDATE)\s+[`\"]?([A-Za-z_][A-Za-z0-9_]*)[`\"]?",
        masked,
        re.IGNORECASE,
    ):
        name = match.group(1)
        if name.upper() not in _KEYWORDS:
            names.add(name)
    return names


def identifiers(statement: str) -> set[str]:
    """Every identifier-shaped token outside string literals, keywords excluded."""
    masked = _masked(statement)
    return {
        tok for tok in _IDENT_RE.findall(masked)
        if tok.upper() not in _KEYWORDS
    }


def select_body(statement: str) -> str:
    """Strip a leading CREATE TABLE ... AS wrapper, leaving the SELECT."""
    match = re.match(
        r"\s*CREATE\s+(?:TEMP(?:ORARY)?\s+)?(?:TABLE|VIEW)\s+(?:IF\s+NOT\s+EXISTS\s+)?"
        r"[`\"]?[A-Za-z_][A-Za-z0-9_]*[`\"]?\s+AS\s+",
        statement,
        re.IGNORECASE,
    )
    return statement[match.end():].strip() if match else statement.strip()


def inline_table(statement: str, table: str, body: str) -> str:
    """Replace FROM/JOIN references to ``table`` with a named subquery."""
    pattern = re.compile(
        rf"\b(FROM|JOIN)\s+[`\"]?{re.escape(table)}[`\"]?\b",
        re.IGNORECASE,
    )
    return pattern.sub(lambda m: f"{m.group(1)} ({body}) AS {table}", statement)


_SIMPLE_FILTER_RE = re.compile(
    r"^\s*SELECT\s+\*\s+FROM\s+[`\"]?([A-Za-z_][A-Za-z0-9_]*)[`\"]?"
    r"(?:\s+WHERE\s+(?P<where>.*?))?"
    r"(?:\s+ORDER\s+BY\s+(?P<order>.*?))?\s*$",
    re.IGNORECASE | re.DOTALL,
)

_BLOCKERS_RE = re.compile(
    r"\b(LIMIT|GROUP\s+BY|HAVING|JOIN|UNION|DISTINCT|OFFSET)\b|\(\s*SELECT\b",
    re.IGNORECASE,
)


def simple_filter_projection(statement: str) -> tuple[str, str] | None:
    """Recognize ``[CREATE TABLE x AS] SELECT * FROM t [WHERE ...] [ORDER BY ...]``.

    Returns (source table, predicate text) when the statement is that simple,
    otherwise None. Statements with LIMIT, grouping, joins, or subqueries do
    not qualify.
    """
    body = select_body(statement)
    if _BLOCKERS_RE.search(_masked(body)):
        return None
    match = _SIMPLE_FILTER_RE.match(body)
    if not match:
        return None
    predicate = " ".join(
        part for part in (match.group("where"), match.group("order")) if part
    )
    return match.group(1), predicate


def single_select(statement_block: str) -> str | None:
    """Return the sole statement if the block is one SELECT/CREATE-AS, else None."""
    statements = split_statements(statement_block)
    if len(statements) != 1:
        return None
    stmt = statements[0]
    kw = first_keyword(stmt)
    if kw == "SELECT":
        return stmt
    if kw == "CREATE" and re.search(r"\bAS\s+SELECT\b", _masked(stmt), re.IGNORECASE):
        return stmt
    return None


def quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'
