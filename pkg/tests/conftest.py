import json
from pathlib import Path

import pytest

from tandemqa.gateway import Gateway, ScriptedBackend
from tandemqa.tables import load_table_file

DATA_DIR = Path(__file__).parent / "data"

SOCCER_QUESTION = (
    "How long did it take for the New York Americans to win the "
    "National Cup after 1936?"
)


@pytest.fixture
def soccer_table():
    return load_table_file(DATA_DIR / "New_York_Americans_soccer.csv")


@pytest.fixture
def soccer_backend():
    return ScriptedBackend.from_file(DATA_DIR / "soccer_transcript.json")


def scripted(records, strict=None) -> ScriptedBackend:
    return ScriptedBackend(records, strict=strict)


def gateway_for(records, strict=None) -> Gateway:
    return Gateway(scripted(records, strict=strict))


def rec(template_id: str, response: str, fingerprint: str | None = None) -> dict:
    entry = {"template_id": template_id, "response": response}
    if fingerprint:
        entry["fingerprint"] = fingerprint
    return entry


def pipeline_records(
    *,
    relevant: str = "['a', 'b']",
    description: str = "| a | Integer | none | first |\n| b | String | none | second |",
    planning: str = "Step 1: SQL - Keep the rows that matter.",
    verify: str | None = None,
    codegen: str = "Step_1 - SQL:\nCREATE TABLE kept AS SELECT * FROM t WHERE a > 0;",
    llm_responses: tuple[str, ...] = (),
    answer: str = "42",
    paragraph_filter: str | None = None,
) -> list[dict]:
    """Transcript records for one pipeline run over a table named t."""
    records = [
        rec("relevant_columns", relevant),
        rec("column_description", description),
        rec("planning", planning),
        rec("verify_plan", verify if verify is not None else planning),
        rec("code_execution", codegen),
    ]
    if paragraph_filter is not None:
        records.append(rec("paragraph_filter", paragraph_filter))
    for response in llm_responses:
        records.append(rec("llm_step", response))
    records.append(rec("answer_extraction", answer))
    return records


def write_transcript(path: Path, records, strict=False) -> Path:
    path.write_text(
        json.dumps({"strict": strict, "records": records}, indent=2),
        encoding="utf-8",
    )
    return path
