"""Backend-agnostic LLM access.

A Gateway pairs a backend (live HTTP, scripted replay, or a local function)
with a CallLog that records every completion attempt, including retries.
Chunked and column-batched generation live here because their call accounting
is part of the gateway contract.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import (
    BackendUnavailable,
    EmptyOutput,
    LengthMismatch,
    ReplayMiss,
    StepFailed,
)
from .templates import render_prompt

DEFAULT_TEMPERATURE = 0.01
DEFAULT_MAX_TOKENS = 2048
DEFAULT_CHUNK_SIZE = 30
DEFAULT_PARALLELISM = 4
DEFAULT_BATCH_BUDGET = 100


@dataclass(frozen=True)
class LlmRequest:
    template_id: str
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS


@dataclass(frozen=True)
class LlmResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass(frozen=True)
class CallEntry:
    template_id: str
    input_tokens: int
    output_tokens: int
    latency: float
    outcome: str  # ok | length_mismatch | replay_miss | error


class CallLog:
    """Append-only, thread-safe record of completion attempts."""

    def __init__(self):
        self._entries: list[CallEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: CallEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def extend(self, entries: Iterable[CallEntry]) -> None:
        with self._lock:
            self._entries.extend(entries)

    @property
    def entries(self) -> list[CallEntry]:
        with self._lock:
            return list(self._entries)

    def count(self, template_id: str | None = None) -> int:
        with self._lock:
            if template_id is None:
                return len(self._entries)
            return sum(1 for e in self._entries if e.template_id == template_id)

    def __len__(self) -> int:
        return self.count()

    def __iter__(self):
        return iter(self.entries)


def fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _rough_tokens(text: str) -> int:
    return max(1, len(text) // 4)


class ScriptedBackend:
    """Replays recorded responses.

    Records with a fingerprint match exactly on (template_id, fingerprint of
    the rendered prompt) and may be replayed any number of times. Records
    without a fingerprint form a per-template FIFO queue (lenient mode), which
    lets a transcript survive cosmetic prompt drift. In strict mode only
    fingerprint matches are served.
    """

    def __init__(self, records: Sequence[dict], strict: bool | None = None):
        self._exact: dict[tuple[str, str], dict] = {}
        self._queues: dict[str, list[dict]] = {}
        for rec in records:
            fp = rec.get("fingerprint")
            if fp:
                self._exact[(rec["template_id"], fp)] = rec
            else:
                self._queues.setdefault(rec["template_id"], []).append(rec)
        if strict is None:
            strict = not self._queues
        self.strict = strict
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, strict: bool | None = None) -> "ScriptedBackend":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(payload, dict):
            records = payload.get("records", [])
            if strict is None and "strict" in payload:
                strict = bool(payload["strict"])
        else:
            records = payload
        return cls(records, strict=strict)

    def complete(self, request: LlmRequest) -> LlmResponse:
        fp = fingerprint(request.prompt)
        rec = self._exact.get((request.template_id, fp))
        if rec is None and not self.strict:
            with self._lock:
                queue = self._queues.get(request.template_id)
                if queue:
                    rec = queue.pop(0)
        if rec is None:
            raise ReplayMiss(request.template_id, fp)
        text = rec["response"]
        return LlmResponse(
            text,
            int(rec.get("input_tokens", _rough_tokens(request.prompt))),
            int(rec.get("output_tokens", _rough_tokens(text))),
        )


class EchoBackend:
    """Returns the input values of a column-generation prompt unchanged.

    Useful for order-preservation and accounting tests where the content of
    the generated column does not matter.
    """

    def complete(self, request: LlmRequest) -> LlmResponse:
        values = extract_column_values(request.prompt)
        text = "#".join(values) if values is not None else ""
        return LlmResponse(text, _rough_tokens(request.prompt), _rough_tokens(text))


class MapperBackend:
    """Deterministic per-value column generator, the oracle backend for
    equivalence checks: each output value is a pure function of the input
    value and the step prompt."""

    def __init__(self, fn: Callable[[str, str], str] | None = None):
        self.fn = fn or stable_tag

    def complete(self, request: LlmRequest) -> LlmResponse:
        values = extract_column_values(request.prompt)
        if values is None:
            return LlmResponse("")
        step_prompt = extract_step_prompt(request.prompt)
        text = "#".join(self.fn(v, step_prompt) for v in values)
        return LlmResponse(text, _rough_tokens(request.prompt), _rough_tokens(text))


def stable_tag(value: str, prompt: str) -> str:
    digest = hashlib.sha256(f"{value}\x1f{prompt}".encode("utf-8")).hexdigest()
    return f"{value}~{digest[:4]}"


class LiveBackend:
    """Chat-completion HTTP backend; credential comes from an env var."""

    def __init__(
        self,
        model: str,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str = "TANDEMQA_API_KEY",
        max_retries: int = 3,
        timeout: float = 60.0,
    ):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.timeout = timeout

    def complete(self, request: LlmRequest) -> LlmResponse:
        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise BackendUnavailable(f"credential env var {self.api_key_env} unset")
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        last_error: Exception | None = None
        for _ in range(self.max_retries):
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers={"Authorization": f"Bearer {api_key}"},
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                data = resp.json()
                usage = data.get("usage", {})
                return LlmResponse(
                    data["choices"][0]["message"]["content"],
                    int(usage.get("prompt_tokens", 0)),
                    int(usage.get("completion_tokens", 0)),
                )
            except Exception as exc:  # transport errors are retried
                last_error = exc
        raise BackendUnavailable(f"backend failed after retries: {last_error}")


def make_backend(spec: str):
    """Build a backend from a CLI-style spec: ``scripted:<path>``,
    ``live:<model-id>``, ``echo``, or ``mapper``."""
    if spec == "echo":
        return EchoBackend()
    if spec == "mapper":
        return MapperBackend()
    kind, _, arg = spec.partition(":")
    if kind == "scripted" and arg:
        return ScriptedBackend.from_file(arg)
    if kind == "live" and arg:
        return LiveBackend(model=arg)
    raise ValueError(f"unrecognized backend spec: {spec!r}")


class Gateway:
    """A backend plus its call log and request defaults."""

    def __init__(
        self,
        backend,
        *,
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
        call_log: CallLog | None = None,
    ):
        self.backend = backend
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.call_log = call_log or CallLog()

    def request(self, template_id: str, bindings: dict) -> LlmRequest:
        return LlmRequest(
            template_id,
            render_prompt(template_id, bindings),
            self.temperature,
            self.max_tokens,
        )

    def complete(self, request: LlmRequest) -> LlmResponse:
        response, entry, error = self._execute(request)
        self.call_log.append(entry)
        if error is not None:
            raise error
        return response

    def ask(self, template_id: str, **bindings) -> str:
        return self.complete(self.request(template_id, bindings)).text

    def _execute(self, request: LlmRequest):
        """Run one completion without logging.

        Returns (response, entry, error); callers append entries themselves,
        which lets concurrent chunk runners log in deterministic order.
        """
        started = time.perf_counter()
        try:
            response = self.backend.complete(request)
        except Exception as exc:
            outcome = "replay_miss" if isinstance(exc, ReplayMiss) else "error"
            entry = CallEntry(request.template_id, _rough_tokens(request.prompt),
                              0, time.perf_counter() - started, outcome)
            return None, entry, exc
        entry = CallEntry(
            request.template_id,
            response.input_tokens,
            response.output_tokens,
            time.perf_counter() - started,
            "ok",
        )
        return response, entry, None


# --- structured-output parsing -------------------------------------------

_FENCE_RE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$", re.MULTILINE)


def strip_fences(text: str) -> str:
    return _FENCE_RE.sub("", text).strip()


def parse_hash_list(text: str, expected_len: int) -> list[str]:
    """Split a '#'-separated model reply into exactly ``expected_len`` values.

    Tolerates code fences, a wrapping bracket pair, an "Output:" label, and
    per-value quoting. Raises EmptyOutput or LengthMismatch.
    """
    cleaned = strip_fences(text).strip()
    if cleaned.lower().startswith("output:"):
        cleaned = cleaned[len("output:"):].strip()
    if cleaned.startswith("[") and cleaned.endswith("]"):
        cleaned = cleaned[1:-1].strip()
    if not cleaned:
        raise EmptyOutput("model returned no values")
    values = []
    for part in cleaned.split("#"):
        part = part.strip().rstrip(",").strip()
        if len(part) >= 2 and part[0] == part[-1] and part[0] in "'\"":
            part = part[1:-1]
        values.append(part)
    while values and values[-1] == "" and len(values) > expected_len:
        values.pop()
    if all(v == "" for v in values):
        raise EmptyOutput("model returned only separators")
    if len(values) != expected_len:
        raise LengthMismatch(len(values), expected_len)
    return values


def extract_column_values(prompt: str) -> list[str] | None:
    """Pull the input value list out of a rendered column-generation prompt."""
    match = re.search(r"^Column:\s*(\[.*?\])\s*$", prompt, re.MULTILINE | re.DOTALL)
    if not match:
        return None
    try:
        parsed = ast.literal_eval(match.group(1))
    except (ValueError, SyntaxError):
        return None
    if isinstance(parsed, list):
        return [str(v) for v in parsed]
    return None


def extract_step_prompt(prompt: str) -> str:
    match = re.search(r"^Step to solve the question:\s*(.*)$", prompt, re.MULTILINE)
    return match.group(1).strip() if match else ""


_RETRY_SUFFIX = (
    "\nIMPORTANT: Your previous output had the wrong number of values. "
    "Return exactly {n} values separated by '#', one per input value, "
    "and nothing else."
)


def generate_column_chunked(
    gateway: Gateway,
    values: Sequence[str],
    step_prompt: str,
    question: str,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    parallelism: int = DEFAULT_PARALLELISM,
) -> list[str]:
    """Generate one output value per input value, chunk by chunk.

    Issues ceil(n / chunk_size) completions (plus at most one retry per
    chunk), up to ``parallelism`` at a time, and reassembles outputs in input
    order. A chunk that fails twice aborts the step with StepFailed.
    """
    if not values:
        raise StepFailed("no input values")
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    chunks = [list(values[i:i + chunk_size]) for i in range(0, len(values), chunk_size)]

    def run_chunk(index: int):
        chunk = chunks[index]
        prompt = render_prompt("llm_step", {
            "column": repr(chunk),
            "step_prompt": step_prompt,
            "question": question,
        })
        entries = []
        request = LlmRequest("llm_step", prompt, gateway.temperature,
                             gateway.max_tokens)
        for attempt in (0, 1):
            response, entry, error = gateway._execute(request)
            if error is not None:
                entries.append(entry)
                return entries, error, None
            try:
                parsed = parse_hash_list(response.text, len(chunk))
                entries.append(entry)
                return entries, None, parsed
            except (LengthMismatch, EmptyOutput) as exc:
                entries.append(CallEntry(entry.template_id, entry.input_tokens,
                                         entry.output_tokens, entry.latency,
                                         "length_mismatch"))
                if attempt == 0:
                    request = LlmRequest(
                        request.template_id,
                        prompt + _RETRY_SUFFIX.format(n=len(chunk)),
                        request.temperature,
                        request.max_tokens,
                    )
                else:
                    return entries, exc, None
        raise AssertionError("unreachable")

    results: list = [None] * len(chunks)
    with ThreadPoolExecutor(max_workers=max(1, min(parallelism, len(chunks)))) as pool:
        futures = {pool.submit(run_chunk, i): i for i in range(len(chunks))}
        for future, i in futures.items():
            results[i] = future.result()

    failure: tuple[int, Exception] | None = None
    output: list[str] = []
    for i, (entries, error, parsed) in enumerate(results):
        gateway.call_log.extend(entries)
        if error is not None and failure is None:
            failure = (i, error)
        elif parsed is not None:
            output.extend(parsed)
    if failure is not None:
        index, error = failure
        raise StepFailed(str(error), chunk_index=index)
    return output


def generate_columns_batched(
    gateway: Gateway,
    input_columns: Sequence[str],
    rows: Sequence[Sequence[str]],
    specs: Sequence[tuple[str, str]],
    question: str,
    *,
    budget: int = DEFAULT_BATCH_BUDGET,
) -> dict[str, list[str]]:
    """Generate several target columns for row slices in shared calls.

    Each call covers floor(budget / columns-per-call) rows, never fewer than
    one, where columns-per-call counts input and target columns together. All
    targets for a row come from the same call so intra-row context is
    preserved. Returns {new_column: values} in row order.
    """
    if not rows:
        raise StepFailed("no input rows")
    if not specs:
        raise StepFailed("no target columns")
    cols_per_call = len(input_columns) + len(specs)
    if budget < cols_per_call:
        raise ValueError(
            f"budget {budget} is below columns per call {cols_per_call}"
        )
    rows_per_call = max(1, budget // cols_per_call)
    batches = [rows[i:i + rows_per_call] for i in range(0, len(rows), rows_per_call)]
    target_names = [new_column for _, new_column in specs]

    instruction_lines = [
        "For every input row below, produce values for these new columns:",
    ]
    for prompt_text, new_column in specs:
        instruction_lines.append(f"- {new_column}: {prompt_text}")
    instruction_lines.append(
        "Return one line per input row with the new column values in the order "
        f"listed ({' # '.join(target_names)}), separated by '#'."
    )
    instruction = "\n".join(instruction_lines)

    results: dict[str, list[str]] = {name: [] for name in target_names}
    for batch_index, batch in enumerate(batches):
        rendered_rows = [
            "; ".join(f"{col}={val}" for col, val in zip(input_columns, row))
            for row in batch
        ]
        prompt = render_prompt("llm_step", {
            "column": repr(rendered_rows),
            "step_prompt": instruction,
            "question": question,
        })
        request = LlmRequest("llm_step", prompt, gateway.temperature, gateway.max_tokens)
        grid: list[list[str]] | None = None
        parse_error: Exception | None = None
        for attempt in (0, 1):
            response, entry, error = gateway._execute(request)
            if error is not None:
                gateway.call_log.append(entry)
                raise StepFailed(str(error), chunk_index=batch_index)
            try:
                grid = _parse_grid(response.text, len(batch), len(specs))
                gateway.call_log.append(entry)
                parse_error = None
                break
            except (LengthMismatch, EmptyOutput) as exc:
                gateway.call_log.append(CallEntry(
                    entry.template_id, entry.input_tokens, entry.output_tokens,
                    entry.latency, "length_mismatch"))
                parse_error = exc
                request = LlmRequest(
                    request.template_id,
                    prompt + _RETRY_SUFFIX.format(n=len(batch)),
                    request.temperature,
                    request.max_tokens,
                )
        if parse_error is not None or grid is None:
            raise StepFailed(str(parse_error), chunk_index=batch_index)
        for row_values in grid:
            for name, value in zip(target_names, row_values):
                results[name].append(value)
    return results


def _parse_grid(text: str, n_rows: int, n_cols: int) -> list[list[str]]:
    cleaned = strip_fences(text)
    lines = [line.strip() for line in cleaned.splitlines() if line.strip()]
    if not lines:
        raise EmptyOutput("model returned no rows")
    if len(lines) != n_rows:
        raise LengthMismatch(len(lines), n_rows)
    grid = []
    for line in lines:
        values = [v.strip().strip("'\"") for v in line.split("#")]
        if len(values) != n_cols:
            raise LengthMismatch(len(values), n_cols)
        grid.append(values)
    return grid


def call_count_for(values_len: int, chunk_size: int) -> int:
    return math.ceil(values_len / chunk_size)
