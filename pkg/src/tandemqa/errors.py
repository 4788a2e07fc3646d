"""Exception types shared across the package."""

from __future__ import annotations


class TandemError(Exception):
    """Base class for all package errors."""


class EmptyInput(TandemError):
    pass


class RaggedRow(TandemError):
    def __init__(self, row_index: int, expected: int, actual: int):
        super().__init__(
            f"row {row_index} has {actual} cells, header has {expected}"
        )
        self.row_index = row_index
        self.expected = expected
        self.actual = actual


class UnknownColumn(TandemError):
    def __init__(self, name: str):
        super().__init__(f"unknown column: {name!r}")
        self.name = name


class MissingBinding(TandemError):
    def __init__(self, slot: str):
        super().__init__(f"template slot {slot!r} is not bound")
        self.slot = slot


class BackendUnavailable(TandemError):
    pass


class ReplayMiss(TandemError):
    def __init__(self, template_id: str, fingerprint: str):
        super().__init__(
            f"no scripted response for template {template_id!r} "
            f"(fingerprint {fingerprint})"
        )
        self.template_id = template_id
        self.fingerprint = fingerprint


class EmptyOutput(TandemError):
    pass


class LengthMismatch(TandemError):
    def __init__(self, actual: int, expected: int):
        super().__init__(f"expected {expected} values, got {actual}")
        self.actual = actual
        self.expected = expected


class StepFailed(TandemError):
    def __init__(self, cause: str, chunk_index: int | None = None):
        where = f" (chunk {chunk_index})" if chunk_index is not None else ""
        super().__init__(f"step failed{where}: {cause}")
        self.cause = cause
        self.chunk_index = chunk_index


class NoStepsFound(TandemError):
    pass


class UnknownStepKind(TandemError):
    def __init__(self, line: str):
        super().__init__(f"unknown step kind in line: {line!r}")
        self.line = line


class MalformedLlmStep(TandemError):
    def __init__(self, missing_field: str):
        super().__init__(f"LLM step is missing field {missing_field!r}")
        self.missing_field = missing_field


class PlanGenerationFailed(TandemError):
    pass


class CodegenFailed(TandemError):
    pass


class PipelineFailed(TandemError):
    pass


class DatasetMalformed(TandemError):
    def __init__(self, record_id: str, reason: str):
        super().__init__(f"record {record_id!r}: {reason}")
        self.record_id = record_id
        self.reason = reason


class EngineUnavailable(TandemError):
    pass
