"""Typed errors shared across the toolkit.

Every error carries a stable ``code`` string so CLI output, logs, and the
annotation API can report failures uniformly.
"""

from __future__ import annotations

from typing import Any


class ConflictLabError(Exception):
    code = "CONFLICTLAB_ERROR"

    def __init__(self, message: str = "", **context: Any):
        self.context = context
        if context:
            details = ", ".join(f"{k}={v!r}" for k, v in context.items())
            message = f"{message} ({details})" if message else details
        super().__init__(message or self.code)


# --- gateway ---------------------------------------------------------------

class BackendUnavailable(ConflictLabError):
    code = "BACKEND_UNAVAILABLE"


class BackendRejected(ConflictLabError):
    code = "BACKEND_REJECTED"


class MalformedResponse(ConflictLabError):
    code = "MALFORMED_RESPONSE"


class TransportFailure(ConflictLabError):
    """Internal: a single transport attempt failed; the gateway retries these."""

    code = "TRANSPORT_FAILURE"


class MissingSlot(ConflictLabError):
    code = "MISSING_SLOT"


class NoJsonFound(ConflictLabError):
    code = "NO_JSON_FOUND"


class KeyAbsent(ConflictLabError):
    code = "KEY_ABSENT"


class NonStringValue(ConflictLabError):
    code = "NON_STRING_VALUE"


# --- generation pipelines --------------------------------------------------

class GenerationParseFailure(ConflictLabError):
    code = "GENERATION_PARSE_FAILURE"


class DuplicateAnswers(ConflictLabError):
    code = "DUPLICATE_ANSWERS"


class InsufficientEvidence(ConflictLabError):
    code = "INSUFFICIENT_EVIDENCE"


class SameAnswer(ConflictLabError):
    code = "SAME_ANSWER"


class MissingRole(ConflictLabError):
    code = "MISSING_ROLE"


class IdenticalOutput(ConflictLabError):
    code = "IDENTICAL_OUTPUT"


class LengthMismatch(ConflictLabError):
    code = "LENGTH_MISMATCH"


class EmptyVector(ConflictLabError):
    code = "EMPTY_VECTOR"


class InsufficientFactoids(ConflictLabError):
    code = "INSUFFICIENT_FACTOIDS"


# --- detection -------------------------------------------------------------

class OutOfRange(ConflictLabError):
    code = "OUT_OF_RANGE"


class ScoreOutOfRange(ConflictLabError):
    code = "SCORE_OUT_OF_RANGE"


# --- resolution ------------------------------------------------------------

class ParseFailure(ConflictLabError):
    code = "PARSE_FAILURE"


# --- analytics -------------------------------------------------------------

class RowSumMismatch(ConflictLabError):
    code = "ROW_SUM_MISMATCH"


class Degenerate(ConflictLabError):
    code = "DEGENERATE"


class ConstantInput(ConflictLabError):
    code = "CONSTANT_INPUT"


# --- storage / orchestration -----------------------------------------------

class SchemaError(ConflictLabError):
    code = "SCHEMA_ERROR"


class ConfigError(ConflictLabError):
    code = "CONFIG_ERROR"


class StageError(ConflictLabError):
    code = "STAGE_ERROR"


# --- annotation service ------------------------------------------------------

class UnknownTask(ConflictLabError):
    code = "UNKNOWN_TASK"


class UnknownAnnotator(ConflictLabError):
    code = "UNKNOWN_ANNOTATOR"


class UnknownItem(ConflictLabError):
    code = "UNKNOWN_ITEM"


class VocabViolation(ConflictLabError):
    code = "VOCAB_VIOLATION"


class InsufficientLabels(ConflictLabError):
    code = "INSUFFICIENT_LABELS"
