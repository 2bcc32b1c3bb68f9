"""Exception taxonomy shared across the engine.

Every error the pipeline can surface maps onto one of four families, which
in turn map onto CLI exit codes and HTTP statuses:

* usage errors (bad arguments, violated preconditions)   -> exit 2 / HTTP 400
* backend errors (transport, API, scripted-miss)         -> exit 3 / HTTP 502
* parse/validation errors (LLM output, files, formats)   -> exit 4 / HTTP 422
* incomplete pipeline is not an exception; reports carry a status field
  and the CLI exits 5 when a run ends incomplete.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_PARSE = 4
EXIT_INCOMPLETE = 5


class SparkError(Exception):
    """Base class for all engine errors."""

    exit_code = 1
    kind = "error"


class UsageError(SparkError):
    """Caller violated an argument contract or precondition."""

    exit_code = EXIT_USAGE
    kind = "usage"


class IngestionError(UsageError):
    """Document text unusable (empty or whitespace-only)."""

    kind = "ingestion"


class ChunkingError(UsageError):
    """Invalid chunking parameters (overlap must be < chunk_size)."""

    kind = "chunking"


class DegenerateVectorError(UsageError):
    """Zero vector cannot be normalized."""

    kind = "degenerate_vector"


class DimensionError(UsageError):
    """Vector dimension does not match the index dimension."""

    kind = "dimension"


class DuplicateIdError(UsageError):
    """Chunk id already present in the index."""

    kind = "duplicate_id"


class EmptyIndexError(UsageError):
    """Query against an index with no entries."""

    kind = "empty_index"


class RefinementLimitError(UsageError):
    """Refinement chain already reached max_refinements."""

    kind = "refinement_limit"


class WorkspaceLockedError(UsageError):
    """Another pipeline run holds the workspace lock."""

    kind = "workspace_locked"


class BackendError(SparkError):
    """Failure talking to a model backend."""

    exit_code = EXIT_BACKEND
    kind = "backend"


class PermanentApiError(BackendError):
    """HTTP 4xx response that retrying cannot fix."""

    kind = "permanent_api"

    def __init__(self, status: int, body: str):
        super().__init__(f"backend returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class RetriesExhaustedError(BackendError):
    """Transient failures persisted through every retry attempt."""

    kind = "retries_exhausted"

    def __init__(self, attempts: int, last_error: str):
        super().__init__(f"backend unreachable after {attempts} attempts: {last_error}")
        self.attempts = attempts


class BackendTimeoutError(RetriesExhaustedError):
    """Every retry attempt ended in a timeout."""

    kind = "timeout"

    def __init__(self, attempts: int):
        super().__init__(attempts, "timed out")


class ScriptedMissError(BackendError):
    """Mock backend has no entry matching the prompt."""

    kind = "scripted_miss"


class ProtocolError(BackendError):
    """Backend answered with a payload that violates the wire contract."""

    kind = "protocol"


class ParseError(SparkError):
    """Model output or file content failed parsing/validation."""

    exit_code = EXIT_PARSE
    kind = "parse"


class ScoringParseError(ParseError):
    kind = "scoring_parse"


class FollowupGenerationError(ParseError):
    kind = "followup_generation"


class SynthesisError(ParseError):
    kind = "synthesis"


class SearchError(BackendError):
    """Search client failure; the evidence loop treats it as zero results."""

    kind = "search"


class ExtractionError(ParseError):
    """No usable concepts/problems survived validation."""

    kind = "extraction"


class IdeaParseError(ParseError):
    kind = "idea_parse"


class IdeaValidationError(ParseError):
    """Generated idea references concepts outside the allowed set."""

    kind = "idea_validation"


class DecisionParseError(ParseError):
    kind = "decision_parse"


class PartialReviewError(BackendError):
    """Some review calls failed; carries the indices that completed."""

    kind = "partial_review"

    def __init__(self, completed: list[int], cause: str):
        super().__init__(f"reviews completed for indices {completed}; failed: {cause}")
        self.completed = completed


class TransformError(ParseError):
    """Annotator produced unusable output for an idea transform."""

    kind = "transform"


class RecordParseError(ParseError):
    """Malformed line in a line-delimited record file."""

    kind = "record_parse"

    def __init__(self, path: str, line_number: int, detail: str):
        super().__init__(f"{path}:{line_number}: {detail}")
        self.path = path
        self.line_number = line_number


class IndexFormatError(ParseError):
    """Index file has a bad magic number or unsupported version."""

    kind = "index_format"


class SplitError(ParseError):
    """Training record lacks the submission date needed for a split."""

    kind = "split"

    def __init__(self, pair_id: str):
        super().__init__(f"record for pair {pair_id!r} has no submission_date")
        self.pair_id = pair_id


class ConfigError(UsageError):
    kind = "config"


class PipelineIncompleteError(SparkError):
    """A run finished without producing the requested artifact."""

    exit_code = EXIT_INCOMPLETE
    kind = "incomplete"

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def exit_code_for_kind(kind: str) -> int:
    """Map an error kind string back to the exit code of its class."""
    queue = [SparkError]
    while queue:
        cls = queue.pop()
        if cls.kind == kind:
            return cls.exit_code
        queue.extend(cls.__subclasses__())
    return SparkError.exit_code
