"""Build the reviewer-model training dataset from abstract-review dumps.

Each harvested pair couples a paper abstract with one peer review. An
annotator backend rewrites both into their results-free "idea" forms, a
heuristic screen rejects rewrites that still leak empirical outcomes, and
every surviving pair fans out into four task-tagged training records: two
forward (abstract to review) and two backward (review to abstract). Splits
are temporal and pair-atomic so no pair straddles train and test.
"""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import date, datetime
from pathlib import Path
from typing import Sequence

from . import prompts
from .backends.types import ChatBackend, ChatRequest
from .errors import IngestionError, SplitError, TransformError, UsageError

log = logging.getLogger(__name__)

TASK_ORIG_REVIEW_PRED = "orig_review_pred"
TASK_IDEA_REVIEW_PRED = "idea_review_pred"
TASK_ORIG_ABSTRACT_GEN = "orig_abstract_gen"
TASK_IDEA_ABSTRACT_GEN = "idea_abstract_gen"

TASKS = (
    TASK_ORIG_REVIEW_PRED,
    TASK_IDEA_REVIEW_PRED,
    TASK_ORIG_ABSTRACT_GEN,
    TASK_IDEA_ABSTRACT_GEN,
)

_TASK_PROMPT_ASSET = {
    TASK_ORIG_REVIEW_PRED: "judge_orig_review_pred_v1",
    TASK_IDEA_REVIEW_PRED: "judge_idea_review_pred_v1",
    TASK_ORIG_ABSTRACT_GEN: "judge_orig_abstract_gen_v1",
    TASK_IDEA_ABSTRACT_GEN: "judge_idea_abstract_gen_v1",
}

ANNOTATOR_SYSTEM = "You rewrite scientific text, following the instructions exactly."

# Phrases and patterns that mark a rewrite as still reporting results.
_LEAK_TOKENS = ("%", "state-of-the-art", "outperform")
_LEAK_TABLE = re.compile(r"table\s*\d", re.IGNORECASE)

_LEADING_INT = re.compile(r"\s*(-?\d+)")


@dataclass
class AbstractReviewPair:
    pair_id: str
    a_orig: str
    r_orig: str
    a_idea: str | None = None
    r_idea: str | None = None
    venue: str = ""
    submission_date: str = ""
    review_score: float | None = None

    @property
    def is_full(self) -> bool:
        return bool(self.a_idea) and bool(self.r_idea)


@dataclass(frozen=True)
class TrainingRecord:
    task: str
    system_prompt: str
    input: str
    target: str
    pair_id: str
    submission_date: str


@dataclass
class ExtractReport:
    pairs: list[AbstractReviewPair]
    skipped: int
    reasons: dict[str, int]


def parse_review_score(value) -> float | None:
    """Numeric ratings pass through; free-text ones use the leading integer."""
    if isinstance(value, bool) or value is None:
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        match = _LEADING_INT.match(value)
        if match:
            return float(match.group(1))
    return None


def extract_pairs(dump_path: str | Path) -> ExtractReport:
    """Read a line-delimited dump of submission reviews into pairs.

    Each line needs at least submission_id, abstract, review_text, and date.
    Malformed or incomplete lines are skipped and counted, not fatal; an
    unreadable file is.
    """
    path = Path(dump_path)
    try:
        lines = path.read_text("utf-8").splitlines()
    except OSError as exc:
        raise IngestionError(f"cannot read dump {path}: {exc}") from exc

    pairs: list[AbstractReviewPair] = []
    reasons: dict[str, int] = {}
    per_submission: dict[str, int] = {}

    def skip(reason: str) -> None:
        reasons[reason] = reasons.get(reason, 0) + 1

    for line in lines:
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            skip("malformed_json")
            continue
        if not isinstance(record, dict):
            skip("malformed_json")
            continue
        submission = str(record.get("submission_id") or "").strip()
        abstract = str(record.get("abstract") or "").strip()
        review = str(record.get("review_text") or "").strip()
        if not submission:
            skip("missing_submission_id")
            continue
        if not abstract:
            skip("missing_abstract")
            continue
        if not review:
            skip("missing_review")
            continue
        ordinal = per_submission.get(submission, 0) + 1
        per_submission[submission] = ordinal
        pairs.append(
            AbstractReviewPair(
                pair_id=f"{submission}#r{ordinal}",
                a_orig=abstract,
                r_orig=review,
                venue=str(record.get("venue") or ""),
                submission_date=str(record.get("date") or ""),
                review_score=parse_review_score(record.get("rating")),
            )
        )
    return ExtractReport(pairs=pairs, skipped=sum(reasons.values()), reasons=reasons)


def leaks_results(text: str) -> bool:
    lowered = text.lower()
    if any(token in lowered for token in _LEAK_TOKENS):
        return True
    return bool(_LEAK_TABLE.search(text))


def _transform(source: str, asset: str, placeholder: str, backend: ChatBackend) -> str | None:
    """Shared transform body: one attempt, one stricter regeneration, or None."""
    if not source.strip():
        raise UsageError("transform input must be non-empty")
    prompt = prompts.render_asset(asset, **{placeholder: source})
    attempts = [
        prompt,
        prompt
        + "\n\nThe previous rewrite still reported empirical results. Remove every number,"
        " percentage, table or figure reference, benchmark score, and comparison claim.",
    ]
    for attempt in attempts:
        request = ChatRequest(system_prompt=ANNOTATOR_SYSTEM, user_prompt=attempt)
        text = backend.chat_complete(request).text.strip()
        if not text:
            raise TransformError("annotator returned empty text")
        if not leaks_results(text):
            return text
    return None


def transform_to_idea_abstract(a_orig: str, annotator_backend: ChatBackend) -> str | None:
    """Rewrite a paper abstract into a results-free proposal abstract.

    None means both attempts leaked results and the pair should be flagged.
    """
    return _transform(a_orig, "idea_abstract_v1", "abstract", annotator_backend)


def transform_to_idea_review(r_orig: str, annotator_backend: ChatBackend) -> str | None:
    """Rewrite a review into a critique of the idea alone."""
    return _transform(r_orig, "idea_review_v1", "review", annotator_backend)


def annotate_pair(pair: AbstractReviewPair, backend: ChatBackend) -> AbstractReviewPair:
    """Attach idea forms; a flag on either side clears both, since the idea
    tasks need the abstract and review to describe the same artifact."""
    a_idea = transform_to_idea_abstract(pair.a_orig, backend)
    r_idea = transform_to_idea_review(pair.r_orig, backend) if a_idea is not None else None
    if a_idea is None or r_idea is None:
        log.warning("pair %s flagged by the results-leak screen", pair.pair_id)
        return replace(pair, a_idea=None, r_idea=None)
    return replace(pair, a_idea=a_idea, r_idea=r_idea)


def annotate_pairs(
    pairs: Sequence[AbstractReviewPair], backend: ChatBackend, workers: int = 4
) -> list[AbstractReviewPair]:
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda p: annotate_pair(p, backend), pairs))


def build_training_records(pairs: Sequence[AbstractReviewPair]) -> list[TrainingRecord]:
    """Fan each pair out into its task records: 4 when full, 2 when flagged."""
    if not pairs:
        raise UsageError("no pairs to build records from")
    records: list[TrainingRecord] = []
    for pair in pairs:
        mappings = [(TASK_ORIG_REVIEW_PRED, pair.a_orig, pair.r_orig)]
        if pair.is_full:
            mappings.append((TASK_IDEA_REVIEW_PRED, pair.a_idea, pair.r_idea))
        mappings.append((TASK_ORIG_ABSTRACT_GEN, pair.r_orig, pair.a_orig))
        if pair.is_full:
            mappings.append((TASK_IDEA_ABSTRACT_GEN, pair.r_idea, pair.a_idea))
        for task, source, target in mappings:
            records.append(
                TrainingRecord(
                    task=task,
                    system_prompt=prompts.load(_TASK_PROMPT_ASSET[task]),
                    input=source,
                    target=target,
                    pair_id=pair.pair_id,
                    submission_date=pair.submission_date,
                )
            )
    return records


def _parse_date(value: str, pair_id: str) -> date:
    try:
        return datetime.strptime(value, "%Y-%m-%d").date()
    except (TypeError, ValueError):
        raise SplitError(pair_id) from None


def temporal_split(
    records: Sequence[TrainingRecord], cutoff: str | date
) -> tuple[list[TrainingRecord], list[TrainingRecord]]:
    """Partition records by submission date, keeping each pair on one side.

    Dates on the cutoff day go to train; later dates go to test.
    """
    if isinstance(cutoff, str):
        try:
            cutoff = datetime.strptime(cutoff, "%Y-%m-%d").date()
        except ValueError:
            raise UsageError(f"invalid cutoff date {cutoff!r}, expected YYYY-MM-DD") from None
    side_by_pair: dict[str, bool] = {}
    train: list[TrainingRecord] = []
    test: list[TrainingRecord] = []
    for record in records:
        in_train = side_by_pair.get(record.pair_id)
        if in_train is None:
            if not record.submission_date:
                raise SplitError(record.pair_id)
            in_train = _parse_date(record.submission_date, record.pair_id) <= cutoff
            side_by_pair[record.pair_id] = in_train
        (train if in_train else test).append(record)
    return train, test


def load_scores(path: str | Path) -> list[float]:
    """Read one score per line: either a bare number or {"score": x} JSON."""
    from .errors import RecordParseError

    source = Path(path)
    if not source.exists():
        raise UsageError(f"score file not found: {source}")
    scores: list[float] = []
    for line_number, line in enumerate(source.read_text("utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            value = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordParseError(str(source), line_number, exc.msg) from exc
        if isinstance(value, dict):
            value = value.get("score")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise RecordParseError(str(source), line_number, "expected a number or a 'score' key")
        scores.append(float(value))
    return scores


def score_rmse(predicted: Sequence[float], actual: Sequence[float]) -> float:
    if len(predicted) != len(actual) or not predicted:
        raise UsageError(
            f"need equal non-empty score lists, got {len(predicted)} and {len(actual)}"
        )
    total = math.fsum((p - a) ** 2 for p, a in zip(predicted, actual))
    return math.sqrt(total / len(predicted))
