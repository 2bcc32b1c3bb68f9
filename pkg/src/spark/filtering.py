"""Simulated peer review: multiple critiques per idea, then one decision.

Reviewers see only the title and abstract. Each reviewer slot gets a distinct
persona line in its system prompt, which keeps temperature-0 reviews diverse
without sacrificing determinism. A separate decision backend reads the idea
plus all critiques and emits the ACCEPT/REJECT verdict with a utility score.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from . import prompts
from .backends.types import JSON_OBJECT, ChatBackend, ChatRequest
from .errors import (
    DecisionParseError,
    PartialReviewError,
    ProtocolError,
    SparkError,
    UsageError,
)
from .ideagen import IdeaProposal
from .jsonutil import chat_json_with_repair

log = logging.getLogger(__name__)

ACCEPT = "ACCEPT"
REJECT = "REJECT"

DEFAULT_REVIEWS_PER_IDEA = 3

PERSONAS = (
    "a skeptical methods specialist",
    "an application-focused practitioner",
    "a theory-minded generalist",
)

# Wire keys for the decision schema; internal field names are normalized.
KEY_REASONING = "Decision reasoning"
KEY_DECISION = "Decision"
KEY_UTILITY = "Utility"


@dataclass(frozen=True)
class ReviewCritique:
    idea_id: str
    reviewer_index: int
    text: str


@dataclass(frozen=True)
class FilterDecision:
    idea_id: str
    reasoning: str
    decision: str
    utility: float

    def wire_dict(self) -> dict:
        return {
            KEY_REASONING: self.reasoning,
            KEY_DECISION: self.decision,
            KEY_UTILITY: self.utility,
        }

    def to_dict(self) -> dict:
        record = {"idea_id": self.idea_id}
        record.update(self.wire_dict())
        return record

    @classmethod
    def from_dict(cls, data: dict) -> "FilterDecision":
        parsed = parse_decision_obj(data, data.get("idea_id", ""))
        if parsed is None:
            raise DecisionParseError(f"unusable decision record for idea {data.get('idea_id')!r}")
        return clamp_utility(parsed)


@dataclass
class FilterBatchResult:
    decisions: list[FilterDecision] = field(default_factory=list)
    reviews: list[ReviewCritique] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)


def parse_decision_obj(obj: dict, idea_id: str) -> FilterDecision | None:
    """Validate the three-key decision schema; None means unusable."""
    reasoning = obj.get(KEY_REASONING)
    token = obj.get(KEY_DECISION)
    utility = obj.get(KEY_UTILITY)
    if not isinstance(reasoning, str) or not reasoning.strip():
        return None
    if not isinstance(token, str):
        return None
    token = token.strip().upper()
    if token not in (ACCEPT, REJECT):
        return None
    if isinstance(utility, bool) or not isinstance(utility, (int, float)):
        return None
    return FilterDecision(
        idea_id=idea_id, reasoning=reasoning, decision=token, utility=float(utility)
    )


def clamp_utility(decision: FilterDecision) -> FilterDecision:
    if 0.0 <= decision.utility <= 1.0:
        return decision
    clamped = min(max(decision.utility, 0.0), 1.0)
    log.warning(
        "utility %s for idea %s clamped to %s", decision.utility, decision.idea_id, clamped
    )
    return FilterDecision(decision.idea_id, decision.reasoning, decision.decision, clamped)


def review_request(idea: IdeaProposal, reviewer_index: int) -> ChatRequest:
    persona = PERSONAS[(reviewer_index - 1) % len(PERSONAS)]
    return ChatRequest(
        system_prompt=prompts.render_asset(
            "review_system_v1", index=reviewer_index, persona=persona
        ),
        user_prompt=prompts.render_asset(
            "review_user_v1", title=idea.title, abstract=idea.abstract
        ),
    )


def generate_reviews(
    idea: IdeaProposal, n: int, reviewer_backend: ChatBackend, workers: int = 4
) -> list[ReviewCritique]:
    """Exactly n critiques of the idea's title and abstract, indices 1..n."""
    if n < 1:
        raise UsageError(f"review count must be positive, got {n}")

    def review_one(i: int):
        try:
            text = reviewer_backend.chat_complete(review_request(idea, i)).text
            if not text.strip():
                raise ProtocolError(f"reviewer {i} returned empty text")
            return ReviewCritique(idea_id=idea.idea_id, reviewer_index=i, text=text.strip())
        except SparkError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=min(max(1, workers), n)) as pool:
        outcomes = list(pool.map(review_one, range(1, n + 1)))

    failures = [(i + 1, o) for i, o in enumerate(outcomes) if isinstance(o, Exception)]
    if failures:
        completed = [o.reviewer_index for o in outcomes if isinstance(o, ReviewCritique)]
        raise PartialReviewError(completed, str(failures[0][1]))
    return outcomes


def synthesize_decision(
    idea: IdeaProposal, reviews: Sequence[ReviewCritique], backend: ChatBackend
) -> FilterDecision:
    if not reviews:
        raise UsageError("decision synthesis needs at least one review")
    review_block = "\n\n".join(
        f"Review {r.reviewer_index}:\n{r.text}" for r in reviews
    )
    request = ChatRequest(
        system_prompt="You are the meta-reviewer deciding on a research idea.",
        user_prompt=prompts.render_asset(
            "decision_v1", title=idea.title, abstract=idea.abstract, reviews=review_block
        ),
        response_format=JSON_OBJECT,
    )
    decision = chat_json_with_repair(
        backend, request, lambda obj: parse_decision_obj(obj, idea.idea_id)
    )
    if decision is None:
        raise DecisionParseError(f"unusable decision JSON for idea {idea.idea_id!r}")
    return clamp_utility(decision)


def filter_batch(
    ideas: Sequence[IdeaProposal],
    reviewer_backend: ChatBackend,
    decider_backend: ChatBackend,
    reviews_per_idea: int = DEFAULT_REVIEWS_PER_IDEA,
    workers: int = 4,
) -> FilterBatchResult:
    """Review and decide every idea; per-idea failures become error entries.

    Output order follows input order regardless of completion order, and
    len(decisions) + len(errors) == len(ideas) always.
    """
    if not ideas:
        raise UsageError("filter_batch needs at least one idea")

    def process(idea: IdeaProposal):
        reviews = generate_reviews(idea, reviews_per_idea, reviewer_backend)
        return reviews, synthesize_decision(idea, reviews, decider_backend)

    result = FilterBatchResult()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(process, idea) for idea in ideas]
        for idea, future in zip(ideas, futures):
            try:
                reviews, decision = future.result()
            except SparkError as exc:
                log.warning("filtering failed for idea %s: %s", idea.idea_id, exc)
                result.errors.append(
                    {"idea_id": idea.idea_id, "kind": exc.kind, "message": str(exc)}
                )
                continue
            result.reviews.extend(reviews)
            result.decisions.append(decision)
    return result
