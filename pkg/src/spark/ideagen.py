"""Turn gathered evidence into structured research proposals.

Flow: extract concepts and open problems from evidence, build one generation
prompt per problem, parse the model's JSON into an IdeaProposal, and refine
rejected or low-utility proposals with freshly retrieved evidence.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Sequence

from . import prompts
from .backends.types import JSON_OBJECT, ChatBackend, ChatRequest
from .errors import (
    ExtractionError,
    IdeaParseError,
    IdeaValidationError,
    RefinementLimitError,
    UsageError,
)
from .jsonutil import chat_json_with_repair
from .xplor import EvidenceSet, Xplor

log = logging.getLogger(__name__)

MAX_CONCEPT_WORDS = 8
MAX_TITLE_CHARS = 300
REFINE_THRESHOLD = 0.5
MAX_REFINEMENTS = 2

CONCEPTS_SYSTEM = "You map research areas into concepts and open problems."
IDEA_SYSTEM = "You are a research scientist proposing new work."

WIRE_FIELDS = ("input_concepts", "new_concepts", "plan", "title", "abstract")

_CITATION = re.compile(r"\[([^\[\]\n]+)\]")


@dataclass(frozen=True)
class ConceptSet:
    concepts: list[str]
    open_problems: list[str]
    domain_tag: str = ""


@dataclass
class IdeaProposal:
    input_concepts: list[str]
    new_concepts: list[str]
    plan: str
    title: str
    abstract: str
    idea_id: str
    evidence_ref: str
    parent_id: str | None = None
    generation: int = 0
    problem: str = ""

    def wire_dict(self) -> dict:
        """The five-field generation schema, key order fixed."""
        return {name: getattr(self, name) for name in WIRE_FIELDS}

    def to_dict(self) -> dict:
        record = self.wire_dict()
        record.update(
            idea_id=self.idea_id,
            evidence_ref=self.evidence_ref,
            parent_id=self.parent_id,
            generation=self.generation,
            problem=self.problem,
        )
        return record

    @classmethod
    def from_dict(cls, data: dict) -> "IdeaProposal":
        return cls(
            input_concepts=list(data["input_concepts"]),
            new_concepts=list(data["new_concepts"]),
            plan=data["plan"],
            title=data["title"],
            abstract=data["abstract"],
            idea_id=data.get("idea_id", ""),
            evidence_ref=data.get("evidence_ref", ""),
            parent_id=data.get("parent_id"),
            generation=int(data.get("generation", 0)),
            problem=data.get("problem", ""),
        )


def dedupe_concepts(raw: Sequence[str]) -> list[str]:
    """Trim, cap at MAX_CONCEPT_WORDS words, drop case-insensitive duplicates."""
    seen: set[str] = set()
    out: list[str] = []
    for label in raw:
        label = " ".join(str(label).split()[:MAX_CONCEPT_WORDS])
        if not label or label.lower() in seen:
            continue
        seen.add(label.lower())
        out.append(label)
    return out


def extract_concepts_and_problems(evidence: EvidenceSet, backend: ChatBackend) -> ConceptSet:
    """Distill evidence into concept labels and source-cited open problems."""
    if not evidence.snippets:
        raise UsageError("concept extraction needs non-empty evidence")
    lines = "\n".join(f"[Source: {s.source_id}] {s.summary}" for s in evidence.snippets)
    request = ChatRequest(
        system_prompt=CONCEPTS_SYSTEM,
        user_prompt=prompts.render_asset(
            "concepts_v1", question=evidence.question, evidence=lines
        ),
        response_format=JSON_OBJECT,
    )

    def validate(obj: dict):
        concepts = obj.get("concepts")
        problems = obj.get("open_problems")
        if not isinstance(concepts, list) or not isinstance(problems, list):
            return None
        if not all(isinstance(c, str) for c in concepts):
            return None
        if not all(isinstance(p, str) for p in problems):
            return None
        return concepts, problems, str(obj.get("domain", ""))

    parsed = chat_json_with_repair(backend, request, validate)
    if parsed is None:
        raise ExtractionError("concept extraction returned unusable JSON")
    raw_concepts, raw_problems, domain = parsed

    concepts = dedupe_concepts(raw_concepts)
    if not concepts:
        raise ExtractionError("no concepts extracted")

    known = evidence.distinct_sources()
    problems = []
    for problem in (p.strip() for p in raw_problems):
        if problem and any(token in known for token in _CITATION.findall(problem)):
            problems.append(problem)
        elif problem:
            log.warning("dropping problem without a known source citation: %.60s", problem)
    if not problems:
        raise ExtractionError("no open problems cite known sources")
    return ConceptSet(concepts=concepts, open_problems=problems, domain_tag=domain.strip())


def build_idea_prompt(problem: str, concepts: ConceptSet, domain: str = "") -> ChatRequest:
    if not concepts.concepts:
        raise UsageError("idea prompt needs at least one concept")
    text = prompts.render_asset(
        "idea_v1",
        problem=problem,
        concepts=", ".join(concepts.concepts),
        domain_line=f"Domain: {domain}" if domain else "",
    )
    text = re.sub(r"\n{3,}", "\n\n", text)
    return ChatRequest(
        system_prompt=IDEA_SYSTEM, user_prompt=text, response_format=JSON_OBJECT
    )


def generate_idea(
    request: ChatRequest,
    backend: ChatBackend,
    allowed_concepts: Sequence[str],
    idea_id: str,
    evidence_ref: str = "",
    parent_id: str | None = None,
    generation: int = 0,
    problem: str = "",
) -> IdeaProposal:
    """Run a generation request and parse the five-field idea schema.

    A malformed or incomplete reply gets one repair retry; an input concept
    outside the allowed set is a validation error, not a retry.
    """

    def validate(obj: dict):
        for name in WIRE_FIELDS:
            value = obj.get(name)
            if name in ("input_concepts", "new_concepts"):
                if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
                    return None
            elif not isinstance(value, str) or not value.strip():
                return None
        if len(obj["title"]) > MAX_TITLE_CHARS:
            return None
        return obj

    obj = chat_json_with_repair(backend, request, validate)
    if obj is None:
        raise IdeaParseError("idea generation returned an incomplete or malformed schema")

    canonical = {c.lower(): c for c in allowed_concepts}
    input_concepts = []
    for concept in (c.strip() for c in obj["input_concepts"]):
        match = canonical.get(concept.lower())
        if match is None:
            raise IdeaValidationError(f"input concept {concept!r} is not an extracted concept")
        input_concepts.append(match)

    return IdeaProposal(
        input_concepts=input_concepts,
        new_concepts=[c.strip() for c in obj["new_concepts"]],
        plan=obj["plan"],
        title=obj["title"].strip(),
        abstract=obj["abstract"],
        idea_id=idea_id,
        evidence_ref=evidence_ref,
        parent_id=parent_id,
        generation=generation,
        problem=problem,
    )


def refinement_query(idea: IdeaProposal, reasoning: str) -> str:
    """A retrieval query targeting the first stated weakness."""
    first = re.split(r"(?<=[.!?])\s+", reasoning.strip())[0].strip()
    return f"{idea.title}: {first}" if first else idea.title


def refine_idea(
    idea: IdeaProposal,
    feedback,
    xplor: Xplor,
    backend: ChatBackend,
    concepts: ConceptSet,
    idea_id: str,
    refine_threshold: float = REFINE_THRESHOLD,
    max_refinements: int = MAX_REFINEMENTS,
) -> tuple[IdeaProposal, EvidenceSet]:
    """Retrieve fresh evidence for the critique and regenerate the idea.

    Returns the refined proposal plus the evidence set gathered for it, so
    the caller can persist both.
    """
    if feedback.decision != "REJECT" and feedback.utility >= refine_threshold:
        raise UsageError(
            f"idea {idea.idea_id} was accepted with utility {feedback.utility}; nothing to refine"
        )
    if idea.generation >= max_refinements:
        raise RefinementLimitError(
            f"idea {idea.idea_id} already refined {idea.generation} times (limit {max_refinements})"
        )

    query = refinement_query(idea, feedback.reasoning)
    evidence = xplor.evidence_loop(query)
    evidence_lines = "\n".join(
        f"[Source: {s.source_id}] {s.summary}" for s in evidence.snippets
    ) or "none"

    allowed = dedupe_concepts(list(concepts.concepts) + list(idea.new_concepts))
    base = build_idea_prompt(idea.problem, ConceptSet(allowed, concepts.open_problems, concepts.domain_tag), concepts.domain_tag)
    request = ChatRequest(
        system_prompt=IDEA_SYSTEM,
        user_prompt=prompts.render_asset(
            "refine_v1",
            idea_prompt=base.user_prompt,
            prev_title=idea.title,
            prev_abstract=idea.abstract,
            feedback=feedback.reasoning,
            evidence=evidence_lines,
        ),
        response_format=JSON_OBJECT,
    )
    refined = generate_idea(
        request,
        backend,
        allowed_concepts=allowed,
        idea_id=idea_id,
        evidence_ref=evidence.evidence_id if evidence.snippets else idea.evidence_ref,
        parent_id=idea.idea_id,
        generation=idea.generation + 1,
        problem=idea.problem,
    )
    return refined, evidence
