"""Recursive evidence gathering over an embedded corpus.

Each iteration embeds the current query, pulls nearest chunks, has the
scoring model summarize and rate them against the original question,
re-ranks the rated chunks for diversity, and admits those at or above the
inclusion threshold. The loop stops once enough snippets from enough
distinct documents have accumulated; until then it widens the corpus via
external search and follows up with a sharper query.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from . import prompts
from .backends.types import JSON_OBJECT, ChatBackend, ChatRequest
from .corpus import (
    SOURCE_SEARCH,
    Chunk,
    Corpus,
    Document,
    chunk_document,
    ingest_document,
)
from .errors import (
    FollowupGenerationError,
    IngestionError,
    ScoringParseError,
    SearchError,
    SynthesisError,
    UsageError,
)
from .index import VectorIndex
from .mmr import MmrCandidate, mmr_rerank
from .search import SearchClient

log = logging.getLogger(__name__)

# How many of the most recent chunk summaries feed the follow-up prompt.
MAX_FOLLOWUP_SUMMARIES = 12

SCORER_SYSTEM = "You judge how useful a text chunk is for answering a research question."
FOLLOWUP_SYSTEM = "You refine research questions into sharper literature-search queries."
SYNTHESIS_SYSTEM = "You answer research questions strictly from the supplied context."

_CITATION = re.compile(r"\[([^\[\]\n]+)\]")


@dataclass(frozen=True)
class XplorConfig:
    min_evidence: int = 5
    min_distinct_sources: int = 2
    max_iterations: int = 5
    candidates_per_query: int = 20
    mmr_lambda: float = 0.5
    mmr_select: int = 8
    inclusion_threshold: int = 6
    scale_max: int = 10

    def __post_init__(self):
        for name in ("min_evidence", "min_distinct_sources", "max_iterations",
                     "candidates_per_query", "mmr_select"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.mmr_lambda <= 1.0:
            raise UsageError(f"mmr_lambda must be in [0, 1], got {self.mmr_lambda}")
        if self.scale_max < 1:
            raise UsageError(f"scale_max must be positive, got {self.scale_max}")
        if not 0 <= self.inclusion_threshold <= self.scale_max:
            raise UsageError(
                f"inclusion_threshold must be in [0, {self.scale_max}], got {self.inclusion_threshold}"
            )


@dataclass(frozen=True)
class RelevanceAssessment:
    chunk_id: str
    summary: str
    score: int
    scale_max: int = 10

    def __post_init__(self):
        if not self.summary:
            raise UsageError("assessment summary must be non-empty")
        if not 0 <= self.score <= self.scale_max:
            raise UsageError(f"score {self.score} outside [0, {self.scale_max}]")


@dataclass(frozen=True)
class EvidenceSnippet:
    chunk_id: str
    source_id: str
    source_kind: str
    summary: str
    score: int
    iteration: int


@dataclass
class EvidenceSet:
    question: str
    snippets: list[EvidenceSnippet] = field(default_factory=list)
    queries_issued: list[str] = field(default_factory=list)
    iterations_used: int = 0
    evidence_id: str = ""

    def distinct_sources(self) -> set[str]:
        return {s.source_id for s in self.snippets}

    def to_dict(self) -> dict:
        return {
            "evidence_id": self.evidence_id,
            "question": self.question,
            "snippets": [asdict(s) for s in self.snippets],
            "queries_issued": list(self.queries_issued),
            "iterations_used": self.iterations_used,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvidenceSet":
        return cls(
            question=data["question"],
            snippets=[EvidenceSnippet(**s) for s in data.get("snippets", [])],
            queries_issued=list(data.get("queries_issued", [])),
            iterations_used=int(data.get("iterations_used", 0)),
            evidence_id=data.get("evidence_id", ""),
        )

    def seal(self) -> "EvidenceSet":
        """Assign the content-derived evidence id."""
        payload = json.dumps(
            {
                "question": self.question,
                "chunks": [s.chunk_id for s in self.snippets],
                "queries": self.queries_issued,
                "iterations": self.iterations_used,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        self.evidence_id = "ev_" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]
        return self


@dataclass(frozen=True)
class CitedAnswer:
    text: str
    cited_source_ids: list[str]


def score_chunk_relevance(
    question: str, chunk: Chunk, backend: ChatBackend, scale_max: int = 10
) -> RelevanceAssessment:
    """Summarize one chunk's relevance to the question and rate it.

    Out-of-range ratings are clamped with a warning; malformed JSON gets one
    repair retry before failing.
    """
    if not chunk.text.strip():
        raise UsageError(f"chunk {chunk.id!r} has no text to score")
    request = ChatRequest(
        system_prompt=SCORER_SYSTEM,
        user_prompt=prompts.render_asset(
            "relevance_v1", question=question, chunk=chunk.text, scale_max=scale_max
        ),
        response_format=JSON_OBJECT,
    )

    def validate(obj: dict):
        summary = obj.get("summary")
        score = obj.get("relevance")
        if not isinstance(summary, str) or not summary.strip():
            return None
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            return None
        return summary.strip(), float(score)

    parsed = _chat_json(backend, request, validate)
    if parsed is None:
        raise ScoringParseError(f"unusable relevance JSON for chunk {chunk.id!r}")
    summary, raw_score = parsed
    score = int(round(raw_score))
    if not 0 <= score <= scale_max:
        clamped = min(max(score, 0), scale_max)
        log.warning("relevance %s for chunk %s clamped to %s", score, chunk.id, clamped)
        score = clamped
    return RelevanceAssessment(chunk_id=chunk.id, summary=summary, score=score, scale_max=scale_max)


def generate_followup_query(
    question: str,
    summaries: Sequence[str],
    backend: ChatBackend,
    issued: Sequence[str] = (),
    next_iteration: int = 2,
) -> str:
    """Produce a sharper single-line query that differs from all issued ones."""
    if not summaries:
        raise UsageError("follow-up generation needs at least one summary")
    base = prompts.render_asset(
        "followup_v1",
        question=question,
        summaries="\n".join(f"- {s}" for s in summaries),
    )
    query = _first_line(_complete(backend, FOLLOWUP_SYSTEM, base))
    if not query:
        raise FollowupGenerationError("empty follow-up query from backend")
    if query not in issued:
        return query

    retry_prompt = base + "\n\nThe query must be different from all of these:\n" + "\n".join(
        f"- {q}" for q in issued
    )
    retry = _first_line(_complete(backend, FOLLOWUP_SYSTEM, retry_prompt))
    if not retry:
        raise FollowupGenerationError("empty follow-up query from backend on retry")
    if retry not in issued:
        return retry
    return f"{retry} ({next_iteration})"


def synthesize_answer(
    question: str, evidence: EvidenceSet, backend: ChatBackend, scale_max: int = 10
) -> CitedAnswer:
    """Answer from evidence summaries only, with validated bracket citations."""
    if not evidence.snippets:
        raise UsageError("cannot synthesize an answer from empty evidence")
    context = "\n".join(
        f"[Source: {s.source_id}] {s.summary} (R: {s.score}/{scale_max})"
        for s in evidence.snippets
    )
    text = _complete(
        backend,
        SYNTHESIS_SYSTEM,
        prompts.render_asset("synthesis_v1", context=context, question=question),
    ).strip()
    if not text:
        raise SynthesisError("empty synthesis response")

    text = _strip_sources_block(text)
    known = evidence.distinct_sources()
    cited: list[str] = []
    for token in _CITATION.findall(text):
        if token in known:
            if token not in cited:
                cited.append(token)
        else:
            log.warning("stripping citation of unknown source %r", token)
            text = re.sub(r" ?\[" + re.escape(token) + r"\]", "", text)
    return CitedAnswer(text=text.strip(), cited_source_ids=cited)


class Xplor:
    """Evidence loop bound to a corpus, index, backends, and search client."""

    def __init__(
        self,
        corpus: Corpus,
        index: VectorIndex,
        chat_backend: ChatBackend,
        embed_backend: ChatBackend,
        config: XplorConfig | None = None,
        search_client: SearchClient | None = None,
        clock=None,
        chunk_size: int | None = None,
        chunk_overlap: int | None = None,
        score_workers: int = 8,
    ):
        from .clock import WallClock
        from .corpus import DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE

        self.corpus = corpus
        self.index = index
        self.chat_backend = chat_backend
        self.embed_backend = embed_backend
        self.config = config or XplorConfig()
        self.search_client = search_client
        self.clock = clock or WallClock()
        self.chunk_size = chunk_size or DEFAULT_CHUNK_SIZE
        self.chunk_overlap = DEFAULT_CHUNK_OVERLAP if chunk_overlap is None else chunk_overlap
        self.score_workers = max(1, score_workers)
        # Relevance is question-dependent, so the cache key includes it.
        self._assessments: dict[tuple[str, str], RelevanceAssessment] = {}

    # -- corpus growth -------------------------------------------------------

    def ingest_text(
        self,
        raw_text: str,
        title: str,
        source_kind: str,
        locator: str,
        venue_date: str | None = None,
    ) -> Document:
        """Ingest one document: normalize, chunk, embed, and index it."""
        doc = ingest_document(
            raw_text,
            title=title,
            source_kind=source_kind,
            source_locator=locator,
            doc_id=self.corpus.next_doc_id(source_kind),
            retrieved_at=self.clock.now_iso(),
            venue_date=venue_date,
        )
        chunks = chunk_document(doc, self.chunk_size, self.chunk_overlap)
        vectors = self.embed_backend.embed_texts([c.text for c in chunks])
        for chunk, vec in zip(chunks, vectors):
            chunk.embedding = list(vec.values)
        self.corpus.add_document(doc)
        self.corpus.add_chunks(chunks)
        for chunk in chunks:
            self.index.add(chunk.id, chunk.embedding)
        return doc

    def external_search(self, query: str) -> list[Document]:
        """Search externally and ingest anything with an unseen locator."""
        if not query.strip():
            raise UsageError("search query must be non-empty")
        if self.search_client is None:
            return []
        try:
            found = self.search_client.search(query)
        except SearchError:
            raise
        except Exception as exc:
            raise SearchError(f"search client failed: {exc}") from exc

        ingested: list[Document] = []
        for item in found:
            if self.corpus.has_locator(item.locator):
                continue
            try:
                doc = self.ingest_text(
                    item.text,
                    title=item.title,
                    source_kind=SOURCE_SEARCH,
                    locator=item.locator,
                    venue_date=item.venue_date,
                )
            except IngestionError as exc:
                log.warning("skipping search result %r: %s", item.title, exc)
                continue
            ingested.append(doc)
        return ingested

    # -- the loop -------------------------------------------------------------

    def evidence_loop(self, question: str) -> EvidenceSet:
        if not question.strip():
            raise UsageError("question must be non-empty")
        if len(self.index) == 0 and self.search_client is None:
            raise UsageError("need an indexed corpus or a search client to gather evidence")

        cfg = self.config
        evidence = EvidenceSet(question=question, queries_issued=[question])
        admitted: set[str] = set()
        summaries: list[str] = []
        current = question

        for iteration in range(1, cfg.max_iterations + 1):
            evidence.iterations_used = iteration
            if len(self.index) > 0:
                picked = self._score_candidates(question, current, admitted, summaries)
                for candidate in picked:
                    if candidate.relevance < cfg.inclusion_threshold:
                        continue
                    chunk = self.corpus.chunk(candidate.chunk_id)
                    doc = self.corpus.documents[chunk.doc_id]
                    assessment = self._assessments[(question, chunk.id)]
                    evidence.snippets.append(
                        EvidenceSnippet(
                            chunk_id=chunk.id,
                            source_id=doc.id,
                            source_kind=doc.source_kind,
                            summary=assessment.summary,
                            score=assessment.score,
                            iteration=iteration,
                        )
                    )
                    admitted.add(chunk.id)

            if (
                len(evidence.snippets) >= cfg.min_evidence
                and len(evidence.distinct_sources()) >= cfg.min_distinct_sources
            ):
                break
            if iteration == cfg.max_iterations:
                break

            try:
                new_docs = self.external_search(current)
            except SearchError as exc:
                log.warning("external search failed, continuing: %s", exc)
                new_docs = []
            if new_docs:
                log.info("search added %d documents", len(new_docs))

            if summaries:
                current = generate_followup_query(
                    question,
                    summaries[-MAX_FOLLOWUP_SUMMARIES:],
                    self.chat_backend,
                    issued=evidence.queries_issued,
                    next_iteration=iteration + 1,
                )
                evidence.queries_issued.append(current)

        return evidence.seal()

    def answer(self, question: str) -> tuple[EvidenceSet, CitedAnswer]:
        evidence = self.evidence_loop(question)
        if not evidence.snippets:
            from .errors import PipelineIncompleteError

            raise PipelineIncompleteError(
                "retrieval", f"no evidence found for question {question!r}"
            )
        return evidence, synthesize_answer(
            question, evidence, self.chat_backend, self.config.scale_max
        )

    def _score_candidates(
        self,
        question: str,
        current_query: str,
        admitted: set[str],
        summaries: list[str],
    ) -> list[MmrCandidate]:
        cfg = self.config
        qvec = self.embed_backend.embed_texts([current_query])[0].values
        hits = self.index.knn(qvec, cfg.candidates_per_query)
        unseen = [h.chunk_id for h in hits if h.chunk_id not in admitted]
        to_score = [cid for cid in unseen if (question, cid) not in self._assessments]

        if to_score:
            def score_one(chunk_id: str) -> RelevanceAssessment:
                return score_chunk_relevance(
                    question, self.corpus.chunk(chunk_id), self.chat_backend, cfg.scale_max
                )

            workers = min(self.score_workers, len(to_score))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                fresh = list(pool.map(score_one, to_score))
            for assessment in fresh:
                self._assessments[(question, assessment.chunk_id)] = assessment
                summaries.append(assessment.summary)

        candidates = [
            MmrCandidate(
                chunk_id=cid,
                relevance=float(self._assessments[(question, cid)].score),
                vector=tuple(float(v) for v in self.index.vector_for(cid)),
            )
            for cid in unseen
        ]
        return mmr_rerank(candidates, qvec, cfg.mmr_lambda, cfg.mmr_select, cfg.scale_max)


# -- small helpers -------------------------------------------------------------


def _complete(backend: ChatBackend, system: str, user: str) -> str:
    return backend.chat_complete(ChatRequest(system_prompt=system, user_prompt=user)).text


def _chat_json(backend: ChatBackend, request: ChatRequest, validate):
    from .jsonutil import chat_json_with_repair

    return chat_json_with_repair(backend, request, validate)


def _first_line(text: str) -> str:
    for line in text.splitlines():
        line = line.strip().strip('"').strip("'").strip()
        if line:
            return line
    return ""


def _strip_sources_block(text: str) -> str:
    """Drop a trailing Sources: list so citations are counted inline only.

    Strips only when every line of the block is a bracketed token with an
    optional label, so a paragraph that happens to follow the word Sources:
    survives.
    """
    match = re.search(r"\n\s*Sources:\s*(\n(.*))?\Z", text, re.DOTALL)
    if not match:
        return text
    lines = [ln.strip() for ln in (match.group(2) or "").splitlines() if ln.strip()]
    if all(re.match(r"^[-*]?\s*\[[^\[\]\n]+\]", ln) for ln in lines):
        return text[: match.start()].rstrip()
    return text
