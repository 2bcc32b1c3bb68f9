"""Composition root: workspace state, per-role backends, and the pipeline.

An Engine owns one workspace directory. Live runs talk to configured HTTP
backends with a wall clock; runs started with a mock script swap in the
scripted backend, a fixture search client, and a tick clock, which makes a
whole pipeline run a pure function of (workspace state, script, question).
"""

from __future__ import annotations

import json
import logging
import re
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

from filelock import FileLock, Timeout

from .backends.http import OpenAICompatibleBackend
from .backends.mock import MockBackend
from .backends.types import ChatBackend
from .clock import TickClock, WallClock
from .config import ROLES, PipelineConfig
from .corpus import (
    SOURCE_PAPER,
    Corpus,
    Document,
    chunk_document,
    ingest_document,
    load_records,
    store_records,
)
from .errors import (
    IngestionError,
    PipelineIncompleteError,
    SparkError,
    UsageError,
    WorkspaceLockedError,
)
from .filtering import (
    ACCEPT,
    FilterBatchResult,
    FilterDecision,
    ReviewCritique,
    filter_batch,
)
from .ideagen import (
    ConceptSet,
    IdeaProposal,
    build_idea_prompt,
    extract_concepts_and_problems,
    generate_idea,
    refine_idea,
)
from .index import VectorIndex
from .judge_data import (
    annotate_pairs,
    build_training_records,
    extract_pairs,
    load_scores,
    score_rmse,
    temporal_split,
)
from .search import FixtureSearchClient, SearchClient
from .xplor import EvidenceSet, Xplor

log = logging.getLogger(__name__)

EMBED_BATCH = 64

STATUS_COMPLETE = "complete"
STATUS_INCOMPLETE = "incomplete"

_IDEA_ID = re.compile(r"idea_(\d+)")


class WorkspacePaths:
    """Fixed directory layout under one workspace root."""

    def __init__(self, root: Path):
        self.root = root
        self.documents_file = root / "documents" / "documents.jsonl"
        self.chunks_file = root / "chunks" / "chunks.jsonl"
        self.index_file = root / "index" / "index.bin"
        self.evidence_file = root / "evidence" / "evidence.jsonl"
        self.ideas_file = root / "ideas" / "ideas.jsonl"
        self.decisions_file = root / "decisions" / "decisions.jsonl"
        self.reports_dir = root / "reports"
        self.judge_dir = root / "judge"
        self.history_file = root / "history.jsonl"
        self.lock_file = root / ".lock"

    def ensure(self) -> None:
        for directory in (
            self.documents_file.parent,
            self.chunks_file.parent,
            self.index_file.parent,
            self.evidence_file.parent,
            self.ideas_file.parent,
            self.decisions_file.parent,
            self.reports_dir,
            self.judge_dir,
        ):
            directory.mkdir(parents=True, exist_ok=True)


@dataclass
class PipelineReport:
    """Self-contained run record; all nested values are plain JSON data."""

    question: str
    status: str
    incomplete_stage: str | None
    config_hash: str
    evidence: dict | None
    ideas: list = field(default_factory=list)
    reviews: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    accepted_ideas: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "status": self.status,
            "incomplete_stage": self.incomplete_stage,
            "config_hash": self.config_hash,
            "evidence": self.evidence,
            "ideas": self.ideas,
            "reviews": self.reviews,
            "decisions": self.decisions,
            "accepted_ideas": self.accepted_ideas,
            "errors": self.errors,
            "timings": self.timings,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineReport":
        return cls(**{f: data[f] for f in cls.__dataclass_fields__})

    def canonical_bytes(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


@dataclass
class IdeaGeneration:
    evidence: EvidenceSet
    concepts: ConceptSet
    ideas: list[IdeaProposal]
    errors: list[dict]


class Engine:
    def __init__(self, config: PipelineConfig, mock_script: str | Path | None = None):
        self.config = config
        self.paths = WorkspacePaths(Path(config.workspace))
        self.paths.ensure()
        self.deterministic = mock_script is not None
        self.clock = TickClock() if self.deterministic else WallClock()

        self.search_client: SearchClient | None = None
        self._backends: dict[str, ChatBackend] = {}
        if mock_script is not None:
            mock = MockBackend.from_file(mock_script)
            self._backends = {role: mock for role in ROLES}
            self.search_client = FixtureSearchClient.from_file(mock_script)

        self.corpus = Corpus.from_files(self.paths.documents_file, self.paths.chunks_file)
        self.index = self._initial_index()
        self._idea_seq = self._scan_idea_seq()
        self._xplor: Xplor | None = None

    # -- wiring ---------------------------------------------------------------

    def backend_for(self, role: str) -> ChatBackend:
        if role not in self._backends:
            self._backends[role] = OpenAICompatibleBackend(self.config.backend_for(role))
        return self._backends[role]

    @property
    def xplor(self) -> Xplor:
        if self._xplor is None:
            self._xplor = Xplor(
                corpus=self.corpus,
                index=self.index,
                chat_backend=self.backend_for("scorer"),
                embed_backend=self.backend_for("embedder"),
                config=self.config.xplor,
                search_client=self.search_client,
                clock=self.clock,
                chunk_size=self.config.chunking.size,
                chunk_overlap=self.config.chunking.overlap,
            )
        return self._xplor

    def _initial_index(self) -> VectorIndex:
        if self.paths.index_file.exists():
            return VectorIndex.load(self.paths.index_file)
        index = VectorIndex()
        for chunk in self.corpus.chunks.values():
            if chunk.embedding:
                index.add(chunk.id, chunk.embedding)
        return index

    def _scan_idea_seq(self) -> int:
        high = 0
        if self.paths.ideas_file.exists():
            for idea in load_records(self.paths.ideas_file, IdeaProposal):
                match = _IDEA_ID.fullmatch(idea.idea_id)
                if match:
                    high = max(high, int(match.group(1)))
        return high

    def next_idea_id(self) -> str:
        self._idea_seq += 1
        return f"idea_{self._idea_seq}"

    # -- persistence ------------------------------------------------------------

    def save_state(self) -> None:
        store_records(self.paths.documents_file, self.corpus.documents.values())
        store_records(self.paths.chunks_file, self.corpus.chunks.values())
        self.index.save(self.paths.index_file)

    def _append_json(self, path: Path, payload: dict) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, ensure_ascii=False))
            fh.write("\n")

    def persist_evidence(self, evidence: EvidenceSet) -> None:
        self._append_json(self.paths.evidence_file, evidence.to_dict())

    def persist_ideas(self, ideas: list[IdeaProposal]) -> None:
        for idea in ideas:
            self._append_json(self.paths.ideas_file, idea.to_dict())

    def persist_decisions(self, decisions: list[FilterDecision]) -> None:
        for decision in decisions:
            self._append_json(self.paths.decisions_file, decision.to_dict())

    def persist_report(self, report: PipelineReport) -> Path:
        import hashlib

        payload = report.canonical_bytes()
        name = hashlib.sha256(payload).hexdigest()[:16] + ".json"
        path = self.paths.reports_dir / name
        path.write_bytes(payload)
        return path

    def load_ideas(self, path: str | Path | None = None) -> list[IdeaProposal]:
        source = Path(path) if path is not None else self.paths.ideas_file
        if not source.exists():
            raise UsageError(f"no ideas file at {source}")
        return load_records(source, IdeaProposal)

    # -- corpus ops ---------------------------------------------------------------

    def ingest_texts(self, items: list[dict], source_kind: str = SOURCE_PAPER) -> dict:
        """Store documents and chunks; embedding happens at index build time,
        so ingestion needs no backend. Item keys: title, text, locator, and
        optionally source_kind and venue_date."""
        if not items:
            raise UsageError("no documents to ingest")
        ingested: list[Document] = []
        skipped = 0
        for item in items:
            locator = item["locator"]
            if self.corpus.has_locator(locator):
                log.warning("skipping %s: already ingested", locator)
                skipped += 1
                continue
            kind = item.get("source_kind") or source_kind
            doc = ingest_document(
                item["text"],
                title=item["title"],
                source_kind=kind,
                source_locator=locator,
                doc_id=self.corpus.next_doc_id(kind),
                retrieved_at=self.clock.now_iso(),
                venue_date=item.get("venue_date"),
            )
            self.corpus.add_document(doc)
            self.corpus.add_chunks(
                chunk_document(doc, self.config.chunking.size, self.config.chunking.overlap)
            )
            ingested.append(doc)
        store_records(self.paths.documents_file, self.corpus.documents.values())
        store_records(self.paths.chunks_file, self.corpus.chunks.values())
        return {
            "ingested": len(ingested),
            "skipped": skipped,
            "document_ids": [d.id for d in ingested],
        }

    @staticmethod
    def read_document_files(files: list[str | Path]) -> list[dict]:
        """Turn local text files into ingest payload items."""
        if not files:
            raise UsageError("no files to ingest")
        items = []
        for name in files:
            path = Path(name)
            try:
                raw = path.read_text("utf-8")
            except OSError as exc:
                raise IngestionError(f"cannot read {path}: {exc}") from exc
            items.append({"title": path.stem, "text": raw, "locator": str(path.resolve())})
        return items

    def ingest_files(self, files: list[str | Path], source_kind: str = SOURCE_PAPER) -> dict:
        return self.ingest_texts(self.read_document_files(files), source_kind)

    def build_index(self) -> dict:
        """Embed chunks that still need it, then rebuild and save the index."""
        pending = [c for c in self.corpus.chunks.values() if not c.embedding]
        embedder = self.backend_for("embedder")
        for start in range(0, len(pending), EMBED_BATCH):
            batch = pending[start : start + EMBED_BATCH]
            vectors = embedder.embed_texts([c.text for c in batch])
            for chunk, vec in zip(batch, vectors):
                chunk.embedding = list(vec.values)
        index = VectorIndex()
        for chunk in self.corpus.chunks.values():
            if chunk.embedding:
                index.add(chunk.id, chunk.embedding)
        self.index = index
        self._xplor = None  # rebind the loop to the fresh index
        self.save_state()
        return self.index_stats()

    def index_stats(self) -> dict:
        embedded = sum(1 for c in self.corpus.chunks.values() if c.embedding)
        return {
            "documents": len(self.corpus.documents),
            "chunks": len(self.corpus.chunks),
            "embedded_chunks": embedded,
            "indexed_vectors": len(self.index),
            "dim": self.index.dim or 0,
        }

    # -- question answering ------------------------------------------------------

    def ask(self, question: str) -> dict:
        evidence, answer = self.xplor.answer(question)
        self.persist_evidence(evidence)
        self.save_state()
        entry = {
            "at": self.clock.now_iso(),
            "question": question,
            "answer": answer.text,
            "cited_source_ids": answer.cited_source_ids,
            "evidence_id": evidence.evidence_id,
        }
        self._append_json(self.paths.history_file, entry)
        return {
            "question": question,
            "answer": answer.text,
            "cited_source_ids": answer.cited_source_ids,
            "evidence_id": evidence.evidence_id,
            "snippets": len(evidence.snippets),
            "iterations_used": evidence.iterations_used,
        }

    # -- ideation ------------------------------------------------------------------

    def generate_ideas(self, question: str) -> IdeaGeneration:
        evidence = self.xplor.evidence_loop(question)
        self.save_state()
        if not evidence.snippets:
            raise PipelineIncompleteError(
                "ideation", f"no evidence gathered for question {question!r}"
            )
        self.persist_evidence(evidence)
        generator = self.backend_for("generator")
        concepts = extract_concepts_and_problems(evidence, generator)
        ideas: list[IdeaProposal] = []
        errors: list[dict] = []
        for problem in concepts.open_problems:
            request = build_idea_prompt(problem, concepts, concepts.domain_tag)
            try:
                ideas.append(
                    generate_idea(
                        request,
                        generator,
                        allowed_concepts=concepts.concepts,
                        idea_id=self.next_idea_id(),
                        evidence_ref=evidence.evidence_id,
                        problem=problem,
                    )
                )
            except SparkError as exc:
                log.warning("idea generation failed for one problem: %s", exc)
                errors.append({"stage": "ideation", "kind": exc.kind, "message": str(exc)})
        if ideas:
            self.persist_ideas(ideas)
        return IdeaGeneration(evidence=evidence, concepts=concepts, ideas=ideas, errors=errors)

    def filter_ideas(self, ideas: list[IdeaProposal], reviews_per_idea: int | None = None) -> FilterBatchResult:
        result = filter_batch(
            ideas,
            reviewer_backend=self.backend_for("reviewer"),
            decider_backend=self.backend_for("decider"),
            reviews_per_idea=reviews_per_idea or self.config.reviews_per_idea,
        )
        self.persist_decisions(result.decisions)
        return result

    # -- the full pipeline -----------------------------------------------------------

    def run_pipeline(self, question: str) -> tuple[PipelineReport, Path]:
        lock = FileLock(str(self.paths.lock_file))
        try:
            lock.acquire(timeout=0.2)
        except Timeout:
            raise WorkspaceLockedError(
                f"workspace {self.paths.root} is locked by another run"
            ) from None
        try:
            report = self._run_stages(question)
        finally:
            lock.release()
        return report, self.persist_report(report)

    @contextmanager
    def _stage(self, name: str, timings: list[dict]):
        started = self.clock.now()
        try:
            yield
        finally:
            finished = self.clock.now()
            timings.append(
                {
                    "stage": name,
                    "started": _iso(started),
                    "finished": _iso(finished),
                    "seconds": (finished - started).total_seconds(),
                }
            )

    def _run_stages(self, question: str) -> PipelineReport:
        timings: list[dict] = []
        errors: list[dict] = []
        evidence: EvidenceSet | None = None
        concepts: ConceptSet | None = None
        ideas: list[IdeaProposal] = []
        reviews: list[ReviewCritique] = []
        decisions: list[FilterDecision] = []
        incomplete_stage: str | None = None

        def fail(stage: str, exc: SparkError) -> None:
            nonlocal incomplete_stage
            log.warning("pipeline stage %s failed: %s", stage, exc)
            errors.append({"stage": stage, "kind": exc.kind, "message": str(exc)})
            incomplete_stage = stage

        try:
            with self._stage("retrieval", timings):
                evidence = self.xplor.evidence_loop(question)
                self.persist_evidence(evidence)
                self.save_state()
        except SparkError as exc:
            fail("retrieval", exc)

        if incomplete_stage is None and evidence is not None and not evidence.snippets:
            incomplete_stage = "ideation"  # nothing for ideation to work from

        if incomplete_stage is None:
            try:
                with self._stage("ideation", timings):
                    generator = self.backend_for("generator")
                    concepts = extract_concepts_and_problems(evidence, generator)
                    for problem in concepts.open_problems:
                        request = build_idea_prompt(problem, concepts, concepts.domain_tag)
                        try:
                            ideas.append(
                                generate_idea(
                                    request,
                                    generator,
                                    allowed_concepts=concepts.concepts,
                                    idea_id=self.next_idea_id(),
                                    evidence_ref=evidence.evidence_id,
                                    problem=problem,
                                )
                            )
                        except SparkError as exc:
                            errors.append(
                                {"stage": "ideation", "kind": exc.kind, "message": str(exc)}
                            )
                    if ideas:
                        self.persist_ideas(ideas)
            except SparkError as exc:
                fail("ideation", exc)

        if incomplete_stage is None and not ideas:
            incomplete_stage = "filtering"  # no ideas survived generation

        if incomplete_stage is None:
            try:
                with self._stage("filtering", timings):
                    result = self.filter_ideas(ideas)
                    reviews.extend(result.reviews)
                    decisions.extend(result.decisions)
                    for entry in result.errors:
                        errors.append({"stage": "filtering", **entry})
            except SparkError as exc:
                fail("filtering", exc)

        if incomplete_stage is None:
            try:
                with self._stage("refinement", timings):
                    self._refine(concepts, ideas, reviews, decisions, errors)
            except SparkError as exc:
                fail("refinement", exc)

        accepted = [d.idea_id for d in decisions if d.decision == ACCEPT]
        return PipelineReport(
            question=question,
            status=STATUS_INCOMPLETE if incomplete_stage else STATUS_COMPLETE,
            incomplete_stage=incomplete_stage,
            config_hash=self.config.config_hash(),
            evidence=evidence.to_dict() if evidence is not None else None,
            ideas=[i.to_dict() for i in ideas],
            reviews=[asdict(r) for r in reviews],
            decisions=[d.to_dict() for d in decisions],
            accepted_ideas=accepted,
            errors=errors,
            timings=timings,
        )

    def _refine(
        self,
        concepts: ConceptSet,
        ideas: list[IdeaProposal],
        reviews: list[ReviewCritique],
        decisions: list[FilterDecision],
        errors: list[dict],
    ) -> None:
        generator = self.backend_for("generator")
        threshold = self.config.refine_threshold
        limit = self.config.max_refinements

        def pending() -> list[IdeaProposal]:
            decision_by_id = {d.idea_id: d for d in decisions}
            refined_parents = {i.parent_id for i in ideas if i.parent_id}
            out = []
            for idea in ideas:
                if idea.idea_id in refined_parents or idea.generation >= limit:
                    continue
                decision = decision_by_id.get(idea.idea_id)
                if decision and (decision.decision != ACCEPT or decision.utility < threshold):
                    out.append(idea)
            return out

        rounds = 0
        queue = pending()
        while queue and rounds < limit:
            fresh: list[IdeaProposal] = []
            decision_by_id = {d.idea_id: d for d in decisions}
            for idea in queue:
                try:
                    refined, extra_evidence = refine_idea(
                        idea,
                        decision_by_id[idea.idea_id],
                        self.xplor,
                        generator,
                        concepts,
                        idea_id=self.next_idea_id(),
                        refine_threshold=threshold,
                        max_refinements=limit,
                    )
                    if extra_evidence.snippets:
                        self.persist_evidence(extra_evidence)
                    fresh.append(refined)
                except SparkError as exc:
                    errors.append(
                        {"stage": "refinement", "kind": exc.kind, "message": str(exc)}
                    )
            if not fresh:
                break
            self.persist_ideas(fresh)
            ideas.extend(fresh)
            result = self.filter_ideas(fresh)
            reviews.extend(result.reviews)
            decisions.extend(result.decisions)
            for entry in result.errors:
                errors.append({"stage": "refinement", **entry})
            rounds += 1
            queue = pending()

    # -- judge dataset ------------------------------------------------------------

    def build_judge_dataset(self, dump_path: str | Path, cutoff: str) -> dict:
        report = extract_pairs(dump_path)
        if not report.pairs:
            raise UsageError(f"dump {dump_path} yielded no usable pairs")
        annotated = annotate_pairs(report.pairs, self.backend_for("annotator"))
        flagged = sum(1 for p in annotated if not p.is_full)
        records = build_training_records(annotated)
        train, test = temporal_split(records, cutoff)

        pairs_path = self.paths.judge_dir / "pairs.jsonl"
        train_path = self.paths.judge_dir / "records_train.jsonl"
        test_path = self.paths.judge_dir / "records_test.jsonl"
        store_records(pairs_path, annotated)
        store_records(train_path, train)
        store_records(test_path, test)
        return {
            "pairs": len(annotated),
            "skipped": report.skipped,
            "skip_reasons": report.reasons,
            "flagged": flagged,
            "records": len(records),
            "train_records": len(train),
            "test_records": len(test),
            "pairs_path": str(pairs_path),
            "train_path": str(train_path),
            "test_path": str(test_path),
        }

    def eval_judge(self, pred_path: str | Path, actual_path: str | Path) -> dict:
        predicted = load_scores(pred_path)
        actual = load_scores(actual_path)
        return {"rmse": score_rmse(predicted, actual), "count": len(predicted)}

    def close(self) -> None:
        closed: set[int] = set()
        for backend in self._backends.values():
            if id(backend) in closed:
                continue
            closed.add(id(backend))
            close = getattr(backend, "close", None)
            if callable(close):
                close()


def _iso(moment: datetime) -> str:
    return moment.isoformat(timespec="seconds")
