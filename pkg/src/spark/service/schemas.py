"""Request/response bodies for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str
    workspace: str


class DocumentIn(BaseModel):
    title: str
    text: str
    locator: str
    source_kind: str = "paper"
    venue_date: str | None = None


class IngestRequest(BaseModel):
    documents: list[DocumentIn]


class IngestResponse(BaseModel):
    ingested: int
    skipped: int
    document_ids: list[str]


class IndexStatsResponse(BaseModel):
    documents: int
    chunks: int
    embedded_chunks: int
    indexed_vectors: int
    dim: int


class AskRequest(BaseModel):
    question: str = Field(min_length=1)


class AskResponse(BaseModel):
    question: str
    answer: str
    cited_source_ids: list[str]
    evidence_id: str
    snippets: int
    iterations_used: int


class IdeaModel(BaseModel):
    input_concepts: list[str]
    new_concepts: list[str]
    plan: str
    title: str
    abstract: str
    idea_id: str = ""
    evidence_ref: str = ""
    parent_id: str | None = None
    generation: int = 0
    problem: str = ""


class GenerateIdeasRequest(BaseModel):
    question: str = Field(min_length=1)


class GenerateIdeasResponse(BaseModel):
    evidence_id: str
    concepts: list[str]
    domain: str
    open_problems: list[str]
    ideas: list[IdeaModel]
    errors: list[dict]


class ReviewModel(BaseModel):
    idea_id: str
    reviewer_index: int
    text: str


class FilterIdeasRequest(BaseModel):
    ideas: list[IdeaModel]
    reviews_per_idea: int | None = None


class FilterIdeasResponse(BaseModel):
    # Decisions keep their on-disk wire keys ("Decision reasoning", ...).
    decisions: list[dict]
    reviews: list[ReviewModel]
    errors: list[dict]


class PipelineRequest(BaseModel):
    question: str = Field(min_length=1)


class PipelineResponse(BaseModel):
    report: dict
    report_path: str


class JudgeBuildRequest(BaseModel):
    dump_path: str
    cutoff: str


class JudgeBuildResponse(BaseModel):
    pairs: int
    skipped: int
    skip_reasons: dict[str, int]
    flagged: int
    records: int
    train_records: int
    test_records: int
    pairs_path: str
    train_path: str
    test_path: str


class JudgeEvalRequest(BaseModel):
    predicted: list[float]
    actual: list[float]


class JudgeEvalResponse(BaseModel):
    rmse: float
    count: int
