"""FastAPI service wrapping one Engine instance.

Mutating endpoints serialize through a process-wide lock: the engine mutates
shared in-memory state (corpus, index) that individual operations do not
guard themselves. Error responses carry a uniform envelope:

    {"error": {"kind": ..., "message": ..., "exit_code": ...}}

so thin clients can map failures to exit codes without parsing messages.
"""

from __future__ import annotations

import threading
from contextlib import asynccontextmanager
from dataclasses import asdict
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..engine import Engine
from ..errors import (
    BackendError,
    BackendTimeoutError,
    ParseError,
    PipelineIncompleteError,
    SparkError,
    UsageError,
)
from . import schemas

try:
    from importlib.metadata import version as _dist_version

    VERSION = _dist_version("spark-ideation")
except Exception:  # pragma: no cover - not installed
    VERSION = "0.0.0"


def _status_for(exc: SparkError) -> int:
    if isinstance(exc, BackendTimeoutError):
        return 504
    if isinstance(exc, BackendError):
        return 502
    if isinstance(exc, PipelineIncompleteError):
        return 409
    if isinstance(exc, ParseError):
        return 422
    if isinstance(exc, UsageError):
        return 400
    return 500


def create_app(config, mock_script: str | Path | None = None) -> FastAPI:
    engine = Engine(config, mock_script=mock_script)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        engine.close()

    app = FastAPI(title="spark", version=VERSION, lifespan=lifespan)
    app.state.engine = engine
    app.state.engine_lock = threading.Lock()

    @app.exception_handler(SparkError)
    async def spark_error_handler(_request: Request, exc: SparkError) -> JSONResponse:
        return JSONResponse(
            status_code=_status_for(exc),
            content={
                "error": {"kind": exc.kind, "message": str(exc), "exit_code": exc.exit_code}
            },
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(
            status="ok", version=VERSION, workspace=str(engine.paths.root)
        )

    @app.post("/documents", response_model=schemas.IngestResponse)
    def ingest(request: schemas.IngestRequest) -> schemas.IngestResponse:
        with app.state.engine_lock:
            result = engine.ingest_texts([d.model_dump() for d in request.documents])
        return schemas.IngestResponse(**result)

    @app.get("/index/stats", response_model=schemas.IndexStatsResponse)
    def index_stats() -> schemas.IndexStatsResponse:
        return schemas.IndexStatsResponse(**engine.index_stats())

    @app.post("/index/build", response_model=schemas.IndexStatsResponse)
    def index_build() -> schemas.IndexStatsResponse:
        with app.state.engine_lock:
            return schemas.IndexStatsResponse(**engine.build_index())

    @app.post("/ask", response_model=schemas.AskResponse)
    def ask(request: schemas.AskRequest) -> schemas.AskResponse:
        with app.state.engine_lock:
            return schemas.AskResponse(**engine.ask(request.question))

    @app.post("/ideas/generate", response_model=schemas.GenerateIdeasResponse)
    def generate_ideas(request: schemas.GenerateIdeasRequest) -> schemas.GenerateIdeasResponse:
        with app.state.engine_lock:
            result = engine.generate_ideas(request.question)
        return schemas.GenerateIdeasResponse(
            evidence_id=result.evidence.evidence_id,
            concepts=result.concepts.concepts,
            domain=result.concepts.domain_tag,
            open_problems=result.concepts.open_problems,
            ideas=[schemas.IdeaModel(**idea.to_dict()) for idea in result.ideas],
            errors=result.errors,
        )

    @app.post("/ideas/filter", response_model=schemas.FilterIdeasResponse)
    def filter_ideas(request: schemas.FilterIdeasRequest) -> schemas.FilterIdeasResponse:
        from ..ideagen import IdeaProposal

        ideas = [IdeaProposal.from_dict(i.model_dump()) for i in request.ideas]
        with app.state.engine_lock:
            result = engine.filter_ideas(ideas, request.reviews_per_idea)
        return schemas.FilterIdeasResponse(
            decisions=[d.to_dict() for d in result.decisions],
            reviews=[schemas.ReviewModel(**asdict(r)) for r in result.reviews],
            errors=result.errors,
        )

    @app.post("/pipeline/run", response_model=schemas.PipelineResponse)
    def run_pipeline(request: schemas.PipelineRequest) -> schemas.PipelineResponse:
        with app.state.engine_lock:
            report, path = engine.run_pipeline(request.question)
        return schemas.PipelineResponse(report=report.to_dict(), report_path=str(path))

    @app.post("/judge/dataset/build", response_model=schemas.JudgeBuildResponse)
    def build_judge_dataset(request: schemas.JudgeBuildRequest) -> schemas.JudgeBuildResponse:
        with app.state.engine_lock:
            result = engine.build_judge_dataset(request.dump_path, request.cutoff)
        return schemas.JudgeBuildResponse(**result)

    @app.post("/judge/eval", response_model=schemas.JudgeEvalResponse)
    def eval_judge(request: schemas.JudgeEvalRequest) -> schemas.JudgeEvalResponse:
        from ..judge_data import score_rmse

        rmse = score_rmse(request.predicted, request.actual)
        return schemas.JudgeEvalResponse(rmse=rmse, count=len(request.predicted))

    return app
