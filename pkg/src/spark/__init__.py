"""Retrieval-augmented research idea generation with simulated peer review.

The package splits into layers:

* ``backends`` -- chat/embedding clients (OpenAI-compatible HTTP and a
  deterministic scripted mock)
* ``corpus``/``index``/``mmr``/``xplor`` -- document store, exact vector
  search, diversity re-ranking and the recursive evidence loop
* ``ideagen``/``filtering`` -- concept extraction, idea generation and
  multi-reviewer filtering
* ``judge_data`` -- reviewer training dataset construction
* ``engine``/``service``/``cli`` -- workspace orchestration, HTTP surface
  and the thin command-line client
"""

try:
    from importlib.metadata import version as _version

    __version__ = _version("spark-ideation")
except Exception:  # pragma: no cover - running from a source tree
    __version__ = "0.0.0"

from .backends import (
    BackendConfig,
    ChatBackend,
    ChatRequest,
    ChatResponse,
    MockBackend,
    OpenAICompatibleBackend,
)
from .config import PipelineConfig, XplorConfig, load_config
from .corpus import Chunk, Corpus, Document, chunk_document, ingest_document
from .engine import Engine, PipelineReport
from .errors import SparkError
from .filtering import FilterDecision, ReviewCritique, filter_batch
from .ideagen import ConceptSet, IdeaProposal
from .index import ScoredHit, VectorIndex
from .judge_data import TrainingRecord, build_training_records, score_rmse, temporal_split
from .mmr import MmrCandidate, mmr_rerank
from .search import FixtureSearchClient, FoundDocument, SearchClient
from .xplor import CitedAnswer, EvidenceSet, EvidenceSnippet, Xplor

__all__ = [
    "BackendConfig",
    "ChatBackend",
    "ChatRequest",
    "ChatResponse",
    "Chunk",
    "CitedAnswer",
    "ConceptSet",
    "Corpus",
    "Document",
    "Engine",
    "EvidenceSet",
    "EvidenceSnippet",
    "FilterDecision",
    "FixtureSearchClient",
    "FoundDocument",
    "IdeaProposal",
    "MmrCandidate",
    "MockBackend",
    "OpenAICompatibleBackend",
    "PipelineConfig",
    "PipelineReport",
    "ReviewCritique",
    "ScoredHit",
    "SearchClient",
    "SparkError",
    "TrainingRecord",
    "VectorIndex",
    "Xplor",
    "XplorConfig",
    "__version__",
    "build_training_records",
    "chunk_document",
    "filter_batch",
    "ingest_document",
    "load_config",
    "mmr_rerank",
    "score_rmse",
    "temporal_split",
]
