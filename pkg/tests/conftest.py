import json
from pathlib import Path

import pytest

from spark.backends import MockBackend
from spark.clock import TickClock
from spark.corpus import Corpus, chunk_document, ingest_document
from spark.index import VectorIndex

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
E2E_SCRIPT = FIXTURES / "e2e.json"
JUDGE_DUMP = FIXTURES / "judge_dump.jsonl"

DIM = 16


def relevance_json(summary: str, score) -> str:
    return json.dumps({"summary": summary, "relevance": score})


@pytest.fixture
def clock():
    return TickClock()


@pytest.fixture
def embedder():
    return MockBackend(embedding_dim=DIM)


def build_corpus(texts: dict[str, str], embedder: MockBackend, chunk_size=400, overlap=80):
    """Ingest, chunk, embed and index a set of {doc_id: body} texts."""
    corpus = Corpus()
    index = VectorIndex()
    for doc_id, body in texts.items():
        doc = ingest_document(
            body,
            title=doc_id,
            source_kind="paper",
            source_locator=f"file:///{doc_id}",
            doc_id=doc_id,
            retrieved_at="2024-01-01T00:00:00+00:00",
        )
        chunks = chunk_document(doc, chunk_size, overlap)
        vectors = embedder.embed_texts([c.text for c in chunks])
        for chunk, vec in zip(chunks, vectors):
            chunk.embedding = list(vec.values)
            index.add(chunk.id, chunk.embedding)
        corpus.add_document(doc)
        corpus.add_chunks(chunks)
    return corpus, index


TWO_DOC_TEXTS = {
    "paper_1": (
        "Sparse attention kernels trade recall for throughput on long sequences. "
        "We profile block-sparse and sliding-window variants on synthetic "
        "retrieval probes and find recall collapses once the probe distance "
        "exceeds the window. A hybrid kernel with a few global tokens restores "
        "most of the lost recall at minor cost. "
    )
    * 4,
    "paper_2": (
        "Verifier models score intermediate reasoning steps. Training them on "
        "style-varied scratchpads reduces their preference for fluent but "
        "invalid derivations. We release a protocol for auditing verifier "
        "verdicts by independent re-derivation of accepted steps. "
    )
    * 4,
}
