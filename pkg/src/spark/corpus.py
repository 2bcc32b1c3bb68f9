"""Documents, overlapping character chunks, and line-delimited persistence.

Chunking is character-based and deterministic: chunk ``i`` starts at
``i * (chunk_size - overlap)``, every chunk except the last has exactly
``chunk_size`` characters, and the last chunk is the first one whose window
reaches past the end of the body. Slicing happens on Python string indices,
i.e. on Unicode scalar values, never inside a code point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

from .errors import ChunkingError, DuplicateIdError, IngestionError, RecordParseError

SOURCE_PAPER = "paper"
SOURCE_SEARCH = "search"

DEFAULT_CHUNK_SIZE = 1200
DEFAULT_CHUNK_OVERLAP = 200


@dataclass
class Document:
    id: str
    title: str
    source_kind: str
    source_locator: str
    body: str
    retrieved_at: str
    venue_date: str | None = None


@dataclass
class Chunk:
    id: str
    doc_id: str
    ordinal: int
    char_start: int
    char_end: int
    text: str
    embedding: list[float] | None = field(default=None)


def normalize_text(raw: str) -> str:
    return raw.replace("\r\n", "\n").replace("\r", "\n")


def ingest_document(
    raw_text: str,
    title: str,
    source_kind: str,
    source_locator: str,
    doc_id: str,
    retrieved_at: str,
    venue_date: str | None = None,
) -> Document:
    """Normalize line endings and wrap the text in a Document."""
    body = normalize_text(raw_text)
    if not body.strip():
        raise IngestionError(f"document {title!r} is empty after normalization")
    return Document(
        id=doc_id,
        title=title,
        source_kind=source_kind,
        source_locator=source_locator,
        body=body,
        retrieved_at=retrieved_at,
        venue_date=venue_date,
    )


def chunk_document(doc: Document, chunk_size: int = DEFAULT_CHUNK_SIZE, overlap: int = DEFAULT_CHUNK_OVERLAP) -> list[Chunk]:
    """Slice a document body into overlapping, fully covering chunks."""
    if chunk_size < 1:
        raise ChunkingError(f"chunk_size must be positive, got {chunk_size}")
    if not 0 <= overlap < chunk_size:
        raise ChunkingError(f"overlap must satisfy 0 <= overlap < chunk_size, got {overlap}")

    body = doc.body
    step = chunk_size - overlap
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + chunk_size, len(body))
        ordinal = len(chunks)
        chunks.append(
            Chunk(
                id=f"{doc.id}:{ordinal:04d}",
                doc_id=doc.id,
                ordinal=ordinal,
                char_start=start,
                char_end=end,
                text=body[start:end],
            )
        )
        if start + chunk_size > len(body):
            break
        start += step
    return chunks


def reconstruct_body(chunks: list[Chunk], overlap: int) -> str:
    """Inverse of chunking: drop the leading overlap of every chunk after the first."""
    parts = [chunks[0].text] if chunks else []
    parts.extend(c.text[overlap:] for c in chunks[1:])
    return "".join(parts)


# -- line-delimited persistence ----------------------------------------------


def _to_record(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def store_records(path: str | Path, records: Iterable) -> int:
    """Write dataclass records as one JSON object per line; returns the count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_to_record(rec), ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def append_records(path: str | Path, records: Iterable) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_to_record(rec), ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def load_records(path: str | Path, cls):
    """Load records written by store_records; order preserved.

    Raises RecordParseError naming the first malformed line.
    A missing file is an empty store, not an error.
    """
    path = Path(path)
    out = []
    if not path.exists():
        return out
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(str(path), line_number, exc.msg) from exc
            try:
                out.append(cls(**data))
            except TypeError as exc:
                raise RecordParseError(str(path), line_number, str(exc)) from exc
    return out


def load_documents(path: str | Path) -> list[Document]:
    return load_records(path, Document)


def load_chunks(path: str | Path) -> list[Chunk]:
    return load_records(path, Chunk)


class Corpus:
    """In-memory document/chunk store with per-kind sequential document ids."""

    def __init__(self):
        self.documents: dict[str, Document] = {}
        self.chunks: dict[str, Chunk] = {}
        self._chunks_by_doc: dict[str, list[str]] = {}
        self._locators: set[str] = set()
        self._kind_high: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.documents)

    def next_doc_id(self, source_kind: str) -> str:
        return f"{source_kind}_{self._kind_high.get(source_kind, 0) + 1}"

    def has_locator(self, locator: str) -> bool:
        return locator in self._locators

    def add_document(self, doc: Document) -> None:
        if doc.id in self.documents:
            raise DuplicateIdError(f"document id {doc.id!r} already stored")
        self.documents[doc.id] = doc
        self._locators.add(doc.source_locator)
        prefix = f"{doc.source_kind}_"
        if doc.id.startswith(prefix):
            try:
                ordinal = int(doc.id[len(prefix) :])
            except ValueError:
                ordinal = 0
            high = self._kind_high.get(doc.source_kind, 0)
            self._kind_high[doc.source_kind] = max(high, ordinal)

    def add_chunks(self, chunks: Iterable[Chunk]) -> None:
        for chunk in chunks:
            if chunk.id in self.chunks:
                raise DuplicateIdError(f"chunk id {chunk.id!r} already stored")
            if chunk.doc_id not in self.documents:
                raise IngestionError(f"chunk {chunk.id!r} references unknown document {chunk.doc_id!r}")
            self.chunks[chunk.id] = chunk
            self._chunks_by_doc.setdefault(chunk.doc_id, []).append(chunk.id)

    def chunk(self, chunk_id: str) -> Chunk:
        return self.chunks[chunk_id]

    def document_for_chunk(self, chunk_id: str) -> Document:
        return self.documents[self.chunks[chunk_id].doc_id]

    @classmethod
    def from_files(cls, documents_path: str | Path, chunks_path: str | Path) -> "Corpus":
        corpus = cls()
        docs_path = Path(documents_path)
        if docs_path.exists():
            for doc in load_documents(docs_path):
                corpus.add_document(doc)
        chunks_file = Path(chunks_path)
        if chunks_file.exists():
            corpus.add_chunks(load_chunks(chunks_file))
        return corpus
