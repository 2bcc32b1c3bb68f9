"""External literature search clients.

Live scraping is out of scope; the engine talks to anything satisfying
SearchClient. FixtureSearchClient answers from a scripted table and is the
implementation used by deterministic runs and tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

from .errors import SearchError


@dataclass(frozen=True)
class FoundDocument:
    title: str
    text: str
    locator: str  # stable external identifier, e.g. a URL; dedup key
    venue_date: str | None = None


@runtime_checkable
class SearchClient(Protocol):
    def search(self, query: str) -> list[FoundDocument]: ...


@dataclass(frozen=True)
class FixtureEntry:
    match: str
    documents: tuple[FoundDocument, ...]


class FixtureSearchClient:
    """First entry whose match substring appears in the query wins."""

    def __init__(self, entries: Sequence[FixtureEntry] = ()):
        self.entries = list(entries)
        self.queries: list[str] = []

    def search(self, query: str) -> list[FoundDocument]:
        self.queries.append(query)
        for entry in self.entries:
            if entry.match in query:
                return list(entry.documents)
        return []

    @classmethod
    def from_entries(cls, raw: Sequence[dict]) -> "FixtureSearchClient":
        entries = []
        for item in raw:
            docs = tuple(
                FoundDocument(
                    title=d["title"],
                    text=d["text"],
                    locator=d["locator"],
                    venue_date=d.get("venue_date"),
                )
                for d in item.get("documents", [])
            )
            entries.append(FixtureEntry(match=item["match"], documents=docs))
        return cls(entries)

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureSearchClient":
        data = json.loads(Path(path).read_text("utf-8"))
        return cls.from_entries(data.get("search", []))


@dataclass
class FailingSearchClient:
    """Always raises; used to exercise the loop's continue-on-failure path."""

    message: str = "search backend unavailable"
    calls: int = field(default=0)

    def search(self, query: str) -> list[FoundDocument]:
        self.calls += 1
        raise SearchError(self.message)
