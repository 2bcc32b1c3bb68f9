"""Exact cosine nearest-neighbor search over chunk embeddings.

A flat index: vectors are unit-normalized at insert time and stored as
float32 rows, queries are normalized the same way, and cosine similarity is
the plain dot product. Search scans every row, so results are exact and the
tie-break (ascending chunk id) is total.

Persistence is a self-describing little-endian binary file:

    magic "SPRKFIDX" | u32 version | u32 dim | u32 count
    count * dim float32 row data
    count * (u32 byte length + utf-8 chunk id)

Readers may query concurrently; add/save require exclusive access.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateVectorError,
    DimensionError,
    DuplicateIdError,
    EmptyIndexError,
    IndexFormatError,
    UsageError,
)

MAGIC = b"SPRKFIDX"
VERSION = 1


@dataclass(frozen=True)
class ScoredHit:
    chunk_id: str
    similarity: float


def normalize(values: Sequence[float]) -> np.ndarray:
    """Scale a vector to unit L2 norm (float64)."""
    v = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateVectorError("cannot normalize a zero or non-finite vector")
    return v / norm


class VectorIndex:
    def __init__(self):
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self._by_id: set[str] = set()
        self._dim: int | None = None
        self._matrix: np.ndarray | None = None
        self._write_lock = threading.Lock()

    @property
    def dim(self) -> int | None:
        return self._dim

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._by_id

    def add(self, chunk_id: str, values: Sequence[float]) -> None:
        """Insert one vector; the first insert fixes the index dimension."""
        with self._write_lock:
            if chunk_id in self._by_id:
                raise DuplicateIdError(f"chunk id {chunk_id!r} already indexed")
            row = normalize(values).astype(np.float32)
            if self._dim is None:
                self._dim = row.shape[0]
            elif row.shape[0] != self._dim:
                raise DimensionError(
                    f"vector dim {row.shape[0]} does not match index dim {self._dim}"
                )
            self._ids.append(chunk_id)
            self._rows.append(row)
            self._by_id.add(chunk_id)
            self._matrix = None

    def knn(self, query: Sequence[float], k: int) -> list[ScoredHit]:
        """Top-k by cosine similarity; ties broken by ascending chunk id."""
        if k < 1:
            raise UsageError(f"k must be positive, got {k}")
        if not self._ids:
            raise EmptyIndexError("knn on an empty index")
        q = normalize(query)
        if q.shape[0] != self._dim:
            raise DimensionError(f"query dim {q.shape[0]} does not match index dim {self._dim}")
        # Row-wise sums, not a matvec: BLAS gemv rounds differently for main
        # and remainder rows, so equal vectors would not tie bitwise and the
        # id tie-break would never fire for duplicates.
        sims = (self._stack().astype(np.float64) * q).sum(axis=1)
        order = sorted(range(len(self._ids)), key=lambda i: (-sims[i], self._ids[i]))
        return [ScoredHit(self._ids[i], float(sims[i])) for i in order[: min(k, len(order))]]

    def vector_for(self, chunk_id: str) -> np.ndarray:
        """Stored unit vector for a chunk id (float32 row, read-only view)."""
        if chunk_id not in self._by_id:
            raise UsageError(f"chunk id {chunk_id!r} is not indexed")
        i = self._ids.index(chunk_id)
        return self._rows[i]

    def _stack(self) -> np.ndarray:
        if self._matrix is None or self._matrix.shape[0] != len(self._rows):
            self._matrix = np.vstack(self._rows)
        return self._matrix

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        with self._write_lock:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            dim = self._dim or 0
            with path.open("wb") as fh:
                fh.write(MAGIC)
                fh.write(struct.pack("<III", VERSION, dim, len(self._ids)))
                for row in self._rows:
                    fh.write(row.astype("<f4").tobytes())
                for chunk_id in self._ids:
                    encoded = chunk_id.encode("utf-8")
                    fh.write(struct.pack("<I", len(encoded)))
                    fh.write(encoded)

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        path = Path(path)
        raw = path.read_bytes()
        if raw[: len(MAGIC)] != MAGIC:
            raise IndexFormatError(f"{path}: bad magic bytes")
        offset = len(MAGIC)
        try:
            version, dim, count = struct.unpack_from("<III", raw, offset)
        except struct.error as exc:
            raise IndexFormatError(f"{path}: truncated header") from exc
        offset += 12
        if version != VERSION:
            raise IndexFormatError(f"{path}: unsupported version {version}")
        index = cls()
        if count:
            try:
                rows = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=offset)
            except ValueError as exc:
                raise IndexFormatError(f"{path}: truncated row data") from exc
            rows = rows.reshape(count, dim)
            offset += count * dim * 4
        for i in range(count):
            if offset + 4 > len(raw):
                raise IndexFormatError(f"{path}: truncated id table")
            (length,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            if offset + length > len(raw):
                raise IndexFormatError(f"{path}: truncated id table")
            chunk_id = raw[offset : offset + length].decode("utf-8")
            offset += length
            index._ids.append(chunk_id)
            index._rows.append(np.array(rows[i], dtype=np.float32))
            index._by_id.add(chunk_id)
        if count:
            index._dim = dim
        return index
