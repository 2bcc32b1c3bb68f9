"""Maximal marginal relevance: diversity-aware re-ranking of scored chunks.

Greedy selection. The first pick is the most relevant candidate; each later
pick maximizes

    lambda * rel(d) - (1 - lambda) * max(cos(d, s) for s in selected)

where rel(d) is the candidate's relevance score normalized to [0, 1]. All
ties are broken by ascending chunk id, so the output is a deterministic
function of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, UsageError
from .index import normalize


@dataclass(frozen=True)
class MmrCandidate:
    chunk_id: str
    relevance: float  # raw score on the assessment scale, already clamped
    vector: tuple[float, ...]


def mmr_rerank(
    candidates: Sequence[MmrCandidate],
    query_vec: Sequence[float],
    lam: float,
    select: int,
    scale_max: float = 10.0,
) -> list[MmrCandidate]:
    if not 0.0 <= lam <= 1.0:
        raise UsageError(f"lambda must be in [0, 1], got {lam}")
    if select < 1:
        raise UsageError(f"select must be positive, got {select}")
    if scale_max <= 0:
        raise UsageError(f"scale_max must be positive, got {scale_max}")
    if not candidates:
        return []

    q = normalize(query_vec)
    vecs = [normalize(c.vector) for c in candidates]
    for c, v in zip(candidates, vecs):
        if v.shape[0] != q.shape[0]:
            raise DimensionError(
                f"candidate {c.chunk_id!r} dim {v.shape[0]} does not match query dim {q.shape[0]}"
            )

    rel = [min(max(c.relevance, 0.0), scale_max) / scale_max for c in candidates]
    remaining = list(range(len(candidates)))
    selected: list[int] = []

    while remaining and len(selected) < select:
        if not selected:
            # Highest relevance first; chunk id settles ties.
            best = min(remaining, key=lambda i: (-rel[i], candidates[i].chunk_id))
        else:
            chosen = np.vstack([vecs[i] for i in selected])

            def objective(i: int) -> float:
                redundancy = float(np.max(chosen @ vecs[i]))
                return lam * rel[i] - (1.0 - lam) * redundancy

            best = min(remaining, key=lambda i: (-objective(i), candidates[i].chunk_id))
        selected.append(best)
        remaining.remove(best)

    return [candidates[i] for i in selected]
