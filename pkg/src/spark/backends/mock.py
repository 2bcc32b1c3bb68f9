"""Scripted backend for offline, replay-identical runs.

Chat answers come from an ordered script of (substring matcher, response)
entries; the first matching entry wins. Embeddings are derived from a stable
hash of the text, so the whole backend is a pure function of
(script, request) and two identical calls return identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from ..errors import ScriptedMissError, UsageError
from .types import (
    DEFAULT_EMBEDDING_DIM,
    ChatBackend,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    TokenUsage,
    check_embed_inputs,
)


@dataclass(frozen=True)
class ScriptEntry:
    match: str
    response: str


def _coerce_entry(raw: Any) -> ScriptEntry:
    if isinstance(raw, ScriptEntry):
        return raw
    if isinstance(raw, (tuple, list)) and len(raw) == 2:
        return ScriptEntry(str(raw[0]), str(raw[1]))
    if isinstance(raw, dict):
        response = raw.get("response", "")
        # Object responses are convenience notation for JSON replies.
        if not isinstance(response, str):
            response = json.dumps(response, ensure_ascii=False)
        return ScriptEntry(str(raw["match"]), response)
    raise UsageError(f"cannot interpret script entry {raw!r}")


def hash_embedding(text: str, dim: int) -> tuple[float, ...]:
    """Expand a SHA-256 stream of ``text`` into ``dim`` floats in [-1, 1).

    Platform-independent by construction: only fixed-width integer math.
    """
    values: list[float] = []
    block = 0
    while len(values) < dim:
        digest = hashlib.sha256(f"{block}\x00{text}".encode("utf-8")).digest()
        for (word,) in struct.iter_unpack("<I", digest):
            values.append(word / 2147483648.0 - 1.0)
            if len(values) == dim:
                break
        block += 1
    return tuple(values)


class MockBackend(ChatBackend):
    """Deterministic stand-in for a chat/embedding endpoint.

    Every call is recorded on ``chat_calls`` / ``embed_calls`` so tests can
    assert on call counts and captured prompts.
    """

    def __init__(self, entries: Sequence[Any] = (), embedding_dim: int = DEFAULT_EMBEDDING_DIM):
        self.entries = [_coerce_entry(e) for e in entries]
        self.embedding_dim = embedding_dim
        self.chat_calls: list[ChatRequest] = []
        self.embed_calls: list[list[str]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            entries=data.get("chat", []),
            embedding_dim=int(data.get("embedding_dim", DEFAULT_EMBEDDING_DIM)),
        )

    def chat_complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            self.chat_calls.append(req)
        prompt = req.combined_prompt()
        for entry in self.entries:
            if entry.match in prompt:
                return ChatResponse(
                    text=entry.response,
                    token_usage=TokenUsage(len(prompt) // 4, len(entry.response) // 4),
                    model_id=req.model_id,
                )
        raise ScriptedMissError(f"no scripted response for prompt starting {prompt[:80]!r}")

    def embed_texts(self, texts: list[str], model_id: str = "") -> list[EmbeddingVector]:
        check_embed_inputs(texts)
        with self._lock:
            self.embed_calls.append(list(texts))
        return [
            EmbeddingVector(hash_embedding(t, self.embedding_dim), self.embedding_dim, model_id)
            for t in texts
        ]
