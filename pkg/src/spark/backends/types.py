"""Request/response types shared by every chat and embedding backend."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

from ..errors import ProtocolError, UsageError

FREE_TEXT = "free_text"
JSON_OBJECT = "json_object"

# Default width of embedding vectors; served models may differ, in which case
# the configured value only validates what the server returns.
DEFAULT_EMBEDDING_DIM = 1536


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    model_id: str = ""  # empty means "use the backend's configured model"
    temperature: float = 0.0
    max_tokens: int = 1024
    response_format: str = FREE_TEXT

    def __post_init__(self):
        if self.temperature < 0:
            raise UsageError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise UsageError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.response_format not in (FREE_TEXT, JSON_OBJECT):
            raise UsageError(f"unknown response_format {self.response_format!r}")

    def combined_prompt(self) -> str:
        return f"{self.system_prompt}\n{self.user_prompt}"


@dataclass(frozen=True)
class TokenUsage:
    prompt: int = 0
    completion: int = 0


@dataclass(frozen=True)
class ChatResponse:
    text: str
    token_usage: TokenUsage
    model_id: str


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int
    model_id: str

    def __post_init__(self):
        if len(self.values) != self.dim:
            raise ProtocolError(
                f"embedding has {len(self.values)} values but dim={self.dim}"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise ProtocolError("embedding contains non-finite values")


@dataclass
class BackendConfig:
    """Connection settings for one OpenAI-compatible endpoint role."""

    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "SPARK_API_KEY"
    model_id: str = "gpt-4o-mini"
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 8
    temperature: float = 0.0
    max_tokens: int = 2048
    embedding_dim: int = DEFAULT_EMBEDDING_DIM

    def __post_init__(self):
        if not 0 <= self.max_retries <= 10:
            raise UsageError(f"max_retries must be in [0, 10], got {self.max_retries}")


class ChatBackend(ABC):
    """Uniform client for chat completions and embeddings."""

    @abstractmethod
    def chat_complete(self, req: ChatRequest) -> ChatResponse:
        """Run one chat completion and return the raw model text."""

    @abstractmethod
    def embed_texts(self, texts: list[str], model_id: str = "") -> list[EmbeddingVector]:
        """Embed a batch of texts, preserving order and cardinality."""


def check_embed_inputs(texts: list[str]) -> None:
    if not texts:
        raise UsageError("embed_texts requires at least one text")
    for i, t in enumerate(texts):
        if not t:
            raise UsageError(f"embed_texts input {i} is empty")
