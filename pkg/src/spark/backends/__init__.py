from .http import OpenAICompatibleBackend
from .mock import MockBackend, ScriptEntry, hash_embedding
from .types import (
    DEFAULT_EMBEDDING_DIM,
    FREE_TEXT,
    JSON_OBJECT,
    BackendConfig,
    ChatBackend,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    TokenUsage,
)

__all__ = [
    "BackendConfig",
    "ChatBackend",
    "ChatRequest",
    "ChatResponse",
    "DEFAULT_EMBEDDING_DIM",
    "EmbeddingVector",
    "FREE_TEXT",
    "JSON_OBJECT",
    "MockBackend",
    "OpenAICompatibleBackend",
    "ScriptEntry",
    "TokenUsage",
    "hash_embedding",
]
