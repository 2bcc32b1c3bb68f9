"""HTTP client for OpenAI-compatible chat and embedding endpoints.

Transient failures (connection errors, timeouts, HTTP 429/5xx) are retried
with exponential backoff and multiplicative jitter; the jitter factor lives
in [1, 2) so successive delays never decrease. Other 4xx responses are
permanent and raised immediately.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from typing import Callable

import httpx

from ..errors import (
    BackendTimeoutError,
    PermanentApiError,
    ProtocolError,
    RetriesExhaustedError,
)
from .types import (
    BackendConfig,
    ChatBackend,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    TokenUsage,
    check_embed_inputs,
)

logger = logging.getLogger(__name__)

_RETRIABLE_STATUSES = {408, 429, 500, 502, 503, 504}


class OpenAICompatibleBackend(ChatBackend):
    """Talks the OpenAI JSON wire format to any compatible server."""

    def __init__(
        self,
        config: BackendConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._base = config.base_url.rstrip("/")
        self._sleep = sleep
        self._limiter = threading.Semaphore(config.max_in_flight)
        self._rng = random.Random()
        self._client = httpx.Client(timeout=config.timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    # -- wire calls ---------------------------------------------------------

    def chat_complete(self, req: ChatRequest) -> ChatResponse:
        model_id = req.model_id or self.config.model_id
        body: dict = {
            "model": model_id,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.response_format == "json_object":
            body["response_format"] = {"type": "json_object"}

        data = self._post("/chat/completions", body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat completion payload: {exc}") from exc
        if not isinstance(text, str) or not text:
            raise ProtocolError("chat completion returned empty content")
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            token_usage=TokenUsage(
                int(usage.get("prompt_tokens", 0)),
                int(usage.get("completion_tokens", 0)),
            ),
            model_id=data.get("model", model_id),
        )

    def embed_texts(self, texts: list[str], model_id: str = "") -> list[EmbeddingVector]:
        check_embed_inputs(texts)
        model_id = model_id or self.config.model_id
        data = self._post("/embeddings", {"model": model_id, "input": texts})
        items = data.get("data")
        if not isinstance(items, list) or len(items) != len(texts):
            raise ProtocolError(
                f"embeddings response has {len(items or [])} rows for {len(texts)} inputs"
            )
        rows = sorted(items, key=lambda item: item.get("index", 0))
        vectors = [tuple(float(v) for v in row["embedding"]) for row in rows]
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise ProtocolError(f"mixed embedding dimensions in one batch: {sorted(dims)}")
        dim = dims.pop()
        if self.config.embedding_dim and dim != self.config.embedding_dim:
            raise ProtocolError(
                f"server returned dim {dim}, configured dim {self.config.embedding_dim}"
            )
        return [EmbeddingVector(v, dim, model_id) for v in vectors]

    # -- transport ----------------------------------------------------------

    def _post(self, path: str, body: dict) -> dict:
        url = self._base + path
        attempts = self.config.max_retries + 1
        last_error = ""
        timed_out = True
        for attempt in range(attempts):
            if attempt:
                self._sleep(self._backoff(attempt - 1))
            try:
                with self._limiter:
                    response = self._client.post(url, json=body, headers=self._headers())
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
                logger.debug("attempt %d/%d timed out: %s", attempt + 1, attempts, exc)
                continue
            except httpx.TransportError as exc:
                timed_out = False
                last_error = f"transport: {exc}"
                logger.debug("attempt %d/%d transport error: %s", attempt + 1, attempts, exc)
                continue

            timed_out = False
            if response.status_code in _RETRIABLE_STATUSES:
                last_error = f"HTTP {response.status_code}"
                logger.debug("attempt %d/%d got %s", attempt + 1, attempts, last_error)
                continue
            if response.status_code >= 400:
                raise PermanentApiError(response.status_code, response.text)
            self._log_exchange(url, body, response)
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolError(f"non-JSON response body: {exc}") from exc

        if timed_out:
            raise BackendTimeoutError(attempts)
        raise RetriesExhaustedError(attempts, last_error)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _backoff(self, retry_index: int) -> float:
        # Factor in [1, 2): delay_{n+1} >= base * 2^{n+1} >= delay_n for any jitter.
        return self.config.backoff_base * (2**retry_index) * (1 + self._rng.random())

    def _log_exchange(self, url: str, body: dict, response: httpx.Response) -> None:
        # Bodies only; the bearer token lives in headers and is never logged.
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("POST %s body=%s", url, json.dumps(body, ensure_ascii=False)[:2000])
            logger.debug("response %d body=%s", response.status_code, response.text[:2000])
