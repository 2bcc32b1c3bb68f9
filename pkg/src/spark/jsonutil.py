"""Tolerant JSON extraction for model output.

Models wrap JSON in code fences or prose more often than they emit it bare.
``parse_json_object`` makes a best effort to find the object; callers decide
whether a miss warrants a repair retry.
"""

from __future__ import annotations

import dataclasses
import json
import re
from typing import Any, Callable, TypeVar

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)

REPAIR_NOTE = "Return only valid JSON."

T = TypeVar("T")


def parse_json_object(text: str) -> dict[str, Any] | None:
    """Extract the first JSON object from ``text``, or None if there is none."""
    for candidate in _candidates(text):
        try:
            value = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return value
    return None


def chat_json_with_repair(backend, request, validate: Callable[[dict], T | None], note: str = REPAIR_NOTE) -> T | None:
    """Run a chat request whose reply should be JSON satisfying ``validate``.

    On a parse or validation miss, retries exactly once with ``note`` appended
    to the user prompt. Returns None if the retry also misses; the caller owns
    the operation-specific error.
    """
    text = backend.chat_complete(request).text
    obj = parse_json_object(text)
    if obj is not None:
        value = validate(obj)
        if value is not None:
            return value
    retry = dataclasses.replace(request, user_prompt=f"{request.user_prompt}\n\n{note}")
    obj = parse_json_object(backend.chat_complete(retry).text)
    if obj is None:
        return None
    return validate(obj)


def _candidates(text: str):
    text = text.strip()
    if text:
        yield text
    fenced = _FENCE.search(text)
    if fenced:
        yield fenced.group(1).strip()
    start = text.find("{")
    end = text.rfind("}")
    if start != -1 and end > start:
        yield text[start : end + 1]
