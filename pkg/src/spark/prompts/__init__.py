"""Versioned prompt templates shipped as text assets.

Templates use {name} placeholders. Rendering substitutes only the names the
caller supplies, so literal braces in JSON output templates pass through
untouched. Template text is part of the engine's observable behavior (mock
scripts match on it), so changes bump the version suffix.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


@lru_cache(maxsize=None)
def load(name: str) -> str:
    """Return the template text for an asset name like "relevance_v1"."""
    return resources.files(__package__).joinpath(f"{name}.txt").read_text("utf-8").rstrip("\n")


def render(template: str, **values: object) -> str:
    def substitute(match: re.Match) -> str:
        key = match.group(1)
        if key in values:
            return str(values[key])
        return match.group(0)

    return _PLACEHOLDER.sub(substitute, template)


def render_asset(name: str, **values: object) -> str:
    return render(load(name), **values)
