"""Engine configuration: one TOML document plus environment overrides.

Sections: top-level ``workspace``, ``[xplor]``, ``[chunking]``,
``[pipeline]``, and ``[backend]`` with optional per-role subtables
(``[backend.scorer]`` etc.). Environment variables override file values:
``SPARK_XPLOR__MIN_EVIDENCE=3`` sets ``xplor.min_evidence``; names that do
not correspond to a known setting are ignored so unrelated SPARK_* variables
(the API key itself, for one) stay out of the tree.

The config hash covers everything except the workspace path, so moving a
workspace does not change run identity.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends.types import BackendConfig
from .corpus import DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE
from .errors import ConfigError
from .xplor import XplorConfig

ROLES = ("embedder", "scorer", "generator", "reviewer", "decider", "annotator")

ENV_PREFIX = "SPARK_"

DEFAULT_REVIEWS_PER_IDEA = 3
DEFAULT_REFINE_THRESHOLD = 0.5
DEFAULT_MAX_REFINEMENTS = 2


@dataclass(frozen=True)
class ChunkingConfig:
    size: int = DEFAULT_CHUNK_SIZE
    overlap: int = DEFAULT_CHUNK_OVERLAP

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError(f"chunking.size must be positive, got {self.size}")
        if not 0 <= self.overlap < self.size:
            raise ConfigError(
                f"chunking.overlap must be in [0, size), got {self.overlap} for size {self.size}"
            )


@dataclass
class PipelineConfig:
    workspace: str = "workspace"
    xplor: XplorConfig = field(default_factory=XplorConfig)
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    reviews_per_idea: int = DEFAULT_REVIEWS_PER_IDEA
    refine_threshold: float = DEFAULT_REFINE_THRESHOLD
    max_refinements: int = DEFAULT_MAX_REFINEMENTS
    backend: BackendConfig = field(default_factory=BackendConfig)
    backend_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reviews_per_idea < 1:
            raise ConfigError(f"reviews_per_idea must be positive, got {self.reviews_per_idea}")
        if not 0.0 <= self.refine_threshold <= 1.0:
            raise ConfigError(f"refine_threshold must be in [0, 1], got {self.refine_threshold}")
        if self.max_refinements < 0:
            raise ConfigError(f"max_refinements must be >= 0, got {self.max_refinements}")
        for role in self.backend_overrides:
            if role not in ROLES:
                raise ConfigError(f"unknown backend role {role!r}; expected one of {ROLES}")

    def backend_for(self, role: str) -> BackendConfig:
        """Role-specific backend settings: shared defaults plus overrides."""
        if role not in ROLES:
            raise ConfigError(f"unknown backend role {role!r}; expected one of {ROLES}")
        merged = asdict(self.backend)
        merged.update(self.backend_overrides.get(role, {}))
        return _build(BackendConfig, merged, f"backend.{role}")

    def to_dict(self) -> dict:
        return {
            "workspace": self.workspace,
            "xplor": asdict(self.xplor),
            "chunking": asdict(self.chunking),
            "pipeline": {
                "reviews_per_idea": self.reviews_per_idea,
                "refine_threshold": self.refine_threshold,
                "max_refinements": self.max_refinements,
            },
            "backend": asdict(self.backend),
            "backend_overrides": {k: dict(v) for k, v in sorted(self.backend_overrides.items())},
        }

    def config_hash(self) -> str:
        payload = self.to_dict()
        payload.pop("workspace")
        canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _build(cls, data: dict, where: str):
    try:
        return cls(**data)
    except TypeError:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}") from None


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def _apply_env(tree: dict, env: Mapping[str, str]) -> dict:
    known_top = {"workspace", "xplor", "chunking", "pipeline", "backend"}
    for name, value in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [part.lower() for part in name[len(ENV_PREFIX):].split("__")]
        if path[0] not in known_top:
            continue
        if len(path) == 1:
            if path[0] != "workspace":
                continue
            tree["workspace"] = value
            continue
        node = tree
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"environment override {name} conflicts with file value")
        node[path[-1]] = _coerce(value)
    return tree


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    workspace: str | None = None,
) -> PipelineConfig:
    """Load configuration from an optional TOML file, then the environment.

    ``workspace`` (the CLI flag) wins over both.
    """
    tree: dict = {}
    if path is not None:
        raw = Path(path)
        if not raw.exists():
            raise ConfigError(f"config file not found: {raw}")
        try:
            tree = tomllib.loads(raw.read_text("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {raw}: {exc}") from exc

    tree = _apply_env(tree, os.environ if env is None else env)
    if workspace is not None:
        tree["workspace"] = workspace

    known = {"workspace", "xplor", "chunking", "pipeline", "backend"}
    unknown = sorted(set(tree) - known)
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {', '.join(unknown)}")

    backend_tree = dict(tree.get("backend", {}))
    overrides = {}
    for key in list(backend_tree):
        if isinstance(backend_tree[key], dict):
            if key not in ROLES:
                raise ConfigError(f"unknown backend role {key!r}; expected one of {ROLES}")
            overrides[key] = backend_tree.pop(key)

    pipeline_tree = dict(tree.get("pipeline", {}))
    known_pipeline = {"reviews_per_idea", "refine_threshold", "max_refinements"}
    unknown = sorted(set(pipeline_tree) - known_pipeline)
    if unknown:
        raise ConfigError(f"unknown key(s) in [pipeline]: {', '.join(unknown)}")

    return PipelineConfig(
        workspace=str(tree.get("workspace", "workspace")),
        xplor=_build(XplorConfig, dict(tree.get("xplor", {})), "xplor"),
        chunking=_build(ChunkingConfig, dict(tree.get("chunking", {})), "chunking"),
        backend=_build(BackendConfig, backend_tree, "backend"),
        backend_overrides=overrides,
        **pipeline_tree,
    )
