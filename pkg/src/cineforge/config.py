"""Engine configuration with the precedence flags > environment > config
file > defaults.  Credentials are referenced by environment-variable name
only; the config file never holds secrets."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .compiler import RendererCommandTemplate, ffmpeg_template, reference_template
from .errors import CineforgeError
from .providers import (ConstantCompletionProvider, EmbeddingDissimilarityBoundary,
                        HashEmbeddingProvider, HttpCompletionProvider,
                        HttpEmbeddingProvider, ProviderBundle, QueueCompletionProvider,
                        ReplayCompletionProvider, ScriptedBoundary)

# environment variable -> dotted config key
ENV_KEYS = {
    "CINEFORGE_PROVIDER_ENDPOINT": "provider.endpoint",
    "CINEFORGE_PROVIDER_KIND": "provider.kind",
    "CINEFORGE_LINK_THRESHOLD": "identity.link_threshold",
    "CINEFORGE_LIP_THRESHOLD": "identity.lip_threshold",
    "CINEFORGE_KMEANS_SEED": "identity.kmeans_seed",
    "CINEFORGE_MAX_ITERATIONS": "planning.max_iterations",
    "CINEFORGE_PER_STAGE_CAP": "planning.per_stage_cap",
    "CINEFORGE_MEMORY_DIR": "paths.memory_dir",
    "CINEFORGE_MEDIA_ROOT": "paths.media_root",
    "CINEFORGE_OUT_DIR": "paths.out_dir",
    "CINEFORGE_ASSET_DIR": "paths.asset_dir",
    "CINEFORGE_RENDERER": "renderer.kind",
    "CINEFORGE_PROVIDER_TIMEOUT": "provider.timeout",
}


@dataclass
class EngineConfig:
    # identity
    link_threshold: float = 0.75
    lip_threshold: float = 0.5
    kmeans_seed: int = 0
    # memory
    boundary_threshold: float = 0.5
    # planning
    max_iterations: int = 40
    per_stage_cap: int = 12
    # environment
    durable_log: bool = False
    dry_run: bool = False
    provider_timeout: float = 120.0
    # paths
    memory_dir: str = "memory"
    media_root: str = "media"
    out_dir: str = "out"
    asset_dir: str = "assets"
    # renderer: "reference" | "ffmpeg" | custom template dict
    renderer_kind: str = "reference"
    renderer_custom: dict | None = None
    # metrics
    tcs_mode: str = "duration"
    # provider wiring (kind + parameters; see build_providers)
    provider: dict = field(default_factory=lambda: {"kind": "http",
                                                    "endpoint": "http://127.0.0.1:8750/complete",
                                                    "api_key_env": "CINEFORGE_API_KEY"})
    director: dict | None = None
    embedder: dict = field(default_factory=lambda: {"kind": "hash", "dim": 8})
    judge: dict | None = None
    boundary: dict = field(default_factory=lambda: {"kind": "heuristic"})

    def renderer_template(self) -> RendererCommandTemplate:
        if self.renderer_kind == "reference":
            return reference_template()
        if self.renderer_kind == "ffmpeg":
            return ffmpeg_template()
        if self.renderer_kind == "custom":
            if not self.renderer_custom:
                raise CineforgeError("renderer.kind=custom needs renderer.template")
            t = self.renderer_custom
            return RendererCommandTemplate(list(t["extract"]), list(t["concat"]),
                                           list(t["probe"]))
        raise CineforgeError(f"unknown renderer kind {self.renderer_kind!r}")

    def validate(self) -> None:
        if self.max_iterations < 0 or self.per_stage_cap <= 0:
            raise CineforgeError("planning budgets must be positive")
        if not 0.0 < self.link_threshold < 1.0:
            raise CineforgeError("identity.link_threshold must be in (0, 1)")
        if not 0.0 <= self.lip_threshold <= 1.0:
            raise CineforgeError("identity.lip_threshold must be in [0, 1]")
        if self.provider_timeout <= 0:
            raise CineforgeError("provider.timeout must be positive")


# dotted config key -> EngineConfig attribute
_KEY_MAP = {
    "identity.link_threshold": ("link_threshold", float),
    "identity.lip_threshold": ("lip_threshold", float),
    "identity.kmeans_seed": ("kmeans_seed", int),
    "memory.boundary_threshold": ("boundary_threshold", float),
    "planning.max_iterations": ("max_iterations", int),
    "planning.per_stage_cap": ("per_stage_cap", int),
    "environment.durable_log": ("durable_log", lambda v: str(v).lower() in ("1", "true", "yes")),
    "environment.dry_run": ("dry_run", lambda v: str(v).lower() in ("1", "true", "yes")),
    "provider.timeout": ("provider_timeout", float),
    "paths.memory_dir": ("memory_dir", str),
    "paths.media_root": ("media_root", str),
    "paths.out_dir": ("out_dir", str),
    "paths.asset_dir": ("asset_dir", str),
    "renderer.kind": ("renderer_kind", str),
    "metrics.tcs_mode": ("tcs_mode", str),
}

_SECTION_OBJECTS = ("provider", "director", "embedder", "judge", "boundary")


def _apply_dotted(config: EngineConfig, key: str, value) -> None:
    if key in _KEY_MAP:
        attr, cast = _KEY_MAP[key]
        setattr(config, attr, cast(value))
        return
    head, _, rest = key.partition(".")
    if head in _SECTION_OBJECTS and rest:
        section = getattr(config, head) or {}
        section[rest] = value
        setattr(config, head, section)
        return
    if head == "renderer" and rest == "template":
        config.renderer_custom = value
        return
    raise CineforgeError(f"unknown config key {key!r}")


def load_config(path=None, env: dict | None = None,
                overrides: dict | None = None) -> EngineConfig:
    """Defaults, then config file, then environment, then explicit overrides."""
    config = EngineConfig()
    if path:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        for section, body in doc.items():
            if section in _SECTION_OBJECTS and isinstance(body, dict) \
                    and section != "renderer":
                setattr(config, section, dict(body))
            elif isinstance(body, dict):
                for key, value in body.items():
                    _apply_dotted(config, f"{section}.{key}", value)
            else:
                _apply_dotted(config, section, body)
    env = os.environ if env is None else env
    for var, key in ENV_KEYS.items():
        if var in env:
            _apply_dotted(config, key, env[var])
    for key, value in (overrides or {}).items():
        _apply_dotted(config, key, value)
    config.validate()
    return config


def _completion_from_spec(spec: dict, timeout: float, env: dict):
    kind = spec.get("kind")
    if kind == "queue":
        if "responses" in spec:
            return QueueCompletionProvider(list(spec["responses"]))
        with open(spec["path"], encoding="utf-8") as fh:
            return QueueCompletionProvider(json.load(fh)["responses"])
    if kind == "replay":
        return ReplayCompletionProvider.from_file(spec["path"],
                                                  strict=spec.get("strict", True))
    if kind == "constant":
        return ConstantCompletionProvider(str(spec.get("text", "")))
    if kind == "http":
        api_key = env.get(spec.get("api_key_env", ""), None)
        return HttpCompletionProvider(spec["endpoint"],
                                      timeout=float(spec.get("timeout", timeout)),
                                      api_key=api_key)
    raise CineforgeError(f"unknown completion provider kind {kind!r}")


def build_providers(config: EngineConfig, env: dict | None = None) -> ProviderBundle:
    """Instantiate the provider bundle described by the config."""
    env = os.environ if env is None else env
    completion = _completion_from_spec(config.provider, config.provider_timeout, env)
    director = (_completion_from_spec(config.director, config.provider_timeout, env)
                if config.director else None)

    boundary_spec = config.boundary or {"kind": "heuristic"}
    if boundary_spec.get("kind") == "heuristic":
        boundary = EmbeddingDissimilarityBoundary(
            float(boundary_spec.get("threshold", config.boundary_threshold)))
    elif boundary_spec.get("kind") == "scripted":
        boundary = ScriptedBoundary(boundary_spec.get("cuts", []))
    else:
        raise CineforgeError(f"unknown boundary kind {boundary_spec.get('kind')!r}")

    embedder_spec = config.embedder or {"kind": "hash", "dim": 8}
    if embedder_spec.get("kind") == "hash":
        embedder = HashEmbeddingProvider(int(embedder_spec.get("dim", 8)))
    elif embedder_spec.get("kind") == "http":
        embedder = HttpEmbeddingProvider(embedder_spec["endpoint"],
                                         int(embedder_spec["dim"]),
                                         timeout=config.provider_timeout)
    else:
        raise CineforgeError(f"unknown embedder kind {embedder_spec.get('kind')!r}")

    judge = (_completion_from_spec(config.judge, config.provider_timeout, env)
             if config.judge else None)
    return ProviderBundle(completion=completion, director=director, boundary=boundary,
                          embedder=embedder, judge=judge)
