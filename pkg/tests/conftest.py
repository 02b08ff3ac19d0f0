from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import fixture_films as ff  # noqa: E402
from cineforge import identity as identity_mod, memory as memory_mod  # noqa: E402
from cineforge.config import EngineConfig  # noqa: E402
from cineforge.errors import ProviderTimeout  # noqa: E402
from cineforge.manifest import merge_sources, parse_manifest  # noqa: E402
from cineforge.providers import (CompletionProvider, EmbeddingDissimilarityBoundary,  # noqa: E402
                                 ProviderBundle, QueueCompletionProvider)

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def shaw_manifest():
    return parse_manifest(ff.shawfix_manifest_dict())


@pytest.fixture(scope="session")
def road_manifest():
    return parse_manifest(ff.roadfix_manifest_dict())


@pytest.fixture()
def collection(shaw_manifest, road_manifest):
    return merge_sources([parse_manifest(ff.shawfix_manifest_dict()),
                          parse_manifest(ff.roadfix_manifest_dict())])


@pytest.fixture(scope="session")
def shaw_identity(shaw_manifest):
    return identity_mod.analyze(shaw_manifest)


@pytest.fixture(scope="session")
def shaw_memory(shaw_manifest, shaw_identity):
    return memory_mod.build_memory(
        shaw_manifest, shaw_identity,
        QueueCompletionProvider(ff.shawfix_memory_responses()),
        EmbeddingDissimilarityBoundary())


@pytest.fixture(scope="session")
def road_memory(road_manifest):
    ident = identity_mod.analyze(road_manifest)
    return memory_mod.build_memory(
        road_manifest, ident,
        QueueCompletionProvider(ff.roadfix_memory_responses()),
        EmbeddingDissimilarityBoundary())


def build_config(base: Path, **kwargs) -> EngineConfig:
    defaults = dict(memory_dir=str(base / "memory"), out_dir=str(base / "out"),
                    media_root=str(base / "media"), asset_dir=str(base / "assets"),
                    dry_run=True)
    defaults.update(kwargs)
    return EngineConfig(**defaults)


def seed_memories(config: EngineConfig, *pairs) -> None:
    """Persist pre-built memories so sessions skip the memory stage calls."""
    memdir = Path(config.memory_dir)
    memdir.mkdir(parents=True, exist_ok=True)
    for manifest, responses in pairs:
        ident = identity_mod.analyze(manifest)
        memory = memory_mod.build_memory(manifest, ident,
                                         QueueCompletionProvider(responses),
                                         EmbeddingDissimilarityBoundary())
        memory_mod.save_memory(memory, memdir / f"{manifest.source_id}.memory.json")


@pytest.fixture()
def seeded_config(tmp_path, shaw_manifest, road_manifest):
    config = build_config(tmp_path)
    seed_memories(config,
                  (shaw_manifest, ff.shawfix_memory_responses()),
                  (road_manifest, ff.roadfix_memory_responses()))
    return config


def bundle_for(session: ff.SessionScript) -> ProviderBundle:
    return ProviderBundle(completion=QueueCompletionProvider(session.responses))


class FaultInjectingProvider(CompletionProvider):
    """Delegates to an inner provider but times out at the n-th call."""

    def __init__(self, inner: CompletionProvider, fail_at: int):
        self._inner = inner
        self._fail_at = fail_at
        self._count = 0

    def complete(self, request):
        self._count += 1
        if self._count == self._fail_at:
            raise ProviderTimeout(f"injected timeout at call {self._count}")
        return self._inner.complete(request)
