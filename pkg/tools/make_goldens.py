#!/usr/bin/env python3
"""Regenerate the frozen fixtures under tests/data/.

Everything derives deterministically from tests/fixture_films.py plus the
scripted providers, so re-running this script must be a no-op unless the
fixtures or prompt templates changed on purpose.
"""
from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))
sys.path.insert(0, str(REPO / "src"))

import fixture_films as ff  # noqa: E402

from cineforge import identity as identity_mod, memory as memory_mod  # noqa: E402
from cineforge.cli import _load_run_record  # noqa: E402
from cineforge.config import EngineConfig  # noqa: E402
from cineforge.environment import instruction_to_dict, run_session  # noqa: E402
from cineforge.manifest import merge_sources, parse_manifest  # noqa: E402
from cineforge.metrics import evaluate, load_ground_truth  # noqa: E402
from cineforge.planning import script_to_dict  # noqa: E402
from cineforge.providers import (ConstantCompletionProvider,  # noqa: E402
                                 EmbeddingDissimilarityBoundary,
                                 HashEmbeddingProvider, ProviderBundle,
                                 QueueCompletionProvider,
                                 RecordingCompletionProvider)

DATA = REPO / "tests" / "data"


def dump(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if path.is_relative_to(REPO):
        print(f"wrote {path.relative_to(REPO)}")


def main() -> int:
    dump(DATA / "shawfix.json", ff.shawfix_manifest_dict())
    dump(DATA / "roadfix.json", ff.roadfix_manifest_dict())

    shaw = parse_manifest(ff.shawfix_manifest_dict())
    road = parse_manifest(ff.roadfix_manifest_dict())
    collection = merge_sources([parse_manifest(ff.shawfix_manifest_dict()),
                                parse_manifest(ff.roadfix_manifest_dict())])

    # golden memory + the recorded transcript that replays it
    ident = identity_mod.analyze(shaw)
    recorder = RecordingCompletionProvider(
        QueueCompletionProvider(ff.shawfix_memory_responses()))
    memory = memory_mod.build_memory(shaw, ident, recorder,
                                     EmbeddingDissimilarityBoundary())
    dump(DATA / "golden_memory_shawfix.json", memory_mod.memory_to_dict(memory))
    dump(DATA / "golden_memory_transcript_shawfix.json", {"calls": recorder.transcript})

    dump(DATA / "ground_truth.json", ff.ground_truth_doc())

    # golden end-to-end batch: sessions in a scratch tree, then the report
    with tempfile.TemporaryDirectory() as scratch:
        base = Path(scratch)
        config = EngineConfig(memory_dir=str(base / "memory"),
                              out_dir=str(base / "out"),
                              media_root=str(base / "media"), dry_run=True)
        memdir = Path(config.memory_dir)
        memdir.mkdir(parents=True)
        memory_mod.save_memory(memory, memdir / "shawfix.memory.json")
        road_ident = identity_mod.analyze(road)
        road_memory = memory_mod.build_memory(
            road, road_ident, QueueCompletionProvider(ff.roadfix_memory_responses()),
            EmbeddingDissimilarityBoundary())
        memory_mod.save_memory(road_memory, memdir / "roadfix.memory.json")

        manifest_paths = {"shawfix": base / "shawfix.json",
                          "roadfix": base / "roadfix.json"}
        dump(manifest_paths["shawfix"], ff.shawfix_manifest_dict())
        dump(manifest_paths["roadfix"], ff.roadfix_manifest_dict())

        sessions = {s.instruction_id: s for s in ff.all_sessions()}
        runs = []
        for sid in sorted(ff.GOLDEN_BATCH_IDS):
            session = sessions[sid]
            providers = ProviderBundle(
                completion=QueueCompletionProvider(session.responses))
            outcome = run_session(session.text, collection, config, providers,
                                  log_path=base / "logs" / f"{sid}.ndjson")
            assert outcome.status == session.expect_status, (sid, outcome.error_detail)
            if sid == "feasible-golden":
                dump(DATA / "golden_script.json", script_to_dict(outcome.script))
            run_dir = base / "runs" / sid
            run_dir.mkdir(parents=True)
            dump(run_dir / "run.json", {
                "instruction_id": sid,
                "instruction": session.text,
                "status": outcome.status,
                "manifests": [str(manifest_paths[s]) for s in session.sources],
                "memory_paths": {k: str(v) for k, v in outcome.memory_paths.items()},
                "script": script_to_dict(outcome.script) if outcome.script else None,
            })
            runs.append(_load_run_record(run_dir))

        report = evaluate(runs, load_ground_truth(DATA / "ground_truth.json"),
                          embedder=HashEmbeddingProvider(ff.DIM),
                          judge=ConstantCompletionProvider("8"))
        dump(DATA / "golden_report.json", report.to_dict())
    return 0


if __name__ == "__main__":
    sys.exit(main())
