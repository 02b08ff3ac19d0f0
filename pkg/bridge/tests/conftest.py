from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np
import pytest

from cineforge_bridge.config import BridgeConfig, CharacterSeed

FPS = 8.0
SIZE = (96, 64)  # width, height

# three scenes of ten seconds each, with a moving bright square "person"
SCENES = [((40, 30, 30), 10.0), ((30, 40, 90), 10.0), ((90, 80, 30), 10.0)]


def make_sample_clip(path: Path) -> None:
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), FPS, SIZE)
    frame_index = 0
    for color, seconds in SCENES:
        for _ in range(int(seconds * FPS)):
            frame = np.full((SIZE[1], SIZE[0], 3), color, dtype=np.uint8)
            x = 8 + (frame_index * 2) % (SIZE[0] - 24)
            cv2.rectangle(frame, (x, 20), (x + 14, 40), (220, 220, 220), -1)
            writer.write(frame)
            frame_index += 1
    writer.release()


def make_seed_image(path: Path, color) -> None:
    image = np.full((32, 32, 3), color, dtype=np.uint8)
    cv2.imwrite(str(path), image)


@pytest.fixture(scope="session")
def sample_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("bridge-sample")
    clip = root / "sample.mp4"
    make_sample_clip(clip)
    (root / "sample.srt").write_text(
        "1\n00:00:02,000 --> 00:00:04,500\nHold the line.\n\n"
        "2\n00:00:12,000 --> 00:00:14,000\n<i>We move at dawn.</i>\n\n"
        "3\n00:00:25,500 --> 00:00:27,000\nIt's done.\n",
        encoding="utf-8")
    make_seed_image(root / "hero.png", (220, 220, 220))
    make_seed_image(root / "rival.png", (60, 60, 160))
    return root


@pytest.fixture()
def sample_config(sample_tree, tmp_path):
    return BridgeConfig(
        input_video=str(sample_tree / "sample.mp4"),
        output_manifest=str(tmp_path / "sample.manifest.json"),
        source_id="sample",
        title="Sample Clip",
        characters=[
            CharacterSeed("hero", "Hero", [str(sample_tree / "hero.png")]),
            CharacterSeed("rival", "Rival", [str(sample_tree / "rival.png")]),
        ],
    )


def write_config_file(config: BridgeConfig, path: Path) -> Path:
    doc = {
        "input_video": config.input_video,
        "output_manifest": config.output_manifest,
        "source_id": config.source_id,
        "title": config.title,
        "embedding_dim": config.embedding_dim,
        "characters": {c.character_id: {"name": c.name, "seed_images": c.seed_images}
                       for c in config.characters},
        "models": config.models,
        "shot_threshold": config.shot_threshold,
        "sample_fps": config.sample_fps,
    }
    if config.embedder_dim:
        doc["embedder_dim"] = config.embedder_dim
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path
