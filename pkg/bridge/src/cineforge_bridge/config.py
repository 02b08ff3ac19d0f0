"""Bridge configuration: input video, character seeds, per-task model
selection, and output location."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class BridgeError(Exception):
    """Configuration or extraction failure; the bridge never emits an
    invalid manifest."""


DEFAULT_MODELS = {
    "shots": "histogram",
    "embedder": "hsv",
    "persons": "framediff",
    "faces": "cascade",
    "dialogue": "srt",
    "audio": "none",
}


@dataclass
class CharacterSeed:
    character_id: str
    name: str
    seed_images: list[str]


@dataclass
class BridgeConfig:
    input_video: str
    output_manifest: str
    source_id: str
    title: str
    characters: list[CharacterSeed] = field(default_factory=list)
    models: dict = field(default_factory=lambda: dict(DEFAULT_MODELS))
    embedding_dim: int = 16
    embedder_dim: int | None = None  # override to simulate a mismatched model
    shot_threshold: float = 0.6
    sample_fps: float = 2.0
    cascade_path: str | None = None
    subtitle_path: str | None = None

    def validate(self) -> None:
        if not Path(self.input_video).is_file():
            raise BridgeError(f"input video not found: {self.input_video}")
        if self.embedding_dim < 1:
            raise BridgeError("embedding_dim must be positive")
        if not 0.0 < self.shot_threshold < 1.0:
            raise BridgeError("shot_threshold must be in (0, 1)")
        for char in self.characters:
            if not char.seed_images:
                raise BridgeError(f"character {char.character_id!r} declares no seed images")
            for image in char.seed_images:
                if not Path(image).is_file():
                    raise BridgeError(
                        f"seed image for character {char.character_id!r} "
                        f"missing: {image}")
        unknown = set(self.models) - set(DEFAULT_MODELS)
        if unknown:
            raise BridgeError(f"unknown model task(s): {sorted(unknown)}")


def load_config(path) -> BridgeConfig:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    characters = [CharacterSeed(cid, body.get("name", cid),
                                list(body.get("seed_images", [])))
                  for cid, body in doc.get("characters", {}).items()]
    models = dict(DEFAULT_MODELS)
    models.update(doc.get("models", {}))
    config = BridgeConfig(
        input_video=doc["input_video"],
        output_manifest=doc["output_manifest"],
        source_id=doc.get("source_id", Path(doc["input_video"]).stem),
        title=doc.get("title", Path(doc["input_video"]).stem),
        characters=characters,
        models=models,
        embedding_dim=int(doc.get("embedding_dim", 16)),
        embedder_dim=(int(doc["embedder_dim"]) if doc.get("embedder_dim") else None),
        shot_threshold=float(doc.get("shot_threshold", 0.6)),
        sample_fps=float(doc.get("sample_fps", 2.0)),
        cascade_path=doc.get("cascade_path"),
        subtitle_path=doc.get("subtitle_path"),
    )
    return config
