"""Capability probe: which perception backends are usable right now, and
which embedding dimension each one emits."""
from __future__ import annotations

from pathlib import Path

from .backends import CascadeFaceDetector, SrtSidecarReader
from .config import BridgeConfig


def probe(config: BridgeConfig) -> dict:
    models = config.models
    report: dict = {"tasks": {}, "warnings": []}

    def task(name, available, backend, dim=None, detail=""):
        report["tasks"][name] = {"available": available, "backend": backend,
                                 "dim": dim, "detail": detail}

    if models.get("shots") == "histogram":
        task("shot_boundaries", True, "histogram")
    else:
        task("shot_boundaries", False, models.get("shots", "none"),
             detail="backend disabled in configuration")

    embedder_dim = config.embedder_dim or config.embedding_dim
    if models.get("embedder") == "hsv":
        task("embeddings", True, "hsv", dim=embedder_dim)
        if embedder_dim != config.embedding_dim:
            report["warnings"].append(
                f"embedder emits dimension {embedder_dim} but the manifest "
                f"declares {config.embedding_dim}")
    else:
        task("embeddings", False, models.get("embedder", "none"),
             detail="backend disabled in configuration")

    if models.get("persons") == "framediff":
        task("person_detection", True, "framediff", dim=embedder_dim)
    else:
        task("person_detection", False, models.get("persons", "none"),
             detail="backend disabled in configuration")

    if models.get("faces") == "cascade":
        cascade = CascadeFaceDetector(config.cascade_path)
        if cascade.available:
            task("face_analysis", True, "cascade", dim=embedder_dim)
        else:
            task("face_analysis", False, "cascade",
                 detail="no usable cascade file configured")
    else:
        task("face_analysis", False, models.get("faces", "none"),
             detail="backend disabled in configuration")

    dialogue_model = models.get("dialogue")
    if dialogue_model == "srt":
        reader = SrtSidecarReader(config.input_video, config.subtitle_path)
        if reader.available:
            task("dialogue_extraction", True, "srt",
                 detail=f"sidecar subtitles: {reader.path}")
        else:
            task("dialogue_extraction", False, "srt",
                 detail="no sidecar subtitle file found")
    elif dialogue_model == "ocr":
        task("dialogue_extraction", False, "ocr",
             detail="no OCR engine installed in this environment")
    else:
        task("dialogue_extraction", False, dialogue_model or "none",
             detail="backend disabled in configuration")

    task("speaker_audio", False, models.get("audio", "none"),
         detail="no audio decoder available in this environment")

    report["input_video"] = config.input_video
    report["input_exists"] = Path(config.input_video).is_file()
    report["embedding_dim"] = config.embedding_dim
    return report
