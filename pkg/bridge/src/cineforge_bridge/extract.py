"""Manifest extraction: decode a video, run the perception backends, and
write a schema-conformant source manifest.

The bridge self-checks every invariant it knows about before writing; a
violation is a hard error, never a written file.  The engine-side
`cineforge validate` is the external oracle."""
from __future__ import annotations

import json
import math
from pathlib import Path

from .backends import build_backends, decode_video, read_frame
from .config import BridgeConfig, BridgeError

SCHEMA_VERSION = "1"


def _shot_spans(video, cuts: list[int]) -> list[tuple[int, int]]:
    """Frame-index spans [first, last_exclusive) induced by the cut list."""
    starts = [0] + sorted(set(cuts))
    spans = []
    for i, first in enumerate(starts):
        last = starts[i + 1] if i + 1 < len(starts) else video.frame_count
        if last > first:
            spans.append((first, last))
    return spans


def _assign_shot(shots: list[dict], t: float) -> int | None:
    for shot in shots:
        if shot["start"] <= t < shot["end"]:
            return shot["shot_id"]
    if shots and t >= shots[-1]["end"]:
        return shots[-1]["shot_id"]
    return None


def _clamp(t: float, lo: float, hi: float) -> float:
    return min(max(t, lo), hi)


def extract_manifest(config: BridgeConfig) -> str:
    """Run the full extraction and return the written manifest path."""
    config.validate()  # configuration errors fire before any processing
    backends = build_backends(config)
    if backends.shots is None:
        raise BridgeError("shot boundary backend is disabled; cannot extract")
    if backends.embedder is None:
        raise BridgeError("embedding backend is disabled; cannot extract")

    video = decode_video(config.input_video, config.sample_fps)
    embed = backends.embedder.embed

    shots = []
    for shot_id, (first, last) in enumerate(_shot_spans(video,
                                                        backends.shots.boundaries(video))):
        keyframe_index = (first + last - 1) // 2  # temporal midpoint rule
        keyframe = read_frame(config.input_video, keyframe_index)
        shots.append({
            "shot_id": shot_id,
            "start": first / video.fps,
            "end": last / video.fps,
            "keyframe_embedding": embed(keyframe),
            "detections": [],
            "dialogue_refs": [],
        })

    det_counter = 0
    raw = []
    if backends.persons is not None:
        raw.extend(backends.persons.detect(video))
    if backends.faces is not None:
        raw.extend(backends.faces.detect(video))
    raw.sort(key=lambda d: (d.sample_index, d.modality))
    for detection in raw:
        t = video.timestamp(detection.sample_index)
        shot_id = _assign_shot(shots, t)
        if shot_id is None:
            continue
        shot = shots[shot_id]
        x, y, w, h = detection.box
        frame = video.frames[detection.sample_index]
        crop = frame[y:y + h, x:x + w]
        if crop.size == 0:
            continue
        record = {
            "detection_id": f"det{det_counter:05d}",
            "shot_id": shot_id,
            "timestamp": _clamp(t, shot["start"], shot["end"]),
            "face_embedding": embed(crop) if detection.modality == "face" else None,
            "body_embedding": embed(crop) if detection.modality == "body" else None,
            "lip_activity": detection.lip_activity,
        }
        shot["detections"].append(record)
        det_counter += 1

    dialogue = []
    if backends.dialogue is not None:
        duration = video.duration
        for i, line in enumerate(backends.dialogue.read()):
            start = _clamp(line.start, 0.0, duration)
            end = _clamp(line.end, 0.0, duration)
            if end <= start:
                continue
            shot_id = _assign_shot(shots, (start + end) / 2.0)
            if shot_id is None:
                continue
            line_id = f"line{i:04d}"
            dialogue.append({
                "line_id": line_id,
                "shot_id": shot_id,
                "text": line.text,
                "start": start,
                "end": end,
                "audio_embedding": None,  # no audio backend in this environment
                "ocr_confidence": line.confidence,
                "speaker_id": None,
            })
            shots[shot_id]["dialogue_refs"].append(line_id)

    characters = []
    for seed in config.characters:
        anchors = [embed(read_image(path)) for path in seed.seed_images]
        characters.append({
            "character_id": seed.character_id,
            "name": seed.name,
            # the reference embedder is appearance-based; the same anchors
            # serve both modalities so body-only detections stay comparable
            "face_anchor_embeddings": anchors,
            "body_anchor_embeddings": list(anchors),
            "bio": None,
        })

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "source_id": config.source_id,
        "title": config.title,
        "frame_rate": video.fps,
        "embedding_dim": config.embedding_dim,
        "shots": shots,
        "characters": characters,
        "dialogue_track": dialogue,
    }
    self_check(manifest)

    out = Path(config.output_manifest)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return str(out)


def read_image(path):
    import cv2

    image = cv2.imread(str(path))
    if image is None:
        raise BridgeError(f"cannot read seed image: {path}")
    return image


def self_check(manifest: dict) -> None:
    """Internal invariant sweep; raising here means nothing gets written."""
    dim = manifest["embedding_dim"]

    def check_vec(vec, where):
        if vec is None:
            return
        if len(vec) != dim:
            raise BridgeError(f"{where}: dimension {len(vec)} != declared {dim}")
        norm = math.sqrt(sum(x * x for x in vec))
        if abs(norm - 1.0) > 1e-6:
            raise BridgeError(f"{where}: norm {norm!r} not unit within 1e-6")

    shots = manifest["shots"]
    if [s["shot_id"] for s in shots] != list(range(len(shots))):
        raise BridgeError("shot ids must be contiguous from 0")
    prev_end = None
    line_shots = {l["line_id"]: l["shot_id"] for l in manifest["dialogue_track"]}
    for shot in shots:
        if shot["end"] <= shot["start"]:
            raise BridgeError(f"shot {shot['shot_id']}: non-positive duration")
        if prev_end is not None and shot["start"] < prev_end:
            raise BridgeError(f"shot {shot['shot_id']}: overlaps previous shot")
        prev_end = shot["end"]
        check_vec(shot["keyframe_embedding"], f"shot {shot['shot_id']} keyframe")
        for det in shot["detections"]:
            if det["shot_id"] != shot["shot_id"]:
                raise BridgeError(f"{det['detection_id']}: wrong shot id")
            if not shot["start"] <= det["timestamp"] <= shot["end"]:
                raise BridgeError(f"{det['detection_id']}: timestamp outside shot")
            if det["face_embedding"] is None and det["body_embedding"] is None:
                raise BridgeError(f"{det['detection_id']}: no embedding")
            check_vec(det["face_embedding"], det["detection_id"])
            check_vec(det["body_embedding"], det["detection_id"])
            lip = det["lip_activity"]
            if lip is not None and not 0.0 <= lip <= 1.0:
                raise BridgeError(f"{det['detection_id']}: lip activity {lip}")
        for ref in shot["dialogue_refs"]:
            if line_shots.get(ref) != shot["shot_id"]:
                raise BridgeError(f"shot {shot['shot_id']}: dangling dialogue ref {ref}")
    for char in manifest["characters"]:
        if not char["face_anchor_embeddings"] and not char["body_anchor_embeddings"]:
            raise BridgeError(f"character {char['character_id']}: no anchors")
        for vec in char["face_anchor_embeddings"] + char["body_anchor_embeddings"]:
            check_vec(vec, f"character {char['character_id']} anchor")
    shot_ids = {s["shot_id"] for s in shots}
    for line in manifest["dialogue_track"]:
        if line["shot_id"] not in shot_ids:
            raise BridgeError(f"{line['line_id']}: unknown shot {line['shot_id']}")
        if line["end"] <= line["start"]:
            raise BridgeError(f"{line['line_id']}: non-positive span")
        if not 0.0 <= line["ocr_confidence"] <= 1.0:
            raise BridgeError(f"{line['line_id']}: confidence out of range")
        check_vec(line["audio_embedding"], line["line_id"])
