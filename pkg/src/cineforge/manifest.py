"""Source manifest schema: domain types, validation, loading, cross-source addressing.

A manifest is a UTF-8 JSON file (one per source video) describing shots,
person detections, the character roster and the dialogue track.  All
embeddings are flat float arrays of the dimension declared at the top level
and must be unit-norm; vectors within 1e-3 of unit length are renormalized
with a warning, anything further off is an error.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

from .errors import CineforgeError, ManifestError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
UNIT_NORM_TOL = 1e-6
RENORM_TOL = 1e-3


@dataclass
class Detection:
    detection_id: str
    shot_id: int
    timestamp: float
    face_embedding: list[float] | None = None
    body_embedding: list[float] | None = None
    lip_activity: float | None = None


@dataclass
class Shot:
    shot_id: int
    start: float
    end: float
    keyframe_embedding: list[float]
    detections: list[Detection] = field(default_factory=list)
    dialogue_refs: list[str] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class CharacterRecord:
    character_id: str
    name: str
    face_anchor_embeddings: list[list[float]] = field(default_factory=list)
    body_anchor_embeddings: list[list[float]] = field(default_factory=list)
    bio: str | None = None


@dataclass
class DialogueLine:
    line_id: str
    shot_id: int
    text: str
    start: float
    end: float
    audio_embedding: list[float] | None = None
    ocr_confidence: float = 1.0
    speaker_id: str | None = None


@dataclass
class SourceManifest:
    source_id: str
    title: str
    frame_rate: float
    embedding_dim: int
    shots: list[Shot] = field(default_factory=list)
    characters: list[CharacterRecord] = field(default_factory=list)
    dialogue_track: list[DialogueLine] = field(default_factory=list)

    def shot_by_id(self, shot_id: int) -> Shot:
        for shot in self.shots:
            if shot.shot_id == shot_id:
                return shot
        raise KeyError(f"unknown shot {shot_id} in source {self.source_id}")

    def character_ids(self) -> list[str]:
        return [c.character_id for c in self.characters]


@dataclass
class Diagnostic:
    """One validation finding: the named invariant plus where it failed."""

    severity: str  # "error" | "warning"
    invariant: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"[{self.severity}] {self.location}: {self.invariant}: {self.message}"


# ---------------------------------------------------------------------------
# validation


def _check_vector(vec, dim, location, invariant, diags, renormalize=True):
    """Validate one embedding; returns the (possibly renormalized) vector."""
    if not isinstance(vec, list) or not all(isinstance(x, (int, float)) for x in vec):
        diags.append(Diagnostic("error", invariant, location, "embedding must be a flat float array"))
        return vec
    if dim is not None and len(vec) != dim:
        diags.append(Diagnostic(
            "error", "uniform-embedding-dim", location,
            f"dimension {len(vec)} != declared {dim}"))
        return vec
    if any(not math.isfinite(x) for x in vec):
        diags.append(Diagnostic("error", invariant, location, "embedding has non-finite entries"))
        return vec
    norm = math.sqrt(sum(x * x for x in vec))
    if abs(norm - 1.0) <= UNIT_NORM_TOL:
        return vec
    if abs(norm - 1.0) <= RENORM_TOL and norm > 0:
        diags.append(Diagnostic(
            "warning", invariant, location,
            f"norm {norm:.6f} off unit by more than {UNIT_NORM_TOL:g}; renormalized"))
        return [x / norm for x in vec] if renormalize else vec
    diags.append(Diagnostic("error", invariant, location, f"norm {norm:.6f} is not unit length"))
    return vec


def inspect_manifest(data: dict) -> list[Diagnostic]:
    """Run every schema and invariant check over a raw manifest document.

    Returns the full diagnostic list; callers decide whether warnings are
    acceptable.  Validation is total: every invariant on every type is
    visited even after earlier findings, as far as the document structure
    allows.
    """
    diags: list[Diagnostic] = []
    if not isinstance(data, dict):
        return [Diagnostic("error", "document-shape", "$", "manifest must be a JSON object")]

    if data.get("schema_version") != SCHEMA_VERSION:
        diags.append(Diagnostic(
            "error", "schema-version", "$.schema_version",
            f"expected {SCHEMA_VERSION!r}, got {data.get('schema_version')!r}"))

    for key, kind in (("source_id", str), ("title", str)):
        if not isinstance(data.get(key), kind) or not data.get(key):
            diags.append(Diagnostic("error", "required-field", f"$.{key}", f"missing or empty {key}"))

    frame_rate = data.get("frame_rate")
    if not isinstance(frame_rate, (int, float)) or frame_rate <= 0:
        diags.append(Diagnostic("error", "positive-frame-rate", "$.frame_rate",
                                f"frame_rate must be positive, got {frame_rate!r}"))

    dim = data.get("embedding_dim")
    if not isinstance(dim, int) or dim < 1:
        diags.append(Diagnostic("error", "embedding-dim", "$.embedding_dim",
                                f"embedding_dim must be a positive integer, got {dim!r}"))
        dim = None

    shots = data.get("shots")
    if not isinstance(shots, list):
        diags.append(Diagnostic("error", "required-field", "$.shots", "shots must be a list"))
        shots = []
    characters = data.get("characters")
    if not isinstance(characters, list):
        diags.append(Diagnostic("error", "required-field", "$.characters", "characters must be a list"))
        characters = []
    dialogue = data.get("dialogue_track")
    if not isinstance(dialogue, list):
        diags.append(Diagnostic("error", "required-field", "$.dialogue_track",
                                "dialogue_track must be a list"))
        dialogue = []

    # characters first: the roster is referenced by dialogue speaker ids
    char_ids: set[str] = set()
    for i, char in enumerate(characters):
        loc = f"$.characters[{i}]"
        if not isinstance(char, dict):
            diags.append(Diagnostic("error", "document-shape", loc, "character must be an object"))
            continue
        cid = char.get("character_id")
        if not isinstance(cid, str) or not cid:
            diags.append(Diagnostic("error", "required-field", loc, "missing character_id"))
        elif cid in char_ids:
            diags.append(Diagnostic("error", "unique-character-id", loc, f"duplicate character_id {cid!r}"))
        else:
            char_ids.add(cid)
        faces = char.get("face_anchor_embeddings") or []
        bodies = char.get("body_anchor_embeddings") or []
        if not faces and not bodies:
            diags.append(Diagnostic("error", "anchor-required", loc,
                                    f"character {cid!r} has no anchor embeddings"))
        for j, vec in enumerate(faces):
            _check_vector(vec, dim, f"{loc}.face_anchor_embeddings[{j}]", "unit-norm-embedding",
                          diags, renormalize=False)
        for j, vec in enumerate(bodies):
            _check_vector(vec, dim, f"{loc}.body_anchor_embeddings[{j}]", "unit-norm-embedding",
                          diags, renormalize=False)

    shot_ids: list[int] = []
    shot_spans: dict[int, tuple[float, float]] = {}
    det_ids: set[str] = set()
    prev_end = None
    for i, shot in enumerate(shots):
        loc = f"$.shots[{i}]"
        if not isinstance(shot, dict):
            diags.append(Diagnostic("error", "document-shape", loc, "shot must be an object"))
            continue
        sid = shot.get("shot_id")
        if not isinstance(sid, int):
            diags.append(Diagnostic("error", "required-field", loc, "missing integer shot_id"))
            sid = None
        else:
            shot_ids.append(sid)
        start, end = shot.get("start"), shot.get("end")
        if not isinstance(start, (int, float)) or not isinstance(end, (int, float)):
            diags.append(Diagnostic("error", "required-field", loc, "missing start/end seconds"))
        else:
            if end <= start:
                diags.append(Diagnostic("error", "positive-duration", loc,
                                        f"shot {sid}: end {end} <= start {start}"))
            if prev_end is not None and start < prev_end:
                diags.append(Diagnostic("error", "sorted-non-overlapping-shots", loc,
                                        f"shot {sid} starts at {start} before previous shot ends at {prev_end}"))
            prev_end = end
            if sid is not None:
                shot_spans[sid] = (start, end)
        _check_vector(shot.get("keyframe_embedding"), dim, f"{loc}.keyframe_embedding",
                      "unit-norm-embedding", diags, renormalize=False)
        for j, det in enumerate(shot.get("detections") or []):
            dloc = f"{loc}.detections[{j}]"
            if not isinstance(det, dict):
                diags.append(Diagnostic("error", "document-shape", dloc, "detection must be an object"))
                continue
            did = det.get("detection_id")
            if not isinstance(did, str) or not did:
                diags.append(Diagnostic("error", "required-field", dloc, "missing detection_id"))
            elif did in det_ids:
                diags.append(Diagnostic("error", "unique-detection-id", dloc,
                                        f"duplicate detection_id {did!r}"))
            else:
                det_ids.add(did)
            if det.get("shot_id") != sid:
                diags.append(Diagnostic("error", "detection-shot-ref", dloc,
                                        f"detection {did!r} names shot {det.get('shot_id')!r}, "
                                        f"enclosing shot is {sid!r}"))
            face, body = det.get("face_embedding"), det.get("body_embedding")
            if face is None and body is None:
                diags.append(Diagnostic("error", "detection-embedding-required", dloc,
                                        f"detection {did!r} carries neither face nor body embedding"))
            if face is not None:
                _check_vector(face, dim, f"{dloc}.face_embedding", "unit-norm-embedding",
                              diags, renormalize=False)
            if body is not None:
                _check_vector(body, dim, f"{dloc}.body_embedding", "unit-norm-embedding",
                              diags, renormalize=False)
            ts = det.get("timestamp")
            if not isinstance(ts, (int, float)):
                diags.append(Diagnostic("error", "required-field", dloc, "missing timestamp"))
            elif sid in shot_spans:
                lo, hi = shot_spans[sid]
                if not (lo <= ts <= hi):
                    diags.append(Diagnostic("error", "timestamp-in-shot", dloc,
                                            f"detection {did!r} timestamp {ts} outside shot span [{lo}, {hi}]"))
            lip = det.get("lip_activity")
            if lip is not None and (not isinstance(lip, (int, float)) or not 0.0 <= lip <= 1.0):
                diags.append(Diagnostic("error", "lip-activity-range", dloc,
                                        f"lip_activity {lip!r} outside [0, 1]"))

    if shot_ids and shot_ids != list(range(len(shot_ids))):
        diags.append(Diagnostic("error", "contiguous-shot-ids", "$.shots",
                                f"shot ids must be 0-based and contiguous, got {shot_ids}"))

    line_ids: dict[str, int] = {}
    for i, line in enumerate(dialogue):
        loc = f"$.dialogue_track[{i}]"
        if not isinstance(line, dict):
            diags.append(Diagnostic("error", "document-shape", loc, "dialogue line must be an object"))
            continue
        lid = line.get("line_id")
        if not isinstance(lid, str) or not lid:
            diags.append(Diagnostic("error", "required-field", loc, "missing line_id"))
        elif lid in line_ids:
            diags.append(Diagnostic("error", "unique-line-id", loc, f"duplicate line_id {lid!r}"))
        else:
            line_ids[lid] = line.get("shot_id", -1)
        if line.get("shot_id") not in shot_spans:
            diags.append(Diagnostic("error", "dialogue-shot-ref", loc,
                                    f"line {lid!r} references missing shot {line.get('shot_id')!r}"))
        start, end = line.get("start"), line.get("end")
        if not isinstance(start, (int, float)) or not isinstance(end, (int, float)) or end <= start:
            diags.append(Diagnostic("error", "positive-duration", loc,
                                    f"line {lid!r}: end must exceed start"))
        conf = line.get("ocr_confidence", 1.0)
        if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            diags.append(Diagnostic("error", "ocr-confidence-range", loc,
                                    f"ocr_confidence {conf!r} outside [0, 1]"))
        speaker = line.get("speaker_id")
        if speaker is not None and speaker not in char_ids:
            diags.append(Diagnostic("error", "speaker-in-roster", loc,
                                    f"speaker_id {speaker!r} not in character roster"))
        audio = line.get("audio_embedding")
        if audio is not None:
            _check_vector(audio, dim, f"{loc}.audio_embedding", "unit-norm-embedding",
                          diags, renormalize=False)

    # shot.dialogue_refs resolve to lines belonging to that shot
    for i, shot in enumerate(shots):
        if not isinstance(shot, dict):
            continue
        sid = shot.get("shot_id")
        for ref in shot.get("dialogue_refs") or []:
            if ref not in line_ids:
                diags.append(Diagnostic("error", "dialogue-ref-resolves", f"$.shots[{i}].dialogue_refs",
                                        f"shot {sid} references missing dialogue line {ref!r}"))
            elif line_ids[ref] != sid:
                diags.append(Diagnostic("error", "dialogue-ref-resolves", f"$.shots[{i}].dialogue_refs",
                                        f"shot {sid} references line {ref!r} belonging to shot {line_ids[ref]}"))
    return diags


def _normalized(vec: list[float] | None) -> list[float] | None:
    if vec is None:
        return None
    norm = math.sqrt(sum(x * x for x in vec))
    if abs(norm - 1.0) <= UNIT_NORM_TOL or norm == 0:
        return list(vec)
    return [x / norm for x in vec]


def parse_manifest(data: dict) -> SourceManifest:
    """Build a validated SourceManifest from a raw document.

    Raises ManifestError carrying every diagnostic when any invariant fails;
    near-unit embeddings are renormalized and logged.
    """
    diags = inspect_manifest(data)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise ManifestError(errors)
    for d in diags:
        logger.warning("%s", d)

    shots = []
    for shot in data["shots"]:
        detections = [
            Detection(
                detection_id=det["detection_id"],
                shot_id=det["shot_id"],
                timestamp=float(det["timestamp"]),
                face_embedding=_normalized(det.get("face_embedding")),
                body_embedding=_normalized(det.get("body_embedding")),
                lip_activity=det.get("lip_activity"),
            )
            for det in shot.get("detections") or []
        ]
        shots.append(Shot(
            shot_id=shot["shot_id"],
            start=float(shot["start"]),
            end=float(shot["end"]),
            keyframe_embedding=_normalized(shot["keyframe_embedding"]),
            detections=detections,
            dialogue_refs=list(shot.get("dialogue_refs") or []),
        ))
    characters = [
        CharacterRecord(
            character_id=char["character_id"],
            name=char["name"],
            face_anchor_embeddings=[_normalized(v) for v in char.get("face_anchor_embeddings") or []],
            body_anchor_embeddings=[_normalized(v) for v in char.get("body_anchor_embeddings") or []],
            bio=char.get("bio"),
        )
        for char in data["characters"]
    ]
    dialogue = [
        DialogueLine(
            line_id=line["line_id"],
            shot_id=line["shot_id"],
            text=line.get("text", ""),
            start=float(line["start"]),
            end=float(line["end"]),
            audio_embedding=_normalized(line.get("audio_embedding")),
            ocr_confidence=float(line.get("ocr_confidence", 1.0)),
            speaker_id=line.get("speaker_id"),
        )
        for line in data["dialogue_track"]
    ]
    return SourceManifest(
        source_id=data["source_id"],
        title=data["title"],
        frame_rate=float(data["frame_rate"]),
        embedding_dim=data["embedding_dim"],
        shots=shots,
        characters=characters,
        dialogue_track=dialogue,
    )


def load_manifest(path) -> SourceManifest:
    """Load and validate one manifest file."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ManifestError([Diagnostic("error", "io", str(path), str(exc))]) from exc
    except json.JSONDecodeError as exc:
        raise ManifestError([Diagnostic("error", "json-syntax", str(path), str(exc))]) from exc
    return parse_manifest(data)


def manifest_to_dict(manifest: SourceManifest) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "source_id": manifest.source_id,
        "title": manifest.title,
        "frame_rate": manifest.frame_rate,
        "embedding_dim": manifest.embedding_dim,
        "shots": [
            {
                "shot_id": s.shot_id,
                "start": s.start,
                "end": s.end,
                "keyframe_embedding": s.keyframe_embedding,
                "detections": [
                    {
                        "detection_id": d.detection_id,
                        "shot_id": d.shot_id,
                        "timestamp": d.timestamp,
                        "face_embedding": d.face_embedding,
                        "body_embedding": d.body_embedding,
                        "lip_activity": d.lip_activity,
                    }
                    for d in s.detections
                ],
                "dialogue_refs": s.dialogue_refs,
            }
            for s in manifest.shots
        ],
        "characters": [
            {
                "character_id": c.character_id,
                "name": c.name,
                "face_anchor_embeddings": c.face_anchor_embeddings,
                "body_anchor_embeddings": c.body_anchor_embeddings,
                "bio": c.bio,
            }
            for c in manifest.characters
        ],
        "dialogue_track": [
            {
                "line_id": l.line_id,
                "shot_id": l.shot_id,
                "text": l.text,
                "start": l.start,
                "end": l.end,
                "audio_embedding": l.audio_embedding,
                "ocr_confidence": l.ocr_confidence,
                "speaker_id": l.speaker_id,
            }
            for l in manifest.dialogue_track
        ],
    }


def save_manifest(manifest: SourceManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(manifest), fh, indent=2)
        fh.write("\n")


def manifest_hash(manifest: SourceManifest) -> str:
    """Content hash used to key persisted narrative memory to its manifest."""
    canonical = json.dumps(manifest_to_dict(manifest), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# cross-source addressing


@dataclass(frozen=True, order=True)
class GlobalShotRef:
    """Totally ordered shot address: source insertion order first, then shot id."""

    source_order: int
    source_id: str
    shot_id: int

    @property
    def key(self) -> str:
        return f"{self.source_id}:{self.shot_id}"

    def __str__(self) -> str:
        return self.key


class SourceCollection:
    """Immutable-after-merge set of validated manifests keyed by source_id."""

    def __init__(self):
        self._sources: dict[str, SourceManifest] = {}

    def _add(self, manifest: SourceManifest) -> None:
        if manifest.source_id in self._sources:
            raise CineforgeError(f"duplicate source_id {manifest.source_id!r}")
        if self._sources:
            existing = next(iter(self._sources.values())).embedding_dim
            if manifest.embedding_dim != existing:
                raise CineforgeError(
                    f"embedding dimension mismatch: {manifest.source_id!r} declares "
                    f"{manifest.embedding_dim}, collection uses {existing}")
        self._sources[manifest.source_id] = manifest

    def __len__(self) -> int:
        return len(self._sources)

    def __contains__(self, source_id: str) -> bool:
        return source_id in self._sources

    def source_ids(self) -> list[str]:
        return list(self._sources)

    def manifests(self) -> list[SourceManifest]:
        return list(self._sources.values())

    def get(self, source_id: str) -> SourceManifest:
        if source_id not in self._sources:
            raise CineforgeError(f"unknown source {source_id!r}")
        return self._sources[source_id]

    def order_of(self, source_id: str) -> int:
        try:
            return list(self._sources).index(source_id)
        except ValueError:
            raise CineforgeError(f"unknown source {source_id!r}") from None

    def global_shot_key(self, source_id: str, shot_id: int) -> GlobalShotRef:
        """Stable totally ordered key for (source, shot); errors on unknown pairs."""
        manifest = self.get(source_id)
        manifest.shot_by_id(shot_id)  # raises KeyError on unknown shot
        return GlobalShotRef(self.order_of(source_id), source_id, shot_id)

    def parse_ref(self, key: str) -> GlobalShotRef:
        """Parse a "source_id:shot_id" key back into a resolved ref."""
        source_id, _, shot = key.rpartition(":")
        if not source_id or not shot.lstrip("-").isdigit():
            raise CineforgeError(f"malformed shot key {key!r}")
        return self.global_shot_key(source_id, int(shot))

    def shot(self, ref: GlobalShotRef) -> Shot:
        return self.get(ref.source_id).shot_by_id(ref.shot_id)


def merge_sources(manifests: list[SourceManifest]) -> SourceCollection:
    """Merge validated manifests into a collection; duplicate ids are rejected."""
    if not manifests:
        raise CineforgeError("cannot merge an empty manifest list")
    collection = SourceCollection()
    for manifest in manifests:
        collection._add(manifest)
    return collection
