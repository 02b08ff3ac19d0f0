"""Character identity: trajectory linkage, anchor assignment, voiceprint clustering,
and speaker attribution for dialogue lines."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BindingConflictError, CineforgeError, IdentityError
from .manifest import CharacterRecord, Detection, DialogueLine, SourceManifest

logger = logging.getLogger(__name__)

DEFAULT_LINK_THRESHOLD = 0.75
DEFAULT_LIP_THRESHOLD = 0.5
DEFAULT_KMEANS_SEED = 0


def cosine(a, b) -> float:
    """Cosine similarity; tolerant of non-unit inputs (scale-free by definition)."""
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    return float(np.dot(va, vb) / denom)


def _embedding_of(det: Detection):
    """The detection's comparison embedding: face preferred, else body."""
    if det.face_embedding is not None:
        return det.face_embedding, "face"
    if det.body_embedding is not None:
        return det.body_embedding, "body"
    raise IdentityError(f"detection {det.detection_id!r} carries no embedding")


@dataclass
class Trajectory:
    trajectory_id: int
    detections: list[Detection]
    assigned_character: str | None = None
    assignment_score: float = 0.0

    @property
    def detection_ids(self) -> list[str]:
        return [d.detection_id for d in self.detections]

    def span(self) -> tuple[float, float]:
        return self.detections[0].timestamp, self.detections[-1].timestamp


@dataclass
class VoiceprintAnchor:
    character_id: str
    centroid: list[float]
    member_count: int


def build_trajectories(detections: list[Detection],
                       link_threshold: float = DEFAULT_LINK_THRESHOLD) -> list[Trajectory]:
    """Sequential single-linkage grouping of time-ordered detections.

    A detection joins the currently open trajectory when its embedding (face
    preferred, else body) has cosine >= link_threshold against the last
    member's embedding; otherwise it opens a new trajectory.  Every detection
    lands in exactly one trajectory; empty input yields empty output.
    """
    if not 0.0 < link_threshold < 1.0:
        raise CineforgeError(f"link_threshold must be in (0, 1), got {link_threshold}")
    ordered = sorted(detections, key=lambda d: (d.timestamp, d.detection_id))
    trajectories: list[Trajectory] = []
    for det in ordered:
        emb, _ = _embedding_of(det)
        if trajectories:
            last = trajectories[-1].detections[-1]
            last_emb, _ = _embedding_of(last)
            if cosine(emb, last_emb) >= link_threshold:
                trajectories[-1].detections.append(det)
                continue
        trajectories.append(Trajectory(trajectory_id=len(trajectories), detections=[det]))
    return trajectories


def assign_identity(trajectory: Trajectory,
                    characters: list[CharacterRecord]) -> tuple[str, float]:
    """Pick the character maximizing the summed anchor cosine over the trajectory.

    Each detection contributes the maximum cosine between its embedding and
    the character's anchors of the same modality (face vs face, body vs
    body); characters lacking that modality contribute nothing for that
    detection.  Exact ties break toward the lowest character_id.
    """
    if not characters:
        raise CineforgeError("assign_identity requires a non-empty character roster")
    totals = {c.character_id: 0.0 for c in characters}
    for det in trajectory.detections:
        emb, modality = _embedding_of(det)
        comparable = False
        for char in characters:
            anchors = (char.face_anchor_embeddings if modality == "face"
                       else char.body_anchor_embeddings)
            if not anchors:
                continue
            comparable = True
            totals[char.character_id] += max(cosine(emb, a) for a in anchors)
        if not comparable:
            raise IdentityError(
                f"no comparable embedding pair: detection {det.detection_id!r} is "
                f"{modality}-modality but no character has {modality} anchors")
    best = min(totals, key=lambda cid: (-totals[cid], cid))
    return best, totals[best]


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=points.dtype)
    centroids[0] = points[rng.integers(0, n)]
    for i in range(1, k):
        dist_sq = np.min(
            np.sum((points[:, None, :] - centroids[None, :i, :]) ** 2, axis=2), axis=1)
        total = dist_sq.sum()
        if total == 0.0:
            centroids[i] = points[rng.integers(0, n)]
            continue
        centroids[i] = points[rng.choice(n, p=dist_sq / total)]
    return centroids


def cluster_voiceprints(samples: list[tuple[str, list[float]]], k: int,
                        seed: int = DEFAULT_KMEANS_SEED,
                        max_iter: int = 100,
                        tol: float = 1e-6) -> list[VoiceprintAnchor]:
    """K-means (k-means++ init, fixed seed) over speaker audio samples, then
    majority-bind each centroid to a character.

    k must equal the number of distinct characters in the samples and every
    character must end up owning exactly one centroid; anything else is a
    binding conflict.  Centroids are renormalized to unit length.
    """
    if len(samples) < k:
        raise CineforgeError(f"{len(samples)} samples cannot form {k} clusters")
    char_ids = sorted({cid for cid, _ in samples})
    if k != len(char_ids):
        raise CineforgeError(
            f"k={k} must equal the number of distinct characters ({len(char_ids)})")

    points = np.asarray([vec for _, vec in samples], dtype=float)
    owners = [cid for cid, _ in samples]
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)

    labels = np.zeros(len(points), dtype=int)
    for _ in range(max_iter):
        dists = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
        labels = np.argmin(dists, axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its centroid
                worst = int(np.argmax(np.min(dists, axis=1)))
                new_centroids[j] = points[worst]
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break

    # majority binding; ties broken by higher mean cosine to the character's samples
    anchors: dict[str, VoiceprintAnchor] = {}
    for j in range(k):
        member_idx = [i for i in range(len(points)) if labels[i] == j]
        counts: dict[str, int] = {}
        for i in member_idx:
            counts[owners[i]] = counts.get(owners[i], 0) + 1
        top = max(counts.values())
        tied = sorted(cid for cid, n in counts.items() if n == top)
        if len(tied) > 1:
            def affinity(cid: str) -> float:
                own = [points[i] for i in range(len(points)) if owners[i] == cid]
                return float(np.mean([cosine(points[i], s) for i in member_idx for s in own]))
            tied.sort(key=lambda cid: (-affinity(cid), cid))
        winner = tied[0]
        if winner in anchors:
            raise BindingConflictError(
                f"character {winner!r} captured multiple clusters; "
                f"characters {sorted(set(char_ids) - set(anchors) - {winner})} left unbound")
        centroid = centroids[j]
        norm = float(np.linalg.norm(centroid))
        centroid = centroid / norm if norm > 0 else centroid
        anchors[winner] = VoiceprintAnchor(winner, centroid.tolist(), len(member_idx))
    missing = sorted(set(char_ids) - set(anchors))
    if missing:
        raise BindingConflictError(f"characters {missing} captured zero clusters")
    return [anchors[cid] for cid in char_ids]


def match_dialogue(lines: list[DialogueLine], trajectories: list[Trajectory],
                   voiceprints: list[VoiceprintAnchor],
                   lip_threshold: float = DEFAULT_LIP_THRESHOLD) -> list[DialogueLine]:
    """Attribute dialogue lines to speakers.

    Visual rule first: an identified trajectory with a detection inside the
    line's time span whose lip_activity clears the threshold claims the line.
    Otherwise the audio rule attributes by nearest voiceprint centroid.
    Undecidable lines pass through with speaker_id unset.
    """
    assigned = [t for t in trajectories if t.assigned_character is not None]
    out: list[DialogueLine] = []
    for line in lines:
        speaker = None
        best_lip = -1.0
        for traj in assigned:
            for det in traj.detections:
                if det.lip_activity is None or det.lip_activity < lip_threshold:
                    continue
                if line.start <= det.timestamp <= line.end and det.lip_activity > best_lip:
                    best_lip = det.lip_activity
                    speaker = traj.assigned_character
        if speaker is None and line.audio_embedding is not None and voiceprints:
            scored = sorted(
                ((cosine(line.audio_embedding, v.centroid), v.character_id) for v in voiceprints),
                key=lambda sc: (-sc[0], sc[1]))
            speaker = scored[0][1]
        out.append(replace(line, speaker_id=speaker) if speaker is not None else replace(line))
    return out


@dataclass
class IdentityResult:
    """Output of the full identity pass over one source."""

    trajectories: list[Trajectory]
    lines: list[DialogueLine]
    voiceprints: list[VoiceprintAnchor] = field(default_factory=list)
    shot_characters: dict[int, tuple[str, ...]] = field(default_factory=dict)


def analyze(manifest: SourceManifest,
            link_threshold: float = DEFAULT_LINK_THRESHOLD,
            lip_threshold: float = DEFAULT_LIP_THRESHOLD,
            kmeans_seed: int = DEFAULT_KMEANS_SEED) -> IdentityResult:
    """Run the whole identity pass: trajectories -> assignment -> voiceprints
    -> dialogue attribution -> per-shot character map.

    Trajectories with no comparable anchor modality are left unassigned
    rather than failing the pass; assign_identity itself still raises when
    called directly.
    """
    detections = [d for shot in manifest.shots for d in shot.detections]
    trajectories = build_trajectories(detections, link_threshold)
    for traj in trajectories:
        if not manifest.characters:
            break
        try:
            cid, score = assign_identity(traj, manifest.characters)
        except IdentityError as exc:
            logger.warning("trajectory %d left unassigned: %s", traj.trajectory_id, exc)
            continue
        traj.assigned_character = cid
        traj.assignment_score = score

    # visually confirmed lines seed the voiceprint anchors
    first_pass = match_dialogue(manifest.dialogue_track, trajectories, [], lip_threshold)
    samples = [(l.speaker_id, l.audio_embedding) for l in first_pass
               if l.speaker_id is not None and l.audio_embedding is not None]
    voiceprints: list[VoiceprintAnchor] = []
    if samples:
        k = len({cid for cid, _ in samples})
        voiceprints = cluster_voiceprints(samples, k, seed=kmeans_seed)
    lines = match_dialogue(manifest.dialogue_track, trajectories, voiceprints, lip_threshold)

    shot_map: dict[int, set[str]] = {shot.shot_id: set() for shot in manifest.shots}
    for traj in trajectories:
        if traj.assigned_character is None:
            continue
        for det in traj.detections:
            shot_map[det.shot_id].add(traj.assigned_character)
    shot_characters = {sid: tuple(sorted(chars)) for sid, chars in shot_map.items()}
    return IdentityResult(trajectories, lines, voiceprints, shot_characters)
