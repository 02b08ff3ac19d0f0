from __future__ import annotations

import math
import random

import numpy as np
import pytest

from cineforge.errors import BindingConflictError, CineforgeError, IdentityError
from cineforge.identity import (Trajectory, assign_identity, build_trajectories,
                                cluster_voiceprints, cosine, match_dialogue)
from cineforge.manifest import CharacterRecord, Detection, DialogueLine


def det(i, ts, face=None, body=None, lip=None):
    return Detection(f"d{i}", 0, ts, face, body, lip)


def norm(vec):
    arr = np.asarray(vec, dtype=float)
    return (arr / np.linalg.norm(arr)).tolist()


def random_unit(rng, dim):
    vec = np.array([rng.gauss(0, 1) for _ in range(dim)])
    return (vec / np.linalg.norm(vec)).tolist()


# ---------------------------------------------------------------------------
# trajectory linkage


def linkage_oracle(detections, threshold):
    """Naive replay of the sequential single-linkage rule."""
    ordered = sorted(detections, key=lambda d: (d.timestamp, d.detection_id))
    groups = []
    for d in ordered:
        emb = d.face_embedding if d.face_embedding is not None else d.body_embedding
        if groups:
            last = groups[-1][-1]
            last_emb = (last.face_embedding if last.face_embedding is not None
                        else last.body_embedding)
            if cosine(emb, last_emb) >= threshold:
                groups[-1].append(d)
                continue
        groups.append([d])
    return [[d.detection_id for d in g] for g in groups]


def test_all_similar_forms_one_trajectory():
    base = norm([1.0, 0.1, 0.0])
    dets = [det(i, float(i), face=norm([1.0, 0.1 + 0.001 * i, 0.0])) for i in range(4)]
    trajectories = build_trajectories(dets, 0.8)
    assert len(trajectories) == 1
    assert trajectories[0].detection_ids == ["d0", "d1", "d2", "d3"]


def test_orthogonal_alternation_splits_every_run():
    a, b = [1.0, 0.0], [0.0, 1.0]
    dets = [det(i, float(i), face=(a if i % 2 == 0 else b)) for i in range(6)]
    trajectories = build_trajectories(dets, 0.8)
    assert len(trajectories) == 6
    assert all(len(t.detections) == 1 for t in trajectories)


def test_linkage_matches_naive_oracle():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randrange(0, 25)
        dets = []
        for i in range(n):
            if rng.random() < 0.7:
                dets.append(det(i, rng.uniform(0, 50), face=random_unit(rng, 6)))
            else:
                dets.append(det(i, rng.uniform(0, 50), body=random_unit(rng, 6)))
        got = [t.detection_ids for t in build_trajectories(dets, 0.7)]
        assert got == linkage_oracle(dets, 0.7)


def test_empty_input_and_bad_threshold():
    assert build_trajectories([], 0.5) == []
    with pytest.raises(CineforgeError):
        build_trajectories([], 1.5)


# ---------------------------------------------------------------------------
# identity assignment (anchor argmax)


def chars_2d():
    return [CharacterRecord("a", "A", face_anchor_embeddings=[[1.0, 0.0]]),
            CharacterRecord("b", "B", face_anchor_embeddings=[[0.0, 1.0]])]


def test_worked_two_character_example():
    traj = Trajectory(0, [det(0, 0.0, face=norm([0.9, 0.1])),
                          det(1, 1.0, face=norm([0.8, 0.2]))])
    winner, score = assign_identity(traj, chars_2d())
    assert winner == "a"
    # independent arithmetic: sum of the two cosines against each anchor
    expected_a = 0.9 / math.hypot(0.9, 0.1) + 0.8 / math.hypot(0.8, 0.2)
    assert score == pytest.approx(expected_a, abs=1e-9)
    assert expected_a == pytest.approx(1.964, abs=1e-3)


def test_exact_anchor_match_scores_one():
    traj = Trajectory(0, [det(0, 0.0, face=[0.0, 1.0])])
    winner, score = assign_identity(traj, chars_2d())
    assert winner == "b"
    assert score == pytest.approx(1.0)


def assignment_oracle(traj, characters):
    """Exhaustive scoring over every character, straight from the formula."""
    best = None
    for char in characters:
        total = 0.0
        for d in traj.detections:
            if d.face_embedding is not None:
                emb, anchors = d.face_embedding, char.face_anchor_embeddings
            else:
                emb, anchors = d.body_embedding, char.body_anchor_embeddings
            if anchors:
                total += max(cosine(emb, a) for a in anchors)
        if best is None or total > best[1] or (total == best[1]
                                               and char.character_id < best[0]):
            best = (char.character_id, total)
    return best


def random_instance(rng, dim=5):
    n_chars = rng.randrange(1, 11)
    characters = []
    for c in range(n_chars):
        characters.append(CharacterRecord(
            f"c{c:02d}", f"C{c}",
            face_anchor_embeddings=[random_unit(rng, dim)
                                    for _ in range(rng.randrange(1, 3))],
            body_anchor_embeddings=[random_unit(rng, dim)
                                    for _ in range(rng.randrange(1, 3))]))
    dets = []
    for i in range(rng.randrange(1, 21)):
        if rng.random() < 0.5:
            dets.append(det(i, float(i), face=random_unit(rng, dim)))
        else:
            dets.append(det(i, float(i), body=random_unit(rng, dim)))
    return Trajectory(0, dets), characters


def test_assignment_matches_exhaustive_oracle():
    rng = random.Random(17)
    for _ in range(100):
        traj, characters = random_instance(rng)
        assert assign_identity(traj, characters) == assignment_oracle(traj, characters)


def test_assignment_invariant_under_rescaling():
    rng = random.Random(23)
    for _ in range(50):
        traj, characters = random_instance(rng)
        winner, _ = assign_identity(traj, characters)
        scale = rng.uniform(0.01, 100.0)
        scaled = Trajectory(0, [
            Detection(d.detection_id, d.shot_id, d.timestamp,
                      [x * scale for x in d.face_embedding] if d.face_embedding else None,
                      [x * scale for x in d.body_embedding] if d.body_embedding else None,
                      d.lip_activity)
            for d in traj.detections])
        assert assign_identity(scaled, characters)[0] == winner


def test_tie_breaks_to_lowest_character_id():
    characters = [CharacterRecord("zz", "Z", face_anchor_embeddings=[[1.0, 0.0]]),
                  CharacterRecord("aa", "A", face_anchor_embeddings=[[1.0, 0.0]])]
    traj = Trajectory(0, [det(0, 0.0, face=[1.0, 0.0])])
    assert assign_identity(traj, characters)[0] == "aa"


def test_no_comparable_modality_errors():
    characters = [CharacterRecord("a", "A", face_anchor_embeddings=[[1.0, 0.0]])]
    traj = Trajectory(0, [det(0, 0.0, body=[1.0, 0.0])])
    with pytest.raises(IdentityError, match="no comparable embedding pair"):
        assign_identity(traj, characters)


def test_empty_roster_rejected():
    traj = Trajectory(0, [det(0, 0.0, face=[1.0, 0.0])])
    with pytest.raises(CineforgeError):
        assign_identity(traj, [])


# ---------------------------------------------------------------------------
# voiceprint clustering


def separable_samples(rng, dim=6, per_char=20, sigma=0.01):
    means = {"a": np.eye(dim)[0], "b": np.eye(dim)[1]}
    samples = []
    for cid, mean in means.items():
        for _ in range(per_char):
            vec = mean + rng.normal(0, sigma, dim)
            samples.append((cid, (vec / np.linalg.norm(vec)).tolist()))
    return samples, means


def test_separable_clusters_bind_correctly():
    rng = np.random.default_rng(5)
    samples, means = separable_samples(rng)
    anchors = cluster_voiceprints(samples, k=2, seed=0)
    assert [a.character_id for a in anchors] == ["a", "b"]
    for anchor in anchors:
        target = means[anchor.character_id]
        assert np.linalg.norm(np.asarray(anchor.centroid) - target) < 0.05
        assert anchor.member_count == 20


def test_kmeans_deterministic_bitwise():
    rng = np.random.default_rng(9)
    samples, _ = separable_samples(rng)
    first = cluster_voiceprints(samples, k=2, seed=3)
    second = cluster_voiceprints(samples, k=2, seed=3)
    assert [a.centroid for a in first] == [a.centroid for a in second]


def test_single_sample_is_fixed_point():
    sample = norm([0.3, 0.4, 0.5])
    anchors = cluster_voiceprints([("solo", sample)], k=1)
    assert anchors[0].character_id == "solo"
    assert anchors[0].centroid == pytest.approx(sample)
    assert anchors[0].member_count == 1


def test_more_clusters_than_samples_rejected():
    with pytest.raises(CineforgeError):
        cluster_voiceprints([("a", [1.0, 0.0]), ("b", [0.0, 1.0])], k=3)


def test_k_must_match_character_count():
    with pytest.raises(CineforgeError, match="distinct characters"):
        cluster_voiceprints([("a", [1.0, 0.0]), ("a", [0.0, 1.0])], k=2)


def test_binding_conflict_reported():
    # two characters whose samples overlap entirely: one character will
    # capture both clusters or neither cleanly
    samples = [("a", norm([1.0, 0.01])), ("a", norm([1.0, -0.01])),
               ("a", norm([0.01, 1.0])),
               ("b", norm([1.0, 0.02]))]
    with pytest.raises(BindingConflictError):
        cluster_voiceprints(samples, k=2, seed=0)


# ---------------------------------------------------------------------------
# dialogue attribution


def line(i, start, end, audio=None):
    return DialogueLine(f"l{i}", 0, f"line {i}", start, end, audio_embedding=audio)


def assigned_traj(tid, cid, detections):
    return Trajectory(tid, detections, assigned_character=cid, assignment_score=1.0)


def test_visual_rule_attributes_overlapping_speaker():
    traj = assigned_traj(0, "a", [det(0, 1.0, face=[1.0, 0.0], lip=0.9)])
    out = match_dialogue([line(0, 0.5, 2.0)], [traj], [], lip_threshold=0.5)
    assert out[0].speaker_id == "a"


def test_audio_rule_for_offscreen_lines():
    from cineforge.identity import VoiceprintAnchor
    prints = [VoiceprintAnchor("a", [1.0, 0.0], 2), VoiceprintAnchor("b", [0.0, 1.0], 2)]
    out = match_dialogue([line(0, 0.0, 1.0, audio=[0.0, 1.0])], [], prints, 0.5)
    assert out[0].speaker_id == "b"


def test_undecidable_line_left_unset():
    out = match_dialogue([line(0, 0.0, 1.0)], [], [], 0.5)
    assert out[0].speaker_id is None


def test_visual_rule_precedes_audio_rule():
    from cineforge.identity import VoiceprintAnchor
    traj = assigned_traj(0, "visual", [det(0, 0.5, face=[1.0, 0.0], lip=0.8)])
    prints = [VoiceprintAnchor("audio", [0.0, 1.0], 1)]
    out = match_dialogue([line(0, 0.0, 1.0, audio=[0.0, 1.0])], [traj], prints, 0.5)
    assert out[0].speaker_id == "visual"


def test_low_lip_activity_falls_through_to_audio():
    from cineforge.identity import VoiceprintAnchor
    traj = assigned_traj(0, "visual", [det(0, 0.5, face=[1.0, 0.0], lip=0.2)])
    prints = [VoiceprintAnchor("audio", [0.0, 1.0], 1)]
    out = match_dialogue([line(0, 0.0, 1.0, audio=[0.0, 1.0])], [traj], prints, 0.5)
    assert out[0].speaker_id == "audio"


def test_never_attributes_outside_roster():
    rng = random.Random(31)
    roster = {"a", "b", "c"}
    from cineforge.identity import VoiceprintAnchor
    prints = [VoiceprintAnchor(cid, random_unit(rng, 4), 1) for cid in sorted(roster)]
    for _ in range(50):
        trajectories = [assigned_traj(i, rng.choice(sorted(roster)),
                                      [det(i * 10 + j, rng.uniform(0, 10),
                                           face=random_unit(rng, 4),
                                           lip=rng.random())
                                       for j in range(rng.randrange(1, 4))])
                        for i in range(rng.randrange(0, 3))]
        lines = [line(i, s := rng.uniform(0, 9), s + 1,
                      audio=random_unit(rng, 4) if rng.random() < 0.7 else None)
                 for i in range(5)]
        for out in match_dialogue(lines, trajectories, prints, 0.5):
            assert out.speaker_id is None or out.speaker_id in roster


def test_fixture_attribution(shaw_identity):
    by_id = {l.line_id: l.speaker_id for l in shaw_identity.lines}
    assert by_id == {"d0": "andy", "d1": "red", "d2": "red", "d3": "warden",
                     "d4": "red", "d5": "andy", "d6": None}
