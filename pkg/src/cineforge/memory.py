"""Hierarchical narrative memory: context-buffered shot summaries, event
grouping, story abstraction, character profiles, and grounding queries.

The four levels are built strictly bottom-up.  Summarization threads a
sliding buffer of the 10 preceding shots through one completion call per
shot; events are the contiguous ranges induced by a boundary provider;
story and profiles are abstracted from the event level.  The finished
memory is persisted as versioned JSON keyed by a content hash of the
manifest so later instructions reuse it without re-analysis.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import prompts
from .errors import CineforgeError, MemoryBuildError, UnknownCharacterError
from .identity import IdentityResult
from .manifest import SourceManifest, manifest_hash
from .providers import CompletionProvider, CompletionRequest, EventBoundaryProvider

MEMORY_SCHEMA_VERSION = "1"
BUFFER_SIZE = 10
ABSENT_PROFILE = "not present in analyzed footage"

LEVELS = ("story", "character", "event", "shot")


@dataclass
class ShotInfo:
    """Per-shot input record: what summarization sees for shot t."""

    shot_id: int
    start: float
    end: float
    characters: tuple[str, ...]
    dialogue: list[tuple[str | None, str]]  # (speaker name or None, text)
    keyframe_embedding: list[float]
    keyframe_ref: str

    def dialogue_digest(self) -> str:
        return " / ".join(f"{spk or 'unknown'}: {text}" for spk, text in self.dialogue)


@dataclass
class ContextBuffer:
    """Sliding window over the immediately preceding shots, capped at 10."""

    window: list[ShotInfo] = field(default_factory=list)
    size: int = BUFFER_SIZE

    def push(self, info: ShotInfo) -> None:
        self.window.append(info)
        if len(self.window) > self.size:
            self.window.pop(0)

    def check(self, shot_index: int) -> None:
        expected = min(shot_index, self.size)
        if len(self.window) != expected:
            raise CineforgeError(
                f"buffer holds {len(self.window)} records before shot {shot_index}, "
                f"expected {expected}")


@dataclass
class ShotSummary:
    shot_id: int
    text: str
    characters_present: list[str]
    dialogue_digest: str


@dataclass
class Event:
    event_id: int
    first_shot_id: int
    last_shot_id: int
    summary: str


@dataclass
class NarrativeMemory:
    source_id: str
    shot_summaries: list[ShotSummary]
    events: list[Event]
    story: str
    profiles: dict[str, str]
    manifest_hash: str = ""
    template_version: str = prompts.TEMPLATE_VERSION

    def summary_of(self, shot_id: int) -> ShotSummary:
        return self.shot_summaries[shot_id]


def shot_infos_from(manifest: SourceManifest, identity: IdentityResult) -> list[ShotInfo]:
    """Assemble the per-shot input records the summarizer consumes."""
    names = {c.character_id: c.name for c in manifest.characters}
    lines_by_shot: dict[int, list] = {}
    for line in identity.lines:
        lines_by_shot.setdefault(line.shot_id, []).append(line)
    infos = []
    for shot in manifest.shots:
        dialogue = [(names.get(l.speaker_id), l.text)
                    for l in sorted(lines_by_shot.get(shot.shot_id, []), key=lambda l: l.start)]
        infos.append(ShotInfo(
            shot_id=shot.shot_id,
            start=shot.start,
            end=shot.end,
            characters=identity.shot_characters.get(shot.shot_id, ()),
            dialogue=dialogue,
            keyframe_embedding=shot.keyframe_embedding,
            keyframe_ref=f"{manifest.source_id}:shot{shot.shot_id}:keyframe",
        ))
    return infos


def summarize_shot(info: ShotInfo, buffer: ContextBuffer,
                   completion: CompletionProvider) -> ShotSummary:
    """One completion call per shot; the prompt carries the current shot's
    characters, dialogue and visual ref plus the serialized buffer."""
    buffer.check(info.shot_id)
    chars = ", ".join(info.characters) if info.characters else "none"
    shot_block = (f"shot {info.shot_id} [{info.start:.2f}s-{info.end:.2f}s] "
                  f"visual={info.keyframe_ref} characters={chars} "
                  f"dialogue={info.dialogue_digest() or 'none'}")
    context_lines = [
        prompts.context_shot_line(prev.shot_id, prev.characters, prev.dialogue_digest(),
                                  prev.keyframe_ref)
        for prev in buffer.window
    ]
    request = CompletionRequest(prompts.SUMMARY_SYSTEM,
                                prompts.shot_summary_user(shot_block, context_lines))
    try:
        text = completion.complete(request).text
    except Exception as exc:
        raise MemoryBuildError("summarize_shot", info.shot_id, exc) from exc
    if not text.strip():
        raise MemoryBuildError("summarize_shot", info.shot_id, "empty provider response")
    return ShotSummary(info.shot_id, text, list(info.characters), info.dialogue_digest())


def group_events(summaries: list[ShotSummary], infos: list[ShotInfo],
                 boundary: EventBoundaryProvider,
                 completion: CompletionProvider) -> list[Event]:
    """Cut indices from the boundary provider induce the contiguous events;
    each event gets one completion call over its member summaries."""
    if len(summaries) != len(infos):
        raise CineforgeError("summaries must cover all shots")
    n = len(summaries)
    cuts = boundary.cuts(infos)
    seen = set()
    for cut in cuts:
        if not isinstance(cut, int) or not 1 <= cut <= n - 1:
            raise CineforgeError(f"boundary cut {cut!r} out of range 1..{n - 1}")
        if cut in seen:
            raise CineforgeError(f"duplicate boundary cut {cut}")
        seen.add(cut)
    bounds = [0] + sorted(seen) + [n]
    events = []
    for eid, (lo, hi) in enumerate(zip(bounds, bounds[1:])):
        member_texts = [summaries[i].text for i in range(lo, hi)]
        request = CompletionRequest(
            prompts.EVENT_SYSTEM,
            prompts.event_summary_user(summaries[lo].shot_id, summaries[hi - 1].shot_id,
                                       member_texts))
        try:
            text = completion.complete(request).text
        except Exception as exc:
            raise MemoryBuildError("group_events", eid, exc) from exc
        if not text.strip():
            raise MemoryBuildError("group_events", eid, "empty provider response")
        events.append(Event(eid, summaries[lo].shot_id, summaries[hi - 1].shot_id, text))
    return events


def abstract_story(events: list[Event], completion: CompletionProvider) -> str:
    if not events:
        raise CineforgeError("abstract_story requires at least one event")
    request = CompletionRequest(prompts.STORY_SYSTEM,
                                prompts.story_user([e.summary for e in events]))
    try:
        text = completion.complete(request).text
    except Exception as exc:
        raise MemoryBuildError("abstract_story", 0, exc) from exc
    if not text.strip():
        raise MemoryBuildError("abstract_story", 0, "empty provider response")
    return text


def build_profiles(events: list[Event], roster, summaries: list[ShotSummary],
                   completion: CompletionProvider) -> dict[str, str]:
    """One completion call per character, restricted to events whose member
    shots include them; absent characters get the fixed placeholder text."""
    if not roster:
        raise CineforgeError("build_profiles requires a non-empty roster")
    by_shot = {s.shot_id: set(s.characters_present) for s in summaries}
    profiles: dict[str, str] = {}
    failures = []
    for char in roster:
        relevant = [e for e in events
                    if any(char.character_id in by_shot.get(sid, set())
                           for sid in range(e.first_shot_id, e.last_shot_id + 1))]
        if not relevant:
            profiles[char.character_id] = ABSENT_PROFILE
            continue
        request = CompletionRequest(
            prompts.PROFILE_SYSTEM,
            prompts.profile_user(char.name, [e.summary for e in relevant]))
        try:
            profiles[char.character_id] = completion.complete(request).text
        except Exception as exc:
            failures.append((char.character_id, exc))
    if failures:
        detail = "; ".join(f"{cid}: {exc}" for cid, exc in failures)
        raise MemoryBuildError("build_profiles", [cid for cid, _ in failures], detail)
    return profiles


def build_memory(manifest: SourceManifest, identity: IdentityResult,
                 completion: CompletionProvider,
                 boundary: EventBoundaryProvider) -> NarrativeMemory:
    """Compose the full pipeline: sequential buffered summaries, event
    grouping, story abstraction and profiles."""
    infos = shot_infos_from(manifest, identity)
    buffer = ContextBuffer()
    summaries = []
    for info in infos:
        summaries.append(summarize_shot(info, buffer, completion))
        buffer.push(info)
    events = group_events(summaries, infos, boundary, completion)
    story = abstract_story(events, completion)
    profiles = build_profiles(events, manifest.characters, summaries, completion)
    memory = NarrativeMemory(manifest.source_id, summaries, events, story, profiles,
                             manifest_hash=manifest_hash(manifest))
    _check_memory(memory, len(manifest.shots))
    return memory


def _check_memory(memory: NarrativeMemory, shot_count: int) -> None:
    if len(memory.shot_summaries) != shot_count:
        raise CineforgeError("every shot needs exactly one summary")
    covered = []
    for event in memory.events:
        if not event.summary.strip():
            raise CineforgeError(f"event {event.event_id} has an empty summary")
        covered.extend(range(event.first_shot_id, event.last_shot_id + 1))
    if covered != list(range(shot_count)):
        raise CineforgeError("events must partition the shot index range")
    if not memory.story.strip():
        raise CineforgeError("story synopsis must be non-empty")


# ---------------------------------------------------------------------------
# grounding queries


@dataclass(frozen=True)
class QuerySpec:
    terms: tuple[str, ...] = ()
    characters: tuple[str, ...] = ()

    @classmethod
    def of(cls, terms=(), characters=()) -> "QuerySpec":
        return cls(tuple(terms), tuple(characters))


@dataclass(frozen=True)
class EvidenceRef:
    level: str
    source_id: str
    ref_id: str
    excerpt: str = ""

    @property
    def key(self) -> str:
        return f"{self.source_id}/{self.level}/{self.ref_id}"


def _contains_all(text: str, terms) -> bool:
    folded = text.casefold()
    return all(term.casefold() in folded for term in terms)


def query_memory(memory: NarrativeMemory, level: str, query: QuerySpec,
                 roster_names: dict[str, str] | None = None) -> list[EvidenceRef]:
    """Deterministic lookup over one memory level.

    Story: matches when any term occurs in the synopsis (vacuously when no
    terms are given).  Character: matches roster ids or names, case-folded.
    Event/shot: summary must contain every required term and (shot level and
    event level alike) the characters present must cover every required
    character id; required ids absent from the roster raise
    UnknownCharacterError.
    """
    if level not in LEVELS:
        raise CineforgeError(f"unknown memory level {level!r}")
    names = roster_names or {}

    if level == "story":
        folded = memory.story.casefold()
        if not query.terms or any(t.casefold() in folded for t in query.terms):
            return [EvidenceRef("story", memory.source_id, "story", memory.story)]
        return []

    if level == "character":
        matched = []
        for cid, profile in memory.profiles.items():
            labels = {cid.casefold(), names.get(cid, "").casefold()}
            if any(q.casefold() in labels for q in query.characters):
                matched.append(EvidenceRef("character", memory.source_id, cid, profile))
        matched.sort(key=lambda r: r.ref_id)
        return matched

    # event/shot levels require resolvable roster ids (names accepted, folded)
    resolve = {cid.casefold(): cid for cid in memory.profiles}
    resolve.update({name.casefold(): cid for cid, name in names.items() if name})
    required = set()
    for q in query.characters:
        cid = resolve.get(q.casefold())
        if cid is None:
            raise UnknownCharacterError(f"character {q!r} not in roster")
        required.add(cid)

    by_shot = {s.shot_id: set(s.characters_present) for s in memory.shot_summaries}
    if level == "shot":
        out = []
        for summary in memory.shot_summaries:
            if not _contains_all(summary.text, query.terms):
                continue
            if not required <= set(summary.characters_present):
                continue
            out.append(EvidenceRef("shot", memory.source_id, str(summary.shot_id), summary.text))
        return out

    out = []
    for event in memory.events:
        present = set()
        for sid in range(event.first_shot_id, event.last_shot_id + 1):
            present |= by_shot.get(sid, set())
        if _contains_all(event.summary, query.terms) and required <= present:
            out.append(EvidenceRef("event", memory.source_id, str(event.event_id), event.summary))
    return out


# ---------------------------------------------------------------------------
# persistence


def memory_to_dict(memory: NarrativeMemory) -> dict:
    return {
        "schema_version": MEMORY_SCHEMA_VERSION,
        "template_version": memory.template_version,
        "manifest_hash": memory.manifest_hash,
        "source_id": memory.source_id,
        "shot_summaries": [
            {
                "shot_id": s.shot_id,
                "text": s.text,
                "characters_present": s.characters_present,
                "dialogue_digest": s.dialogue_digest,
            }
            for s in memory.shot_summaries
        ],
        "events": [
            {
                "event_id": e.event_id,
                "first_shot_id": e.first_shot_id,
                "last_shot_id": e.last_shot_id,
                "summary": e.summary,
            }
            for e in memory.events
        ],
        "story": memory.story,
        "profiles": memory.profiles,
    }


def memory_from_dict(doc: dict) -> NarrativeMemory:
    if doc.get("schema_version") != MEMORY_SCHEMA_VERSION:
        raise CineforgeError(f"unsupported memory schema {doc.get('schema_version')!r}")
    return NarrativeMemory(
        source_id=doc["source_id"],
        shot_summaries=[ShotSummary(s["shot_id"], s["text"], list(s["characters_present"]),
                                    s["dialogue_digest"])
                        for s in doc["shot_summaries"]],
        events=[Event(e["event_id"], e["first_shot_id"], e["last_shot_id"], e["summary"])
                for e in doc["events"]],
        story=doc["story"],
        profiles=dict(doc["profiles"]),
        manifest_hash=doc.get("manifest_hash", ""),
        template_version=doc.get("template_version", prompts.TEMPLATE_VERSION),
    )


def save_memory(memory: NarrativeMemory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(memory_to_dict(memory), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_memory(path, expected_hash: str | None = None) -> NarrativeMemory:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    memory = memory_from_dict(doc)
    if expected_hash is not None and memory.manifest_hash != expected_hash:
        raise CineforgeError(
            f"persisted memory at {path} was built from a different manifest "
            f"(hash {memory.manifest_hash[:12]}... != {expected_hash[:12]}...)")
    return memory
