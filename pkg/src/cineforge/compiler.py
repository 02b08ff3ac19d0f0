"""The compose phase: lower a compiled script to an edit decision list,
select the four editing tools, and drive an external assembler subprocess.

The assembler is configured as a command template (one invocation per cut
plus a concat/overlay pass); the engine itself never links media libraries.
Dry-run mode expands the full command plan without executing anything and is
deterministic given (EDL, ops, template).
"""
from __future__ import annotations

import json
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .errors import CineforgeError, ProviderError, RenderError
from .manifest import SourceCollection
from .planning import CompiledScript, _parse_json
from .providers import CompletionProvider, CompletionRequest

EDL_SCHEMA_VERSION = "1"
TOOL_KINDS = ("music", "text", "cover", "transition")
DEFAULT_MUSIC_GAIN = 0.3


@dataclass
class EdlEntry:
    source_id: str
    in_s: float
    out_s: float

    @property
    def duration(self) -> float:
        return self.out_s - self.in_s


@dataclass
class Transition:
    position: int  # boundary before entry `position`, valid 1..len(entries)-1
    kind: str = "cut"  # cut | fade
    duration: float = 0.0


@dataclass
class Overlay:
    text: str
    start: float
    duration: float
    kind: str = "title"  # title | summary


@dataclass
class EDL:
    entries: list[EdlEntry]
    transitions: list[Transition] = field(default_factory=list)
    overlays: list[Overlay] = field(default_factory=list)
    music: dict | None = None  # {"track": path, "gain": float}
    cover: dict | None = None  # {"image": path, "display_duration": float}

    def timeline_length(self) -> float:
        """Sum of entry durations plus non-cut transition durations."""
        total = sum(e.duration for e in self.entries)
        total += sum(t.duration for t in self.transitions if t.kind != "cut")
        return total


@dataclass
class EditOp:
    kind: str
    parameters: dict


@dataclass
class RenderedVideo:
    path: str | None
    duration: float
    commands: list[list[str]]


def compile_edl(script: CompiledScript, sources: SourceCollection) -> EDL:
    """One entry per script shot in script order; hard cuts by default."""
    if not script.entries:
        raise CineforgeError("cannot compile an empty script")
    entries = []
    for ref, _stage in script.entries:
        shot = sources.shot(ref)  # raises on unresolvable refs
        entries.append(EdlEntry(ref.source_id, shot.start, shot.end))
    edl = EDL(entries=entries)
    _check_edl(edl)
    return edl


def _check_edl(edl: EDL) -> None:
    for i, entry in enumerate(edl.entries):
        if entry.in_s >= entry.out_s:
            raise CineforgeError(f"EDL entry {i}: in {entry.in_s} >= out {entry.out_s}")
    for t in edl.transitions:
        if not 1 <= t.position <= len(edl.entries) - 1:
            raise CineforgeError(f"transition position {t.position} invalid for "
                                 f"{len(edl.entries)} entries")
        if t.kind not in ("cut", "fade"):
            raise CineforgeError(f"unknown transition kind {t.kind!r}")


def apply_ops(edl: EDL, ops: list[EditOp]) -> EDL:
    """Fold selected edit operations into the EDL."""
    for op in ops:
        p = op.parameters
        if op.kind == "transition":
            edl.transitions.append(Transition(int(p["position"]),
                                              p.get("transition", "fade"),
                                              float(p.get("duration", 0.5))))
        elif op.kind == "text":
            edl.overlays.append(Overlay(str(p.get("text", "")),
                                        float(p.get("start", 0.0)),
                                        float(p.get("duration", 3.0)),
                                        p.get("style", "title")))
        elif op.kind == "music":
            edl.music = {"track": p.get("track", ""),
                         "gain": float(p.get("gain", DEFAULT_MUSIC_GAIN))}
        elif op.kind == "cover":
            edl.cover = {"image": p.get("image", ""),
                         "display_duration": float(p.get("display_duration", 2.0))}
        else:
            raise CineforgeError(f"unknown edit op kind {op.kind!r}")
    _check_edl(edl)
    return edl


def select_tools(instruction, script: CompiledScript,
                 completion: CompletionProvider) -> list[EditOp]:
    """Fill tool parameters for exactly the requested operations via one
    structured completion call; an unknown kind gets one retry."""
    requested = list(instruction.editing_operations)
    if not requested:
        return []
    digest = " -> ".join(ref.key for ref, _ in script.entries)
    request = CompletionRequest(prompts.TOOLS_SYSTEM,
                                prompts.tools_user(instruction.raw_text, requested, digest))
    requested_kinds = [r.kind for r in requested]
    last_error = None
    for attempt in range(2):
        text = completion.complete(request).text
        try:
            doc = _parse_json(text)
            ops = [EditOp(str(o["kind"]), {k: v for k, v in o.items() if k != "kind"})
                   for o in doc["operations"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProviderError(f"tool selection response unusable: {exc}") from exc
        bad = [op.kind for op in ops if op.kind not in TOOL_KINDS]
        if not bad and sorted(op.kind for op in ops) == sorted(requested_kinds):
            return ops
        last_error = (f"tool kinds {sorted(op.kind for op in ops)} do not cover the "
                      f"requested {sorted(requested_kinds)}"
                      if not bad else f"unknown tool kind(s) {bad}")
        request = CompletionRequest(
            prompts.TOOLS_SYSTEM,
            prompts.tools_user(instruction.raw_text, requested, digest)
            + f"\nYour previous reply was rejected: {last_error}. "
              f"Emit exactly one operation per requested kind.")
    raise ProviderError(f"tool selection failed: {last_error}")


def resolve_assets(ops: list[EditOp], asset_dir) -> list[EditOp]:
    """Resolve mood/tag references in music and cover ops against the asset
    directory's index file; explicit paths pass through untouched.

    The index lives at <asset_dir>/index.json:
    {"music": {"<tag>": "relative/path"}, "covers": {"<tag>": "relative/path"}}
    """
    needs_index = any(op.kind == "music" and not op.parameters.get("track")
                      or op.kind == "cover" and not op.parameters.get("image")
                      for op in ops)
    if not needs_index:
        return ops
    index_path = Path(asset_dir) / "index.json"
    if not index_path.is_file():
        raise CineforgeError(f"asset index not found: {index_path}")
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)
    resolved = []
    for op in ops:
        params = dict(op.parameters)
        if op.kind == "music" and not params.get("track"):
            tag = params.get("mood", "")
            tracks = index.get("music", {})
            if tag not in tracks:
                raise CineforgeError(f"no music asset tagged {tag!r} in {index_path}")
            params["track"] = str(Path(asset_dir) / tracks[tag])
        elif op.kind == "cover" and not params.get("image"):
            tag = params.get("tag", "")
            covers = index.get("covers", {})
            if tag not in covers:
                raise CineforgeError(f"no cover asset tagged {tag!r} in {index_path}")
            params["image"] = str(Path(asset_dir) / covers[tag])
        resolved.append(EditOp(op.kind, params))
    return resolved


# ---------------------------------------------------------------------------
# rendering


@dataclass
class RendererCommandTemplate:
    """Argv templates with {placeholders}; see docs/renderer.md.

    extract: per-entry cut ({input}, {start}, {end}, {output})
    concat:  assembly pass ({plan}, {output})
    probe:   duration probe ({input}), printing JSON {"duration": seconds}
    """

    extract: list[str]
    concat: list[str]
    probe: list[str]


def reference_template() -> RendererCommandTemplate:
    """Template for the bundled OpenCV assembler (python -m cineforge.assembler)."""
    py = sys.executable
    return RendererCommandTemplate(
        extract=[py, "-m", "cineforge.assembler", "extract", "--input", "{input}",
                 "--start", "{start}", "--end", "{end}", "--output", "{output}"],
        concat=[py, "-m", "cineforge.assembler", "concat", "--plan", "{plan}",
                "--output", "{output}"],
        probe=[py, "-m", "cineforge.assembler", "probe", "--input", "{input}"],
    )


def ffmpeg_template() -> RendererCommandTemplate:
    """Classic ffmpeg/ffprobe invocation for hosts that have them installed."""
    return RendererCommandTemplate(
        extract=["ffmpeg", "-y", "-ss", "{start}", "-to", "{end}", "-i", "{input}",
                 "-c", "copy", "{output}"],
        concat=["ffmpeg", "-y", "-f", "concat", "-safe", "0", "-i", "{plan}",
                "-c", "copy", "{output}"],
        probe=["ffprobe", "-v", "error", "-show_entries", "format=duration",
               "-print_format", "json", "{input}"],
    )


def _expand(template: list[str], **fields) -> list[str]:
    return [part.format(**fields) for part in template]


def _assembly_plan(edl: EDL, segment_paths: list[str]) -> dict:
    return {
        "schema_version": EDL_SCHEMA_VERSION,
        "segments": segment_paths,
        "transitions": [{"position": t.position, "kind": t.kind, "duration": t.duration}
                        for t in edl.transitions],
        "overlays": [{"text": o.text, "start": o.start, "duration": o.duration,
                      "kind": o.kind} for o in edl.overlays],
        "music": edl.music,
        "cover": edl.cover,
    }


def render(edl: EDL, ops: list[EditOp], media_root, template: RendererCommandTemplate,
           out_dir, dry_run: bool = False, media_ext: str = ".mp4",
           stderr_sink=None) -> RenderedVideo:
    """Expand the template into one extract per entry plus one concat pass.

    All paths are derived deterministically under out_dir.  With dry_run the
    full command plan is returned unexecuted; otherwise the commands run as
    subprocesses and the output is probed (duration must land within 0.5 s
    of the EDL timeline, checked by callers/tests rather than enforced here).
    """
    media_root = Path(media_root)
    out_dir = Path(out_dir)
    for entry in edl.entries:
        media = media_root / f"{entry.source_id}{media_ext}"
        if not dry_run and not media.is_file():
            raise RenderError(f"missing media for source {entry.source_id!r}: {media}")

    segment_paths = [str(out_dir / f"segment_{i:03d}{media_ext}")
                     for i in range(len(edl.entries))]
    final_path = str(out_dir / f"final{media_ext}")
    plan_path = str(out_dir / "assembly_plan.json")

    commands = []
    for entry, seg in zip(edl.entries, segment_paths):
        commands.append(_expand(template.extract,
                                input=str(media_root / f"{entry.source_id}{media_ext}"),
                                start=f"{entry.in_s:.3f}", end=f"{entry.out_s:.3f}",
                                output=seg))
    commands.append(_expand(template.concat, plan=plan_path, output=final_path))

    if dry_run:
        return RenderedVideo(path=None, duration=edl.timeline_length(), commands=commands)

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(plan_path, "w", encoding="utf-8") as fh:
        json.dump(_assembly_plan(edl, segment_paths), fh, indent=2)
    for cmd in commands:
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            if stderr_sink is not None:
                stderr_sink(cmd, proc.stderr)
            raise RenderError(f"assembler exited {proc.returncode}: {' '.join(cmd)}\n"
                              f"{proc.stderr.strip()}")
    probe_cmd = _expand(template.probe, input=final_path)
    proc = subprocess.run(probe_cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        if stderr_sink is not None:
            stderr_sink(probe_cmd, proc.stderr)
        raise RenderError(f"probe exited {proc.returncode}: {proc.stderr.strip()}")
    try:
        probed = json.loads(proc.stdout)
        duration = float(probed.get("duration")
                         or probed.get("format", {}).get("duration"))
    except (ValueError, TypeError) as exc:
        raise RenderError(f"unparsable probe output: {proc.stdout!r}") from exc
    return RenderedVideo(path=final_path, duration=duration, commands=commands)


# ---------------------------------------------------------------------------
# serialization


def edl_to_dict(edl: EDL) -> dict:
    return {
        "schema_version": EDL_SCHEMA_VERSION,
        "entries": [{"source_id": e.source_id, "in": e.in_s, "out": e.out_s}
                    for e in edl.entries],
        "transitions": [{"position": t.position, "kind": t.kind, "duration": t.duration}
                        for t in edl.transitions],
        "overlays": [{"text": o.text, "start": o.start, "duration": o.duration,
                      "kind": o.kind} for o in edl.overlays],
        "music": edl.music,
        "cover": edl.cover,
    }


def edl_from_dict(doc: dict) -> EDL:
    if doc.get("schema_version") != EDL_SCHEMA_VERSION:
        raise CineforgeError(f"unsupported EDL schema {doc.get('schema_version')!r}")
    edl = EDL(
        entries=[EdlEntry(e["source_id"], float(e["in"]), float(e["out"]))
                 for e in doc["entries"]],
        transitions=[Transition(t["position"], t["kind"], float(t["duration"]))
                     for t in doc.get("transitions", [])],
        overlays=[Overlay(o["text"], float(o["start"]), float(o["duration"]), o["kind"])
                  for o in doc.get("overlays", [])],
        music=doc.get("music"),
        cover=doc.get("cover"),
    )
    _check_edl(edl)
    return edl


def edl_to_csv(edl: EDL) -> str:
    """Flat cut-list export: index, source, in, out, duration."""
    lines = ["index,source_id,in,out,duration"]
    for i, e in enumerate(edl.entries):
        lines.append(f"{i},{e.source_id},{e.in_s:.3f},{e.out_s:.3f},{e.duration:.3f}")
    return "\n".join(lines) + "\n"
