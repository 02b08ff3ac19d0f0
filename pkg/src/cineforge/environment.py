"""The compilation environment: instruction parsing, agent recruitment, the
append-only session log with checkpoints, and end-to-end session execution.

Every provider exchange, proposal, grounding verdict, integration, tool call
and error lands in the log, which is the single source of truth for session
state: resume() reconstructs any prior compilation state from a checkpoint
and skips stages whose outputs are already contained in the log prefix.
run_session() is total — every failure normalizes into a SessionOutcome.
"""
from __future__ import annotations

import json
import logging
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from . import compiler, identity as identity_mod, memory as memory_mod, planning, prompts
from .errors import CineforgeError, ProviderError, SessionLogError
from .manifest import SourceCollection, manifest_hash
from .memory import EvidenceRef
from .planning import CompiledScript, PlanningContext, Rejection
from .providers import (CompletionProvider, CompletionRequest, CompletionResponse,
                        ProviderBundle, ReplayCompletionProvider)

logger = logging.getLogger(__name__)

LOG_FORMAT_VERSION = "1"
SENDERS = ("manager", "script", "director", "orchestrator", "editor", "provider")
KINDS = ("proposal", "grounding", "integration", "tool_call",
         "provider_request", "provider_response", "error", "checkpoint")
TEMPORAL_KINDS = ("chronological", "non_linear", "extractive")
TARGET_KINDS = ("character", "event", "theme")
DURATION_TOLERANCE = 2.0

CHECKPOINT_POST_MEMORY = "post-memory"
CHECKPOINT_POST_PLAN = "post-plan"
CHECKPOINT_FINAL = "final"


# ---------------------------------------------------------------------------
# instruction


@dataclass(frozen=True)
class TargetDescriptor:
    kind: str  # character | event | theme
    value: str


@dataclass(frozen=True)
class TemporalRequirement:
    kind: str  # chronological | non_linear | extractive
    duration_limit: float | None = None


@dataclass(frozen=True)
class EditRequest:
    kind: str  # music | text | cover | transition
    params: str = ""


@dataclass(frozen=True)
class Instruction:
    raw_text: str
    source_selection: tuple[str, ...]
    target_content: tuple[TargetDescriptor, ...]
    temporal_requirement: TemporalRequirement
    editing_operations: tuple[EditRequest, ...]


def instruction_to_dict(instr: Instruction) -> dict:
    return {
        "raw_text": instr.raw_text,
        "source_selection": list(instr.source_selection),
        "target_content": [{"type": t.kind, "value": t.value} for t in instr.target_content],
        "temporal_requirement": {
            "kind": instr.temporal_requirement.kind,
            "duration_limit": instr.temporal_requirement.duration_limit,
        },
        "editing_operations": [{"kind": e.kind, "params": e.params}
                               for e in instr.editing_operations],
    }


def instruction_from_dict(doc: dict) -> Instruction:
    return Instruction(
        raw_text=doc["raw_text"],
        source_selection=tuple(doc["source_selection"]),
        target_content=tuple(TargetDescriptor(t["type"], t["value"])
                             for t in doc["target_content"]),
        temporal_requirement=TemporalRequirement(
            doc["temporal_requirement"]["kind"],
            doc["temporal_requirement"].get("duration_limit")),
        editing_operations=tuple(EditRequest(e["kind"], e.get("params", ""))
                                 for e in doc["editing_operations"]),
    )


def _build_instruction(text: str, doc: dict, catalog: list[tuple[str, str]]) -> Instruction:
    by_title = {title.casefold(): sid for sid, title in catalog}
    by_id = {sid.casefold(): sid for sid, _ in catalog}
    sources = []
    for name in doc["source_selection"]:
        name = str(name)
        resolved = by_title.get(name.casefold()) or by_id.get(name.casefold())
        sources.append(resolved if resolved else name)  # unmatched kept verbatim
    if not sources:
        raise ValueError("source_selection must be non-empty")
    targets = []
    for t in doc.get("target_content", []):
        if t.get("type") not in TARGET_KINDS:
            raise ValueError(f"unknown target type {t.get('type')!r}")
        targets.append(TargetDescriptor(t["type"], str(t.get("value", ""))))
    temporal = doc["temporal_requirement"]
    if temporal.get("kind") not in TEMPORAL_KINDS:
        raise ValueError(f"unknown temporal kind {temporal.get('kind')!r}")
    limit = temporal.get("duration_limit")
    ops = []
    for op in doc.get("editing_operations", []):
        if op.get("kind") not in compiler.TOOL_KINDS:
            raise ValueError(f"unknown editing operation kind {op.get('kind')!r}")
        ops.append(EditRequest(op["kind"], str(op.get("params", ""))))
    return Instruction(
        raw_text=text,
        source_selection=tuple(sources),
        target_content=tuple(targets),
        temporal_requirement=TemporalRequirement(temporal["kind"],
                                                 float(limit) if limit is not None else None),
        editing_operations=tuple(ops),
    )


def parse_instruction(text: str, catalog: list[tuple[str, str]],
                      completion: CompletionProvider) -> Instruction:
    """One structured completion call mapping free text onto the four
    instruction components; source titles resolve case-insensitively against
    the catalog and unmatched titles are kept verbatim for grounding to
    reject later."""
    if not text.strip():
        raise CineforgeError("instruction text is empty")
    if not catalog:
        raise CineforgeError("source catalog is empty")
    request = CompletionRequest(prompts.PARSE_SYSTEM, prompts.parse_user(text, catalog))
    last_error = None
    for attempt in range(2):
        reply = completion.complete(request).text
        try:
            return _build_instruction(text, planning._parse_json(reply), catalog)
        except (ValueError, KeyError, TypeError) as exc:
            last_error = exc
            request = CompletionRequest(
                prompts.PARSE_SYSTEM,
                prompts.parse_user(text, catalog)
                + f"\nYour previous reply was unusable ({exc}). Reply with valid JSON.")
    raise ProviderError(f"instruction parsing failed: {last_error}")


def recruit(instruction: Instruction, render: bool = True,
            resumed_post_plan: bool = False) -> tuple[str, ...]:
    """Specialist roster for this session: script/director/orchestrator always,
    editor only when rendering is requested, script omitted when resuming past
    the planning stage (memory is reused)."""
    roster = [] if resumed_post_plan else ["script"]
    roster += ["director", "orchestrator"]
    if render:
        roster.append("editor")
    return tuple(roster)


# ---------------------------------------------------------------------------
# session log


@dataclass
class Message:
    seq: int
    timestamp: float
    sender: str
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "timestamp": self.timestamp, "sender": self.sender,
                "kind": self.kind, "payload": self.payload}


class SessionLog:
    """Append-only, checkpointed message history, persisted as NDJSON."""

    def __init__(self, session_id: str | None = None, path=None, durable: bool = False,
                 clock=None):
        self.session_id = session_id or uuid.uuid4().hex[:12]
        self.messages: list[Message] = []
        self.checkpoints: dict[str, int] = {}
        self.path = Path(path) if path else None
        self.durable = durable
        self._clock = clock or time.time
        self._fh = None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")

    @property
    def last_seq(self) -> int:
        return self.messages[-1].seq if self.messages else 0

    def append(self, message: Message) -> "SessionLog":
        if message.seq != self.last_seq + 1:
            raise SessionLogError(
                f"out-of-order seq {message.seq}, expected {self.last_seq + 1}")
        if message.sender not in SENDERS:
            raise SessionLogError(f"unknown sender {message.sender!r}")
        if message.kind not in KINDS:
            raise SessionLogError(f"unknown message kind {message.kind!r}")
        self.messages.append(message)
        if self._fh:
            self._fh.write(json.dumps(message.to_dict(), sort_keys=True) + "\n")
            self._fh.flush()
            if self.durable:
                import os
                os.fsync(self._fh.fileno())
        return self

    def emit(self, sender: str, kind: str, payload: dict) -> Message:
        message = Message(self.last_seq + 1, self._clock(), sender, kind, payload)
        self.append(message)
        return message

    def checkpoint(self, label: str) -> str:
        """Bind a label to the current seq; the binding itself is logged."""
        if not self.messages:
            raise SessionLogError("cannot checkpoint an empty log")
        if label in self.checkpoints:
            raise SessionLogError(f"duplicate checkpoint label {label!r}")
        bound = self.last_seq
        self.checkpoints[label] = bound
        self.emit("manager", "checkpoint", {"label": label, "bound_seq": bound})
        return label

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def find_stage(self, stage: str, upto: int | None = None) -> Message | None:
        """Most recent integration message for a named pipeline stage."""
        for message in reversed(self.messages if upto is None else self.messages[:upto]):
            if message.kind == "integration" and message.payload.get("stage") == stage:
                return message
        return None


def load_session_log(path) -> SessionLog:
    """Replay a persisted log; corrupt records name the offending line."""
    log = SessionLog(session_id="replay", path=None)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                message = Message(doc["seq"], doc["timestamp"], doc["sender"],
                                  doc["kind"], doc["payload"])
            except (ValueError, KeyError, TypeError) as exc:
                raise SessionLogError(f"{path}:{lineno}: corrupt log record: {exc}") from exc
            log.append(message)
            if message.kind == "checkpoint":
                log.checkpoints[message.payload["label"]] = message.payload["bound_seq"]
    first = next((m for m in log.messages if m.kind == "integration"
                  and m.payload.get("stage") == "session_start"), None)
    if first:
        log.session_id = first.payload.get("session_id", log.session_id)
    return log


def canonical_log_lines(log: SessionLog) -> list[str]:
    """Timestamp-free view used by determinism comparisons."""
    out = []
    for message in log.messages:
        doc = message.to_dict()
        doc.pop("timestamp", None)
        out.append(json.dumps(doc, sort_keys=True))
    return out


class LoggedCompletionProvider(CompletionProvider):
    """Wraps a provider so every request/response lands in the session log."""

    def __init__(self, inner: CompletionProvider, log: SessionLog, role: str):
        self._inner = inner
        self._log = log
        self.role = role

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self._log.emit("provider", "provider_request", {
            "role": self.role, "system": request.system, "user": request.user,
            "temperature": request.temperature, "seed": request.seed,
        })
        try:
            response = self._inner.complete(request)
        except Exception as exc:
            self._log.emit("provider", "error",
                           {"role": self.role, "error": str(exc)})
            raise
        self._log.emit("provider", "provider_response",
                       {"role": self.role, "text": response.text})
        return response


def replay_provider_from_log(log: SessionLog, role: str | None = None,
                             strict: bool = True) -> ReplayCompletionProvider:
    """Rebuild a replayable transcript from recorded provider messages."""
    transcript = []
    pending = None
    for message in log.messages:
        if message.kind == "provider_request" and (role is None
                                                   or message.payload.get("role") == role):
            pending = message.payload
        elif message.kind == "provider_response" and pending is not None \
                and (role is None or message.payload.get("role") == role):
            transcript.append({
                "system": pending["system"], "user": pending["user"],
                "temperature": pending.get("temperature", 0.0),
                "seed": pending.get("seed", 0),
                "text": message.payload["text"],
            })
            pending = None
    return ReplayCompletionProvider(transcript, strict=strict)


# ---------------------------------------------------------------------------
# outcomes


@dataclass
class SessionOutcome:
    status: str  # success | rejected | error
    artifact: compiler.RenderedVideo | None = None
    rejection: Rejection | None = None
    error_detail: str | None = None
    script: CompiledScript | None = None
    edl: compiler.EDL | None = None
    session_id: str = ""
    log_path: str | None = None
    memory_paths: dict[str, str] = field(default_factory=dict)


def outcome_to_dict(outcome: SessionOutcome) -> dict:
    doc: dict = {"status": outcome.status, "session_id": outcome.session_id}
    if outcome.artifact is not None:
        doc["artifact"] = {"path": outcome.artifact.path,
                           "duration": outcome.artifact.duration,
                           "commands": outcome.artifact.commands}
    if outcome.rejection is not None:
        doc["rejection"] = {"reason": outcome.rejection.reason,
                            "iterations_used": outcome.rejection.iterations_used}
    if outcome.error_detail is not None:
        doc["error_detail"] = outcome.error_detail
    if outcome.script is not None:
        doc["script"] = planning.script_to_dict(outcome.script)
    if outcome.memory_paths:
        doc["memory_paths"] = dict(outcome.memory_paths)
    return doc


# ---------------------------------------------------------------------------
# session execution


def _memory_path(memory_dir: Path, source_id: str) -> Path:
    return memory_dir / f"{source_id}.memory.json"


def _ensure_memory(source_id: str, sources: SourceCollection, config,
                   completion: CompletionProvider, boundary, log: SessionLog):
    """Load the persisted memory when its manifest hash matches, else build
    and persist it."""
    manifest = sources.get(source_id)
    expected = manifest_hash(manifest)
    path = _memory_path(Path(config.memory_dir), source_id)
    if path.is_file():
        try:
            loaded = memory_mod.load_memory(path, expected_hash=expected)
            log.emit("script", "integration", {
                "stage": "memory_loaded", "source_id": source_id,
                "path": str(path), "manifest_hash": expected,
            })
            return loaded, path
        except CineforgeError:
            logger.info("persisted memory for %s is stale; rebuilding", source_id)
    ident = identity_mod.analyze(
        manifest,
        link_threshold=config.link_threshold,
        lip_threshold=config.lip_threshold,
        kmeans_seed=config.kmeans_seed,
    )
    built = memory_mod.build_memory(manifest, ident, completion, boundary)
    path.parent.mkdir(parents=True, exist_ok=True)
    memory_mod.save_memory(built, path)
    log.emit("script", "integration", {
        "stage": "memory_built", "source_id": source_id,
        "path": str(path), "manifest_hash": expected,
    })
    return built, path


def _script_duration(script: CompiledScript, sources: SourceCollection) -> float:
    return sum(sources.shot(ref).duration for ref, _ in script.entries)


def _planning_context(memories: dict[str, memory_mod.NarrativeMemory],
                      sources: SourceCollection) -> PlanningContext:
    ordered = sorted(memories, key=sources.order_of)
    roster = {sid: {c.character_id: c.name for c in sources.get(sid).characters}
              for sid in ordered}
    return PlanningContext(memories=[memories[sid] for sid in ordered],
                           roster_names=roster, collection=sources)


def run_session(instruction_text: str, sources: SourceCollection, config,
                providers: ProviderBundle, log_path=None, clock=None,
                session_id: str | None = None) -> SessionOutcome:
    """Parse -> memory -> plan -> validate -> compose -> render, with every
    step logged; all failures normalize into the returned outcome."""
    log = SessionLog(session_id=session_id, path=log_path,
                     durable=config.durable_log, clock=clock)
    outcome = SessionOutcome(status="error", session_id=log.session_id,
                             log_path=str(log_path) if log_path else None)
    try:
        log.emit("manager", "integration", {
            "stage": "session_start", "session_id": log.session_id,
            "format_version": LOG_FORMAT_VERSION,
            "instruction_text": instruction_text,
        })
        catalog = [(m.source_id, m.title) for m in sources.manifests()]
        manager_provider = LoggedCompletionProvider(providers.completion, log, "manager")
        instruction = parse_instruction(instruction_text, catalog, manager_provider)
        log.emit("manager", "integration", {
            "stage": "parse", "instruction": instruction_to_dict(instruction)})

        roster = recruit(instruction, render=True)
        log.emit("manager", "integration", {"stage": "recruit", "roster": list(roster)})

        script_provider = LoggedCompletionProvider(providers.completion, log, "script")
        resolved = [sid for sid in instruction.source_selection if sid in sources]
        memories: dict[str, memory_mod.NarrativeMemory] = {}
        for sid in sorted(set(resolved), key=sources.order_of):
            memories[sid], path = _ensure_memory(sid, sources, config,
                                                 script_provider, providers.boundary, log)
            outcome.memory_paths[sid] = str(path)
        log.emit("manager", "integration", {
            "stage": "memory", "sources": sorted(memories),
            "memory_paths": dict(outcome.memory_paths)})
        log.checkpoint(CHECKPOINT_POST_MEMORY)

        context = _planning_context(memories, sources)
        director = LoggedCompletionProvider(providers.director_provider(), log, "director")
        result = planning.plan(instruction, context, director,
                               max_iterations=config.max_iterations,
                               per_stage_cap=config.per_stage_cap, log=log)

        if isinstance(result, Rejection):
            log.emit("manager", "integration", {
                "stage": "plan", "result": "rejected", "reason": result.reason,
                "iterations_used": result.iterations_used})
            outcome.status = "rejected"
            outcome.rejection = result
            return outcome

        limit = instruction.temporal_requirement.duration_limit
        if limit is not None and _script_duration(result, sources) > limit + DURATION_TOLERANCE:
            violation = (f"compiled duration {_script_duration(result, sources):.1f}s "
                         f"exceeds the {limit:.1f}s limit")
            log.emit("manager", "error", {"stage": "validate", "violation": violation})
            result = planning.plan(instruction, context, director,
                                   max_iterations=config.max_iterations,
                                   per_stage_cap=config.per_stage_cap, log=log,
                                   manager_feedback=violation)
            if isinstance(result, Rejection):
                log.emit("manager", "integration", {
                    "stage": "plan", "result": "rejected", "reason": result.reason,
                    "iterations_used": result.iterations_used})
                outcome.status = "rejected"
                outcome.rejection = result
                return outcome
            if _script_duration(result, sources) > limit + DURATION_TOLERANCE:
                raise CineforgeError(
                    f"render blocked: duration limit still violated after one re-plan "
                    f"({_script_duration(result, sources):.1f}s > {limit:.1f}s)")

        outcome.script = result
        log.emit("manager", "integration", {
            "stage": "plan", "result": "script",
            "script": planning.script_to_dict(result)})
        log.checkpoint(CHECKPOINT_POST_PLAN)

        return _compose_and_render(instruction, result, sources, config, providers,
                                   log, outcome)
    except Exception as exc:  # total: no failure escapes as an exception
        logger.exception("session %s failed", log.session_id)
        try:
            log.emit("manager", "error", {"stage": "session", "error": str(exc),
                                          "type": type(exc).__name__})
        except SessionLogError:
            pass
        outcome.status = "error"
        outcome.error_detail = f"{type(exc).__name__}: {exc}"
        return outcome
    finally:
        try:
            if log.messages and CHECKPOINT_FINAL not in log.checkpoints:
                log.emit("manager", "integration",
                         {"stage": "outcome", "outcome": outcome_to_dict(outcome)})
                log.checkpoint(CHECKPOINT_FINAL)
        except SessionLogError:
            pass
        log.close()


def _compose_and_render(instruction, script, sources, config, providers, log,
                        outcome: SessionOutcome) -> SessionOutcome:
    edl = compiler.compile_edl(script, sources)
    editor = LoggedCompletionProvider(providers.completion, log, "editor")
    ops = compiler.select_tools(instruction, script, editor)
    ops = compiler.resolve_assets(ops, config.asset_dir)
    for op in ops:
        log.emit("editor", "tool_call", {"tool": op.kind, "parameters": op.parameters})
    edl = compiler.apply_ops(edl, ops)
    log.emit("editor", "integration", {"stage": "edl", "edl": compiler.edl_to_dict(edl)})

    rendered = compiler.render(
        edl, ops, config.media_root, config.renderer_template(),
        Path(config.out_dir) / log.session_id, dry_run=config.dry_run,
        stderr_sink=lambda cmd, err: log.emit(
            "editor", "error", {"stage": "render", "command": cmd, "stderr": err}))
    log.emit("editor", "tool_call", {
        "tool": "render", "dry_run": config.dry_run,
        "commands": rendered.commands, "duration": rendered.duration,
        "path": rendered.path})
    outcome.status = "success"
    outcome.artifact = rendered
    outcome.edl = edl
    return outcome


# ---------------------------------------------------------------------------
# resume


@dataclass
class ResumedSession:
    instruction: Instruction | None
    memories: dict[str, memory_mod.NarrativeMemory]
    memory_paths: dict[str, str]
    script: CompiledScript | None
    outcome: dict | None
    prefix: list[Message]


def _reconstruct(log: SessionLog, upto: int, sources: SourceCollection) -> ResumedSession:
    instruction = None
    parse_msg = log.find_stage("parse", upto)
    if parse_msg:
        instruction = instruction_from_dict(parse_msg.payload["instruction"])
    memories: dict[str, memory_mod.NarrativeMemory] = {}
    memory_paths: dict[str, str] = {}
    for message in log.messages[:upto]:
        if message.kind == "integration" and message.payload.get("stage") in (
                "memory_built", "memory_loaded"):
            sid = message.payload["source_id"]
            path = message.payload["path"]
            expected = manifest_hash(sources.get(sid)) if sid in sources else None
            memories[sid] = memory_mod.load_memory(path, expected_hash=expected)
            memory_paths[sid] = path
    script = None
    plan_msg = log.find_stage("plan", upto)
    if plan_msg and plan_msg.payload.get("result") == "script":
        script = _script_from_dict(plan_msg.payload["script"], sources)
    outcome_msg = log.find_stage("outcome", upto)
    outcome = outcome_msg.payload["outcome"] if outcome_msg else None
    return ResumedSession(instruction, memories, memory_paths, script, outcome,
                          log.messages[:upto])


def _script_from_dict(doc: dict, sources: SourceCollection) -> CompiledScript:
    entries = [(sources.parse_ref(e["shot"]), e["stage"]) for e in doc["entries"]]
    requests = [EditRequest(r["kind"], r.get("params", ""))
                for r in doc.get("editing_requests", [])]
    prov = doc.get("provenance", {})
    stages = tuple(
        planning.Stage(s["name"], s.get("intent", ""),
                       evidence=tuple(EvidenceRef(e["level"], e["source"], e["ref"])
                                      for e in s.get("evidence", [])),
                       grounded_levels=tuple(s.get("grounded_levels", [])),
                       resolved_shots=tuple(sources.parse_ref(k)
                                            for k in s.get("resolved_shots", [])))
        for s in prov.get("stages", []))
    blueprint = planning.Blueprint(stages=stages, iteration=prov.get("iterations", 0),
                                   status=prov.get("status", "grounded"))
    return CompiledScript(entries=entries, editing_requests=requests, provenance=blueprint)


def resume(log_source, checkpoint_id: str, sources: SourceCollection, config,
           providers: ProviderBundle, new_instruction: str | None = None,
           log_path=None, clock=None, session_id: str | None = None) -> SessionOutcome:
    """Reload the compilation state bound to a checkpoint and continue.

    Stages fully contained before the checkpoint (parsed instruction, built
    memory, compiled script, final outcome) are never re-executed; a new
    instruction restarts planning against the reused memory.
    """
    original = log_source if isinstance(log_source, SessionLog) else load_session_log(log_source)
    if checkpoint_id not in original.checkpoints:
        raise SessionLogError(f"unknown checkpoint {checkpoint_id!r}")
    upto = original.checkpoints[checkpoint_id]
    state = _reconstruct(original, upto, sources)

    log = SessionLog(session_id=session_id or f"{original.session_id}-r",
                     path=log_path, durable=config.durable_log, clock=clock)
    for message in state.prefix:  # carried history: the resumed state's provenance
        log.append(Message(message.seq, message.timestamp, message.sender,
                           message.kind, message.payload))
    log.emit("manager", "integration", {
        "stage": "resume", "checkpoint": checkpoint_id, "bound_seq": upto,
        "new_instruction": new_instruction})

    outcome = SessionOutcome(status="error", session_id=log.session_id,
                             log_path=str(log_path) if log_path else None,
                             memory_paths=dict(state.memory_paths))
    try:
        if state.outcome is not None and new_instruction is None:
            # the checkpoint already contains the finished session
            outcome.status = state.outcome["status"]
            outcome.error_detail = state.outcome.get("error_detail")
            outcome.script = state.script
            return outcome

        instruction = state.instruction
        if new_instruction is not None:
            catalog = [(m.source_id, m.title) for m in sources.manifests()]
            manager_provider = LoggedCompletionProvider(providers.completion, log, "manager")
            instruction = parse_instruction(new_instruction, catalog, manager_provider)
            log.emit("manager", "integration", {
                "stage": "parse", "instruction": instruction_to_dict(instruction)})
        if instruction is None:
            raise CineforgeError("checkpoint precedes instruction parsing; "
                                 "provide a new instruction")
        roster = recruit(instruction, render=True,
                         resumed_post_plan=state.script is not None and new_instruction is None)
        log.emit("manager", "integration", {"stage": "recruit", "roster": list(roster)})

        script = state.script
        if script is None or new_instruction is not None:
            context = _planning_context(state.memories, sources)
            director = LoggedCompletionProvider(providers.director_provider(), log, "director")
            result = planning.plan(instruction, context, director,
                                   max_iterations=config.max_iterations,
                                   per_stage_cap=config.per_stage_cap, log=log)
            if isinstance(result, Rejection):
                log.emit("manager", "integration", {
                    "stage": "plan", "result": "rejected", "reason": result.reason,
                    "iterations_used": result.iterations_used})
                outcome.status = "rejected"
                outcome.rejection = result
                return outcome
            script = result
            log.emit("manager", "integration", {
                "stage": "plan", "result": "script",
                "script": planning.script_to_dict(script)})
        outcome.script = script
        return _compose_and_render(instruction, script, sources, config, providers,
                                   log, outcome)
    except Exception as exc:
        logger.exception("resumed session %s failed", log.session_id)
        try:
            log.emit("manager", "error", {"stage": "session", "error": str(exc),
                                          "type": type(exc).__name__})
        except SessionLogError:
            pass
        outcome.status = "error"
        outcome.error_detail = f"{type(exc).__name__}: {exc}"
        return outcome
    finally:
        try:
            if log.messages:
                log.emit("manager", "integration",
                         {"stage": "outcome", "outcome": outcome_to_dict(outcome)})
                label = CHECKPOINT_FINAL
                n = 1
                while label in log.checkpoints:
                    n += 1
                    label = f"{CHECKPOINT_FINAL}-{n}"
                log.checkpoint(label)
        except SessionLogError:
            pass
        log.close()
