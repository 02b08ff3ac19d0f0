"""Iterative narrative planning: the director drafts and revises a staged
blueprint, the orchestrator grounds each proposal against narrative memory
top-down (story -> character -> event -> shot), and the loop ends in a
compiled script or a justified rejection.

Grounding is deterministic lookup; all generative latitude stays with the
director.  An unsupported grounding changes nothing but the iteration
counter, and the loop budget is enforced unconditionally.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

from . import prompts
from .errors import CineforgeError, PlanningError, UnknownCharacterError
from .manifest import GlobalShotRef, SourceCollection
from .memory import LEVELS, EvidenceRef, NarrativeMemory, QuerySpec, query_memory
from .providers import CompletionProvider, CompletionRequest

INFEASIBLE_TOKEN = "[INFEASIBLE]"
DEFAULT_MAX_ITERATIONS = 40
DEFAULT_PER_STAGE_CAP = 12
MIN_STAGES, MAX_STAGES = 3, 7


@dataclass(frozen=True)
class Stage:
    stage_name: str
    intent: str
    evidence: tuple[EvidenceRef, ...] = ()
    resolved_shots: tuple[GlobalShotRef, ...] = ()
    grounded_levels: tuple[str, ...] = ()

    def next_level(self) -> str | None:
        for level in LEVELS:
            if level not in self.grounded_levels:
                return level
        return None

    @property
    def fully_grounded(self) -> bool:
        return self.next_level() is None


@dataclass(frozen=True)
class Blueprint:
    stages: tuple[Stage, ...]
    iteration: int = 0
    status: str = "drafting"  # drafting | grounded | rejected

    def first_ungrounded(self) -> Stage | None:
        for stage in self.stages:
            if not stage.fully_grounded:
                return stage
        return None


@dataclass(frozen=True)
class Proposal:
    stage_name: str
    target_level: str
    query: QuerySpec
    rationale: str = ""


@dataclass(frozen=True)
class GroundingResult:
    proposal: Proposal
    matched: tuple[EvidenceRef, ...]
    verdict: str  # grounded | unsupported


@dataclass(frozen=True)
class InfeasibleSignal:
    reason: str


@dataclass
class Rejection:
    reason: str
    failed_proposals: list[Proposal]
    iterations_used: int


@dataclass
class CompiledScript:
    entries: list[tuple[GlobalShotRef, str]]
    editing_requests: list
    provenance: Blueprint

    def shot_refs(self) -> list[GlobalShotRef]:
        return [ref for ref, _ in self.entries]


@dataclass
class PlanningContext:
    """Read-only session view the orchestrator grounds against."""

    memories: list[NarrativeMemory]
    roster_names: dict[str, dict[str, str]]  # source_id -> {character_id: name}
    collection: SourceCollection | None = None

    def names_for(self, source_id: str) -> dict[str, str]:
        return self.roster_names.get(source_id, {})


def _parse_json(text: str):
    cleaned = text.strip()
    cleaned = re.sub(r"^```(?:json)?\s*|\s*```$", "", cleaned)
    return json.loads(cleaned)


def draft_blueprint(instruction, story_texts: list[str],
                    completion: CompletionProvider,
                    feedback: str | None = None) -> Blueprint:
    """One completion call producing 3-7 named stages; a malformed reply gets
    one repair retry before erroring.  Drafting is memory-blind beyond the
    story synopses."""
    user = prompts.director_draft_user(instruction.raw_text, story_texts, feedback)
    request = CompletionRequest(prompts.DIRECTOR_DRAFT_SYSTEM, user)
    last_error = None
    for attempt in range(2):
        text = completion.complete(request).text
        try:
            doc = _parse_json(text)
            stages = doc["stages"]
            if not isinstance(stages, list) or not MIN_STAGES <= len(stages) <= MAX_STAGES:
                raise ValueError(f"need {MIN_STAGES}-{MAX_STAGES} stages, got "
                                 f"{len(stages) if isinstance(stages, list) else type(stages)}")
            parsed = tuple(Stage(str(s["name"]), str(s.get("intent", ""))) for s in stages)
            return Blueprint(stages=parsed, iteration=0, status="drafting")
        except (ValueError, KeyError, TypeError) as exc:
            last_error = exc
            request = CompletionRequest(
                prompts.DIRECTOR_DRAFT_SYSTEM,
                user + f"\nYour previous reply was unusable ({exc}). "
                       f"Reply with valid JSON and {MIN_STAGES}-{MAX_STAGES} stages.")
    raise PlanningError(f"director produced no usable stage list: {last_error}")


def propose(blueprint: Blueprint, instruction,
            feedback: GroundingResult | None,
            completion: CompletionProvider) -> Proposal | InfeasibleSignal:
    """Ask the director for evidence at the first ungrounded stage's next
    level.  A reply containing the infeasibility token surfaces as a signal,
    not an error."""
    stage = blueprint.first_ungrounded()
    if stage is None:
        raise CineforgeError("blueprint is fully grounded; nothing to propose")
    level = stage.next_level()
    feedback_text = None
    if feedback is not None and feedback.verdict == "unsupported":
        q = feedback.proposal.query
        feedback_text = (f"level={feedback.proposal.target_level} "
                         f"terms={list(q.terms)} characters={list(q.characters)}")
    request = CompletionRequest(
        prompts.DIRECTOR_PROPOSE_SYSTEM,
        prompts.director_propose_user(instruction.raw_text, stage.stage_name,
                                      stage.intent, level, feedback_text))
    text = completion.complete(request).text
    if INFEASIBLE_TOKEN in text:
        return InfeasibleSignal(text.strip())
    try:
        doc = _parse_json(text)
        query = QuerySpec.of(
            [str(t) for t in doc.get("terms", [])],
            [str(c) for c in doc.get("characters", [])])
        return Proposal(stage.stage_name, level, query, str(doc.get("rationale", "")))
    except (ValueError, KeyError, TypeError) as exc:
        raise PlanningError(f"director proposal was unusable: {exc}") from exc


def proposals_equal(a: Proposal, b: Proposal) -> bool:
    """Structural equality used for identical-repeat (livelock) detection."""
    return (a.stage_name == b.stage_name
            and a.target_level == b.target_level
            and sorted(t.casefold() for t in a.query.terms)
            == sorted(t.casefold() for t in b.query.terms)
            and sorted(c.casefold() for c in a.query.characters)
            == sorted(c.casefold() for c in b.query.characters))


def ground(proposal: Proposal, context: PlanningContext) -> GroundingResult:
    """Validate a proposal against every session memory; unknown entities
    yield an unsupported verdict, never an error."""
    matched: list[EvidenceRef] = []
    for memory in context.memories:
        try:
            refs = query_memory(memory, proposal.target_level, proposal.query,
                                context.names_for(memory.source_id))
        except UnknownCharacterError:
            refs = []
        matched.extend(refs)
    verdict = "grounded" if matched else "unsupported"
    return GroundingResult(proposal, tuple(matched), verdict)


def integrate(blueprint: Blueprint, result: GroundingResult,
              collection: SourceCollection | None = None) -> Blueprint:
    """Fold one grounding result into the blueprint.

    Grounded: evidence appended, the level marked grounded, shot-level
    matches resolved into shot refs (memory order).  Unsupported: nothing
    changes but the iteration counter.
    """
    names = [s.stage_name for s in blueprint.stages]
    if result.proposal.stage_name not in names:
        raise CineforgeError(f"stage {result.proposal.stage_name!r} not in blueprint")
    if result.verdict == "unsupported":
        return replace(blueprint, iteration=blueprint.iteration + 1)

    idx = names.index(result.proposal.stage_name)
    stage = blueprint.stages[idx]
    if stage.next_level() != result.proposal.target_level:
        raise CineforgeError(
            f"stage {stage.stage_name!r} must ground {stage.next_level()!r} next, "
            f"got {result.proposal.target_level!r}")
    resolved = stage.resolved_shots
    if result.proposal.target_level == "shot":
        if collection is None:
            raise CineforgeError("shot-level integration needs the source collection")
        resolved = tuple(collection.global_shot_key(ref.source_id, int(ref.ref_id))
                         for ref in result.matched)
    new_stage = replace(
        stage,
        evidence=stage.evidence + result.matched,
        resolved_shots=resolved,
        grounded_levels=stage.grounded_levels + (result.proposal.target_level,),
    )
    stages = blueprint.stages[:idx] + (new_stage,) + blueprint.stages[idx + 1:]
    status = "grounded" if all(s.fully_grounded for s in stages) else blueprint.status
    return Blueprint(stages=stages, iteration=blueprint.iteration + 1, status=status)


def _finalize(blueprint: Blueprint, instruction) -> CompiledScript:
    """Lower a fully grounded blueprint to the compiled script, honoring the
    instruction's temporal requirement.  Duplicate shots keep the earliest
    stage's copy."""
    entries: list[tuple[GlobalShotRef, str]] = []
    seen: set[str] = set()
    for stage in blueprint.stages:
        for ref in sorted(stage.resolved_shots):
            if ref.key in seen:
                continue
            seen.add(ref.key)
            entries.append((ref, stage.stage_name))
    kind = instruction.temporal_requirement.kind
    if kind == "chronological":
        entries.sort(key=lambda e: e[0])
    # non_linear and extractive keep stage order, chronological within stage
    if not entries:
        raise CineforgeError("compiled script cannot be empty")
    return CompiledScript(entries=entries,
                          editing_requests=list(instruction.editing_operations),
                          provenance=blueprint)


def plan(instruction, context: PlanningContext, director: CompletionProvider,
         max_iterations: int = DEFAULT_MAX_ITERATIONS,
         per_stage_cap: int = DEFAULT_PER_STAGE_CAP,
         log=None, manager_feedback: str | None = None) -> CompiledScript | Rejection:
    """Run draft -> (propose -> ground -> integrate)* to a compiled script or
    a justified rejection; the iteration budget holds for any provider
    behavior."""
    def emit(sender, kind, payload):
        if log is not None:
            log.emit(sender, kind, payload)

    story_texts = [m.story for m in context.memories]
    blueprint = draft_blueprint(instruction, story_texts, director, feedback=manager_feedback)
    emit("director", "proposal", {
        "event": "draft",
        "stages": [{"name": s.stage_name, "intent": s.intent} for s in blueprint.stages],
    })

    failed: list[Proposal] = []
    feedback: GroundingResult | None = None
    stage_spend: dict[str, int] = {}

    while blueprint.iteration < max_iterations:
        stage = blueprint.first_ungrounded()
        if stage is None:
            break
        spend = stage_spend.get(stage.stage_name, 0) + 1
        stage_spend[stage.stage_name] = spend
        if spend > per_stage_cap:
            blueprint = replace(blueprint, status="rejected")
            reason = f"stage {stage.stage_name!r} exhausted its {per_stage_cap}-step budget"
            emit("director", "error", {"event": "per_stage_cap", "reason": reason})
            return Rejection(reason, failed, blueprint.iteration)

        proposed = propose(blueprint, instruction, feedback, director)
        if isinstance(proposed, InfeasibleSignal):
            blueprint = replace(blueprint, status="rejected")
            reason = f"director declared infeasibility: {proposed.reason}"
            emit("director", "proposal", {"event": "infeasible", "reason": proposed.reason})
            return Rejection(reason, failed, blueprint.iteration)
        emit("director", "proposal", {
            "stage": proposed.stage_name, "level": proposed.target_level,
            "terms": list(proposed.query.terms),
            "characters": list(proposed.query.characters),
            "rationale": proposed.rationale,
        })
        if (feedback is not None and feedback.verdict == "unsupported"
                and proposals_equal(proposed, feedback.proposal)):
            blueprint = replace(blueprint, status="rejected")
            reason = (f"director repeated the failed proposal for stage "
                      f"{proposed.stage_name!r} at {proposed.target_level} level")
            emit("director", "error", {"event": "identical_repeat", "reason": reason})
            return Rejection(reason, failed + [proposed], blueprint.iteration)

        result = ground(proposed, context)
        emit("orchestrator", "grounding", {
            "stage": proposed.stage_name, "level": proposed.target_level,
            "verdict": result.verdict, "matched": [r.key for r in result.matched],
        })
        blueprint = integrate(blueprint, result, context.collection)
        emit("orchestrator", "integration", {
            "stage": proposed.stage_name, "level": proposed.target_level,
            "verdict": result.verdict, "iteration": blueprint.iteration,
        })
        if result.verdict == "unsupported":
            failed.append(proposed)
            feedback = result
        else:
            feedback = None

    if blueprint.first_ungrounded() is not None:
        blueprint = replace(blueprint, status="rejected")
        reason = f"planning budget of {max_iterations} iterations exhausted"
        emit("director", "error", {"event": "budget_exhausted", "reason": reason})
        return Rejection(reason, failed, blueprint.iteration)

    script = _finalize(replace(blueprint, status="grounded"), instruction)
    emit("orchestrator", "integration", {
        "event": "script_finalized",
        "entries": [{"shot": ref.key, "stage": stage} for ref, stage in script.entries],
        "iterations": blueprint.iteration,
    })
    return script


# ---------------------------------------------------------------------------
# serialization


def script_to_dict(script: CompiledScript) -> dict:
    return {
        "entries": [{"shot": ref.key, "stage": stage} for ref, stage in script.entries],
        "editing_requests": [{"kind": r.kind, "params": r.params}
                             for r in script.editing_requests],
        "provenance": {
            "iterations": script.provenance.iteration,
            "status": script.provenance.status,
            "stages": [
                {
                    "name": s.stage_name,
                    "intent": s.intent,
                    "grounded_levels": list(s.grounded_levels),
                    "evidence": [{"level": r.level, "source": r.source_id,
                                  "ref": r.ref_id} for r in s.evidence],
                    "resolved_shots": [ref.key for ref in s.resolved_shots],
                }
                for s in script.provenance.stages
            ],
        },
    }


def script_bytes(script: CompiledScript) -> bytes:
    """Canonical serialization used by determinism checks."""
    return json.dumps(script_to_dict(script), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
