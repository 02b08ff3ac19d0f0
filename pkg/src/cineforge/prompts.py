"""Versioned prompt templates.

Golden transcripts and replay providers are only stable against frozen
prompts, so every template lives here and the version strings are recorded
in persisted memory documents and evaluation reports.  Buffered context
shots are serialized one per line behind a fixed marker so tests can count
them straight off the recorded requests.
"""
from __future__ import annotations

TEMPLATE_VERSION = "1"
RUBRIC_VERSION = "1"

CONTEXT_SHOT_MARKER = "[context shot {shot_id}]"

SUMMARY_SYSTEM = (
    "You are a film script annotator. Write one compact narrative summary of the "
    "current shot, consistent with the preceding context."
)

EVENT_SYSTEM = (
    "You are a film script annotator. Merge the given consecutive shot summaries "
    "into one event description."
)

STORY_SYSTEM = (
    "You are a film script annotator. Abstract the listed events into a short "
    "story synopsis."
)

PROFILE_SYSTEM = (
    "You are a film script annotator. Write a character profile grounded only in "
    "the listed events."
)

DIRECTOR_DRAFT_SYSTEM = (
    "You are a film director planning a compilation. Reply with JSON "
    '{"stages": [{"name": ..., "intent": ...}, ...]} using 3 to 7 stages.'
)

DIRECTOR_PROPOSE_SYSTEM = (
    "You are a film director grounding your blueprint. Reply with JSON "
    '{"terms": [...], "characters": [...], "rationale": ...} naming the evidence '
    "to look up at the requested level. If the request cannot be satisfied from "
    "the source material, reply with the single token " + "[INFEASIBLE]."
)

PARSE_SYSTEM = (
    "You parse editing instructions. Reply with JSON {\"source_selection\": [titles...], "
    '"target_content": [{"type": "character"|"event"|"theme", "value": ...}], '
    '"temporal_requirement": {"kind": "chronological"|"non_linear"|"extractive", '
    '"duration_limit": seconds or null}, '
    '"editing_operations": [{"kind": "music"|"text"|"cover"|"transition", "params": ...}]}.'
)

TOOLS_SYSTEM = (
    "You are a video editor choosing tool parameters. Reply with JSON "
    '{"operations": [{"kind": "music"|"text"|"cover"|"transition", ...}]} covering '
    "exactly the requested operations."
)


def shot_summary_user(shot_block: str, context_lines: list[str]) -> str:
    parts = ["Current shot:", shot_block, ""]
    if context_lines:
        parts.append("Preceding context:")
        parts.extend(context_lines)
    else:
        parts.append("Preceding context: none (first shot).")
    return "\n".join(parts)


def context_shot_line(shot_id: int, characters, dialogue_digest: str, keyframe_ref: str) -> str:
    chars = ", ".join(characters) if characters else "none"
    marker = CONTEXT_SHOT_MARKER.format(shot_id=shot_id)
    return f"{marker} visual={keyframe_ref} characters={chars} dialogue={dialogue_digest or 'none'}"


def event_summary_user(first_shot: int, last_shot: int, summaries: list[str]) -> str:
    body = "\n".join(f"- {s}" for s in summaries)
    return f"Summarize the event spanning shots {first_shot}-{last_shot}:\n{body}"


def story_user(event_summaries: list[str]) -> str:
    body = "\n".join(f"{i}. {s}" for i, s in enumerate(event_summaries))
    return f"Events in order:\n{body}\nWrite the story synopsis."


def profile_user(character_name: str, event_summaries: list[str]) -> str:
    body = "\n".join(f"- {s}" for s in event_summaries)
    return f"Events featuring {character_name}:\n{body}\nWrite their profile."


def director_draft_user(instruction_text: str, story_texts: list[str], feedback: str | None) -> str:
    parts = [f"Instruction: {instruction_text}"]
    if story_texts:
        parts.append("Known story synopses:")
        parts.extend(f"- {s}" for s in story_texts)
    if feedback:
        parts.append(f"Manager feedback: {feedback}")
    parts.append("Draft the staged blueprint.")
    return "\n".join(parts)


def director_propose_user(instruction_text: str, stage_name: str, intent: str,
                          level: str, feedback: str | None) -> str:
    parts = [
        f"Instruction: {instruction_text}",
        f"Stage: {stage_name} ({intent})",
        f"Ground this stage at the {level} level.",
    ]
    if feedback:
        parts.append(f"Previous proposal was unsupported: {feedback}")
        parts.append("Propose different evidence.")
    return "\n".join(parts)


def parse_user(instruction_text: str, catalog: list[tuple[str, str]]) -> str:
    listing = "\n".join(f"- {title} (id: {sid})" for sid, title in catalog)
    return f"Known sources:\n{listing}\nInstruction: {instruction_text}"


def tools_user(instruction_text: str, requested, script_digest: str) -> str:
    kinds = ", ".join(f"{r.kind} ({r.params})" for r in requested)
    return (f"Instruction: {instruction_text}\nRequested operations: {kinds}\n"
            f"Compiled sequence: {script_digest}\nFill in the tool parameters.")


JUDGE_RUBRICS = {
    "SC": ("You are a film critic. Rate the logical flow between consecutive shots "
           "of the script below on a 1-10 scale. Reply with the number only."),
    "NL": ("You are a film critic. Rate the narrative logic of the compiled sequence "
           "below on a 1-10 scale. Reply with the number only."),
    "PA": ("You are a film critic. Rate how well the compiled sequence adheres to "
           "the instruction on a 1-10 scale. Reply with the number only."),
    "CQ": ("You are a film critic. Rate the overall quality of the compiled video "
           "summary below on a 1-10 scale. Reply with the number only."),
}


def judge_user(metric: str, instruction_text: str, script_digest: str,
               rendered_summary: str) -> str:
    return (f"Instruction: {instruction_text}\nCompiled sequence:\n{script_digest}\n"
            f"Rendered summary:\n{rendered_summary}\nScore ({metric}):")
