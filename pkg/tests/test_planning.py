from __future__ import annotations

import json
import random

import pytest

import fixture_films as ff
from cineforge.environment import (Instruction, TemporalRequirement,
                                   instruction_from_dict)
from cineforge.errors import PlanningError
from cineforge.memory import QuerySpec
from cineforge.planning import (Blueprint, GroundingResult, InfeasibleSignal,
                                PlanningContext, Proposal, Rejection, Stage,
                                draft_blueprint, ground, integrate, plan, propose,
                                proposals_equal, script_bytes)
from cineforge.providers import QueueCompletionProvider


def make_instruction(text="test instruction", kind="chronological", limit=None, ops=()):
    return Instruction(text, ("shawfix",), (), TemporalRequirement(kind, limit),
                       tuple(ops))


def context_for(memory, manifest, collection=None):
    return PlanningContext(
        memories=[memory],
        roster_names={manifest.source_id: {c.character_id: c.name
                                           for c in manifest.characters}},
        collection=collection)


@pytest.fixture()
def shaw_context(shaw_memory, shaw_manifest, collection):
    return context_for(shaw_memory, shaw_manifest, collection)


# ---------------------------------------------------------------------------
# drafting


def test_draft_three_stages():
    provider = QueueCompletionProvider([json.dumps({"stages": [
        {"name": "setup", "intent": "a"}, {"name": "escape", "intent": "b"},
        {"name": "aftermath", "intent": "c"}]})])
    blueprint = draft_blueprint(make_instruction("summarize Andy's escape"),
                                ["story"], provider)
    assert [s.stage_name for s in blueprint.stages] == ["setup", "escape", "aftermath"]
    assert blueprint.iteration == 0
    assert blueprint.status == "drafting"


def test_draft_zero_stages_twice_errors():
    provider = QueueCompletionProvider([json.dumps({"stages": []})] * 2)
    with pytest.raises(PlanningError, match="no usable stage list"):
        draft_blueprint(make_instruction(), [], provider)
    assert provider.calls_made == 2  # one repair retry happened


def test_draft_repair_retry_recovers():
    good = json.dumps({"stages": [{"name": f"s{i}", "intent": ""} for i in range(3)]})
    provider = QueueCompletionProvider(["not json at all", good])
    blueprint = draft_blueprint(make_instruction(), [], provider)
    assert len(blueprint.stages) == 3


def test_draft_is_memory_blind_for_absent_films():
    provider = QueueCompletionProvider([json.dumps({"stages": [
        {"name": "a", "intent": ""}, {"name": "b", "intent": ""},
        {"name": "c", "intent": ""}]})])
    blueprint = draft_blueprint(make_instruction("film that does not exist"),
                                [], provider)
    assert blueprint.status == "drafting"


# ---------------------------------------------------------------------------
# proposing


def fresh_blueprint():
    return Blueprint(stages=(Stage("one", "i1"), Stage("two", "i2"),
                             Stage("three", "i3")))


def test_fresh_blueprint_targets_story_of_first_stage():
    provider = QueueCompletionProvider([json.dumps({"terms": ["hope"]})])
    proposal = propose(fresh_blueprint(), make_instruction(), None, provider)
    assert proposal.stage_name == "one"
    assert proposal.target_level == "story"


def test_feedback_produces_revised_proposal():
    failed = Proposal("one", "character", QuerySpec.of(characters=["Dobby"]))
    feedback = GroundingResult(failed, (), "unsupported")
    provider = QueueCompletionProvider([json.dumps({"characters": ["Red"]})])
    bp = integrate_story_grounded(fresh_blueprint())
    proposal = propose(bp, make_instruction(), feedback, provider)
    assert "Dobby" in provider.calls[0].user  # feedback visible to the director
    assert not proposals_equal(proposal, failed)


def integrate_story_grounded(bp):
    from cineforge.memory import EvidenceRef
    result = GroundingResult(Proposal("one", "story", QuerySpec.of()),
                             (EvidenceRef("story", "shawfix", "story"),), "grounded")
    return integrate(bp, result)


def test_infeasibility_token_surfaces_as_signal():
    provider = QueueCompletionProvider(["[INFEASIBLE] cannot satisfy this"])
    out = propose(fresh_blueprint(), make_instruction(), None, provider)
    assert isinstance(out, InfeasibleSignal)


# ---------------------------------------------------------------------------
# grounding and integration


def test_ground_character_match(shaw_context):
    result = ground(Proposal("one", "character", QuerySpec.of(characters=["Andy"])),
                    shaw_context)
    assert result.verdict == "grounded"
    assert [r.ref_id for r in result.matched] == ["andy"]


def test_ground_absent_character_unsupported(shaw_context):
    result = ground(Proposal("one", "character", QuerySpec.of(characters=["Dobby"])),
                    shaw_context)
    assert result.verdict == "unsupported"
    assert result.matched == ()


def test_ground_unknown_required_character_is_unsupported_not_error(shaw_context):
    result = ground(Proposal("one", "shot",
                             QuerySpec.of(terms=["cake"], characters=["Dobby"])),
                    shaw_context)
    assert result.verdict == "unsupported"


def test_ground_shot_level_index_order(shaw_context):
    result = ground(Proposal("one", "shot", QuerySpec.of(terms=["freedom"])),
                    shaw_context)
    assert [r.ref_id for r in result.matched] == ["9", "10"]


def test_integrate_grounded_story():
    bp = fresh_blueprint()
    out = integrate_story_grounded(bp)
    assert out.iteration == 1
    assert out.stages[0].grounded_levels == ("story",)
    assert out.stages[1] == bp.stages[1]


def test_integrate_unsupported_changes_only_iteration():
    bp = fresh_blueprint()
    result = GroundingResult(Proposal("one", "story", QuerySpec.of(terms=["x"])),
                             (), "unsupported")
    out = integrate(bp, result)
    assert out.stages == bp.stages
    assert out.iteration == bp.iteration + 1
    assert out.status == bp.status


def test_integrate_shot_level_resolves_refs(shaw_context, collection):
    bp = fresh_blueprint()
    for level, query in (("story", QuerySpec.of()),
                         ("character", QuerySpec.of(characters=["Andy"])),
                         ("event", QuerySpec.of())):
        result = ground(Proposal("one", level, query), shaw_context)
        bp = integrate(bp, result, collection)
    result = ground(Proposal("one", "shot", QuerySpec.of(terms=["cake"])), shaw_context)
    bp = integrate(bp, result, collection)
    assert [ref.key for ref in bp.stages[0].resolved_shots] == ["shawfix:7"]
    assert bp.stages[0].fully_grounded


def test_unsupported_grounding_changes_only_iteration(shaw_context):
    rng = random.Random(59)
    vocabulary = ["xyzzy", "wedding", "riot", "spaceship", "unseen"]
    bp = fresh_blueprint()
    for _ in range(200):
        level = bp.first_ungrounded().next_level()
        query = QuerySpec.of(terms=[rng.choice(vocabulary)])
        result = ground(Proposal(bp.first_ungrounded().stage_name, level, query),
                        shaw_context)
        assert result.verdict == "unsupported"
        after = integrate(bp, result)
        assert after.stages == bp.stages
        assert after.iteration == bp.iteration + 1
        bp = after


def test_integrate_rejects_unknown_stage():
    result = GroundingResult(Proposal("ghost", "story", QuerySpec.of()), (), "unsupported")
    with pytest.raises(Exception, match="not in blueprint"):
        integrate(fresh_blueprint(), result)


# ---------------------------------------------------------------------------
# the full loop


def golden_session():
    return next(s for s in ff.feasible_sessions()
                if s.instruction_id == "feasible-golden")


def run_golden_plan(shaw_context):
    session = golden_session()
    provider = QueueCompletionProvider(session.responses[1:])  # skip parse response
    instruction = instruction_from_dict(json.loads(json.dumps({
        "raw_text": session.text,
        "source_selection": ["shawfix"],
        "target_content": [],
        "temporal_requirement": {"kind": "chronological", "duration_limit": None},
        "editing_operations": [],
    })))
    return plan(instruction, shaw_context, provider)


def test_plan_golden_fixture(shaw_context):
    script = run_golden_plan(shaw_context)
    assert not isinstance(script, Rejection)
    assert [ref.key for ref, _ in script.entries] == ff.GOLDEN_SHOTS
    assert len({stage for _, stage in script.entries}) == 3
    assert script.provenance.status == "grounded"
    assert script.provenance.iteration == 12


def test_plan_grounds_strictly_top_down(shaw_context):
    script = run_golden_plan(shaw_context)
    for stage in script.provenance.stages:
        assert stage.grounded_levels == ("story", "character", "event", "shot")


def test_plan_deterministic_bytes(shaw_context):
    runs = {script_bytes(run_golden_plan(shaw_context)) for _ in range(3)}
    assert len(runs) == 1


def test_plan_zero_budget_rejects(shaw_context):
    session = golden_session()
    provider = QueueCompletionProvider(session.responses[1:])
    result = plan(make_instruction(session.text), shaw_context, provider,
                  max_iterations=0)
    assert isinstance(result, Rejection)
    assert result.iterations_used == 0


def test_plan_rejects_on_infeasibility_token(shaw_context):
    session = next(s for s in ff.adversarial_sessions()
                   if s.instruction_id == "adv-absent-character")
    provider = QueueCompletionProvider(session.responses[1:])
    result = plan(make_instruction(session.text), shaw_context, provider)
    assert isinstance(result, Rejection)
    assert "infeasibility" in result.reason
    assert result.failed_proposals  # the failed character lookups are recorded


def test_plan_rejects_on_identical_repeat(shaw_context):
    session = next(s for s in ff.adversarial_sessions()
                   if s.instruction_id == "adv-impossible-event")
    provider = QueueCompletionProvider(session.responses[1:])
    result = plan(make_instruction(session.text), shaw_context, provider)
    assert isinstance(result, Rejection)
    assert "repeated" in result.reason


class EndlessDirector:
    """Uncooperative director: inexhaustible, never repeats, never grounds."""

    def __init__(self):
        self.count = 0

    def complete(self, request):
        from cineforge.providers import CompletionResponse
        self.count += 1
        if "Draft the staged blueprint" in request.user:
            return CompletionResponse(json.dumps({"stages": [
                {"name": "a", "intent": ""}, {"name": "b", "intent": ""},
                {"name": "c", "intent": ""}]}))
        return CompletionResponse(json.dumps({"terms": [f"nonsense{self.count}"]}))


def test_plan_always_terminates_within_budget(shaw_context):
    director = EndlessDirector()
    result = plan(make_instruction(), shaw_context, director, max_iterations=40,
                  per_stage_cap=999)
    assert isinstance(result, Rejection)
    assert result.iterations_used == 40
    assert "budget" in result.reason


def test_per_stage_cap_triggers_rejection(shaw_context):
    director = EndlessDirector()
    result = plan(make_instruction(), shaw_context, director, max_iterations=999,
                  per_stage_cap=12)
    assert isinstance(result, Rejection)
    assert "12-step" in result.reason
    assert result.iterations_used <= 12


def test_compiled_shots_reachable_from_evidence(shaw_context):
    script = run_golden_plan(shaw_context)
    for stage in script.provenance.stages:
        shot_evidence = {f"{r.source_id}:{r.ref_id}" for r in stage.evidence
                         if r.level == "shot"}
        for ref in stage.resolved_shots:
            assert ref.key in shot_evidence


def test_duplicate_shots_keep_earliest_stage(shaw_context, collection):
    # two stages resolving the same shot: the final script holds one copy,
    # tagged with the first stage
    responses = [json.dumps({"stages": [{"name": "first", "intent": ""},
                                        {"name": "second", "intent": ""},
                                        {"name": "third", "intent": ""}]})]
    queries = [
        {"terms": ["hope"]}, {"characters": ["Andy"]}, {"terms": ["arrival"]},
        {"terms": ["cake"]},
        {"terms": ["hope"]}, {"characters": ["Andy"]}, {"terms": ["plans"]},
        {"terms": ["cake"]},
        {"terms": ["hope"]}, {"characters": ["Red"]}, {"terms": ["hope"]},
        {"terms": ["dawn"]},
    ]
    responses += [json.dumps(q) for q in queries]
    result = plan(make_instruction(), shaw_context, QueueCompletionProvider(responses))
    assert [(ref.key, stage) for ref, stage in result.entries] == \
        [("shawfix:7", "first"), ("shawfix:11", "third")]
