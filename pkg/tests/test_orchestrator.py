import pytest

from affordlab.backends import ChatBackend, NoiseModel, ScriptedChat, ScriptedDetector
from affordlab.domain import (
    DEFAULT_CATALOG,
    Annotation,
    BBox,
    ImageEntry,
    ImageManifest,
    ObjectClass,
    Outcome,
    Requirements,
)
from affordlab.errors import BackendUnavailable
from affordlab.orchestrator import DialogueConfig, affirmed_pairs, run_dialogue, stage_sequence
from affordlab.prompts import PromptStep
from affordlab.scenarios import LARGE_ROBOT, SMALL_ROBOT, STAND_HEIGHT

SMALL_STAND_SETS = {
    "basket": {"plastic", "metal"},
    "bench": {"plastic", "metal"},
    "box": {"plastic"},
    "book": {"plastic", "paper"},
    "ladder": {"plastic", "metal"},
    "stool": {"plastic", "metal", "wood"},
}


class Recording(ChatBackend):
    """Wraps a backend and keeps every session it was handed."""

    def __init__(self, inner, override=None):
        self.inner = inner
        self.override = override or (lambda session, prompt, calls: None)
        self.sessions = []
        self.calls = 0

    def _complete(self, session, prompt):
        self.calls += 1
        if not self.sessions or self.sessions[-1] is not session:
            self.sessions.append(session)
        forced = self.override(session, prompt, self.calls)
        if forced is not None:
            return forced
        return self.inner._complete(session, prompt)


def run(robot, images, chat, cfg=DialogueConfig(), req=STAND_HEIGHT, noise=None):
    return run_dialogue(robot, req, DEFAULT_CATALOG, images, cfg, chat, ScriptedDetector(images, noise))


def test_small_robot_matches_embodiment_table(furniture, chat):
    rep = run(SMALL_ROBOT, furniture, chat)
    assert rep.outcome is Outcome.OK
    assert rep.approved_by_object() == SMALL_STAND_SETS


def test_stools_example_large_robot(furniture, chat):
    rep = run(LARGE_ROBOT, furniture, chat)
    approved = rep.approved_by_object()
    assert approved["stool"] == {"plastic", "metal"}
    assert "book" not in approved
    stool_hits = {d.phrase.property_value for d in rep.ranked if d.phrase.object.name == "stool"}
    assert stool_hits == {"plastic", "metal"}


def test_stage_order_and_feasibility_phrasing(furniture, chat):
    rep = run(SMALL_ROBOT, furniture, chat)
    assert stage_sequence(rep.trace) == [
        "embodiment",
        "object_elicitation",
        "object_detection",
        "property_relevance",
        "feasibility",
        "qualified_detection",
        "ranking",
    ]
    prompts = [e.prompt for e in rep.trace if e.step == "feasibility"]
    assert "can the robot stand on a plastic box in a safe and reliable manner?" in prompts


def test_conditions_omitted_drop_manner_clause(furniture, chat):
    req = Requirements(STAND_HEIGHT.action, STAND_HEIGHT.effect)
    rep = run(SMALL_ROBOT, furniture, chat, req=req)
    prompts = [e.prompt for e in rep.trace if e.step == "feasibility"]
    assert prompts and all("manner" not in p for p in prompts)
    assert "can the robot stand on a plastic box?" in prompts


def test_empty_world_gives_no_approved_pairs(chat):
    anns = (Annotation(ObjectClass("sofa"), (("material", "wood"),), BBox(0, 0, 10, 10)),)
    images = ImageManifest((ImageEntry("empty", "e.jpg", 100, 100, anns),))
    rep = run(SMALL_ROBOT, images, chat)
    assert rep.outcome is Outcome.NO_APPROVED_PAIRS
    assert rep.ranked == () and rep.approved_pairs == ()
    assert [e.parsed for e in rep.trace if e.step == "feasibility"][0]["pairs"] == 0


def test_no_candidates_after_retry(furniture):
    def junk(session, prompt, calls):
        return "I am not sure." if prompt.step is PromptStep.OBJECT_ELICITATION else None

    chat = Recording(ScriptedChat(), junk)
    rep = run(SMALL_ROBOT, furniture, chat)
    assert rep.outcome is Outcome.NO_CANDIDATES
    elicits = [e for e in rep.trace if e.step == "object_elicitation"]
    assert len(elicits) == 2 and "Please answer again" in elicits[1].prompt


def test_ambiguous_reply_triggers_one_reprompt(furniture):
    asked = []

    def hesitant(session, prompt, calls):
        if prompt.step is PromptStep.FEASIBILITY and prompt.slot("object") == "stool":
            asked.append(prompt.text)
            if not prompt.text.startswith("Answer yes or no"):
                return "That depends on the build quality."
        return None

    rep = run(SMALL_ROBOT, furniture, Recording(ScriptedChat(), hesitant))
    assert rep.approved_by_object()["stool"] == {"plastic", "metal", "wood"}
    assert sum(t.startswith("Answer yes or no: can the robot stand on") for t in asked) == 5
    stool = [e.parsed for e in rep.trace if e.step == "feasibility" and e.parsed["pair"]["object"] == "stool"]
    assert [p["attempt"] for p in stool[:2]] == [0, 1]
    assert stool[0]["verdict"] == "ambiguous" and stool[0]["final"] is None


def test_ambiguous_twice_defaults_to_negative(furniture):
    def always_vague(session, prompt, calls):
        if prompt.step is PromptStep.FEASIBILITY and prompt.slot("object") == "book":
            return "Hard to say."
        return None

    rep = run(SMALL_ROBOT, furniture, Recording(ScriptedChat(), always_vague))
    assert "book" not in rep.approved_by_object()
    finals = [e.parsed["final"] for e in rep.trace if e.step == "feasibility" and e.parsed["pair"]["object"] == "book"]
    assert finals.count("negative") == 5 and finals.count(None) == 5


def test_single_chain_session(furniture):
    chat = Recording(ScriptedChat())
    rep = run(SMALL_ROBOT, furniture, chat)
    assert len(chat.sessions) == 1
    session = chat.sessions[0]
    asked = [e.prompt for e in rep.trace if e.reply]
    assert session.user_messages() == asked
    replies = [m.content for m in session.messages[1::2]]
    assert replies == [e.reply for e in rep.trace if e.reply]


def test_monotone_filtering(furniture, chat):
    rep = run(LARGE_ROBOT, furniture, chat, noise=NoiseModel(p_miss=0.3, p_conf=0.2, clutter_rate=1.0, seed=5))
    kept = set(next(e.parsed["kept"] for e in rep.trace if e.step == "object_detection"))
    elicited = set(next(e.parsed["objects"] for e in rep.trace if e.step == "object_elicitation"))
    assert kept <= elicited
    assert {p.object.name for p in rep.approved_pairs} <= kept
    assert {d.phrase for d in rep.ranked} <= set(rep.approved_pairs)
    audited = affirmed_pairs(rep.trace)
    assert {(p.object.name, p.property_dim, p.property_value) for p in rep.approved_pairs} == audited
    assert all(d.confidence >= 0.3 for d in rep.ranked)


def test_parallel_equals_sequential(furniture):
    noise = NoiseModel(p_miss=0.2, p_conf=0.3, clutter_rate=2.0, jitter=0.1, seed=9)
    seq = run(SMALL_ROBOT, furniture, ScriptedChat(), DialogueConfig(), noise=noise)
    par = run(SMALL_ROBOT, furniture, ScriptedChat(), DialogueConfig(parallel_detection=True), noise=noise)
    assert seq.to_json() == par.to_json()


def test_feasibility_budget(furniture):
    chat = Recording(ScriptedChat())
    rep = run(SMALL_ROBOT, furniture, chat, DialogueConfig(feasibility_budget=7))
    asked = [e for e in rep.trace if e.step == "feasibility" and e.reply]
    assert len(asked) == 7
    note = next(e.parsed for e in rep.trace if e.step == "feasibility" and not e.reply)
    assert note["budget_exhausted"] == 7
    assert len(note["skipped"]) == 6 * 5 - 7


def test_property_fallback_to_all_dimensions(furniture):
    def vague(session, prompt, calls):
        return "Hard to tell." if prompt.step is PromptStep.PROPERTY_RELEVANCE else None

    rep = run(SMALL_ROBOT, furniture, Recording(ScriptedChat(), vague))
    fallback = [e.parsed for e in rep.trace if e.step == "property_relevance" and not e.reply]
    assert fallback == [{"dimensions": ["material", "color"], "fallback": "all"}]


def test_confirmation_stage(furniture, chat):
    rep = run(LARGE_ROBOT, furniture, chat, DialogueConfig(confirm_objects=True))
    assert "confirmation" in stage_sequence(rep.trace)
    assert "book" not in rep.approved_by_object()


def test_backend_failure_propagates(furniture):
    def boom(session, prompt, calls):
        if calls == 3:
            raise BackendUnavailable("gone")
        return None

    with pytest.raises(BackendUnavailable):
        run(SMALL_ROBOT, furniture, Recording(ScriptedChat(), boom))
