import base64
import json
import math

import httpx
import pytest

from affordlab.backends import (
    AffordanceKB,
    ChatBackend,
    ChatSession,
    DetectorRequest,
    HttpChat,
    HttpDetector,
    NoiseModel,
    Role,
    ScriptedChat,
    ScriptedDetector,
    derive_seed,
)
from affordlab.domain import Annotation, BBox, ImageEntry, ImageManifest, ObjectClass, QualifiedObject, Requirements
from affordlab.errors import BackendUnavailable, DataError, ScriptGap, UnknownImage
from affordlab.parsing import parse_verdict
from affordlab.prompts import PromptEngine
from affordlab.scenarios import LARGE_ROBOT, SMALL_ROBOT

ENGINE = PromptEngine()
STAND = Requirements("stand on", "increase robot's height", ("safe", "reliable"))


def qo(value, obj):
    return QualifiedObject(ObjectClass(obj), "material", value)


def chain(chat, robot, pair):
    session = ChatSession()
    chat.chat(session, ENGINE.render_embodiment(robot))
    return chat.chat(session, ENGINE.render_feasibility("stand on", pair, STAND.conditions)), session


def test_session_grows_by_two(chat):
    session = ChatSession()
    chat.chat(session, ENGINE.render_embodiment(SMALL_ROBOT))
    assert len(session) == 2
    chat.chat(session, ENGINE.render_object_elicitation(STAND, 5))
    assert len(session) == 4
    assert [m.role for m in session.messages] == [Role.USER, Role.ASSISTANT] * 2


def test_session_rejects_bad_alternation():
    session = ChatSession()
    with pytest.raises(DataError):
        session.append(Role.ASSISTANT, "hi")


class Failing(ChatBackend):
    def _complete(self, session, prompt):
        raise BackendUnavailable("down")


def test_failed_call_leaves_session_unchanged():
    session = ChatSession()
    with pytest.raises(BackendUnavailable):
        Failing().chat(session, ENGINE.render_embodiment(SMALL_ROBOT))
    assert len(session) == 0


def test_scripted_stool_example(chat):
    reply, _ = chain(chat, LARGE_ROBOT, qo("metal", "stool"))
    assert parse_verdict(reply).affirmative
    reply, _ = chain(chat, LARGE_ROBOT, qo("wood", "stool"))
    assert not parse_verdict(reply).affirmative
    reply, _ = chain(chat, SMALL_ROBOT, qo("wood", "stool"))
    assert parse_verdict(reply).affirmative


def test_scripted_replies_are_prose(chat):
    reply, _ = chain(chat, SMALL_ROBOT, qo("paper", "book"))
    assert reply.startswith("Yes") and "paper book" in reply


def test_scripted_needs_embodiment(chat):
    with pytest.raises(ScriptGap):
        chat.chat(ChatSession(), ENGINE.render_feasibility("stand on", qo("metal", "stool")))


def test_scripted_gap_for_unknown_task(chat):
    session = ChatSession()
    chat.chat(session, ENGINE.render_embodiment(SMALL_ROBOT))
    with pytest.raises(ScriptGap):
        chat.chat(session, ENGINE.render_object_elicitation(Requirements("juggle", "entertain"), 5))
    assert len(session) == 2


def test_kb_validation():
    with pytest.raises(DataError):
        AffordanceKB.from_dict(
            {
                "object_table": [{"action": "a", "effect": "b", "objects": ["box"]}],
                "relevance_table": {"a": ["material"]},
                "feasibility_table": {"a": {"small": {"ghost": ["wood"]}}},
            }
        )


def test_kb_size_class(kb):
    assert kb.size_class(5) == "small"
    assert kb.size_class(10) == "small"
    assert kb.size_class(50) == "large"


def _one_image(n_anns=1, material="wood"):
    anns = tuple(
        Annotation(ObjectClass("box"), (("material", material),), BBox(10 + 60 * k, 10, 60 + 60 * k, 60))
        for k in range(n_anns)
    )
    return ImageManifest((ImageEntry("img", "img.jpg", 640, 480, anns),))


def test_detector_zero_noise_passthrough(furniture):
    det = ScriptedDetector(furniture)
    entry = furniture["furn02"]
    out = det.detect(DetectorRequest.for_image(entry, ObjectClass("box")))
    assert sorted(d.box.as_list() for d in out) == sorted(a.box.as_list() for a in entry.annotations)
    assert all(d.confidence == 0.8 for d in out)
    only = det.detect(DetectorRequest.for_image(entry, qo("paper", "box")))
    assert [d.box for d in only] == [a.box for a in entry.annotations if a.get("material") == "paper"]
    assert det.detect(DetectorRequest.for_image(entry, ObjectClass("stool"))) == []


def test_detector_full_confusion_equals_object_query(furniture):
    det = ScriptedDetector(furniture, NoiseModel(p_conf=1.0))
    entry = furniture["furn05"]
    plain = det.detect(DetectorRequest.for_image(entry, ObjectClass("stool")))
    confused = det.detect(DetectorRequest.for_image(entry, qo("wood", "stool")))
    assert [d.box for d in plain] == [d.box for d in confused]


def test_detector_unknown_image(furniture):
    det = ScriptedDetector(furniture)
    with pytest.raises(UnknownImage):
        det.detect(DetectorRequest("nope", "x", ObjectClass("box")))


def test_detector_deterministic_and_order_free():
    m = _one_image(3)
    noise = NoiseModel(p_miss=0.3, clutter_rate=2.0, jitter=0.1, seed=11)
    a = ScriptedDetector(m, noise)
    b = ScriptedDetector(m, noise)
    req = DetectorRequest.for_image(m["img"], ObjectClass("box"))
    other = DetectorRequest.for_image(m["img"], ObjectClass("cup"))
    first = a.detect(req)
    b.detect(other)
    assert b.detect(req) == first == a.detect(req)


def test_detector_threshold_enforced():
    m = _one_image(4)
    det = ScriptedDetector(m, NoiseModel(jitter=0.5, clutter_rate=3.0, seed=3))
    for thr in (0.0, 0.3, 0.7, 0.95):
        for seed in range(30):
            det.noise = NoiseModel(jitter=0.5, clutter_rate=3.0, seed=seed)
            out = det.detect(DetectorRequest.for_image(m["img"], ObjectClass("box"), thr))
            assert all(d.confidence >= thr for d in out)
            assert all(d.box.within(640, 480) for d in out)


def _frequency(noise_kwargs, phrase, expect_p, trials=10_000):
    m = _one_image(1)
    req = DetectorRequest.for_image(m["img"], phrase)
    hits = 0
    for seed in range(trials):
        det = ScriptedDetector(m, NoiseModel(seed=seed, **noise_kwargs))
        hits += bool(det.detect(req))
    sigma = math.sqrt(trials * expect_p * (1 - expect_p))
    assert abs(hits - trials * expect_p) <= 3 * sigma, hits


def test_confusion_rate_within_three_sigma():
    _frequency({"p_conf": 0.3}, qo("metal", "box"), 0.3)


def test_miss_rate_within_three_sigma():
    _frequency({"p_miss": 0.2}, ObjectClass("box"), 0.8)


def test_noise_validation():
    with pytest.raises(DataError):
        NoiseModel(p_conf=1.5)
    with pytest.raises(DataError):
        NoiseModel(jitter=-1)


def test_derive_seed_stable():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert 0 <= derive_seed("x") < 2**64


# HTTP adapters.


def _chat_client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_chat_wire_format():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        assert request.headers["authorization"] == "Bearer k"
        return httpx.Response(200, json={"choices": [{"message": {"content": "Yes."}}]})

    chat = HttpChat("http://llm/v1/chat", "m1", api_key="k", client=_chat_client(handler))
    session = ChatSession()
    assert chat.chat(session, ENGINE.render_embodiment(SMALL_ROBOT)) == "Yes."
    chat.chat(session, ENGINE.render_object_elicitation(STAND, 3))
    body = seen[-1]
    assert body["model"] == "m1" and body["temperature"] == 0
    assert [m["role"] for m in body["messages"]] == ["user", "assistant", "user"]


def test_http_chat_retries_transient_then_succeeds():
    calls, sleeps = [], []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    chat = HttpChat("http://llm", "m", api_key="", client=_chat_client(handler), sleep=sleeps.append)
    assert chat.chat(ChatSession(), ENGINE.render_embodiment(SMALL_ROBOT)) == "ok"
    assert len(calls) == 3 and sleeps == [0.5, 1.0]


def test_http_chat_gives_up_after_retries():
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("refused")

    chat = HttpChat("http://llm", "m", client=_chat_client(handler), sleep=lambda s: None)
    session = ChatSession()
    with pytest.raises(BackendUnavailable):
        chat.chat(session, ENGINE.render_embodiment(SMALL_ROBOT))
    assert len(calls) == 4 and len(session) == 0


def test_http_auth_failure_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, json={"error": "bad key"})

    chat = HttpChat("http://llm", "m", client=_chat_client(handler), sleep=lambda s: None)
    with pytest.raises(BackendUnavailable, match="401"):
        chat.chat(ChatSession(), ENGINE.render_embodiment(SMALL_ROBOT))
    assert len(calls) == 1


def test_http_chat_bad_shape():
    chat = HttpChat("http://llm", "m", client=_chat_client(lambda r: httpx.Response(200, json={})))
    with pytest.raises(BackendUnavailable):
        chat.chat(ChatSession(), ENGINE.render_embodiment(SMALL_ROBOT))


def test_http_detector_wire_format_and_rescale(tmp_path):
    image = tmp_path / "a.jpg"
    image.write_bytes(b"\xff\xd8fake")
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(
            200,
            json={
                "boxes": [[10, 10, 50, 50], [-5, 0, 700, 100], [5, 5, 5, 9], [0, 0, 20, 20]],
                "scores": [90, 45, 80, 10],
                "labels": ["metal stool"] * 4,
            },
        )

    entry = ImageEntry("a", str(image), 640, 480)
    det = HttpDetector("http://vlm", client=_chat_client(handler), score_scale=100)
    out = det.detect(DetectorRequest.for_image(entry, qo("metal", "stool")))
    body = seen[0]
    assert body["queries"] == ["metal stool"] and body["box_threshold"] == 0.3
    assert base64.b64decode(body["image"]) == b"\xff\xd8fake"
    assert [d.confidence for d in out] == [0.9, 0.45]
    assert out[1].box.as_list() == [0.0, 0.0, 640.0, 100.0]


def test_http_detector_missing_image():
    det = HttpDetector("http://vlm", client=_chat_client(lambda r: httpx.Response(200)))
    with pytest.raises(UnknownImage):
        det.detect(DetectorRequest("a", "/no/such/file.jpg", ObjectClass("box")))
