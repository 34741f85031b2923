"""Deterministic stand-ins for the chat model and the detector.

The scripted chat model answers from an affordance knowledge base and phrases
its replies as ordinary prose so the response parser is exercised end to end.
The scripted detector replays manifest ground truth through a seeded noise
model.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from affordlab.backends.base import ChatBackend, ChatSession, Detector, DetectorRequest
from affordlab.domain import BBox, Detection, ImageManifest, ObjectClass, QualifiedObject
from affordlab.errors import DataError, ScriptGap, UnknownImage
from affordlab.prompts import PromptStep, PromptText, indefinite_article

_MASS_RE = re.compile(r"(\d+(?:\.\d+)?)\s*kg\b", re.IGNORECASE)


def _key(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class AffordanceKB:
    """Lookup tables behind the scripted chat model.

    ``feasibility`` maps action -> size class -> object -> approved property
    values.  An object listed with no values is known but never feasible.
    """

    objects: Mapping[tuple[str, str], tuple[str, ...]]
    relevance: Mapping[str, tuple[str, ...]]
    feasibility: Mapping[str, Mapping[str, Mapping[str, frozenset[str]]]]
    small_max_kg: float = 10.0

    def __post_init__(self):
        known = {obj for objs in self.objects.values() for obj in objs}
        for action, sizes in self.feasibility.items():
            for size, table in sizes.items():
                missing = set(table) - known
                if missing:
                    raise DataError(
                        f"feasibility objects {sorted(missing)} ({action}/{size}) never elicited"
                    )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AffordanceKB:
        objects = {
            (_key(row["action"]), _key(row["effect"])): tuple(row["objects"])
            for row in data["object_table"]
        }
        relevance = {_key(k): tuple(v) for k, v in data["relevance_table"].items()}
        feasibility = {
            _key(action): {
                size: {obj: frozenset(vals) for obj, vals in table.items()}
                for size, table in sizes.items()
            }
            for action, sizes in data["feasibility_table"].items()
        }
        small = float(data.get("size_classes", {}).get("small_max_kg", 10.0))
        return cls(objects, relevance, feasibility, small)

    @classmethod
    def load(cls, path: str | Path | None = None) -> AffordanceKB:
        if path is None:
            text = resources.files("affordlab.fixtures").joinpath("affordance_kb.json").read_text()
        else:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise DataError(f"cannot read knowledge base {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"malformed knowledge base: {exc!r}") from exc

    def size_class(self, mass_kg: float) -> str:
        return "small" if mass_kg <= self.small_max_kg else "large"

    def candidates(self, action: str, effect: str) -> tuple[str, ...]:
        try:
            return self.objects[(_key(action), _key(effect))]
        except KeyError:
            raise ScriptGap(f"no object entry for ({action!r}, {effect!r})") from None

    def relevant(self, action: str) -> tuple[str, ...]:
        try:
            return self.relevance[_key(action)]
        except KeyError:
            raise ScriptGap(f"no relevance entry for {action!r}") from None

    def approved(self, size: str, action: str, obj: str) -> frozenset[str]:
        try:
            return self.feasibility[_key(action)][size][obj]
        except KeyError:
            raise ScriptGap(f"no feasibility entry for ({size}, {action!r}, {obj!r})") from None

    def feasible(self, size: str, action: str, obj: str, value: str) -> bool:
        return value in self.approved(size, action, obj)


class ScriptedChat(ChatBackend):
    """Answers dialogue prompts from an :class:`AffordanceKB`.

    The robot's size class is read back from the embodiment turn in the session
    history, so feasibility answers depend on chain context like a real model.
    """

    def __init__(self, kb: AffordanceKB | None = None):
        self.kb = kb or AffordanceKB.load()

    def _size(self, session: ChatSession) -> str:
        for text in session.user_messages():
            m = _MASS_RE.search(text)
            if m:
                return self.kb.size_class(float(m.group(1)))
        raise ScriptGap("no robot mass found in the session history")

    def _complete(self, session: ChatSession, prompt: PromptText) -> str:
        step = prompt.step
        try:
            if step is PromptStep.EMBODIMENT:
                return (
                    f"Understood. You are a {prompt.slot('robot_type')} robot weighing "
                    f"{prompt.slot('mass_kg')} kg; I will take that into account."
                )
            if step is PromptStep.OBJECT_ELICITATION:
                names = self.kb.candidates(prompt.slot("action"), prompt.slot("effect"))
                names = names[: int(prompt.slot("n"))]
                lines = [f"{i}. {name.capitalize()}" for i, name in enumerate(names, 1)]
                return "Here are objects that could help:\n" + "\n".join(lines)
            if step is PromptStep.PROPERTY_RELEVANCE:
                relevant = set(self.kb.relevant(prompt.slot("action")))
                dims = [d.strip() for d in prompt.slot("dimensions").split(",")]
                sentences = []
                for dim in dims:
                    if dim in relevant:
                        sentences.append(f"{dim.capitalize()} is relevant for this task.")
                    else:
                        sentences.append(f"{dim.capitalize()} is not relevant.")
                return " ".join(sentences)
            if step is PromptStep.FEASIBILITY:
                size = self._size(session)
                goal, obj, value = prompt.slot("goal"), prompt.slot("object"), prompt.slot("property_value")
                art = indefinite_article(value)
                if self.kb.feasible(size, goal, obj, value):
                    return f"Yes, the robot can {goal} {art} {value} {obj}{prompt.slot('manner')}."
                return f"No, {art} {value} {obj} is not suitable for the robot to {goal}."
            if step is PromptStep.CONFIRMATION:
                size = self._size(session)
                action, obj = prompt.slot("action"), prompt.slot("object")
                if self.kb.approved(size, action, obj):
                    return f"Yes, some kinds of {obj} would work."
                return f"No, a {obj} will not help with that."
        except KeyError as exc:
            raise ScriptGap(f"prompt for {step.value} lacks slot {exc}") from None
        raise ScriptGap(f"unsupported prompt step {step!r}")


@dataclass(frozen=True)
class NoiseModel:
    """Seeded corruption of ground-truth detections.

    p_miss: chance a matching object is not reported.
    p_conf: chance an object is reported for a phrase whose property it lacks.
    clutter_rate: mean number of spurious low-confidence boxes per call.
    jitter: standard deviation of additive confidence noise.
    """

    p_miss: float = 0.0
    p_conf: float = 0.0
    clutter_rate: float = 0.0
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_miss", "p_conf"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DataError(f"{name}={value} outside [0, 1]")
        if self.clutter_rate < 0 or self.jitter < 0:
            raise DataError("clutter_rate and jitter must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise DataError("seed must be a 64-bit unsigned integer")

    def with_seed(self, seed: int) -> NoiseModel:
        return NoiseModel(self.p_miss, self.p_conf, self.clutter_rate, self.jitter, seed % 2**64)


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _round(x: float) -> float:
    return round(float(x), 6)


class ScriptedDetector(Detector):
    """Replays manifest annotations as detections under a :class:`NoiseModel`.

    Each call draws from a generator seeded by (seed, image, object class), so
    results do not depend on call order.  Queries for the same object class on
    the same image share draws: the bare-class query and every property
    variant see the same misses, confusions and clutter.
    """

    def __init__(self, manifest: ImageManifest, noise: NoiseModel | None = None, base_confidence: float = 0.8):
        if not 0.0 <= base_confidence <= 1.0:
            raise DataError("base_confidence must lie in [0, 1]")
        self.manifest = manifest
        self.noise = noise or NoiseModel()
        self.base_confidence = base_confidence

    def _detect(self, req: DetectorRequest) -> list[Detection]:
        if req.image_id not in self.manifest:
            raise UnknownImage(req.image_id)
        entry = self.manifest[req.image_id]
        noise = self.noise
        phrase = req.phrase
        obj: ObjectClass = phrase.object
        rng = np.random.default_rng(derive_seed(noise.seed, entry.image_id, obj.name))
        out = []
        for ann in entry.annotations:
            if ann.object != obj:
                continue
            u_miss, u_conf, z = rng.random(), rng.random(), rng.standard_normal()
            if u_miss < noise.p_miss:
                continue
            if isinstance(phrase, QualifiedObject) and not ann.matches(phrase) and not u_conf < noise.p_conf:
                continue
            conf = min(1.0, max(0.0, self.base_confidence + noise.jitter * z))
            out.append(Detection(entry.image_id, ann.box, _round(conf), phrase))
        n_clutter = int(rng.poisson(noise.clutter_rate))
        w, h = entry.width_px, entry.height_px
        for _ in range(n_clutter):
            bw, bh = rng.uniform(0.05, 0.3) * w, rng.uniform(0.05, 0.3) * h
            x1, y1 = rng.uniform(0, w - bw), rng.uniform(0, h - bh)
            lo = req.threshold
            conf = rng.uniform(lo, min(1.0, lo + 0.25))
            box = BBox(round(x1, 2), round(y1, 2), round(x1 + bw, 2), round(y1 + bh, 2))
            out.append(Detection(entry.image_id, box, _round(conf), phrase))
        return out
