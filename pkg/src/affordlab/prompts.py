"""Prompt templates for every turn of the dialogue.

Rendering is pure: the same inputs always produce byte-identical text.  The
default templates can be overridden by a JSON file mapping template names to
format strings; every placeholder must belong to that template's slot set.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from affordlab.domain import ObjectClass, PropertyCatalog, QualifiedObject, Requirements, RobotSpec, format_number
from affordlab.errors import PromptTooLong, TemplateError

DEFAULT_MAX_CHARS = 4000


class PromptStep(str, Enum):
    EMBODIMENT = "embodiment"
    OBJECT_ELICITATION = "object_elicitation"
    CONFIRMATION = "confirmation"
    PROPERTY_RELEVANCE = "property_relevance"
    FEASIBILITY = "feasibility"


DEFAULT_TEMPLATES: dict[str, str] = {
    "embodiment": "I am {article} {robot_type} robot with {attributes}.",
    "object_elicitation": (
        "Which {n} {objects} could the robot {action} in order to {effect}? "
        "Reply with a numbered list of {n} object {names}, one per line."
    ),
    "object_elicitation_retry": (
        "Please answer again with only a numbered list of {n} object {names}, one per line: "
        "which {objects} could the robot {action} in order to {effect}?"
    ),
    "confirmation": "Can the robot {action} {article} {object} in order to {effect}?",
    "property_relevance": (
        "Which of the following object properties are relevant to decide whether the robot "
        "can {action} an object in order to {effect}?\n{listing}\n"
        "Answer using only the property names listed above."
    ),
    "feasibility": "can the robot {goal} {article} {property_value} {object}{manner}?",
    "feasibility_retry": "Answer yes or no: {question}",
}

TEMPLATE_SLOTS: dict[str, frozenset[str]] = {
    "embodiment": frozenset({"article", "robot_type", "attributes", "mass_kg", "height_cm"}),
    "object_elicitation": frozenset({"n", "objects", "names", "action", "effect"}),
    "object_elicitation_retry": frozenset({"n", "objects", "names", "action", "effect"}),
    "confirmation": frozenset({"action", "article", "object", "effect"}),
    "property_relevance": frozenset({"action", "effect", "listing", "dimensions"}),
    "feasibility": frozenset(
        {"goal", "article", "property_value", "property_dim", "object", "manner", "conditions"}
    ),
    "feasibility_retry": frozenset({"question"}),
}

_TEMPLATE_STEP = {
    "embodiment": PromptStep.EMBODIMENT,
    "object_elicitation": PromptStep.OBJECT_ELICITATION,
    "object_elicitation_retry": PromptStep.OBJECT_ELICITATION,
    "confirmation": PromptStep.CONFIRMATION,
    "property_relevance": PromptStep.PROPERTY_RELEVANCE,
    "feasibility": PromptStep.FEASIBILITY,
    "feasibility_retry": PromptStep.FEASIBILITY,
}


@dataclass(frozen=True)
class PromptText:
    """Rendered prompt plus the slot values used to fill it.

    ``slots`` lets scripted backends answer without re-parsing the text.
    """

    text: str
    step: PromptStep
    template: str = ""
    slots: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.text.strip():
            raise TemplateError("rendered prompt is empty")

    def slot(self, name: str) -> str:
        for k, v in self.slots:
            if k == name:
                return v
        raise KeyError(name)


def indefinite_article(word: str) -> str:
    return "an" if word[:1].lower() in "aeiou" else "a"


def _placeholders(template: str) -> set[str]:
    try:
        return {f for _, f, _, _ in string.Formatter().parse(template) if f is not None}
    except ValueError as exc:
        raise TemplateError(f"malformed template {template!r}: {exc}") from exc


def load_templates(path: str | Path) -> dict[str, str]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TemplateError(f"cannot read template file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise TemplateError("template file must be a JSON object keyed by template name")
    return data


class PromptEngine:
    def __init__(self, templates: Mapping[str, str] | None = None, max_chars: int = DEFAULT_MAX_CHARS):
        merged = dict(DEFAULT_TEMPLATES)
        for name, text in (templates or {}).items():
            if name not in DEFAULT_TEMPLATES:
                raise TemplateError(f"unknown template name {name!r}")
            if not isinstance(text, str):
                raise TemplateError(f"template {name!r} must be a string")
            merged[name] = text
        for name, text in merged.items():
            extra = _placeholders(text) - TEMPLATE_SLOTS[name]
            if extra:
                raise TemplateError(f"template {name!r} uses unknown placeholders {sorted(extra)}")
        self.templates = merged
        self.max_chars = max_chars

    @classmethod
    def from_file(cls, path: str | Path | None, max_chars: int = DEFAULT_MAX_CHARS) -> PromptEngine:
        return cls(load_templates(path) if path else None, max_chars=max_chars)

    def _render(self, name: str, **slots: str) -> PromptText:
        text = self.templates[name].format(**slots)
        if len(text) > self.max_chars:
            raise PromptTooLong(f"{name} prompt is {len(text)} chars, cap is {self.max_chars}")
        return PromptText(text, _TEMPLATE_STEP[name], name, tuple(sorted(slots.items())))

    def render_embodiment(self, robot: RobotSpec) -> PromptText:
        parts = [f"weight {format_number(robot.mass_kg)} kg", f"height {format_number(robot.height_cm)} cm"]
        if robot.width_cm is not None:
            parts.append(f"width {format_number(robot.width_cm)} cm")
        if robot.manipulator:
            parts.append(f"manipulator {robot.manipulator}")
        parts.extend(f"{k} {v}" for k, v in robot.extra)
        return self._render(
            "embodiment",
            article=indefinite_article(robot.robot_type),
            robot_type=robot.robot_type,
            attributes=", ".join(parts),
            mass_kg=format_number(robot.mass_kg),
            height_cm=format_number(robot.height_cm),
        )

    def render_object_elicitation(self, req: Requirements, n: int, retry: bool = False) -> PromptText:
        if n < 1:
            raise ValueError("n must be at least 1")
        return self._render(
            "object_elicitation_retry" if retry else "object_elicitation",
            n=str(n),
            objects="object" if n == 1 else "objects",
            names="name" if n == 1 else "names",
            action=req.action,
            effect=req.effect,
        )

    def render_confirmation(self, req: Requirements, obj: ObjectClass) -> PromptText:
        return self._render(
            "confirmation",
            action=req.action,
            article=indefinite_article(obj.name),
            object=obj.name,
            effect=req.effect,
        )

    def _relevance(self, req: Requirements, catalog: PropertyCatalog) -> PromptText:
        listing = "\n".join(f"- {name}: {', '.join(values)}" for name, values in catalog.dimensions)
        return self._render(
            "property_relevance",
            action=req.action,
            effect=req.effect,
            listing=listing,
            dimensions=", ".join(catalog.names),
        )

    def render_property_relevance(self, req: Requirements, catalog: PropertyCatalog) -> PromptText:
        if not catalog.dimensions:
            raise ValueError("catalog must have at least one dimension")
        return self._relevance(req, catalog)

    def render_property_relevance_chunks(
        self, req: Requirements, catalog: PropertyCatalog
    ) -> list[PromptText]:
        """One prompt if it fits under the cap, otherwise one prompt per group of dimensions."""
        try:
            return [self.render_property_relevance(req, catalog)]
        except PromptTooLong:
            pass
        chunks: list[PromptText] = []
        current: list[tuple[str, tuple[str, ...]]] = []
        for dim in catalog.dimensions:
            try:
                self._relevance(req, PropertyCatalog(tuple(current + [dim])))
                current.append(dim)
            except PromptTooLong:
                if not current:
                    raise
                chunks.append(self._relevance(req, PropertyCatalog(tuple(current))))
                current = [dim]
        chunks.append(self._relevance(req, PropertyCatalog(tuple(current))))
        return chunks

    def render_feasibility(
        self, goal: str, qo: QualifiedObject, conditions: Sequence[str] = ()
    ) -> PromptText:
        conds = " and ".join(conditions)
        return self._render(
            "feasibility",
            goal=goal,
            article=indefinite_article(qo.property_value),
            property_value=qo.property_value,
            property_dim=qo.property_dim,
            object=qo.object.name,
            manner=f" in a {conds} manner" if conds else "",
            conditions=conds,
        )

    def render_clarification(self, question: PromptText) -> PromptText:
        rendered = self._render("feasibility_retry", question=question.text)
        # Carry the original slots so scripted backends can answer the retry.
        return PromptText(rendered.text, rendered.step, rendered.template, question.slots)


_DEFAULT_ENGINE = PromptEngine()


def render_embodiment(robot: RobotSpec) -> PromptText:
    return _DEFAULT_ENGINE.render_embodiment(robot)


def render_object_elicitation(req: Requirements, n: int) -> PromptText:
    return _DEFAULT_ENGINE.render_object_elicitation(req, n)


def render_feasibility(goal: str, qo: QualifiedObject, conditions: Sequence[str] = ()) -> PromptText:
    return _DEFAULT_ENGINE.render_feasibility(goal, qo, conditions)


def render_property_relevance(req: Requirements, catalog: PropertyCatalog) -> PromptText:
    return _DEFAULT_ENGINE.render_property_relevance(req, catalog)
