"""Core value types for the affordance dialogue.

Every type here is a frozen dataclass; collections are stored as tuples so
instances can be shared freely between threads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

from affordlab.errors import DataError, EmptyLabel, InvalidBox

_LABEL_RE = re.compile(r"^[^\W_]+( [^\W_]+)*$")
_KEEP_TRAILING_S = ("ss", "us", "is")
_ES_PLURALS = ("ches", "shes", "xes", "sses")


@lru_cache(maxsize=1)
def plural_exceptions() -> dict[str, str]:
    text = resources.files("affordlab.fixtures").joinpath("plural_exceptions.json").read_text()
    return json.loads(text)


def _strip_plural(word: str) -> str:
    if not word.endswith("s") or word.endswith(_KEEP_TRAILING_S):
        return word
    if word.endswith(_ES_PLURALS) and len(word) - 2 >= 3:
        return word[:-2]
    if len(word) - 1 >= 3:
        return word[:-1]
    return word


def _singular(word: str) -> str:
    table = plural_exceptions()
    if word in table:
        return table[word]
    # Look the stripped form up again so "feets" -> "feet" -> "foot" stays idempotent.
    stripped = _strip_plural(word)
    return table.get(stripped, stripped)


def canonicalize_label(raw: str) -> str:
    """Lowercase, trim, collapse whitespace and singularise the final word.

    >>> canonicalize_label("  Ladders ")
    'ladder'
    >>> canonicalize_label("Step  Stools")
    'step stool'
    """
    words = raw.lower().split()
    if not words:
        raise EmptyLabel(f"label is empty after trimming: {raw!r}")
    words[-1] = _singular(words[-1])
    return " ".join(words)


def format_number(value: float) -> str:
    return f"{value:g}"


@dataclass(frozen=True)
class RobotSpec:
    robot_type: str
    mass_kg: float
    height_cm: float
    width_cm: float | None = None
    manipulator: str | None = None
    extra: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.robot_type.strip():
            raise DataError("robot_type must be non-empty")
        if not self.mass_kg > 0:
            raise DataError(f"mass_kg must be positive, got {self.mass_kg}")
        if not self.height_cm > 0:
            raise DataError(f"height_cm must be positive, got {self.height_cm}")
        if self.width_cm is not None and not self.width_cm > 0:
            raise DataError(f"width_cm must be positive, got {self.width_cm}")
        if isinstance(self.extra, Mapping):
            object.__setattr__(self, "extra", tuple((str(k), str(v)) for k, v in self.extra.items()))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "robot_type": self.robot_type,
            "mass_kg": self.mass_kg,
            "height_cm": self.height_cm,
        }
        if self.width_cm is not None:
            out["width_cm"] = self.width_cm
        if self.manipulator is not None:
            out["manipulator"] = self.manipulator
        if self.extra:
            out["extra"] = dict(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RobotSpec:
        try:
            return cls(
                robot_type=str(data["robot_type"]),
                mass_kg=float(data["mass_kg"]),
                height_cm=float(data["height_cm"]),
                width_cm=None if data.get("width_cm") is None else float(data["width_cm"]),
                manipulator=data.get("manipulator"),
                extra=tuple((str(k), str(v)) for k, v in (data.get("extra") or {}).items()),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid robot description: {exc}") from exc


@dataclass(frozen=True)
class Requirements:
    action: str
    effect: str
    conditions: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.action.strip():
            raise DataError("action must be non-empty")
        object.__setattr__(self, "conditions", tuple(self.conditions))


@dataclass(frozen=True)
class PropertyCatalog:
    """Ordered property dimensions, each with its canonical value labels."""

    dimensions: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        if isinstance(self.dimensions, Mapping):
            dims = tuple((k, tuple(v)) for k, v in self.dimensions.items())
            object.__setattr__(self, "dimensions", dims)
        seen_dims = set()
        for name, values in self.dimensions:
            if name != canonicalize_label(name) or name in seen_dims:
                raise DataError(f"dimension name {name!r} is not canonical or repeated")
            seen_dims.add(name)
            if not values:
                raise DataError(f"dimension {name!r} has no values")
            if len(set(values)) != len(values):
                raise DataError(f"dimension {name!r} has duplicate values")
            for v in values:
                if v != " ".join(v.lower().split()) or not v:
                    raise DataError(f"value {v!r} in {name!r} is not lowercase-canonical")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[str]]) -> PropertyCatalog:
        return cls(tuple((k, tuple(v)) for k, v in mapping.items()))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.dimensions)

    def values(self, dim: str) -> tuple[str, ...]:
        for name, values in self.dimensions:
            if name == dim:
                return values
        raise KeyError(dim)

    def dimension_of(self, value: str) -> str:
        for name, values in self.dimensions:
            if value in values:
                return name
        raise KeyError(value)

    def restrict(self, dims: Iterable[str]) -> PropertyCatalog:
        keep = set(dims)
        return PropertyCatalog(tuple(d for d in self.dimensions if d[0] in keep))

    def to_dict(self) -> dict[str, list[str]]:
        return {name: list(values) for name, values in self.dimensions}


# The color vocabulary is a local choice; pass a custom catalog to change it.
DEFAULT_CATALOG = PropertyCatalog(
    (
        ("material", ("plastic", "metal", "wood", "glass", "paper")),
        ("color", ("red", "green", "blue", "black", "white", "brown", "gray")),
    )
)


@dataclass(frozen=True, order=True)
class ObjectClass:
    name: str

    def __post_init__(self):
        if not _LABEL_RE.match(self.name) or self.name != canonicalize_label(self.name):
            raise DataError(f"object class {self.name!r} is not a canonical label")

    @classmethod
    def parse(cls, raw: str) -> ObjectClass:
        return cls(canonicalize_label(raw))

    @property
    def object(self) -> ObjectClass:
        return self

    @property
    def text(self) -> str:
        return self.name

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, order=True)
class QualifiedObject:
    object: ObjectClass
    property_dim: str
    property_value: str

    def check(self, catalog: PropertyCatalog) -> None:
        try:
            values = catalog.values(self.property_dim)
        except KeyError:
            raise DataError(f"unknown property dimension {self.property_dim!r}") from None
        if self.property_value not in values:
            raise DataError(f"{self.property_value!r} is not a {self.property_dim} value")

    @property
    def text(self) -> str:
        return f"{self.property_value} {self.object.name}"

    def __str__(self) -> str:
        return self.text

    def to_dict(self) -> dict[str, str]:
        return {
            "object": self.object.name,
            "property_dim": self.property_dim,
            "property_value": self.property_value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> QualifiedObject:
        return cls(ObjectClass(data["object"]), data["property_dim"], data["property_value"])

    @classmethod
    def parse(cls, text: str, catalog: PropertyCatalog) -> QualifiedObject:
        """Parse ``"<value> <object>"``, e.g. ``"paper box"``."""
        parts = text.lower().split()
        for i in range(len(parts) - 1, 0, -1):
            value = " ".join(parts[:i])
            try:
                dim = catalog.dimension_of(value)
            except KeyError:
                continue
            return cls(ObjectClass.parse(" ".join(parts[i:])), dim, value)
        raise DataError(f"{text!r} does not start with a catalog property value")


Phrase = Union[ObjectClass, QualifiedObject]


def phrase_to_dict(phrase: Phrase) -> dict[str, Any]:
    if isinstance(phrase, QualifiedObject):
        return phrase.to_dict()
    return {"object": phrase.name, "property_dim": None, "property_value": None}


def phrase_from_dict(data: Mapping[str, Any]) -> Phrase:
    obj = ObjectClass(data["object"])
    if data.get("property_dim") is None:
        return obj
    return QualifiedObject(obj, data["property_dim"], data["property_value"])


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidBox(f"degenerate box {self.as_list()}")

    @classmethod
    def clamped(cls, coords: Sequence[float], width: float, height: float) -> BBox:
        """Build a box after clamping its corners to the image bounds."""
        x1, y1, x2, y2 = (float(c) for c in coords)
        return cls(
            min(max(x1, 0.0), width),
            min(max(y1, 0.0), height),
            min(max(x2, 0.0), width),
            min(max(y2, 0.0), height),
        )

    @classmethod
    def from_list(cls, coords: Sequence[float]) -> BBox:
        if len(coords) != 4:
            raise InvalidBox(f"box needs 4 coordinates, got {len(coords)}")
        return cls(*(float(c) for c in coords))

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def within(self, width: float, height: float) -> bool:
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 <= width and self.y2 <= height

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BBox
    confidence: float
    phrase: Phrase

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")

    def sort_key(self) -> tuple:
        """Confidence descending, then image id, phrase and box for ties."""
        return (-self.confidence, self.image_id, self.phrase.text, tuple(self.box.as_list()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "box": self.box.as_list(),
            "confidence": self.confidence,
            **phrase_to_dict(self.phrase),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Detection:
        return cls(
            image_id=str(data["image_id"]),
            box=BBox.from_list(data["box"]),
            confidence=float(data["confidence"]),
            phrase=phrase_from_dict(data),
        )


def rank_detections(detections: Iterable[Detection]) -> list[Detection]:
    return sorted(detections, key=Detection.sort_key)


@dataclass(frozen=True)
class Annotation:
    object: ObjectClass
    properties: tuple[tuple[str, str], ...]
    box: BBox

    def get(self, dim: str) -> str | None:
        for k, v in self.properties:
            if k == dim:
                return v
        return None

    def matches(self, phrase: Phrase) -> bool:
        if phrase.object != self.object:
            return False
        if isinstance(phrase, QualifiedObject):
            return self.get(phrase.property_dim) == phrase.property_value
        return True


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    uri: str
    width_px: float
    height_px: float
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "width_px", float(self.width_px))
        object.__setattr__(self, "height_px", float(self.height_px))
        object.__setattr__(self, "annotations", tuple(self.annotations))


@dataclass(frozen=True)
class ImageManifest:
    entries: tuple[ImageEntry, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        index = {}
        for entry in self.entries:
            if entry.image_id in index:
                raise DataError(f"duplicate image_id {entry.image_id!r}")
            for ann in entry.annotations:
                if not ann.box.within(entry.width_px, entry.height_px):
                    raise DataError(
                        f"annotation box {ann.box.as_list()} outside image {entry.image_id!r}"
                    )
            index[entry.image_id] = entry
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, image_id: str) -> ImageEntry:
        return self._index[image_id]

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    @property
    def image_ids(self) -> tuple[str, ...]:
        return tuple(e.image_id for e in self.entries)

    def subset(self, image_ids: Iterable[str]) -> ImageManifest:
        return ImageManifest(tuple(self._index[i] for i in image_ids))

    def to_json(self) -> list[dict[str, Any]]:
        return [
            {
                "image_id": e.image_id,
                "uri": e.uri,
                "width_px": e.width_px,
                "height_px": e.height_px,
                "annotations": [
                    {"object": a.object.name, "properties": dict(a.properties), "box": a.box.as_list()}
                    for a in e.annotations
                ],
            }
            for e in self.entries
        ]

    @classmethod
    def from_json(cls, data: Any) -> ImageManifest:
        if not isinstance(data, list):
            raise DataError("manifest must be a JSON array of image entries")
        entries = []
        for i, raw in enumerate(data):
            try:
                width, height = float(raw["width_px"]), float(raw["height_px"])
                anns = tuple(
                    Annotation(
                        object=ObjectClass.parse(a["object"]),
                        properties=tuple(
                            (canonicalize_label(k), " ".join(str(v).lower().split()))
                            for k, v in (a.get("properties") or {}).items()
                        ),
                        box=BBox.from_list(a["box"]),
                    )
                    for a in raw.get("annotations", [])
                )
                entries.append(ImageEntry(str(raw["image_id"]), str(raw["uri"]), width, height, anns))
            except (KeyError, TypeError, ValueError, DataError) as exc:
                raise DataError(f"manifest entry {i}: {exc!r}") from exc
        return cls(tuple(entries))

    @classmethod
    def load(cls, path: str | Path) -> ImageManifest:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        return cls.from_json(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


class Outcome(str, Enum):
    OK = "ok"
    NO_CANDIDATES = "no_candidates"
    NO_APPROVED_PAIRS = "no_approved_pairs"


@dataclass(frozen=True)
class DialogueEvent:
    step: str
    prompt: str
    reply: str
    parsed: Any = None

    def to_dict(self) -> dict[str, Any]:
        return {"step": self.step, "prompt": self.prompt, "reply": self.reply, "parsed": self.parsed}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DialogueEvent:
        return cls(data["step"], data["prompt"], data["reply"], data.get("parsed"))


@dataclass(frozen=True)
class AffordanceReport:
    ranked: tuple[Detection, ...]
    approved_pairs: tuple[QualifiedObject, ...]
    trace: tuple[DialogueEvent, ...]
    outcome: Outcome = Outcome.OK

    def __post_init__(self):
        approved = set(self.approved_pairs)
        for det in self.ranked:
            if det.phrase not in approved:
                raise DataError(f"ranked detection {det.phrase} is not an approved pair")
        confs = [d.confidence for d in self.ranked]
        if any(a < b for a, b in zip(confs, confs[1:])):
            raise DataError("ranked confidences must be non-increasing")

    def to_dict(self) -> dict[str, Any]:
        return {
            "outcome": self.outcome.value,
            "approved_pairs": [p.to_dict() for p in self.approved_pairs],
            "ranked": [d.to_dict() for d in self.ranked],
            "trace": [e.to_dict() for e in self.trace],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AffordanceReport:
        return cls(
            ranked=tuple(Detection.from_dict(d) for d in data["ranked"]),
            approved_pairs=tuple(QualifiedObject.from_dict(p) for p in data["approved_pairs"]),
            trace=tuple(DialogueEvent.from_dict(e) for e in data.get("trace", [])),
            outcome=Outcome(data.get("outcome", "ok")),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> AffordanceReport:
        return cls.from_dict(json.loads(text))

    def approved_by_object(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {}
        for pair in self.approved_pairs:
            out.setdefault(pair.object.name, set()).add(pair.property_value)
        return out
