"""Run configuration: one flat JSON object with dotted keys, overridable from the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from affordlab.backends import (
    AffordanceKB,
    ChatBackend,
    Detector,
    HttpChat,
    HttpDetector,
    NoiseModel,
    ScriptedChat,
    ScriptedDetector,
)
from affordlab.domain import DEFAULT_CATALOG, ImageManifest, PropertyCatalog
from affordlab.errors import DataError
from affordlab.orchestrator import DialogueConfig
from affordlab.parsing import DEFAULT_LEXICON, Lexicon
from affordlab.prompts import PromptEngine

DEFAULTS: dict[str, Any] = {
    "backend.mode": "scripted",
    "llm.endpoint": None,
    "llm.model": "gpt-3.5-turbo",
    "llm.temperature": 0.0,
    "detector.endpoint": None,
    "detector.threshold": 0.3,
    "detector.score_scale": 1.0,
    "detector.base_confidence": 0.8,
    "dialogue.n_candidates": 10,
    "dialogue.threshold": None,
    "dialogue.budget": 100,
    "dialogue.max_reprompts": 1,
    "dialogue.parallel_detection": False,
    "dialogue.confirm_objects": False,
    "noise.p_miss": 0.0,
    "noise.p_conf": 0.0,
    "noise.clutter_rate": 0.0,
    "noise.jitter": 0.0,
    "eval.iou": 0.5,
    "eval.dimension": "material",
    "seed": 0,
    "paths.manifest": None,
    "paths.templates": None,
    "paths.lexicons": None,
    "paths.kb": None,
    "paths.catalog": None,
    "paths.output": "out",
}
_INPUT_PATHS = ("paths.manifest", "paths.templates", "paths.lexicons", "paths.kb", "paths.catalog")


def coerce(key: str, raw: str) -> Any:
    """Parse a ``--set key=value`` string using the type of the key's default."""
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise DataError(f"{key} expects a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or key == "dialogue.threshold":
        return float(raw)
    return raw


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def threshold(self) -> float:
        return float(self["dialogue.threshold"] if self["dialogue.threshold"] is not None else self["detector.threshold"])

    def dialogue(self) -> DialogueConfig:
        return DialogueConfig(
            n_candidates=int(self["dialogue.n_candidates"]),
            detection_threshold=self.threshold(),
            max_reprompts=int(self["dialogue.max_reprompts"]),
            parallel_detection=bool(self["dialogue.parallel_detection"]),
            feasibility_budget=int(self["dialogue.budget"]),
            confirm_objects=bool(self["dialogue.confirm_objects"]),
        )

    def noise(self) -> NoiseModel:
        return NoiseModel(
            p_miss=float(self["noise.p_miss"]),
            p_conf=float(self["noise.p_conf"]),
            clutter_rate=float(self["noise.clutter_rate"]),
            jitter=float(self["noise.jitter"]),
            seed=self.seed,
        )

    def catalog(self) -> PropertyCatalog:
        path = self["paths.catalog"]
        if not path:
            return DEFAULT_CATALOG
        try:
            return PropertyCatalog.from_mapping(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, AttributeError) as exc:
            raise DataError(f"invalid catalog file {path}: {exc}") from exc

    def engine(self) -> PromptEngine:
        return PromptEngine.from_file(self["paths.templates"])

    def lexicon(self) -> Lexicon:
        path = self["paths.lexicons"]
        return Lexicon.from_file(path) if path else DEFAULT_LEXICON

    def chat_backend(self) -> ChatBackend:
        mode = self["backend.mode"]
        if mode == "scripted":
            return ScriptedChat(AffordanceKB.load(self["paths.kb"]))
        if not self["llm.endpoint"]:
            raise DataError("llm.endpoint is required in http mode")
        return HttpChat(self["llm.endpoint"], self["llm.model"], float(self["llm.temperature"]))

    def detector(self, manifest: ImageManifest) -> Detector:
        mode = self["backend.mode"]
        if mode == "scripted":
            return ScriptedDetector(manifest, self.noise(), float(self["detector.base_confidence"]))
        if not self["detector.endpoint"]:
            raise DataError("detector.endpoint is required in http mode")
        return HttpDetector(self["detector.endpoint"], score_scale=float(self["detector.score_scale"]))


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Merge defaults, the JSON file at ``path`` and ``overrides`` (highest precedence)."""
    values = dict(DEFAULTS)
    layers = []
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise DataError("config must be a flat JSON object of dotted keys")
        layers.append(data)
    layers.append({k: v for k, v in (overrides or {}).items() if v is not None})
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise DataError(f"unknown config key {key!r}")
            values[key] = value
    if values["backend.mode"] not in ("scripted", "http"):
        raise DataError(f"backend.mode must be 'scripted' or 'http', got {values['backend.mode']!r}")
    for key in _INPUT_PATHS:
        if values[key] and not Path(values[key]).exists():
            raise DataError(f"{key}: {values[key]} does not exist")
    return RunConfig(values)
