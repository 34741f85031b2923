"""Embodiment-aware affordance detection through an LLM/VLM dialogue."""

from affordlab.domain import (
    AffordanceReport,
    BBox,
    Detection,
    ImageManifest,
    ObjectClass,
    PropertyCatalog,
    QualifiedObject,
    Requirements,
    RobotSpec,
    canonicalize_label,
)
from affordlab.orchestrator import DialogueConfig, run_dialogue

__version__ = "0.1.0"

__all__ = [
    "AffordanceReport",
    "BBox",
    "Detection",
    "DialogueConfig",
    "ImageManifest",
    "ObjectClass",
    "PropertyCatalog",
    "QualifiedObject",
    "Requirements",
    "RobotSpec",
    "canonicalize_label",
    "run_dialogue",
]
