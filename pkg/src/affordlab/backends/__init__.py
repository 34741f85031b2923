from affordlab.backends.base import (
    DEFAULT_THRESHOLD,
    ChatBackend,
    ChatSession,
    Detector,
    DetectorRequest,
    Message,
    Role,
)
from affordlab.backends.http import HttpChat, HttpDetector
from affordlab.backends.scripted import AffordanceKB, NoiseModel, ScriptedChat, ScriptedDetector, derive_seed

__all__ = [
    "DEFAULT_THRESHOLD",
    "AffordanceKB",
    "ChatBackend",
    "ChatSession",
    "Detector",
    "DetectorRequest",
    "HttpChat",
    "HttpDetector",
    "Message",
    "NoiseModel",
    "Role",
    "ScriptedChat",
    "ScriptedDetector",
    "derive_seed",
]
