"""Backend interfaces for the chat model and the phrase-conditioned detector."""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from enum import Enum

from affordlab.domain import Detection, ImageEntry, Phrase, rank_detections
from affordlab.errors import DataError
from affordlab.prompts import PromptText

DEFAULT_THRESHOLD = 0.3


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Message:
    role: Role
    content: str

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role.value, "content": self.content}


@dataclass
class ChatSession:
    """Append-only chat history; after an optional system message, turns alternate user/assistant."""

    messages: list[Message] = field(default_factory=list)

    @classmethod
    def with_system(cls, content: str) -> ChatSession:
        return cls([Message(Role.SYSTEM, content)])

    def _expected(self) -> Role:
        turns = [m for m in self.messages if m.role is not Role.SYSTEM]
        return Role.USER if len(turns) % 2 == 0 else Role.ASSISTANT

    def append(self, role: Role, content: str) -> None:
        if role is Role.SYSTEM:
            if self.messages:
                raise DataError("a system message may only open the session")
        elif role is not self._expected():
            raise DataError(f"expected a {self._expected().value} message, got {role.value}")
        self.messages.append(Message(role, content))

    def __len__(self) -> int:
        return len(self.messages)

    def user_messages(self) -> list[str]:
        return [m.content for m in self.messages if m.role is Role.USER]


class ChatBackend(abc.ABC):
    """Chain-mode chat: each call sees the full session history."""

    def chat(self, session: ChatSession, prompt: PromptText) -> str:
        session.append(Role.USER, prompt.text)
        try:
            reply = self._complete(session, prompt)
        except BaseException:
            # Keep the session well-formed: drop the unanswered user turn.
            session.messages.pop()
            raise
        session.append(Role.ASSISTANT, reply)
        return reply

    @abc.abstractmethod
    def _complete(self, session: ChatSession, prompt: PromptText) -> str:
        """Return the assistant reply; the user prompt is already the last message."""


@dataclass(frozen=True)
class DetectorRequest:
    image_id: str
    uri: str
    phrase: Phrase
    threshold: float = DEFAULT_THRESHOLD
    width_px: float | None = None
    height_px: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise DataError(f"threshold {self.threshold} outside [0, 1]")

    @classmethod
    def for_image(cls, entry: ImageEntry, phrase: Phrase, threshold: float = DEFAULT_THRESHOLD):
        return cls(entry.image_id, entry.uri, phrase, threshold, entry.width_px, entry.height_px)

    @property
    def text(self) -> str:
        return self.phrase.text


class Detector(abc.ABC):
    def detect(self, req: DetectorRequest) -> list[Detection]:
        """Run the backend and enforce the threshold and image-bounds contract."""
        out = []
        for det in self._detect(req):
            if det.confidence < req.threshold:
                continue
            if req.width_px is not None and not det.box.within(req.width_px, req.height_px):
                continue
            out.append(det)
        return rank_detections(out)

    @abc.abstractmethod
    def _detect(self, req: DetectorRequest) -> list[Detection]:
        ...
