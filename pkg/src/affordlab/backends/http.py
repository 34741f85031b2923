"""Networked adapters: a chat-completions client and an open-vocabulary detector client."""

from __future__ import annotations

import base64
import logging
import os
import time
from pathlib import Path
from typing import Callable
from urllib.parse import urlparse

import httpx

from affordlab.backends.base import ChatBackend, ChatSession, Detector, DetectorRequest
from affordlab.domain import BBox, Detection
from affordlab.errors import BackendUnavailable, InvalidBox, UnknownImage
from affordlab.prompts import PromptText

log = logging.getLogger(__name__)

API_KEY_ENV = "AFFORDLAB_API_KEY"
MAX_RETRIES = 3
_TRANSIENT_STATUS = {408, 429, 500, 502, 503, 504}


def _post_with_retries(
    client: httpx.Client,
    url: str,
    payload: dict,
    headers: dict,
    backoff: float,
    sleep: Callable[[float], None],
) -> httpx.Response:
    last: Exception | None = None
    for attempt in range(MAX_RETRIES + 1):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = client.post(url, json=payload, headers=headers)
        except httpx.TransportError as exc:
            last = exc
            log.warning("POST %s failed (%s), attempt %d", url, exc, attempt + 1)
            continue
        if resp.status_code in _TRANSIENT_STATUS:
            last = BackendUnavailable(f"{url} returned HTTP {resp.status_code}")
            log.warning("POST %s returned %d, attempt %d", url, resp.status_code, attempt + 1)
            continue
        if resp.status_code >= 400:
            raise BackendUnavailable(f"{url} returned HTTP {resp.status_code}: {resp.text[:200]}")
        return resp
    raise BackendUnavailable(f"{url} unavailable after {MAX_RETRIES} retries: {last}")


class HttpChat(ChatBackend):
    """Client for a chat-completions style endpoint (``messages`` of role/content pairs)."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        temperature: float = 0.0,
        api_key: str | None = None,
        client: httpx.Client | None = None,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.client = client or httpx.Client(timeout=timeout)
        self.backoff = backoff
        self.sleep = sleep

    def _complete(self, session: ChatSession, prompt: PromptText) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        payload = {
            "model": self.model,
            "messages": [m.to_dict() for m in session.messages],
            "temperature": self.temperature,
        }
        resp = _post_with_retries(self.client, self.endpoint, payload, headers, self.backoff, self.sleep)
        try:
            return str(resp.json()["choices"][0]["message"]["content"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"unexpected chat response shape: {exc!r}") from exc


def _read_image(uri: str, client: httpx.Client) -> bytes:
    parsed = urlparse(uri)
    if parsed.scheme in ("http", "https"):
        try:
            resp = client.get(uri)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise UnknownImage(f"cannot fetch {uri}: {exc}") from exc
        return resp.content
    path = Path(parsed.path if parsed.scheme == "file" else uri)
    try:
        return path.read_bytes()
    except OSError as exc:
        raise UnknownImage(f"cannot read image {uri}: {exc}") from exc


class HttpDetector(Detector):
    """Client for a detector service.

    Posts ``{image, queries, box_threshold}`` and expects
    ``{boxes, scores, labels}`` with pixel ``[x1, y1, x2, y2]`` boxes.  Scores
    are divided by ``score_scale`` so services reporting percentages can be
    used as-is.
    """

    def __init__(
        self,
        endpoint: str,
        client: httpx.Client | None = None,
        score_scale: float = 1.0,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 60.0,
        api_key: str | None = None,
    ):
        self.endpoint = endpoint
        self.client = client or httpx.Client(timeout=timeout)
        self.score_scale = score_scale
        self.backoff = backoff
        self.sleep = sleep
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)

    def _detect(self, req: DetectorRequest) -> list[Detection]:
        image = base64.b64encode(_read_image(req.uri, self.client)).decode("ascii")
        payload = {"image": image, "queries": [req.text], "box_threshold": req.threshold}
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        resp = _post_with_retries(self.client, self.endpoint, payload, headers, self.backoff, self.sleep)
        try:
            body = resp.json()
            boxes, scores = body["boxes"], body["scores"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendUnavailable(f"unexpected detector response shape: {exc!r}") from exc
        if len(boxes) != len(scores):
            raise BackendUnavailable("detector returned mismatched boxes/scores lengths")
        out = []
        for coords, score in zip(boxes, scores):
            conf = min(1.0, max(0.0, float(score) / self.score_scale))
            try:
                if req.width_px is not None:
                    box = BBox.clamped(coords, req.width_px, req.height_px)
                else:
                    box = BBox.from_list(coords)
            except InvalidBox:
                continue
            out.append(Detection(req.image_id, box, round(conf, 6), req.phrase))
        return out
