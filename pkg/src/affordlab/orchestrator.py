"""The LLM/VLM dialogue that turns an action and effect into ranked detections.

Stages, in order:

1. embodiment        tell the chat model what robot it is reasoning for
2. object_elicitation ask for N candidate object classes
3. object_detection  keep candidates the detector finds in at least one image
4. property_relevance ask which property dimensions matter
5. feasibility       ask about every surviving object x relevant property value
6. qualified_detection detect each approved "<value> <object>" phrase
7. ranking           sort all stage-6 detections by confidence

All chat turns share one session so earlier answers stay in context.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from affordlab.backends.base import DEFAULT_THRESHOLD, ChatBackend, ChatSession, Detector, DetectorRequest
from affordlab.domain import (
    AffordanceReport,
    Detection,
    DialogueEvent,
    ImageManifest,
    ObjectClass,
    Outcome,
    Phrase,
    PropertyCatalog,
    QualifiedObject,
    Requirements,
    RobotSpec,
    phrase_to_dict,
    rank_detections,
)
from affordlab.errors import DataError, EmptySelection, NoObjectsFound
from affordlab.parsing import (
    DEFAULT_LEXICON,
    Lexicon,
    Verdict,
    VerdictValue,
    parse_object_list,
    parse_property_subset,
    parse_verdict,
)
from affordlab.prompts import PromptEngine, PromptText

log = logging.getLogger(__name__)

STAGES = (
    "embodiment",
    "object_elicitation",
    "object_detection",
    "confirmation",
    "property_relevance",
    "feasibility",
    "qualified_detection",
    "ranking",
)


@dataclass(frozen=True)
class DialogueConfig:
    n_candidates: int = 10
    detection_threshold: float = DEFAULT_THRESHOLD
    max_reprompts: int = 1
    parallel_detection: bool = False
    feasibility_budget: int = 100
    confirm_objects: bool = False
    max_workers: int = 8

    def __post_init__(self):
        if self.n_candidates < 1:
            raise DataError("n_candidates must be at least 1")
        if not 0.0 <= self.detection_threshold <= 1.0:
            raise DataError("detection_threshold must lie in [0, 1]")
        if self.max_reprompts < 0 or self.feasibility_budget < 0:
            raise DataError("max_reprompts and feasibility_budget must be non-negative")


class _Dialogue:
    def __init__(self, chat, detector, engine, lexicon, cfg):
        self.chat: ChatBackend = chat
        self.detector: Detector = detector
        self.engine: PromptEngine = engine
        self.lexicon: Lexicon = lexicon
        self.cfg: DialogueConfig = cfg
        self.session = ChatSession()
        self.trace: list[DialogueEvent] = []

    def ask(self, stage: str, prompt: PromptText, parsed=None) -> str:
        reply = self.chat.chat(self.session, prompt)
        self.trace.append(DialogueEvent(stage, prompt.text, reply, parsed))
        return reply

    def record(self, stage: str, prompt: str, parsed) -> None:
        self.trace.append(DialogueEvent(stage, prompt, "", parsed))

    def _reparse(self, parsed) -> None:
        last = self.trace[-1]
        self.trace[-1] = DialogueEvent(last.step, last.prompt, last.reply, parsed)

    def detect_all(self, phrases: Sequence[Phrase], images: ImageManifest) -> dict[Phrase, list[Detection]]:
        jobs = [
            DetectorRequest.for_image(entry, phrase, self.cfg.detection_threshold)
            for phrase in phrases
            for entry in images
        ]
        if self.cfg.parallel_detection and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.max_workers) as pool:
                results = list(pool.map(self.detector.detect, jobs))
        else:
            results = [self.detector.detect(job) for job in jobs]
        out: dict[Phrase, list[Detection]] = {p: [] for p in phrases}
        for job, dets in zip(jobs, results):
            out[job.phrase].extend(dets)
        return out

    def verdict(self, prompt: PromptText, pair: QualifiedObject | ObjectClass, stage: str) -> Verdict:
        question = prompt
        for attempt in range(self.cfg.max_reprompts + 1):
            reply = self.ask(stage, question)
            verdict = parse_verdict(reply, self.lexicon)
            final = None if verdict.value is VerdictValue.AMBIGUOUS else verdict.value.value
            if final is None and attempt == self.cfg.max_reprompts:
                final = VerdictValue.NEGATIVE.value
            self._reparse(
                {
                    "pair": phrase_to_dict(pair),
                    "verdict": verdict.value.value,
                    "evidence": verdict.evidence,
                    "attempt": attempt,
                    "final": final,
                }
            )
            if verdict.value is not VerdictValue.AMBIGUOUS:
                return verdict
            question = self.engine.render_clarification(prompt)
        return Verdict(VerdictValue.NEGATIVE, "default")

    def elicit(self, req: Requirements) -> list[ObjectClass]:
        for attempt in range(self.cfg.max_reprompts + 1):
            prompt = self.engine.render_object_elicitation(req, self.cfg.n_candidates, retry=attempt > 0)
            reply = self.ask("object_elicitation", prompt)
            try:
                objects = parse_object_list(reply, self.cfg.n_candidates)
            except NoObjectsFound:
                self._reparse({"objects": [], "attempt": attempt})
                continue
            self._reparse({"objects": [o.name for o in objects], "attempt": attempt})
            return objects
        raise NoObjectsFound("elicitation produced no objects after re-prompting")

    def relevant_dimensions(self, req: Requirements, catalog: PropertyCatalog) -> list[str]:
        selected: set[str] = set()
        for prompt in self.engine.render_property_relevance_chunks(req, catalog):
            reply = self.ask("property_relevance", prompt)
            asked = prompt.slot("dimensions").split(", ")
            try:
                dims = parse_property_subset(reply, catalog.restrict(asked))
            except EmptySelection:
                dims = []
            selected.update(dims)
            self._reparse({"dimensions": dims})
        if not selected:
            self.record("property_relevance", "", {"dimensions": list(catalog.names), "fallback": "all"})
            return list(catalog.names)
        return [name for name in catalog.names if name in selected]


def run_dialogue(
    robot: RobotSpec,
    req: Requirements,
    catalog: PropertyCatalog,
    images: ImageManifest,
    cfg: DialogueConfig,
    chat: ChatBackend,
    detector: Detector,
    engine: PromptEngine | None = None,
    lexicon: Lexicon | None = None,
) -> AffordanceReport:
    """Run the full dialogue and assemble the report.

    Empty outcomes (no candidates, no approved pairs) are returned as reports
    with ``outcome`` set, never raised.  Backend failures propagate.
    """
    if not len(images):
        raise DataError("image manifest is empty")
    d = _Dialogue(chat, detector, engine or PromptEngine(), lexicon or DEFAULT_LEXICON, cfg)

    d.ask("embodiment", d.engine.render_embodiment(robot))

    try:
        candidates = d.elicit(req)
    except NoObjectsFound:
        return AffordanceReport((), (), tuple(d.trace), Outcome.NO_CANDIDATES)

    hits = d.detect_all(candidates, images)
    found = [obj for obj in candidates if hits[obj]]
    d.record(
        "object_detection",
        "; ".join(f"VLM(image | {obj.name})" for obj in candidates),
        {
            "threshold": cfg.detection_threshold,
            "hits": {obj.name: len(hits[obj]) for obj in candidates},
            "kept": [obj.name for obj in found],
        },
    )

    if cfg.confirm_objects:
        confirmed = []
        for obj in found:
            if d.verdict(d.engine.render_confirmation(req, obj), obj, "confirmation").affirmative:
                confirmed.append(obj)
        found = confirmed

    dims = d.relevant_dimensions(req, catalog)

    pairs = [
        QualifiedObject(obj, dim, value)
        for obj in found
        for dim in dims
        for value in catalog.values(dim)
    ]
    if not pairs:
        d.record("feasibility", "", {"pairs": 0, "note": "no candidate object survived detection"})
    budget = cfg.feasibility_budget
    approved: list[QualifiedObject] = []
    for i, pair in enumerate(pairs):
        if i == budget:
            skipped = [p.to_dict() for p in pairs[i:]]
            log.warning("feasibility budget %d reached; skipping %d pairs", budget, len(skipped))
            d.record("feasibility", "", {"budget_exhausted": budget, "skipped": skipped})
            break
        prompt = d.engine.render_feasibility(req.action, pair, req.conditions)
        if d.verdict(prompt, pair, "feasibility").affirmative:
            approved.append(pair)

    qualified = d.detect_all(approved, images)
    d.record(
        "qualified_detection",
        "; ".join(f"VLM(image | {p.text})" for p in approved),
        {"threshold": cfg.detection_threshold, "hits": {p.text: len(qualified[p]) for p in approved}},
    )

    ranked = rank_detections(det for dets in qualified.values() for det in dets)
    d.record("ranking", "", {"ranked": len(ranked)})
    outcome = Outcome.OK if approved else Outcome.NO_APPROVED_PAIRS
    return AffordanceReport(tuple(ranked), tuple(approved), tuple(d.trace), outcome)


def affirmed_pairs(trace: Iterable[DialogueEvent]) -> set[tuple[str, str | None, str | None]]:
    """Pairs whose final feasibility verdict in ``trace`` is affirmative."""
    out = set()
    for event in trace:
        parsed = event.parsed
        if event.step == "feasibility" and isinstance(parsed, dict) and parsed.get("final") == "affirmative":
            pair = parsed["pair"]
            out.add((pair["object"], pair["property_dim"], pair["property_value"]))
    return out


def stage_sequence(trace: Iterable[DialogueEvent]) -> list[str]:
    seq: list[str] = []
    for event in trace:
        if not seq or seq[-1] != event.step:
            seq.append(event.step)
    return seq
