"""Distractor search: at which rank does the wanted "<property> <object>" turn up?

A trial hides one target image among ``n`` distractor images that contain the
same object class with other property values.  All detections are ranked by
confidence and the 1-based position of the first detection overlapping a
target annotation (IoU >= 0.5) is the trial's rank.  Ranks count detections,
not images.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from affordlab.backends.base import DEFAULT_THRESHOLD, DetectorRequest
from affordlab.backends.scripted import NoiseModel, ScriptedDetector, derive_seed
from affordlab.domain import (
    Annotation,
    BBox,
    ImageEntry,
    ImageManifest,
    ObjectClass,
    QualifiedObject,
    rank_detections,
)
from affordlab.errors import DataError, InsufficientDistractors
from affordlab.evalkit import iou

FOUND_IOU = 0.5


class Strategy(str, Enum):
    OBJECT_ONLY = "object"
    PROPERTY_AWARE = "property"


_STRATEGY_ALIASES = {
    "object": Strategy.OBJECT_ONLY,
    "objectonly": Strategy.OBJECT_ONLY,
    "property": Strategy.PROPERTY_AWARE,
    "propertyaware": Strategy.PROPERTY_AWARE,
}


def parse_strategy(name: str) -> Strategy:
    try:
        return _STRATEGY_ALIASES[name.strip().lower().replace("_", "").replace("-", "")]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from object, property") from None


@dataclass(frozen=True)
class TrialSpec:
    target: QualifiedObject
    target_image: str
    distractor_images: tuple[str, ...]
    strategy: Strategy
    noise: NoiseModel = field(default_factory=NoiseModel)

    def check(self, manifest: ImageManifest) -> None:
        if self.target_image in self.distractor_images:
            raise DataError("target image cannot also be a distractor")
        if len(set(self.distractor_images)) != len(self.distractor_images):
            raise DataError("distractor images must be distinct")
        if not any(a.matches(self.target) for a in manifest[self.target_image].annotations):
            raise DataError(f"{self.target_image} holds no {self.target.text}")
        for image_id in self.distractor_images:
            if not _is_distractor(manifest[image_id].annotations, self.target):
                raise DataError(f"{image_id} is not a valid distractor for {self.target.text}")


@dataclass(frozen=True)
class TrialOutcome:
    rank: int
    found: bool
    n_detections: int


@dataclass(frozen=True)
class RankCurvePoint:
    strategy: Strategy
    n_distractors: int
    mean_rank: float
    stderr: float
    trials: int
    not_found: int = 0


@dataclass
class RankCurves:
    points: dict[Strategy, list[RankCurvePoint]]
    raw: list[dict]

    def mean(self, strategy: Strategy, n: int) -> float:
        for p in self.points[strategy]:
            if p.n_distractors == n:
                return p.mean_rank
        raise KeyError((strategy, n))


def _is_distractor(annotations: Sequence[Annotation], target: QualifiedObject) -> bool:
    same_class = [a for a in annotations if a.object == target.object]
    return bool(same_class) and not any(a.matches(target) for a in same_class)


def run_trial(
    spec: TrialSpec,
    manifest: ImageManifest,
    threshold: float = DEFAULT_THRESHOLD,
    base_confidence: float = 0.8,
) -> TrialOutcome:
    detector = ScriptedDetector(manifest, spec.noise, base_confidence)
    phrase = spec.target.object if spec.strategy is Strategy.OBJECT_ONLY else spec.target
    dets = []
    for image_id in (spec.target_image, *spec.distractor_images):
        dets.extend(detector.detect(DetectorRequest.for_image(manifest[image_id], phrase, threshold)))
    ranked = rank_detections(dets)
    for pos, det in enumerate(ranked, 1):
        for ann in manifest[det.image_id].annotations:
            if ann.matches(spec.target) and iou(det.box, ann.box) >= FOUND_IOU:
                return TrialOutcome(pos, True, len(ranked))
    return TrialOutcome(len(ranked) + 1, False, len(ranked))


def target_pools(dataset: ImageManifest, target: QualifiedObject) -> tuple[list[str], list[str]]:
    """(images holding the target, images usable as its distractors)."""
    holders, pool = [], []
    for entry in dataset:
        if any(a.matches(target) for a in entry.annotations):
            holders.append(entry.image_id)
        elif _is_distractor(entry.annotations, target):
            pool.append(entry.image_id)
    return holders, pool


def rank_curve(
    dataset: ImageManifest,
    targets: Sequence[QualifiedObject],
    ns: Sequence[int],
    trials_per_n: int,
    strategies: Sequence[Strategy],
    noise: NoiseModel,
    threshold: float = DEFAULT_THRESHOLD,
    workers: int = 1,
) -> RankCurves:
    """Mean rank per (strategy, n) over seeded trials.

    Trial ``i`` at size ``n`` samples its target and distractors from
    ``derive_seed(noise.seed, "sample", n, i)`` and seeds its detector noise
    from ``derive_seed(noise.seed, "noise", n, i)``.  Both are shared by all
    strategies, so curves are compared on matched draws and do not depend on
    execution order.
    """
    if trials_per_n < 1:
        raise DataError("trials_per_n must be at least 1")
    if not targets:
        raise DataError("at least one target is required")
    combos: list[tuple[QualifiedObject, str]] = []
    pools: dict[QualifiedObject, list[str]] = {}
    for target in targets:
        holders, pool = target_pools(dataset, target)
        if not holders:
            raise DataError(f"dataset holds no {target.text}")
        pools[target] = pool
        combos.extend((target, h) for h in holders)
    achievable = min(len(p) for p in pools.values())
    if max(ns) > achievable:
        raise InsufficientDistractors(
            f"need {max(ns)} distractor images, dataset supports at most {achievable}", achievable
        )

    def one(n: int, i: int) -> list[dict]:
        rng = np.random.default_rng(derive_seed(noise.seed, "sample", n, i))
        target, image = combos[int(rng.integers(len(combos)))]
        pool = pools[target]
        picks = rng.choice(len(pool), size=n, replace=False) if n else []
        distractors = tuple(pool[int(k)] for k in picks)
        trial_noise = noise.with_seed(derive_seed(noise.seed, "noise", n, i))
        rows = []
        for strategy in strategies:
            spec = TrialSpec(target, image, distractors, strategy, trial_noise)
            out = run_trial(spec, dataset, threshold)
            rows.append(
                {
                    "strategy": strategy.value,
                    "n": n,
                    "trial": i,
                    "target": target.text,
                    "target_image": image,
                    "rank": out.rank,
                    "found": out.found,
                    "detections": out.n_detections,
                }
            )
        return rows

    jobs = [(n, i) for n in ns for i in range(trials_per_n)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: one(*job), jobs))
    else:
        results = [one(n, i) for n, i in jobs]
    raw = [row for rows in results for row in rows]

    points: dict[Strategy, list[RankCurvePoint]] = {s: [] for s in strategies}
    for strategy in strategies:
        for n in ns:
            rows = [r for r in raw if r["strategy"] == strategy.value and r["n"] == n]
            ranks = np.array([r["rank"] for r in rows], dtype=float)
            stderr = float(ranks.std(ddof=1) / math.sqrt(len(ranks))) if len(ranks) > 1 else 0.0
            misses = sum(1 for r in rows if not r["found"])
            points[strategy].append(
                RankCurvePoint(strategy, n, float(ranks.mean()), stderr, len(rows), misses)
            )
    return RankCurves(points, raw)


def write_curves_csv(curves: RankCurves, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["strategy", "n", "mean_rank", "stderr", "trials"])
        for strategy, pts in curves.points.items():
            for p in pts:
                writer.writerow([strategy.value, p.n_distractors, f"{p.mean_rank:.6f}", f"{p.stderr:.6f}", p.trials])


def write_raw_jsonl(curves: RankCurves, path: str | Path) -> None:
    with open(path, "w") as fh:
        for row in curves.raw:
            fh.write(json.dumps(row) + "\n")


def synthetic_distractor_manifest(
    classes: Iterable[str] = ("basket", "stool", "ladder", "bench", "box"),
    materials: Iterable[str] = ("plastic", "metal", "wood", "glass", "paper"),
    images_per_pair: int = 4,
    seed: int = 7,
    width: int = 640,
    height: int = 480,
) -> ImageManifest:
    """Images each holding 1-2 copies of one (class, material) plus one unrelated object.

    Image ids are shuffled so that their lexicographic order, which breaks
    confidence ties, carries no information about class or material.
    """
    classes, materials = list(classes), list(materials)
    rng = np.random.default_rng(seed)
    specs = [(c, m) for c in classes for m in materials for _ in range(images_per_pair)]
    order = rng.permutation(len(specs))
    entries = []
    for idx, spec_idx in enumerate(order):
        cls, mat = specs[int(spec_idx)]
        anns = []
        slots = [(20 + 150 * s, 60) for s in range(4)]
        copies = int(rng.integers(1, 3))
        for s in range(copies):
            x, y = slots[s]
            anns.append(Annotation(ObjectClass(cls), (("material", mat),), BBox(x, y, x + 120, y + 200)))
        other = classes[(classes.index(cls) + 1 + int(rng.integers(len(classes) - 1))) % len(classes)]
        other_mat = materials[int(rng.integers(len(materials)))]
        x, y = slots[3]
        anns.append(Annotation(ObjectClass(other), (("material", other_mat),), BBox(x, y + 220, x + 100, y + 380)))
        image_id = f"img{idx:04d}"
        entries.append(ImageEntry(image_id, f"images/{image_id}.jpg", width, height, tuple(anns)))
    return ImageManifest(tuple(entries))
