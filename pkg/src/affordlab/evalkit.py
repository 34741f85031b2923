"""Detection metrics: IoU, per-class average precision and mAP.

Protocol: one IoU threshold (default 0.5), greedy matching in confidence
order, all-points interpolated precision-recall area.  Classes are
(object, property value) pairs, so a wood basket and a metal basket are
scored separately.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from affordlab.domain import BBox, Detection, ImageManifest, QualifiedObject
from affordlab.errors import AllUndefined, DataError, NoGroundTruth

DEFAULT_IOU = 0.5
PROTOCOL = "single IoU threshold, greedy matching, all-points interpolation"


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def match_detections(
    dets: Sequence[Detection], gt: Sequence[tuple[str, BBox]], iou_thr: float = DEFAULT_IOU
) -> list[bool]:
    """Greedy matching; returns a true-positive flag per detection in ranked order.

    Each detection takes the unmatched same-image ground truth with the highest
    IoU, provided that IoU reaches ``iou_thr``.
    """
    by_image: dict[str, list[int]] = {}
    for idx, (image_id, _) in enumerate(gt):
        by_image.setdefault(image_id, []).append(idx)
    taken = [False] * len(gt)
    flags = []
    for det in sorted(dets, key=Detection.sort_key):
        best, best_iou = -1, -1.0
        for idx in by_image.get(det.image_id, ()):
            if taken[idx]:
                continue
            overlap = iou(det.box, gt[idx][1])
            if overlap > best_iou:
                best, best_iou = idx, overlap
        if best >= 0 and best_iou >= iou_thr:
            taken[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(
    dets: Sequence[Detection], gt: Sequence[tuple[str, BBox]], iou_thr: float = DEFAULT_IOU
) -> float:
    if not gt:
        raise NoGroundTruth("AP is undefined without ground truth")
    if not dets:
        return 0.0
    tp = np.asarray(match_detections(dets, gt, iou_thr), dtype=float)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / len(gt)
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(aps: Mapping[Any, float | None] | Iterable[float | None]) -> float:
    values = aps.values() if isinstance(aps, Mapping) else aps
    defined = [float(v) for v in values if v is not None]
    if not defined:
        raise AllUndefined("no class has a defined AP")
    return sum(defined) / len(defined)


@dataclass(frozen=True)
class EvalResult:
    per_class_ap: tuple[tuple[QualifiedObject, float], ...]
    map_overall: float
    iou_threshold: float
    undefined: tuple[QualifiedObject, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "protocol": PROTOCOL,
            "iou_threshold": self.iou_threshold,
            "map": round(self.map_overall, 6),
            "per_class": [{**qo.to_dict(), "ap": round(ap, 6)} for qo, ap in self.per_class_ap],
            "undefined": [qo.to_dict() for qo in self.undefined],
        }


def ground_truth_by_class(manifest: ImageManifest, dim: str = "material") -> dict[QualifiedObject, list]:
    out: dict[QualifiedObject, list[tuple[str, BBox]]] = {}
    for entry in manifest:
        for ann in entry.annotations:
            value = ann.get(dim)
            if value is None:
                continue
            out.setdefault(QualifiedObject(ann.object, dim, value), []).append((entry.image_id, ann.box))
    return out


def evaluate(
    predictions: Iterable[Detection],
    manifest: ImageManifest,
    iou_thr: float = DEFAULT_IOU,
    dim: str = "material",
) -> EvalResult:
    gt = ground_truth_by_class(manifest, dim)
    if not gt:
        raise DataError(f"ground truth has no annotations with a {dim!r} property")
    preds: dict[QualifiedObject, list[Detection]] = {}
    for det in predictions:
        if isinstance(det.phrase, QualifiedObject) and det.phrase.property_dim == dim:
            preds.setdefault(det.phrase, []).append(det)
    per_class = tuple((qo, average_precision(preds.get(qo, []), boxes, iou_thr)) for qo, boxes in gt.items())
    undefined = tuple(qo for qo in preds if qo not in gt)
    return EvalResult(per_class, mean_ap(ap for _, ap in per_class), iou_thr, undefined)


def load_predictions(path: str | Path) -> list[Detection]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read predictions {path}: {exc}") from exc
    if not isinstance(data, list):
        raise DataError("predictions must be a JSON array of detections")
    out = []
    for i, record in enumerate(data):
        try:
            out.append(Detection.from_dict(record))
        except (KeyError, TypeError, ValueError, DataError) as exc:
            raise DataError(f"predictions[{i}]: {exc!r}") from exc
    return out


def class_label(qo: QualifiedObject) -> str:
    return f"{qo.property_value.title()} {qo.object.name.title()}"


def write_ap_table(result: EvalResult, path: str | Path, row_label: str = "predictions") -> None:
    """One-row CSV: a column per class plus ``Avg.``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model"] + [class_label(qo) for qo, _ in result.per_class_ap] + ["Avg."])
        writer.writerow(
            [row_label] + [f"{ap:.6f}" for _, ap in result.per_class_ap] + [f"{result.map_overall:.6f}"]
        )
