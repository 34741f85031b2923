"""Independent reference implementations used only by the tests.

The numeric oracles (AP, IoU, tie orders) use no library code, so a bug in
the library cannot hide behind the same bug in its oracle.  The parser
checks at the end only assert invariants on library output.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

from affordlab.domain import DEFAULT_CATALOG, ObjectClass, canonicalize_label
from affordlab.errors import EmptySelection, NoObjectsFound
from affordlab.parsing import (
    DEFAULT_LEXICON,
    Verdict,
    VerdictValue,
    clean_words,
    parse_object_list,
    parse_property_subset,
    parse_verdict,
)


def iou_exact(a, b) -> Fraction:
    """IoU of two (x1, y1, x2, y2) integer boxes as an exact fraction."""
    ax1, ay1, ax2, ay2 = (Fraction(v) for v in a)
    bx1, by1, bx2, by2 = (Fraction(v) for v in b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return Fraction(0)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def ap_oracle(dets, gts, thr=Fraction(1, 2)) -> Fraction:
    """AP from first principles.

    dets: list of (image_id, box, confidence, tiebreak) where tiebreak orders
    equal confidences.  gts: list of (image_id, box).

    Each detection, taken in descending confidence order, claims the unmatched
    ground truth of its image with the largest IoU (lowest index on ties) if
    that IoU reaches ``thr``.  AP is the sum over true positives of
    (1 / #gt) times the best precision reached at that recall or beyond.
    """
    order = sorted(dets, key=lambda d: (-Fraction(d[2]), d[3]))
    used = [False] * len(gts)
    flags = []
    for image_id, box, _, _ in order:
        best, best_iou = None, Fraction(-1)
        for j, (gimg, gbox) in enumerate(gts):
            if gimg != image_id or used[j]:
                continue
            v = iou_exact(box, gbox)
            if v > best_iou:
                best, best_iou = j, v
        if best is not None and best_iou >= thr:
            used[best] = True
            flags.append(True)
        else:
            flags.append(False)
    precisions = []
    tp = 0
    for k, flag in enumerate(flags, 1):
        tp += flag
        precisions.append(Fraction(tp, k))
    total = Fraction(0)
    for k, flag in enumerate(flags):
        if flag:
            total += Fraction(1, len(gts)) * max(precisions[k:])
    return total


def all_tie_orders(items, key):
    """Every ordering of ``items`` that is consistent with descending ``key``.

    Used to check that a ranking is deterministic: whichever way ties are
    presented, a correct ranker must return one fixed order.
    """
    return [list(p) for p in itertools.permutations(items) if all(key(p[i]) >= key(p[i + 1]) for i in range(len(p) - 1))]



def random_ap_instance(rng, max_gt=5, max_dets=8, images=("a", "b")):
    """A small random AP problem on an integer grid.

    Returns (gts, dets) with gts as (image_id, box) and dets as
    (image_id, box, confidence).  Boxes are drawn near ground truth often
    enough that matches, near-misses and duplicates all occur.
    """
    def box():
        x1, y1 = int(rng.integers(0, 8)), int(rng.integers(0, 8))
        return (x1, y1, x1 + int(rng.integers(1, 5)), y1 + int(rng.integers(1, 5)))

    gts = [(str(rng.choice(images)), box()) for _ in range(int(rng.integers(1, max_gt + 1)))]
    dets = []
    for _ in range(int(rng.integers(0, max_dets + 1))):
        if gts and rng.random() < 0.6:
            image_id, (x1, y1, x2, y2) = gts[int(rng.integers(len(gts)))]
            dx, dy = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
            b = (x1 + dx, y1 + dy, x2 + dx, y2 + dy)
        else:
            image_id, b = str(rng.choice(images)), box()
        # Coarse confidences so ties are common.
        dets.append((image_id, b, int(rng.integers(1, 6)) / 5))
    return gts, dets


MATERIAL_CLASSES = (
    ("wood", "basket"), ("wood", "stool"), ("wood", "ladder"), ("wood", "bench"),
    ("paper", "box"),
    ("plastic", "stool"), ("plastic", "basket"),
    ("metal", "ladder"), ("metal", "basket"), ("metal", "stool"), ("metal", "bench"),
)
SEEN_AP_AS_IS = (0.12, 0.44, 0.32, 0.56, 0.07, 0.10, 0.13, 0.21, 0.28, 0.43, 0.28)
SEEN_AP_ADAPTED = (0.53, 0.66, 0.37, 0.66, 0.46, 0.13, 0.25, 0.34, 0.32, 0.43, 0.48)
UNSEEN_AP_AS_IS = (0.45, 0.05, 0.15, 0.12, 0.29, 0.11, 0.02, 0.42, 0.11, 0.17, 0.43)
UNSEEN_AP_ADAPTED = (0.73, 0.14, 0.18, 0.13, 0.38, 0.12, 0.11, 0.51, 0.19, 0.51, 0.65)


def crafted_ap_fixture(aps, classes=MATERIAL_CLASSES, n_gt=100):
    """Ground truth and predictions whose per-class AP is exactly round(ap * n_gt) / n_gt.

    Every image holds one instance of every class.  For class c the first
    k = round(ap * n_gt) images get a detection on the instance (true
    positives, confidence 0.9); the rest get a displaced box (false
    positives, confidence 0.5).  With all hits ranked first, precision is 1 up
    to recall k / n_gt and AP equals that recall.
    """
    manifest, preds = [], []
    for i in range(n_gt):
        image_id = f"t{i:03d}"
        anns = []
        for c, (material, obj) in enumerate(classes):
            box = [100 * c + 5, 10, 100 * c + 90, 90]
            anns.append({"object": obj, "properties": {"material": material}, "box": box})
        manifest.append({"image_id": image_id, "uri": f"{image_id}.jpg", "width_px": 100 * len(classes),
                         "height_px": 200, "annotations": anns})
    for c, ((material, obj), ap) in enumerate(zip(classes, aps)):
        k = round(ap * n_gt)
        for i in range(n_gt):
            hit = i < k
            box = [100 * c + 5, 10, 100 * c + 90, 90] if hit else [100 * c + 5, 110, 100 * c + 90, 190]
            preds.append({"image_id": f"t{i:03d}", "box": box, "confidence": 0.9 if hit else 0.5,
                          "object": obj, "property_dim": "material", "property_value": material})
    return manifest, preds


# Parser output invariants, shared by the unit fuzz tests and the acceptance fuzz.


def allowed_words(text):
    toks = clean_words(text)
    return set(toks) | {canonicalize_label(t) for t in toks}


def check_object_list(text):
    try:
        objs = parse_object_list(text, 7)
    except NoObjectsFound:
        return
    assert 1 <= len(objs) <= 7
    assert len(set(objs)) == len(objs)
    allowed = allowed_words(text)
    # Separators such as "and" can cut a token glued to it by an apostrophe,
    # so a fragment of the flattened text also counts as drawn from the input.
    flat = text.lower().replace("'", "").replace("’", "")
    for obj in objs:
        assert isinstance(obj, ObjectClass)
        assert canonicalize_label(obj.name) == obj.name
        assert all(w in allowed or w in flat for w in obj.name.split()), (obj, text)


def check_verdict(text):
    v = parse_verdict(text)
    assert isinstance(v, Verdict)
    if v.value is VerdictValue.AMBIGUOUS:
        assert v.evidence == ""
    else:
        lexicon = DEFAULT_LEXICON.affirmative if v.affirmative else DEFAULT_LEXICON.negative
        assert v.evidence in lexicon or v.evidence.endswith("n't")


def check_property_subset(text):
    try:
        got = parse_property_subset(text, DEFAULT_CATALOG)
    except EmptySelection:
        return
    assert got
    assert got == [d for d in DEFAULT_CATALOG.names if d in got]
