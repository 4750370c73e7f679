"""Evaluation protocols: ROC/AUC/EER, frame and pixel criteria, average
precision, the unseen-category split, and recounting accuracy.

ROC curves come from sweeping every distinct score as a threshold with
"predict abnormal when score >= t". Tied scores move TPR and FPR in one
step, which the trapezoid integral turns into a diagonal segment; that
matches the pairwise (half credit for ties) reading of AUC exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .pack import FeaturePack, decode_mask

EMPTY_FRAME_SCORE = -math.inf
PIXEL_COVERAGE = 0.4


# ---------------------------------------------------------------------------
# ROC

@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending, thresholds[0] = +inf
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float
    eer: float


def _curve_from_points(thresholds, tpr, fpr) -> RocCurve:
    tpr = np.asarray(tpr, dtype=np.float64)
    fpr = np.asarray(fpr, dtype=np.float64)
    auc = float(np.trapezoid(tpr, fpr))
    eer = _equal_error_rate(tpr, fpr)
    return RocCurve(
        thresholds=np.asarray(thresholds, dtype=np.float64),
        tpr=tpr,
        fpr=fpr,
        auc=auc,
        eer=eer,
    )


def _equal_error_rate(tpr: np.ndarray, fpr: np.ndarray) -> float:
    """Point on the curve where FPR equals 1 - TPR, by linear interpolation.

    d = fpr - (1 - tpr) is non-decreasing along the curve, starts at -1
    and ends at +1, so a sign change always exists.
    """
    d = fpr - (1.0 - tpr)
    k = int(np.argmax(d >= 0.0))
    if d[k] == 0.0:
        return float(fpr[k])
    f1, f2 = fpr[k - 1], fpr[k]
    t1, t2 = tpr[k - 1], tpr[k]
    lam = (1.0 - t1 - f1) / ((f2 - f1) + (t2 - t1))
    return float(f1 + lam * (f2 - f1))


def roc_curve(scores, labels) -> RocCurve:
    """ROC over distinct-score thresholds; labels are abnormal flags."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be 1-D and aligned")
    if np.isnan(scores).any():
        raise ValidationError("scores must not contain NaN")
    pos = int(labels.sum())
    neg = int(len(labels) - pos)
    if pos == 0 or neg == 0:
        raise ValidationError(
            f"ROC needs both classes, got {pos} positive / {neg} negative"
        )
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # group boundaries at the last index of each distinct score; != keeps
    # tied infinities together where subtraction would produce NaN
    distinct = np.flatnonzero(s[1:] != s[:-1])
    boundaries = np.concatenate((distinct, [len(s) - 1]))
    tp_cum = np.cumsum(y)[boundaries]
    fp_cum = np.cumsum(~y)[boundaries]
    thresholds = np.concatenate(([math.inf], s[boundaries]))
    tpr = np.concatenate(([0.0], tp_cum / pos))
    fpr = np.concatenate(([0.0], fp_cum / neg))
    return _curve_from_points(thresholds, tpr, fpr)


# ---------------------------------------------------------------------------
# frame-level detection

@dataclass
class DetectionGt:
    """Per-frame ground truth: abnormal flags plus optional pixel masks."""

    frames: dict[tuple[str, int], bool]
    masks: dict[tuple[str, int], dict] = field(default_factory=dict)

    @classmethod
    def from_pack(cls, pack: FeaturePack) -> "DetectionGt":
        if not pack.frame_labels:
            raise ValidationError("pack carries no frame labels")
        frames = {}
        masks = {}
        for lab in pack.frame_labels:
            key = (lab.video_id, lab.frame_index)
            frames[key] = lab.abnormal
            if lab.mask is not None:
                masks[key] = lab.mask
        return cls(frames=frames, masks=masks)


@dataclass(frozen=True)
class Detection:
    video_id: str
    frame_index: int
    box: tuple[float, float, float, float]
    score: float


def frame_scores(
    detections, frames
) -> dict[tuple[str, int], float]:
    """Max region score per frame; frames with no detections get -inf."""
    out = {key: EMPTY_FRAME_SCORE for key in frames}
    for det in detections:
        key = (det.video_id, det.frame_index)
        if key in out and det.score > out[key]:
            out[key] = det.score
    return out


def frame_level_roc(detections, gt: DetectionGt) -> RocCurve:
    per_frame = frame_scores(detections, gt.frames)
    keys = sorted(gt.frames)
    scores = np.array([per_frame[k] for k in keys])
    labels = np.array([gt.frames[k] for k in keys])
    return roc_curve(scores, labels)


# ---------------------------------------------------------------------------
# pixel-level detection

def rasterize_boxes(boxes, height: int, width: int) -> np.ndarray:
    """Pixels whose centers fall inside any box.

    Pixel (r, c) has center (c + 0.5, r + 0.5); it is inside
    [x, x + w) x [y, y + h) iff ceil(x - 0.5) <= c < ceil(x + w - 0.5),
    rows likewise.
    """
    canvas = np.zeros((height, width), dtype=bool)
    for x, y, w, h in boxes:
        c0 = max(int(math.ceil(x - 0.5)), 0)
        c1 = min(int(math.ceil(x + w - 0.5)), width)
        r0 = max(int(math.ceil(y - 0.5)), 0)
        r1 = min(int(math.ceil(y + h - 0.5)), height)
        if c0 < c1 and r0 < r1:
            canvas[r0:r1, c0:c1] = True
    return canvas


def mask_coverage(boxes, mask: np.ndarray) -> float:
    """Fraction of the mask's abnormal pixels covered by the box union."""
    total = int(mask.sum())
    if total == 0:
        raise ValidationError("pixel criterion needs a non-empty abnormal mask")
    canvas = rasterize_boxes(boxes, mask.shape[0], mask.shape[1])
    return float((canvas & mask).sum()) / total


def _frame_outcome(
    boxes, abnormal: bool, mask: np.ndarray | None, coverage: float
) -> str:
    if abnormal:
        if mask is None:
            raise ValidationError("abnormal frame lacks a pixel mask")
        if boxes and mask_coverage(boxes, mask) >= coverage:
            return "tp"
        return "fn"
    return "fp" if boxes else "tn"


def pixel_level_outcomes(
    detections, gt: DetectionGt, threshold: float, coverage: float = PIXEL_COVERAGE
) -> dict[tuple[str, int], str]:
    """Per-frame tp/fn/fp/tn under the localization criterion at one threshold.

    An abnormal frame counts as detected only when the union of boxes at or
    above the threshold covers at least `coverage` of its abnormal pixels.
    A normal frame false-alarms when any box survives the threshold.
    """
    by_frame: dict[tuple[str, int], list] = {key: [] for key in gt.frames}
    for det in detections:
        key = (det.video_id, det.frame_index)
        if key in by_frame and det.score >= threshold:
            by_frame[key].append(det.box)
    out = {}
    for key in sorted(gt.frames):
        abnormal = gt.frames[key]
        mask = decode_mask(gt.masks[key]) if key in gt.masks else None
        out[key] = _frame_outcome(by_frame[key], abnormal, mask, coverage)
    return out


def pixel_level_roc(
    detections, gt: DetectionGt, coverage: float = PIXEL_COVERAGE
) -> RocCurve:
    """Sweep distinct detection scores as thresholds for the pixel criterion.

    The curve is completed with (0, 0) and (1, 1): the coverage test caps
    what any finite threshold can reach, and the endpoints are the
    alarm-never / alarm-always operating limits.
    """
    keys = sorted(gt.frames)
    pos = sum(1 for k in keys if gt.frames[k])
    neg = len(keys) - pos
    if pos == 0 or neg == 0:
        raise ValidationError(
            f"pixel ROC needs both classes, got {pos} abnormal / {neg} normal"
        )
    decoded = {k: decode_mask(gt.masks[k]) for k in gt.masks}
    relevant = [d for d in detections if (d.video_id, d.frame_index) in gt.frames]
    thresholds = sorted({d.score for d in relevant}, reverse=True)
    points_t, points_tpr, points_fpr = [math.inf], [0.0], [0.0]
    for t in thresholds:
        by_frame: dict[tuple[str, int], list] = {key: [] for key in gt.frames}
        for det in relevant:
            if det.score >= t:
                by_frame[(det.video_id, det.frame_index)].append(det.box)
        tp = fp = 0
        for key in keys:
            outcome = _frame_outcome(
                by_frame[key],
                gt.frames[key],
                decoded.get(key),
                coverage,
            )
            tp += outcome == "tp"
            fp += outcome == "fp"
        points_t.append(t)
        points_tpr.append(tp / pos)
        points_fpr.append(fp / neg)
    points_t.append(-math.inf)
    points_tpr.append(1.0)
    points_fpr.append(1.0)
    return _curve_from_points(points_t, points_tpr, points_fpr)


# ---------------------------------------------------------------------------
# average precision

def average_precision(scores, labels) -> float:
    """All-points interpolated AP with the precision envelope.

    Ranking is by descending score; ties keep input order (stable sort).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be 1-D and aligned")
    pos = int(labels.sum())
    if pos == 0:
        raise ValidationError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    tp = np.cumsum(y)
    ranks = np.arange(1, len(y) + 1)
    recall = tp / pos
    precision = tp / ranks
    # envelope: precision at recall r is the max precision at recall >= r
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(((mrec[steps] - mrec[steps - 1]) * mpre[steps]).sum())


def mean_average_precision(aps) -> float:
    aps = list(aps)
    if not aps:
        raise ValidationError("mean over an empty AP list")
    return float(np.mean(aps))


# ---------------------------------------------------------------------------
# unseen-category split

@dataclass
class SplitResult:
    train: FeaturePack
    test: FeaturePack
    unseen: tuple[str, ...]
    seen: tuple[str, ...]
    train_images: tuple[tuple[str, int], ...]
    test_images: tuple[tuple[str, int], ...]


def _image_categories(pack: FeaturePack, task: str) -> dict[tuple[str, int], set]:
    if pack.region_labels is None:
        raise ValidationError("split needs region labels with category annotations")
    by_image: dict[tuple[str, int], set] = {
        key: set() for key in pack.frames_with_records()
    }
    for lab in pack.region_labels:
        rec = pack.records[lab.record_index]
        cats = lab.categories.get(task, ())
        by_image[(rec.video_id, rec.frame_index)].update(cats)
    return by_image


def split_unseen(
    pack: FeaturePack,
    task: str,
    seed: int,
    repeat: int = 0,
    unseen_fraction: float = 0.25,
) -> SplitResult:
    """Hold out categories entirely: images touching them all go to test.

    n_unseen = round(n * unseen_fraction), at least 1. The training side
    is a uniform sample of half the images (floor) drawn from those
    containing no unseen annotation; remaining seen-only images complete
    the test side, so |test| - |train| is 0 or 1. Each repeat index draws
    an independent stream from the same seed.
    """
    pack.task(task)  # validates the task exists
    by_image = _image_categories(pack, task)
    images = pack.frames_with_records()
    if not images:
        raise ValidationError("split needs at least one image with records")
    categories = sorted({c for cats in by_image.values() for c in cats})
    if not categories:
        raise ValidationError(f"no annotations for task {task!r}")
    n_cats = len(categories)
    n_unseen = max(int(round(n_cats * unseen_fraction)), 1)
    if n_unseen >= n_cats:
        raise ValidationError(
            f"cannot hold out {n_unseen} of {n_cats} categories"
        )
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(repeat,)))
    )
    unseen = tuple(sorted(rng.choice(categories, size=n_unseen, replace=False)))
    unseen_set = set(unseen)
    seen = tuple(c for c in categories if c not in unseen_set)

    seen_only = [img for img in images if not (by_image[img] & unseen_set)]
    with_unseen = [img for img in images if by_image[img] & unseen_set]
    train_size = len(images) // 2
    if train_size > len(seen_only):
        raise ValidationError(
            f"unseen categories {sorted(unseen_set)} touch too many images: "
            f"{len(seen_only)} seen-only images cannot fill a training half "
            f"of {train_size}"
        )
    chosen = rng.choice(len(seen_only), size=train_size, replace=False)
    chosen_set = {int(i) for i in chosen}
    train_images = [img for i, img in enumerate(seen_only) if i in chosen_set]
    test_images = with_unseen + [
        img for i, img in enumerate(seen_only) if i not in chosen_set
    ]
    # keep pack order within each side
    order = {img: i for i, img in enumerate(images)}
    train_images.sort(key=order.__getitem__)
    test_images.sort(key=order.__getitem__)

    def indices(side):
        side_set = set(side)
        return [
            i
            for i, rec in enumerate(pack.records)
            if (rec.video_id, rec.frame_index) in side_set
        ]

    from .pack import subset_pack

    return SplitResult(
        train=subset_pack(pack, indices(train_images)),
        test=subset_pack(pack, indices(test_images)),
        unseen=unseen,
        seen=seen,
        train_images=tuple(train_images),
        test_images=tuple(test_images),
    )


def unseen_positive_labels(pack: FeaturePack, task: str, unseen) -> np.ndarray:
    """Per-record flags: annotated with at least one held-out category."""
    if pack.region_labels is None:
        raise ValidationError("pack carries no region labels")
    unseen_set = set(unseen)
    flags = np.zeros(pack.n, dtype=bool)
    for lab in pack.region_labels:
        if set(lab.categories.get(task, ())) & unseen_set:
            flags[lab.record_index] = True
    return flags


# ---------------------------------------------------------------------------
# recounting accuracy

@dataclass(frozen=True)
class RecountEvalEntry:
    """One region's recounting output against its ground truth.

    candidates: (category, cls_score, anomaly_score) triples for every
    category clearing the cls threshold. gt: held-out categories truly
    present (empty for a negative region).
    """

    candidates: tuple
    gt: frozenset


def _predicted_at(entry: RecountEvalEntry, threshold: float, cls_threshold: float):
    return {
        cat
        for cat, cls_score, anomaly in entry.candidates
        if cls_score >= cls_threshold and anomaly >= threshold
    }


def recounting_confusion(
    entries,
    threshold: float,
    cls_threshold: float = 0.1,
    exact_match: bool = False,
) -> dict[str, int]:
    """tp/fn/fp/tn counts at one anomaly-score threshold.

    A positive region is hit when its predicted set intersects the ground
    truth (or equals it, with exact_match). A negative region false-alarms
    when anything at all is predicted.
    """
    counts = {"tp": 0, "fn": 0, "fp": 0, "tn": 0}
    for entry in entries:
        predicted = _predicted_at(entry, threshold, cls_threshold)
        if entry.gt:
            hit = predicted == set(entry.gt) if exact_match else bool(
                predicted & set(entry.gt)
            )
            counts["tp" if hit else "fn"] += 1
        else:
            counts["fp" if predicted else "tn"] += 1
    return counts


def recounting_roc(
    entries,
    cls_threshold: float = 0.1,
    exact_match: bool = False,
) -> RocCurve:
    """Sweep the anomaly-score threshold over all candidate values.

    The cls filter caps reachable TPR, so the curve is completed with the
    (0,0) and (1,1) operating limits before integration.
    """
    entries = list(entries)
    pos = sum(1 for e in entries if e.gt)
    neg = len(entries) - pos
    if pos == 0 or neg == 0:
        raise ValidationError(
            f"recounting ROC needs both classes, got {pos} positive / {neg} negative"
        )
    values = sorted(
        {
            anomaly
            for e in entries
            for _, cls_score, anomaly in e.candidates
            if cls_score >= cls_threshold
        },
        reverse=True,
    )
    t_list, tpr_list, fpr_list = [math.inf], [0.0], [0.0]
    if exact_match:
        # prediction sets can overshoot the ground truth as the threshold
        # drops, so hits are not monotone; recount at every threshold
        for t in values:
            counts = recounting_confusion(entries, t, cls_threshold, exact_match)
            t_list.append(t)
            tpr_list.append(counts["tp"] / pos)
            fpr_list.append(counts["fp"] / neg)
    else:
        # each entry flips exactly once: a positive once the threshold
        # reaches its best matching candidate, a negative at its best
        # candidate of any category
        pos_act, neg_act = [], []
        for e in entries:
            cands = [
                (cat, a) for cat, s, a in e.candidates if s >= cls_threshold
            ]
            if e.gt:
                match = [a for cat, a in cands if cat in e.gt]
                if match:
                    pos_act.append(max(match))
            elif cands:
                neg_act.append(max(a for _, a in cands))
        pos_act = np.sort(np.asarray(pos_act, dtype=np.float64))
        neg_act = np.sort(np.asarray(neg_act, dtype=np.float64))
        for t in values:
            t_list.append(t)
            tpr_list.append((len(pos_act) - np.searchsorted(pos_act, t)) / pos)
            fpr_list.append((len(neg_act) - np.searchsorted(neg_act, t)) / neg)
    t_list.append(-math.inf)
    tpr_list.append(1.0)
    fpr_list.append(1.0)
    return _curve_from_points(t_list, tpr_list, fpr_list)
