"""Detection quality metrics: matching, P/R/F1/accuracy, AP and mAP.

Matching is greedy in score order: each detection (highest score first)
takes the still-unmatched same-class ground-truth box with the highest
IoU, provided that IoU is strictly greater than the threshold. True
negatives do not exist in detection, so accuracy uses TN = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ValidationError
from .geometry import BBox, iou

INTERPOLATION_MODES = ("all_point", "11point")


@dataclass(frozen=True)
class AnnotationSet:
    """Ground-truth boxes for one image."""

    image_id: str
    width: int
    height: int
    boxes: tuple[BBox, ...]

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"image must be at least 1x1, got {self.width}x{self.height}"
            )
        for b in self.boxes:
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise ValidationError(
                    f"annotation ({b.x_min}, {b.y_min}, {b.x_max}, {b.y_max}) "
                    f"outside {self.width}x{self.height} image {self.image_id!r}"
                )


@dataclass(frozen=True)
class Matching:
    """Result of pairing detections with ground truth.

    ``pairs`` holds (detection index, gt index, IoU) in match order
    (score descending); the unmatched index tuples are ascending.
    """

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_detections: tuple[int, ...]
    unmatched_gt: tuple[int, ...]


@dataclass(frozen=True)
class EvalReport:
    """Counts and derived metrics for one evaluation run.

    ``tn`` is always 0; it is kept explicit so the accuracy definition
    (tp + tn) / (tp + fp + fn + tn) is visible. ``per_class_ap`` and
    ``mean_ap`` are present only when AP was computed.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    per_class_ap: Mapping[int, float] = field(default_factory=dict)
    mean_ap: float | None = None


def _gt_boxes(gt: "AnnotationSet | Sequence[BBox]") -> Sequence[BBox]:
    return gt.boxes if isinstance(gt, AnnotationSet) else gt


def match_detections(
    detections: Sequence[BBox],
    gt: "AnnotationSet | Sequence[BBox]",
    iou_threshold: float = 0.5,
) -> Matching:
    """Greedily pair detections with ground truth of the same class.

    Detections are visited by score descending (ties by input order);
    each takes the unmatched gt box with the highest IoU among those with
    IoU strictly above ``iou_threshold`` (IoU ties go to the lower gt
    index). A gt box matches at most one detection.
    """
    if not 0.0 <= iou_threshold < 1.0:
        raise ValidationError(
            f"iou_threshold must be in [0, 1), got {iou_threshold}"
        )
    gts = _gt_boxes(gt)
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    taken = [False] * len(gts)
    pairs: list[tuple[int, int, float]] = []
    matched_det = [False] * len(detections)
    for i in order:
        det = detections[i]
        best_j = -1
        best_iou = iou_threshold
        for j, g in enumerate(gts):
            if taken[j] or g.class_id != det.class_id:
                continue
            v = iou(det, g)
            if v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            matched_det[i] = True
            pairs.append((i, best_j, best_iou))
    return Matching(
        pairs=tuple(pairs),
        unmatched_detections=tuple(
            i for i in range(len(detections)) if not matched_det[i]
        ),
        unmatched_gt=tuple(j for j in range(len(gts)) if not taken[j]),
    )


def compute_prf1(matching: Matching) -> EvalReport:
    """Precision, recall, F1 and accuracy from a matching (TN = 0).

    Zero denominators yield 0.0 rather than an error, so empty inputs
    are representable.
    """
    tp = len(matching.pairs)
    fp = len(matching.unmatched_detections)
    fn = len(matching.unmatched_gt)
    tn = 0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    denom = tp + fp + fn + tn
    accuracy = (tp + tn) / denom if denom else 0.0
    return EvalReport(
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
    )


def average_precision(
    detections: Sequence[BBox],
    gt: "AnnotationSet | Sequence[BBox]",
    iou_threshold: float = 0.5,
    interpolation: str = "all_point",
) -> float:
    """Average precision over the detection ranking.

    Detections are ranked by score descending and matched greedily as in
    match_detections. "all_point" integrates the precision envelope over
    recall (area under the interpolated PR curve); "11point" averages the
    envelope at recalls 0.0, 0.1, ..., 1.0.

    Returns 0.0 when there is no ground truth.
    """
    if interpolation not in INTERPOLATION_MODES:
        raise ValidationError(f"unknown interpolation mode {interpolation!r}")
    gts = _gt_boxes(gt)
    n_gt = len(gts)
    if n_gt == 0:
        return 0.0
    matching = match_detections(detections, gts, iou_threshold)
    matched = {i for i, _, _ in matching.pairs}
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    # Precision/recall after each ranked detection.
    precisions: list[float] = []
    recalls: list[float] = []
    tp_cum = 0
    for rank, i in enumerate(order, start=1):
        if i in matched:
            tp_cum += 1
        precisions.append(tp_cum / rank)
        recalls.append(tp_cum / n_gt)
    # Monotone non-increasing precision envelope, right to left.
    envelope = precisions[:]
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])

    if interpolation == "11point":
        total = 0.0
        for step in range(11):
            level = step / 10.0
            best = 0.0
            for p, r in zip(envelope, recalls):
                if r >= level:
                    best = p
                    break
            total += best
        return total / 11.0

    ap = 0.0
    prev_recall = 0.0
    for p, r in zip(envelope, recalls):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return ap


def mean_ap(per_class_ap: Mapping[int, float]) -> float | None:
    """Mean of per-class APs; None when the mapping is empty."""
    if not per_class_ap:
        return None
    return sum(per_class_ap.values()) / len(per_class_ap)


def evaluate_detections(
    detections: Sequence[BBox],
    gt: "AnnotationSet | Sequence[BBox]",
    iou_threshold: float = 0.5,
    interpolation: str = "all_point",
) -> EvalReport:
    """Full report: matching counts, P/R/F1/accuracy, per-class AP, mAP.

    AP is computed per class over the classes that appear in the ground
    truth; classes with no gt boxes are excluded from the mean.
    """
    gts = _gt_boxes(gt)
    base = compute_prf1(match_detections(detections, gts, iou_threshold))
    classes = sorted({g.class_id for g in gts})
    per_class: dict[int, float] = {}
    for c in classes:
        dets_c = [d for d in detections if d.class_id == c]
        gts_c = [g for g in gts if g.class_id == c]
        per_class[c] = average_precision(dets_c, gts_c, iou_threshold, interpolation)
    return EvalReport(
        tp=base.tp,
        fp=base.fp,
        fn=base.fn,
        tn=base.tn,
        precision=base.precision,
        recall=base.recall,
        f1=base.f1,
        accuracy=base.accuracy,
        per_class_ap=per_class,
        mean_ap=mean_ap(per_class),
    )
