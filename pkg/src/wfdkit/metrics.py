"""Precision/recall curves, AP50, AR and the LRP error family."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

from .matching import Detection, GroundTruth, greedy_assign, group_by_image

AR_THRESHOLDS: Tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

# totals closer than this are treated as equal when picking the LRP-optimal threshold
_TIE_EPS = 1e-12


class MetricError(ValueError):
    pass


@dataclass
class PRCurve:
    points: List[Tuple[float, float]] = field(default_factory=list)  # (recall, precision)
    score_at_rank: List[float] = field(default_factory=list)

    @property
    def recall(self) -> List[float]:
        return [r for r, _ in self.points]

    @property
    def precision(self) -> List[float]:
        return [p for _, p in self.points]


@dataclass
class LRPReport:
    total: float
    loc_component: float
    fp_component: float
    fn_component: float
    threshold: float
    tp: int
    fp: int
    fn: int


@dataclass
class MetricReport:
    ap50: float
    ar: float
    olrp: LRPReport
    optimal_threshold: float
    pr_curve: PRCurve
    predicted_box_count: int


@dataclass(frozen=True)
class _Ranked:
    score: float
    is_tp: bool
    iou: float


def _require_gt(ground_truths):
    if len(ground_truths) == 0:
        raise MetricError("ground truth set is empty: recall undefined")


def _ranked(detections: Sequence[Detection], ground_truths: Sequence[GroundTruth],
            iou_threshold: float) -> List[_Ranked]:
    """Match per image and return the outcome of every detection in global score order."""
    gts_by_image = group_by_image(ground_truths)
    indices_by_image = {}
    for i, d in enumerate(detections):
        indices_by_image.setdefault(d.image_id, []).append(i)
    outcome = {}
    for image_id, indices in indices_by_image.items():
        dets = [detections[i] for i in indices]
        for di, gi, v in greedy_assign(dets, gts_by_image.get(image_id, []), iou_threshold):
            outcome[indices[di]] = (gi is not None, v)
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    return [_Ranked(detections[i].score, *outcome[i]) for i in order]


def pr_curve(detections: Sequence[Detection], ground_truths: Sequence[GroundTruth],
             iou_threshold: float = 0.5) -> PRCurve:
    """One (recall, precision) point per detection rank."""
    _require_gt(ground_truths)
    n_gt = len(ground_truths)
    curve = PRCurve()
    tp = 0
    for k, r in enumerate(_ranked(detections, ground_truths, iou_threshold), start=1):
        tp += r.is_tp
        curve.points.append((tp / n_gt, tp / k))
        curve.score_at_rank.append(r.score)
    return curve


def average_precision(curve: PRCurve) -> float:
    """All-point interpolated area under the PR curve."""
    if not curve.points:
        return 0.0
    envelope = [p for _, p in curve.points]
    for k in range(len(envelope) - 2, -1, -1):
        envelope[k] = max(envelope[k], envelope[k + 1])
    area = 0.0
    prev_recall = 0.0
    for (r, _), p_hat in zip(curve.points, envelope):
        if r > prev_recall:
            area += (r - prev_recall) * p_hat
            prev_recall = r
    return area


def recall_at(detections, ground_truths, iou_threshold: float) -> float:
    _require_gt(ground_truths)
    gts_by_image = group_by_image(ground_truths)
    tp = 0
    for image_id, dets in group_by_image(detections).items():
        gts = gts_by_image.get(image_id, [])
        tp += sum(gi is not None for _, gi, _ in greedy_assign(dets, gts, iou_threshold))
    return tp / len(ground_truths)


def average_recall(detections: Sequence[Detection], ground_truths: Sequence[GroundTruth]) -> float:
    """Mean recall over the IoU grid 0.50, 0.55, ..., 0.95."""
    _require_gt(ground_truths)
    return sum(recall_at(detections, ground_truths, t) for t in AR_THRESHOLDS) / len(AR_THRESHOLDS)


def _lrp_total(loc_sum: float, tp: int, fp: int, fn: int, tau: float) -> float:
    return (loc_sum / (1.0 - tau) + fp + fn) / (tp + fp + fn)


def lrp_at(detections: Sequence[Detection], ground_truths: Sequence[GroundTruth],
           tau: float = 0.5, score_threshold: float = 0.0) -> LRPReport:
    """LRP error of the detections scoring at least ``score_threshold``."""
    if not 0.0 < tau < 1.0:
        raise MetricError(f"tau must lie in (0, 1), got {tau}")
    kept = [d for d in detections if d.score >= score_threshold]
    gts_by_image = group_by_image(ground_truths)
    tp = fp = 0
    loc_sum = 0.0
    for image_id, dets in group_by_image(kept).items():
        for _, gi, v in greedy_assign(dets, gts_by_image.get(image_id, []), tau):
            if gi is None:
                fp += 1
            else:
                tp += 1
                loc_sum += 1.0 - v
    fn = len(ground_truths) - tp
    if tp + fp + fn == 0:
        raise MetricError("LRP undefined: no detections and no ground truths")
    return LRPReport(
        total=_lrp_total(loc_sum, tp, fp, fn, tau),
        loc_component=loc_sum / tp if tp else 0.0,
        fp_component=fp / (tp + fp) if tp + fp else 0.0,
        fn_component=fn / (tp + fn) if tp + fn else 0.0,
        threshold=score_threshold,
        tp=tp, fp=fp, fn=fn,
    )


def lrp_from_components(loc_component: float, fp_component: float, fn_component: float,
                        tau: float = 0.5) -> float:
    """Recombine published LRP components into the total error.

    With L the mean TP localisation error, FP/TP = fp/(1-fp) and
    FN/TP = fn/(1-fn), so the total reduces to a ratio of per-TP terms.
    """
    if fp_component >= 1.0 or fn_component >= 1.0:
        return 1.0  # no true positives
    fp_per_tp = fp_component / (1.0 - fp_component)
    fn_per_tp = fn_component / (1.0 - fn_component)
    return (loc_component / (1.0 - tau) + fp_per_tp + fn_per_tp) / (1.0 + fp_per_tp + fn_per_tp)


def empty_set_threshold(detections: Sequence[Detection]) -> float:
    """Smallest confidence cut that keeps none of the detections."""
    if not detections:
        return 0.0
    return math.nextafter(max(d.score for d in detections), math.inf)


def olrp(detections: Sequence[Detection], ground_truths: Sequence[GroundTruth],
         tau: float = 0.5) -> Tuple[LRPReport, float]:
    """Minimum LRP over every confidence cut (and the empty set).

    Greedy matching is prefix-stable, so one pass in score order yields the
    LRP at every cut. Near-equal totals resolve to the stricter threshold.
    """
    _require_gt(ground_truths)
    n_gt = len(ground_truths)
    best_thr = empty_set_threshold(detections)
    best_total = 1.0  # empty set: every ground truth missed

    ranked = _ranked(detections, ground_truths, tau)
    tp = fp = 0
    loc_sum = 0.0
    for k, r in enumerate(ranked):
        if r.is_tp:
            tp += 1
            loc_sum += 1.0 - r.iou
        else:
            fp += 1
        if k + 1 < len(ranked) and ranked[k + 1].score == r.score:
            continue
        total = _lrp_total(loc_sum, tp, fp, n_gt - tp, tau)
        if total < best_total - _TIE_EPS:
            best_total, best_thr = total, r.score

    report = lrp_at(detections, ground_truths, tau, best_thr)
    return report, best_thr


def count_boxes(detections: Sequence[Detection], score_threshold: float) -> int:
    return sum(1 for d in detections if d.score >= score_threshold)


def filter_by_score(detections: Sequence[Detection], score_threshold: float) -> List[Detection]:
    return [d for d in detections if d.score >= score_threshold]


def evaluate(detections: Sequence[Detection], ground_truths: Sequence[GroundTruth],
             iou_threshold: float = 0.5, tau: float = 0.5) -> MetricReport:
    """Full metric report for one detection set against one ground-truth set."""
    _require_gt(ground_truths)
    curve = pr_curve(detections, ground_truths, iou_threshold)
    lrp, thr = olrp(detections, ground_truths, tau)
    return MetricReport(
        ap50=average_precision(curve),
        ar=average_recall(detections, ground_truths),
        olrp=lrp,
        optimal_threshold=thr,
        pr_curve=curve,
        predicted_box_count=len(detections),
    )
