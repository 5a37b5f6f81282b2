"""Greedy confidence-ordered assignment of detections to ground truths."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .geometry import BBox, iou


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: BBox
    score: float
    category: int = 1
    model_id: Optional[str] = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    box: BBox
    category: int = 1


@dataclass
class MatchResult:
    true_positives: List[Tuple[Detection, GroundTruth, float]] = field(default_factory=list)
    false_positives: List[Detection] = field(default_factory=list)
    false_negatives: List[GroundTruth] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.true_positives)

    @property
    def fp(self) -> int:
        return len(self.false_positives)

    @property
    def fn(self) -> int:
        return len(self.false_negatives)


def score_order(detections: Sequence[Detection]) -> List[int]:
    """Indices sorted by descending score, ties by ascending input index."""
    return sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))


def greedy_assign(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruth],
    iou_threshold: float,
) -> List[Tuple[int, Optional[int], float]]:
    """Core greedy pass over one image.

    Returns one ``(det_index, gt_index or None, iou)`` triple per detection,
    in processing order. The assignment of any score-ordered prefix equals the
    assignment obtained by matching that prefix alone.
    """
    claimed = [False] * len(ground_truths)
    out = []
    for di in score_order(detections):
        det = detections[di]
        best_gt, best_iou = None, -1.0
        for gi, gt in enumerate(ground_truths):
            if claimed[gi] or gt.category != det.category:
                continue
            v = iou(det.box, gt.box)
            if v >= iou_threshold and v > best_iou:
                best_gt, best_iou = gi, v
        if best_gt is None:
            out.append((di, None, 0.0))
        else:
            claimed[best_gt] = True
            out.append((di, best_gt, best_iou))
    return out


def match(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruth],
    iou_threshold: float = 0.5,
) -> MatchResult:
    """Match the detections of a single image against its ground truths.

    Detections are visited by descending score; each claims the unclaimed
    same-category ground truth with the highest IoU, if that IoU reaches
    ``iou_threshold``. Equal IoUs resolve to the earliest ground truth.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    ids = {d.image_id for d in detections} | {g.image_id for g in ground_truths}
    if len(ids) > 1:
        raise ValueError(f"match() expects a single image, got ids {sorted(ids)}")

    result = MatchResult()
    claimed = set()
    for di, gi, v in greedy_assign(detections, ground_truths, iou_threshold):
        if gi is None:
            result.false_positives.append(detections[di])
        else:
            claimed.add(gi)
            result.true_positives.append((detections[di], ground_truths[gi], v))
    result.false_negatives = [g for i, g in enumerate(ground_truths) if i not in claimed]
    return result


def group_by_image(items) -> Dict[str, list]:
    """Bucket detections or ground truths by image id, preserving input order."""
    groups: Dict[str, list] = {}
    for item in items:
        groups.setdefault(item.image_id, []).append(item)
    return groups
