"""Weighted boxes fusion of detections coming from several models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .geometry import BBox, iou
from .matching import Detection

DEFAULT_ENSEMBLE_ID = "wbf"


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    iou_threshold: float = 0.5
    skip_box_threshold: float = 0.3
    box_limit: int = 6000

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise FusionError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")
        if not 0.0 <= self.skip_box_threshold < 1.0:
            raise FusionError(f"skip_box_threshold must lie in [0, 1), got {self.skip_box_threshold}")
        if self.box_limit < 1:
            raise FusionError(f"box_limit must be >= 1, got {self.box_limit}")


@dataclass
class ModelRun:
    model_id: str
    weight: float
    detections: List[Detection] = field(default_factory=list)

    def __post_init__(self):
        if not self.weight > 0:
            raise FusionError(f"model {self.model_id!r}: weight must be positive, got {self.weight}")


@dataclass
class FusedCluster:
    members: List[Tuple[Detection, float]]
    fused_box: BBox
    raw_score: float
    category: int
    _weighted_sum: float = 0.0
    _coord_sums: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])

    @classmethod
    def open(cls, det: Detection, weight: float) -> "FusedCluster":
        cluster = cls(members=[], fused_box=det.box, raw_score=0.0, category=det.category)
        cluster.add(det, weight)
        return cluster

    def add(self, det: Detection, weight: float) -> None:
        c = det.score * weight
        self.members.append((det, weight))
        self._weighted_sum += c
        for k, v in enumerate(det.box.as_tuple()):
            self._coord_sums[k] += c * v
        self.raw_score = self._weighted_sum / len(self.members)
        self.fused_box = self._average_box()

    def _average_box(self) -> BBox:
        if self._weighted_sum <= 0.0:
            # all-zero confidences: fall back to an unweighted mean
            coords = [sum(d.box.as_tuple()[k] for d, _ in self.members) / len(self.members)
                      for k in range(4)]
        else:
            coords = [s / self._weighted_sum for s in self._coord_sums]
        # keep the average inside the member hull despite rounding
        boxes = [d.box.as_tuple() for d, _ in self.members]
        clamped = [min(max(v, min(b[k] for b in boxes)), max(b[k] for b in boxes))
                   for k, v in enumerate(coords)]
        return BBox(*clamped)

    def confidence(self, total_weight: float) -> float:
        factor = min(len(self.members), total_weight) / total_weight
        return min(1.0, max(0.0, self.raw_score * factor))


def fuse_clusters(runs: Sequence[ModelRun], config: FusionConfig = FusionConfig()) -> List[FusedCluster]:
    """Cluster the detections of one image, in creation order."""
    if not runs:
        raise FusionError("fusion needs at least one model run")
    image_ids = {d.image_id for run in runs for d in run.detections}
    if len(image_ids) > 1:
        raise FusionError(f"fuse_image expects a single image, got ids {sorted(image_ids)}")

    entries = []
    for ri, run in enumerate(runs):
        for di, det in enumerate(run.detections):
            if det.score >= config.skip_box_threshold:
                entries.append((-det.score * run.weight, ri, di, det, run.weight))
    entries.sort(key=lambda e: e[:3])

    clusters: List[FusedCluster] = []
    by_category: Dict[int, List[FusedCluster]] = {}
    for _, _, _, det, weight in entries:
        candidates = by_category.setdefault(det.category, [])
        for cluster in candidates:
            if iou(cluster.fused_box, det.box) > config.iou_threshold:
                cluster.add(det, weight)
                break
        else:
            cluster = FusedCluster.open(det, weight)
            candidates.append(cluster)
            clusters.append(cluster)
    return clusters


def fuse_image(runs: Sequence[ModelRun], config: FusionConfig = FusionConfig(),
               model_id: Optional[str] = DEFAULT_ENSEMBLE_ID) -> List[Detection]:
    """Fuse the per-model detections of a single image.

    Confidence of each fused box is its mean weighted score scaled by
    ``min(members, W) / W`` with ``W`` the sum of all run weights, so boxes
    backed by few models are penalised.
    """
    clusters = fuse_clusters(runs, config)
    total_weight = float(sum(run.weight for run in runs))
    fused = []
    for cluster in clusters:
        first = cluster.members[0][0]
        fused.append(Detection(
            image_id=first.image_id,
            box=cluster.fused_box,
            score=cluster.confidence(total_weight),
            category=cluster.category,
            model_id=model_id,
        ))
    fused.sort(key=lambda d: -d.score)  # stable: creation order breaks ties
    return fused[: config.box_limit]


def fuse_dataset(runs: Sequence[ModelRun], config: FusionConfig = FusionConfig(),
                 ensemble_id: str = DEFAULT_ENSEMBLE_ID) -> List[Detection]:
    """Fuse every image independently; output ordered by image id, then descending score."""
    if not runs:
        raise FusionError("fusion needs at least one model run")
    seen = set()
    for run in runs:
        if run.model_id in seen:
            raise FusionError(f"model id {run.model_id!r} appears more than once")
        seen.add(run.model_id)

    per_image: Dict[str, List[List[Detection]]] = {}
    for ri, run in enumerate(runs):
        for det in run.detections:
            per_image.setdefault(det.image_id, [[] for _ in runs])[ri].append(det)

    out: List[Detection] = []
    for image_id in sorted(per_image):
        image_runs = [ModelRun(run.model_id, run.weight, dets)
                      for run, dets in zip(runs, per_image[image_id])]
        out.extend(fuse_image(image_runs, config, model_id=ensemble_id))
    return out
