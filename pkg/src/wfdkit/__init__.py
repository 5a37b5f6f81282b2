"""Weighted boxes fusion ensembles with AP / AR / LRP evaluation."""

from .geometry import BBox, BoxError, ImageSize, iou, to_normalized, to_pixel
from .matching import Detection, GroundTruth, MatchResult, match
from .metrics import (
    LRPReport,
    MetricError,
    MetricReport,
    PRCurve,
    average_precision,
    average_recall,
    count_boxes,
    evaluate,
    lrp_at,
    lrp_from_components,
    olrp,
    pr_curve,
)
from .search import (
    Criterion,
    SearchError,
    SearchResult,
    WeightAssignment,
    combo,
    enumerate_assignments,
    search,
)
from .wbf import FusionConfig, FusionError, ModelRun, fuse_dataset, fuse_image

__version__ = "0.1.0"

__all__ = [
    "BBox", "BoxError", "ImageSize", "iou", "to_normalized", "to_pixel",
    "Detection", "GroundTruth", "MatchResult", "match",
    "LRPReport", "MetricError", "MetricReport", "PRCurve", "average_precision", "average_recall",
    "count_boxes", "evaluate", "lrp_at", "lrp_from_components", "olrp", "pr_curve",
    "Criterion", "SearchError", "SearchResult", "WeightAssignment", "combo", "enumerate_assignments",
    "search",
    "FusionConfig", "FusionError", "ModelRun", "fuse_dataset", "fuse_image",
]
