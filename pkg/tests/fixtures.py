"""Synthetic detection data shared by several test modules."""

from __future__ import annotations

import numpy as np

from wfdkit.geometry import BBox
from wfdkit.matching import Detection, GroundTruth
from wfdkit.wbf import FusionConfig, ModelRun

# Box counts at thresholds 0.1 .. 0.9 for a one-stage (PAA) and a two-stage (Dynamic R-CNN) detector
THRESHOLDS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
PAA_COUNTS = [4317, 1098, 415, 159, 75, 36, 4, 0, 0]
DYNAMIC_RCNN_COUNTS = [291, 176, 124, 97, 79, 71, 65, 57, 48]


def det(image_id, box, score, model_id=None, category=1):
    return Detection(str(image_id), BBox(*box), score, category, model_id)


def gt(image_id, box, category=1):
    return GroundTruth(str(image_id), BBox(*box), category)


def jitter(box, rng, scale):
    x1, y1, x2, y2 = box
    d = rng.uniform(-scale, scale, size=4)
    out = [min(max(v + e, 0.0), 1.0) for v, e in zip((x1, y1, x2, y2), d)]
    if out[2] - out[0] < 0.01:
        out[2] = min(1.0, out[0] + 0.01)
    if out[3] - out[1] < 0.01:
        out[3] = min(1.0, out[1] + 0.01)
    return tuple(out)


def random_box(rng, min_size=0.05, max_size=0.4):
    w, h = rng.uniform(min_size, max_size, size=2)
    x1 = rng.uniform(0.0, 1.0 - w)
    y1 = rng.uniform(0.0, 1.0 - h)
    return (x1, y1, x1 + w, y1 + h)


def scores_matching_counts(counts, thresholds, rng, top=0.999):
    """Scores whose count at each threshold (score >= t) equals ``counts``."""
    edges = list(thresholds) + [top]
    scores = []
    for k, t in enumerate(thresholds):
        n = counts[k] - (counts[k + 1] if k + 1 < len(counts) else 0)
        ceiling = np.nextafter(edges[k + 1], 0.0)
        scores.extend(min(float(s), ceiling) for s in rng.uniform(t, edges[k + 1], size=n))
    return scores


def complementary_pool(n_images=54, seed=7):
    """Three models, one GT per image, each model confidently wrong somewhere.

    Every model localises each GT well, but on a disjoint third of the images
    it also emits a high-scoring false positive and a weak true box. Alone, each
    model's AP50 stays below 1; fused, the agreed-on true boxes outrank the
    unconfirmed false positives.
    """
    rng = np.random.default_rng(seed)
    gts, pool = [], {"A": [], "B": [], "C": []}
    for i in range(n_images):
        image = f"img{i:03d}"
        truth = random_box(rng, 0.15, 0.35)
        gts.append(gt(image, truth))
        weak_model = "ABC"[i % 3]
        for m in "ABC":
            box = jitter(truth, rng, 0.01)
            if m == weak_model:
                pool[m].append(det(image, box, float(rng.uniform(0.35, 0.5)), m))
                # small enough that its IoU with any truth box stays below 0.12
                fp = random_box(rng, 0.05, 0.05)
                pool[m].append(det(image, fp, float(rng.uniform(0.9, 0.99)), m))
            else:
                pool[m].append(det(image, box, float(rng.uniform(0.6, 0.85)), m))
    return pool, gts


def fusion_fixture(seed, max_boxes=6, max_models=3):
    """Up to ``max_boxes`` boxes spread over up to ``max_models`` models, drawn
    around a few shared centres so that clusters actually form."""
    rng = np.random.default_rng(seed)
    n_models = int(rng.integers(1, max_models + 1))
    n_boxes = int(rng.integers(0, max_boxes + 1))
    centres = [random_box(rng, 0.1, 0.4) for _ in range(int(rng.integers(1, 4)))]
    raw = [[] for _ in range(n_models)]
    for _ in range(n_boxes):
        c = centres[int(rng.integers(len(centres)))]
        box = jitter(c, rng, float(rng.choice([0.005, 0.03, 0.08])))
        score = float(rng.choice([0.25, 0.5, 0.75])) if rng.random() < 0.3 else float(rng.uniform(0.05, 1.0))
        raw[int(rng.integers(n_models))].append((box, score, int(rng.choice([1, 1, 1, 2]))))
    weights = [int(rng.integers(1, 4)) for _ in range(n_models)]
    cfg = FusionConfig(iou_threshold=float(rng.choice([0.3, 0.5, 0.7])),
                       skip_box_threshold=float(rng.choice([0.0, 0.3])))
    runs = [ModelRun(f"m{i}", w, [det(0, b, s, f"m{i}", c) for b, s, c in r])
            for i, (w, r) in enumerate(zip(weights, raw))]
    return runs, cfg, list(zip(weights, raw))
