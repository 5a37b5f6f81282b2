"""Exhaustive search over model subsets and integer weight tuples."""

from __future__ import annotations

import heapq
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from .matching import Detection, GroundTruth
from .metrics import MetricReport, evaluate
from .wbf import FusionConfig, ModelRun, fuse_dataset


class SearchError(ValueError):
    pass


class Criterion(str, Enum):
    AP50 = "maximize-AP50"
    AR = "maximize-AR"
    OLRP = "minimize-oLRP"

    @classmethod
    def parse(cls, text: str) -> "Criterion":
        aliases = {"ap50": cls.AP50, "ap": cls.AP50, "ar": cls.AR, "olrp": cls.OLRP, "lrp": cls.OLRP}
        key = text.strip()
        if key.lower() in aliases:
            return aliases[key.lower()]
        try:
            return cls(key)
        except ValueError:
            raise SearchError(
                f"unknown criterion {text!r}; choose one of ap50, ar, olrp") from None

    @property
    def minimize(self) -> bool:
        return self is Criterion.OLRP

    def measure(self, report: MetricReport) -> float:
        if self is Criterion.AP50:
            return report.ap50
        if self is Criterion.AR:
            return report.ar
        return report.olrp.total


@dataclass(frozen=True, order=True)
class WeightAssignment:
    members: Tuple[str, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "weights", tuple(self.weights))
        if len(self.members) < 2:
            raise SearchError("an ensemble needs at least two models")
        if len(self.members) != len(self.weights):
            raise SearchError("members and weights differ in length")
        if len(set(self.members)) != len(self.members):
            raise SearchError(f"duplicate model in {self.members}")
        if any(not w >= 1 for w in self.weights):
            raise SearchError(f"weights must be >= 1, got {self.weights}")

    def label(self) -> str:
        return "+".join(self.members) + " " + "(" + ", ".join(_fmt_weight(w) for w in self.weights) + ")"


def _fmt_weight(w) -> str:
    return str(int(w)) if float(w).is_integer() else repr(float(w))


@dataclass(frozen=True)
class LeaderboardEntry:
    assignment: WeightAssignment
    value: float
    ap50: float


@dataclass
class SearchResult:
    criterion: Criterion
    best: WeightAssignment
    best_report: MetricReport
    evaluated_count: int
    leaderboard: List[LeaderboardEntry] = field(default_factory=list)

    @property
    def best_value(self) -> float:
        return self.criterion.measure(self.best_report)


def count_assignments(n: int, max_weight: Optional[int] = None) -> int:
    """Closed-form size of the un-deduplicated enumeration."""
    w = n if max_weight is None else max_weight
    return sum(math.comb(n, k) * w ** k for k in range(2, n + 1))


def enumerate_assignments(pool: Sequence[str], dedupe_scaling: bool = False,
                          max_weight: Optional[int] = None) -> Iterator[WeightAssignment]:
    """Every subset of size 2..n crossed with every weight tuple in {1..max_weight}^k.

    Subsets follow pool order, weight tuples lexicographic order. With
    ``dedupe_scaling`` a tuple is skipped when it is an integer multiple of an
    earlier one, i.e. whenever its gcd exceeds 1.
    """
    pool = list(pool)
    if len(pool) < 2:
        raise SearchError(f"an ensemble needs at least two models, pool has {len(pool)}")
    if len(set(pool)) != len(pool):
        raise SearchError(f"duplicate model ids in pool {pool}")
    top = len(pool) if max_weight is None else int(max_weight)
    if top < 1:
        raise SearchError(f"max_weight must be >= 1, got {max_weight}")
    for k in range(2, len(pool) + 1):
        for members in itertools.combinations(pool, k):
            for weights in itertools.product(range(1, top + 1), repeat=k):
                if dedupe_scaling and math.gcd(*weights) > 1:
                    continue
                yield WeightAssignment(members, weights)


def evaluate_assignment(assignment: WeightAssignment, detections: Mapping[str, Sequence[Detection]],
                        ground_truths: Sequence[GroundTruth], config: FusionConfig = FusionConfig(),
                        iou_threshold: float = 0.5, tau: float = 0.5,
                        ensemble_id: str = "ensemble") -> Tuple[List[Detection], MetricReport]:
    runs = []
    for model_id, weight in zip(assignment.members, assignment.weights):
        if model_id not in detections:
            raise SearchError(f"no detections supplied for model {model_id!r}")
        runs.append(ModelRun(model_id, weight, list(detections[model_id])))
    fused = fuse_dataset(runs, config, ensemble_id=ensemble_id)
    return fused, evaluate(fused, ground_truths, iou_threshold, tau)


# Criterion values are compared after rounding so that mathematically equal
# scores reached through different summation orders still tie.
RANK_DECIMALS = 12


def _rank_key(criterion: Criterion, value: float, ap50: float, a: WeightAssignment):
    primary = round(value if criterion.minimize else -value, RANK_DECIMALS)
    return (primary, -round(ap50, RANK_DECIMALS), len(a.members), a.members, a.weights)


# Per-process state for pool workers, installed by the initializer.
_STATE: Dict[str, object] = {}


def _init_worker(state):
    _STATE.clear()
    _STATE.update(state)


def _score_chunk(chunk: Sequence[WeightAssignment]):
    s = _STATE
    out = []
    for a in chunk:
        _, report = evaluate_assignment(a, s["detections"], s["ground_truths"], s["config"],
                                        s["iou_threshold"], s["tau"])
        value = s["criterion"].measure(report)
        out.append((_rank_key(s["criterion"], value, report.ap50, a), a, value, report.ap50))
    return out


def _chunks(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def search(detections: Mapping[str, Sequence[Detection]], ground_truths: Sequence[GroundTruth],
           criterion: Criterion = Criterion.AP50, config: FusionConfig = FusionConfig(),
           dedupe_scaling: bool = False, max_weight: Optional[int] = None,
           workers: Optional[int] = None, top_k: int = 20,
           iou_threshold: float = 0.5, tau: float = 0.5,
           pool: Optional[Sequence[str]] = None) -> SearchResult:
    """Fuse and score every assignment over the pool; return the best.

    Ranking is total: criterion value, then higher AP50, then fewer members,
    then the lexicographically smallest (members, weights). The result is
    therefore identical for any worker count.
    """
    if isinstance(criterion, str) and not isinstance(criterion, Criterion):
        criterion = Criterion.parse(criterion)
    pool = list(detections) if pool is None else list(pool)
    missing = [m for m in pool if m not in detections]
    if missing:
        raise SearchError(f"no detections supplied for model {missing[0]!r}")
    if not ground_truths:
        raise SearchError("ground truth set is empty: recall undefined")

    assignments = list(enumerate_assignments(pool, dedupe_scaling, max_weight))
    state = {
        "detections": {m: list(detections[m]) for m in pool},
        "ground_truths": list(ground_truths),
        "config": config,
        "iou_threshold": iou_threshold,
        "tau": tau,
        "criterion": criterion,
    }
    workers = (os.cpu_count() or 1) if workers is None else max(1, int(workers))

    if workers == 1 or len(assignments) < 2:
        _init_worker(state)
        scored = _score_chunk(assignments)
    else:
        size = max(1, math.ceil(len(assignments) / (workers * 4)))
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(state,)) as ex:
            scored = [row for part in ex.map(_score_chunk, list(_chunks(assignments, size)))
                      for row in part]

    top = heapq.nsmallest(max(1, top_k), scored, key=lambda row: row[0])
    best = top[0][1]
    _, best_report = evaluate_assignment(best, state["detections"], ground_truths, config,
                                         iou_threshold, tau)
    return SearchResult(
        criterion=criterion,
        best=best,
        best_report=best_report,
        evaluated_count=len(assignments),
        leaderboard=[LeaderboardEntry(a, value, ap50) for _, a, value, ap50 in top],
    )


def combo(first_level: Mapping[str, Sequence[Detection]], weights: Sequence[float],
          ground_truths: Sequence[GroundTruth], config: FusionConfig = FusionConfig(),
          iou_threshold: float = 0.5, tau: float = 0.5,
          ensemble_id: str = "combo") -> Tuple[List[Detection], MetricReport]:
    """Second-level fusion: each already-fused list acts as one weighted model."""
    if len(first_level) < 2:
        raise SearchError("combo fusion needs at least two first-level ensembles")
    if len(weights) != len(first_level):
        raise SearchError(f"{len(first_level)} first-level ensembles but {len(weights)} weights")
    runs = [ModelRun(name, w, list(dets)) for (name, dets), w in zip(first_level.items(), weights)]
    fused = fuse_dataset(runs, config, ensemble_id=ensemble_id)
    return fused, evaluate(fused, ground_truths, iou_threshold, tau)
