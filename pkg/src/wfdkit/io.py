"""Annotation/detection file formats, CSV conversion and report writers.

Annotation files follow the COCO detection layout (``images``,
``annotations``, ``categories``; ``bbox`` is ``[x, y, w, h]`` in pixels).
Detection files are arrays of ``{image_id, category_id, bbox, score}``.
In memory every box is a normalized :class:`~wfdkit.geometry.BBox` and every
image id an opaque string.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from .geometry import BoxError, ImageSize, to_normalized, to_pixel, xywh_to_corners
from .matching import Detection, GroundTruth
from .metrics import MetricReport, PRCurve

CSV_HEADER = ["image_id", "x1", "y1", "x2", "y2", "score", "category_id", "model_id"]
PR_CSV_HEADER = ["recall", "precision"]

# pixel coordinates are written with this many decimals
PIXEL_DECIMALS = 6

PathLike = Union[str, os.PathLike]


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    size: ImageSize
    file_name: str = ""


@dataclass
class AnnotationSet:
    images: List[ImageRecord] = field(default_factory=list)
    ground_truths: List[GroundTruth] = field(default_factory=list)
    categories: List[Tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        self._sizes = {im.image_id: im.size for im in self.images}
        self._category_ids = {cid for cid, _ in self.categories}

    def size_of(self, image_id: str) -> ImageSize:
        return self._sizes[image_id]

    def has_image(self, image_id: str) -> bool:
        return image_id in self._sizes

    def has_category(self, category_id: int) -> bool:
        return category_id in self._category_ids

    def __eq__(self, other):
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        return (self.images, self.ground_truths, self.categories) == (
            other.images, other.ground_truths, other.categories)

    def merged(self, other: "AnnotationSet") -> "AnnotationSet":
        """Union of two splits; images present in both must agree on size."""
        images = list(self.images)
        for im in other.images:
            if im.image_id in self._sizes:
                if self._sizes[im.image_id] != im.size:
                    raise FormatError(f"image {im.image_id!r} has conflicting sizes across splits")
                continue
            images.append(im)
        cats = list(self.categories) + [c for c in other.categories if c[0] not in self._category_ids]
        return AnnotationSet(images, list(self.ground_truths) + list(other.ground_truths), cats)


@dataclass
class DetectionSet:
    model_id: str
    detections: List[Detection] = field(default_factory=list)

    def __len__(self):
        return len(self.detections)


# ----------------------------------------------------------------------------
# helpers


def _image_key(value, where: str) -> str:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise FormatError(f"{where}: image_id must be an integer or string, got {value!r}")
    return str(value)


def _image_value(image_id: str):
    """Write decimal-integer ids back as JSON integers."""
    if image_id.isdigit() and str(int(image_id)) == image_id:
        return int(image_id)
    return image_id


def _number(value, where: str, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"{where}: {name} must be a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise FormatError(f"{where}: {name} must be finite, got {value!r}")
    return v


def _category(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise FormatError(f"{where}: category_id must be an integer, got {value!r}")
    return value


def _bbox(value, where: str) -> Tuple[float, float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise FormatError(f"{where}: bbox must be [x, y, width, height], got {value!r}")
    x, y, w, h = (_number(v, where, "bbox") for v in value)
    if w <= 0 or h <= 0:
        raise FormatError(f"{where}: bbox {value!r} has zero or negative area")
    return x, y, w, h


def _px(v: float) -> float:
    r = round(v, PIXEL_DECIMALS)
    return 0.0 if r == 0 else r  # no "-0.0" in output files


def _pixel_xywh(box, size: ImageSize) -> List[float]:
    x1, y1, x2, y2 = to_pixel(box, size)
    return [_px(x1), _px(y1), _px(x2 - x1), _px(y2 - y1)]


def _read_json(path: PathLike):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def write_text(path: PathLike, text: str) -> None:
    """Write ``text`` atomically (temp file + rename), UTF-8 with LF endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


# ----------------------------------------------------------------------------
# annotations


def parse_annotations(doc, source: str = "<memory>") -> AnnotationSet:
    if not isinstance(doc, dict):
        raise FormatError(f"{source}: annotation file must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise FormatError(f"{source}: missing or non-list '{key}' array")

    categories = []
    for i, rec in enumerate(doc["categories"]):
        where = f"{source}: categories[{i}]"
        if not isinstance(rec, dict):
            raise FormatError(f"{where}: expected an object")
        categories.append((_category(rec.get("id"), where), str(rec.get("name", ""))))
    if len({c for c, _ in categories}) != len(categories):
        raise FormatError(f"{source}: duplicate category ids")

    images = []
    for i, rec in enumerate(doc["images"]):
        where = f"{source}: images[{i}]"
        if not isinstance(rec, dict):
            raise FormatError(f"{where}: expected an object")
        try:
            size = ImageSize(rec.get("width"), rec.get("height"))
        except (BoxError, TypeError) as exc:
            raise FormatError(f"{where}: {exc}") from None
        images.append(ImageRecord(_image_key(rec.get("id"), where), size, str(rec.get("file_name", ""))))
    if len({im.image_id for im in images}) != len(images):
        raise FormatError(f"{source}: duplicate image ids")

    aset = AnnotationSet(images=images, categories=categories)
    for i, rec in enumerate(doc["annotations"]):
        where = f"{source}: annotations[{i}]"
        if not isinstance(rec, dict):
            raise FormatError(f"{where}: expected an object")
        image_id = _image_key(rec.get("image_id"), where)
        if not aset.has_image(image_id):
            raise FormatError(f"{where}: unknown image id {image_id!r}")
        category = _category(rec.get("category_id"), where)
        if not aset.has_category(category):
            raise FormatError(f"{where}: unknown category id {category}")
        try:
            box = to_normalized(xywh_to_corners(_bbox(rec.get("bbox"), where)), aset.size_of(image_id))
        except BoxError as exc:
            raise FormatError(f"{where}: {exc}") from None
        aset.ground_truths.append(GroundTruth(image_id, box, category))
    return aset


def load_annotations(path: PathLike) -> AnnotationSet:
    return parse_annotations(_read_json(path), str(path))


def annotations_to_doc(aset: AnnotationSet) -> dict:
    return {
        "images": [
            {"id": _image_value(im.image_id), "width": im.size.width, "height": im.size.height,
             "file_name": im.file_name}
            for im in aset.images
        ],
        "annotations": [
            {"id": i + 1, "image_id": _image_value(gt.image_id), "category_id": gt.category,
             "bbox": _pixel_xywh(gt.box, aset.size_of(gt.image_id))}
            for i, gt in enumerate(aset.ground_truths)
        ],
        "categories": [{"id": cid, "name": name} for cid, name in aset.categories],
    }


def write_annotations(aset: AnnotationSet, path: PathLike) -> None:
    write_text(path, dump_json(annotations_to_doc(aset)))


# ----------------------------------------------------------------------------
# detections


def _detection_from_record(rec, where: str, annotations: AnnotationSet, model_id: str,
                           corners: bool = False) -> Detection:
    image_id = _image_key(rec.get("image_id"), where)
    if not annotations.has_image(image_id):
        raise FormatError(f"{where}: unknown image id {image_id!r}")
    category = _category(rec.get("category_id"), where)
    if annotations.categories and not annotations.has_category(category):
        raise FormatError(f"{where}: unknown category id {category}")
    score = _number(rec.get("score"), where, "score")
    if not 0.0 <= score <= 1.0:
        raise FormatError(f"{where}: score {score} outside [0, 1]")
    if corners:
        px = tuple(_number(v, where, "bbox") for v in rec["bbox"])
    else:
        px = xywh_to_corners(_bbox(rec.get("bbox"), where))
    try:
        box = to_normalized(px, annotations.size_of(image_id))
    except BoxError as exc:
        raise FormatError(f"{where}: {exc}") from None
    return Detection(image_id, box, score, category, model_id)


def parse_detections(records, annotations: AnnotationSet, model_id: str,
                     source: str = "<memory>") -> DetectionSet:
    if not isinstance(records, list):
        raise FormatError(f"{source}: detection file must be a JSON array")
    dets = []
    for i, rec in enumerate(records):
        where = f"{source}: record {i}"
        if not isinstance(rec, dict):
            raise FormatError(f"{where}: expected an object")
        dets.append(_detection_from_record(rec, where, annotations, model_id))
    return DetectionSet(model_id, dets)


def load_detections(path: PathLike, annotations: AnnotationSet,
                    model_id: Optional[str] = None) -> DetectionSet:
    """Load a JSON (or, by suffix, CSV) detection file; file order is preserved.

    ``model_id`` defaults to the file stem.
    """
    path = Path(path)
    model_id = path.stem if model_id is None else model_id
    if path.suffix.lower() == ".csv":
        dets = [
            _detection_from_record(rec, f"{path}: row {i + 2}", annotations, model_id, corners=True)
            for i, rec in enumerate(_read_csv_records(path))
        ]
        return DetectionSet(model_id, dets)
    return parse_detections(_read_json(path), annotations, model_id, str(path))


def detections_to_records(detections: Sequence[Detection], annotations: AnnotationSet) -> List[dict]:
    return [
        {"image_id": _image_value(d.image_id), "category_id": d.category,
         "bbox": _pixel_xywh(d.box, annotations.size_of(d.image_id)), "score": d.score}
        for d in detections
    ]


def write_detections(detections: Sequence[Detection], annotations: AnnotationSet,
                     path: PathLike) -> None:
    write_text(path, dump_json(detections_to_records(detections, annotations)))


# ----------------------------------------------------------------------------
# CSV conversion


def _fmt_score(v: float) -> str:
    return format(v, ".6g")


def _fmt_px(v: float) -> str:
    return repr(_px(v))


def json_to_csv(detection_path: PathLike, output_path: PathLike,
                model_id: Optional[str] = None) -> int:
    """Flatten a detection JSON file into the CSV layout; returns rows written."""
    detection_path = Path(detection_path)
    model_id = detection_path.stem if model_id is None else model_id
    records = _read_json(detection_path)
    if not isinstance(records, list):
        raise FormatError(f"{detection_path}: detection file must be a JSON array")
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i, rec in enumerate(records):
        where = f"{detection_path}: record {i}"
        if not isinstance(rec, dict):
            raise FormatError(f"{where}: expected an object")
        image_id = _image_key(rec.get("image_id"), where)
        x1, y1, x2, y2 = xywh_to_corners(_bbox(rec.get("bbox"), where))
        score = _number(rec.get("score"), where, "score")
        if not 0.0 <= score <= 1.0:
            raise FormatError(f"{where}: score {score} outside [0, 1]")
        writer.writerow([image_id, _fmt_px(x1), _fmt_px(y1), _fmt_px(x2), _fmt_px(y2),
                         _fmt_score(score), _category(rec.get("category_id"), where), model_id])
    write_text(output_path, buf.getvalue())
    return len(records)


def _read_csv_records(path: PathLike) -> List[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise FormatError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}: line {lineno}"
            if len(row) != len(CSV_HEADER):
                raise FormatError(f"{where}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                x1, y1, x2, y2, score = (float(v) for v in row[1:6])
                category = int(row[6])
            except ValueError as exc:
                raise FormatError(f"{where}: {exc}") from None
            image_id = row[0]
            records.append({
                "image_id": _image_value(image_id),
                "bbox": [x1, y1, x2, y2],
                "score": score,
                "category_id": category,
                "model_id": row[7],
            })
    return records


def csv_to_json(csv_path: PathLike, output_path: PathLike) -> int:
    """Inverse of :func:`json_to_csv`; returns records written."""
    out = []
    for i, rec in enumerate(_read_csv_records(csv_path)):
        x1, y1, x2, y2 = rec["bbox"]
        if not (x2 > x1 and y2 > y1):
            raise FormatError(f"{csv_path}: line {i + 2}: box has zero or negative area")
        out.append({
            "image_id": rec["image_id"],
            "category_id": rec["category_id"],
            "bbox": [_px(x1), _px(y1), _px(x2 - x1), _px(y2 - y1)],
            "score": rec["score"],
        })
    write_text(output_path, dump_json(out))
    return len(out)


# ----------------------------------------------------------------------------
# reports


def metric_report_to_dict(report: MetricReport) -> dict:
    lrp = report.olrp
    return {
        "ap50": report.ap50,
        "ar": report.ar,
        "lrp_t": report.optimal_threshold,
        "olrp_l": lrp.loc_component,
        "olrp_fp": lrp.fp_component,
        "olrp_fn": lrp.fn_component,
        "olrp": lrp.total,
        "tp": lrp.tp,
        "fp": lrp.fp,
        "fn": lrp.fn,
        "predicted_box_count": report.predicted_box_count,
        "pr_curve": [
            {"recall": r, "precision": p, "score": s}
            for (r, p), s in zip(report.pr_curve.points, report.pr_curve.score_at_rank)
        ],
    }


def search_result_to_dict(result) -> dict:
    return {
        "criterion": result.criterion.value,
        "evaluated_count": result.evaluated_count,
        "best": {"members": list(result.best.members), "weights": list(result.best.weights)},
        "best_value": result.best_value,
        "best_report": metric_report_to_dict(result.best_report),
        "leaderboard": [
            {"rank": i + 1, "members": list(e.assignment.members),
             "weights": list(e.assignment.weights), "value": e.value, "ap50": e.ap50}
            for i, e in enumerate(result.leaderboard)
        ],
    }


_METRIC_COLUMNS = ["AP50", "AR", "LRP_t", "oLRP_L", "oLRP_FP", "oLRP_FN", "oLRP", "TP", "FP", "FN", "Boxes"]


def _metric_row(report: MetricReport) -> List[str]:
    d = metric_report_to_dict(report)
    floats = [d[k] for k in ("ap50", "ar", "lrp_t", "olrp_l", "olrp_fp", "olrp_fn", "olrp")]
    ints = [d[k] for k in ("tp", "fp", "fn", "predicted_box_count")]
    return [f"{v:.4f}" for v in floats] + [str(v) for v in ints]


def _table(header: List[str], rows: List[List[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def format_table(report) -> str:
    """Human-readable rendering of a MetricReport or SearchResult."""
    if isinstance(report, MetricReport):
        return _table(_METRIC_COLUMNS, [_metric_row(report)])
    rows = [
        [str(i + 1), "+".join(e.assignment.members),
         "(" + ", ".join(str(w) for w in e.assignment.weights) + ")",
         f"{e.value:.4f}", f"{e.ap50:.4f}"]
        for i, e in enumerate(report.leaderboard)
    ]
    head = (f"criterion: {report.criterion.value}\n"
            f"evaluated: {report.evaluated_count}\n"
            f"best: {report.best.label()}\n\n")
    best = _table(_METRIC_COLUMNS, [_metric_row(report.best_report)])
    return head + best + "\n" + _table(["rank", "members", "weights", "value", "AP50"], rows)


def report_to_json(report) -> str:
    if isinstance(report, MetricReport):
        return dump_json(metric_report_to_dict(report))
    return dump_json(search_result_to_dict(report))


def write_report(report, path: PathLike, format: str = "json") -> None:
    """Write a MetricReport or SearchResult as ``"table"`` text or ``"json"``."""
    if format == "table":
        write_text(path, format_table(report))
    elif format == "json":
        write_text(path, report_to_json(report))
    else:
        raise ValueError(f"unknown report format {format!r}")


def pr_curve_csv(curve: PRCurve) -> str:
    lines = [",".join(PR_CSV_HEADER)]
    lines.extend(f"{r!r},{p!r}" for r, p in curve.points)
    return "\n".join(lines) + "\n"


def write_pr_curve(curve: PRCurve, path: PathLike) -> None:
    write_text(path, pr_curve_csv(curve))


def pr_curve_svg(curve: PRCurve, size: int = 400, title: str = "Precision-recall curve") -> str:
    margin = 40
    span = size - 2 * margin

    def xy(r, p):
        return f"{margin + r * span:.2f},{margin + (1.0 - p) * span:.2f}"

    points = " ".join(xy(r, p) for r, p in curve.points)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">\n'
        f'  <title>{title}</title>\n'
        f'  <rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        f'fill="none" stroke="#888"/>\n'
        f'  <text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle" font-size="12">recall</text>\n'
        f'  <text x="12" y="{size / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {size / 2:.0f})">precision</text>\n'
        f'  <polyline fill="none" stroke="#c0392b" stroke-width="2" points="{points}"/>\n'
        "</svg>\n"
    )


def write_pr_curve_svg(curve: PRCurve, path: PathLike) -> None:
    write_text(path, pr_curve_svg(curve))
