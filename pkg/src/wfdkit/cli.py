"""Command-line front end: ``wfd <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import io as wio
from . import preprocess as pp
from .matching import GroundTruth
from .metrics import MetricError, evaluate, filter_by_score, pr_curve
from .search import Criterion, SearchError, evaluate_assignment, search
from .wbf import FusionConfig, FusionError, ModelRun, fuse_dataset

log = logging.getLogger("wfdkit")


class CliError(Exception):
    pass


class Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self):
        self.paths: List[Path] = []

    def text(self, path, text: str) -> None:
        wio.write_text(path, text)
        self.paths.append(Path(path))

    def track(self, path) -> None:
        self.paths.append(Path(path))

    def rollback(self) -> None:
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def parse_model_spec(text: str) -> Tuple[str, Path, float]:
    """``model=path[:weight]``; the weight defaults to 1."""
    if "=" not in text:
        raise CliError(f"model spec {text!r} must look like model=path[:weight]")
    model_id, rest = text.split("=", 1)
    if not model_id:
        raise CliError(f"model spec {text!r} has an empty model id")
    weight = 1.0
    if ":" in rest:
        head, tail = rest.rsplit(":", 1)
        try:
            weight = float(tail)
            rest = head
        except ValueError:
            pass  # colon belongs to the path
    if not weight > 0:
        raise CliError(f"model {model_id!r}: weight must be positive, got {weight:g}")
    if float(weight).is_integer():
        weight = int(weight)
    return model_id, Path(rest), weight


def _fusion_config(args) -> FusionConfig:
    return FusionConfig(iou_threshold=args.iou_thr, skip_box_threshold=args.skip_box_thr,
                        box_limit=args.limit_boxes)


def _load_models(specs: Sequence[str], annotations: wio.AnnotationSet):
    models = []
    seen = set()
    for spec in specs:
        model_id, path, weight = parse_model_spec(spec)
        if model_id in seen:
            raise CliError(f"model id {model_id!r} given twice")
        seen.add(model_id)
        if not path.exists():
            raise CliError(f"detection file for model {model_id!r} not found: {path}")
        dets = wio.load_detections(path, annotations, model_id=model_id).detections
        models.append((model_id, weight, dets))
    return models


def _emit_report(report, args, out: Outputs) -> None:
    table = wio.format_table(report)
    sys.stdout.write(table)
    if getattr(args, "report", None):
        out.text(args.report, wio.report_to_json(report))
    if getattr(args, "table", None):
        out.text(args.table, table)


# ----------------------------------------------------------------------------
# subcommands


def cmd_eval(args, out: Outputs) -> None:
    annotations = wio.load_annotations(args.annotations)
    dets = wio.load_detections(args.detections, annotations, model_id=args.model_id).detections
    dets = filter_by_score(dets, args.score_thr)
    report = evaluate(dets, annotations.ground_truths, args.iou_thr, args.tau)
    _emit_report(report, args, out)


def cmd_fuse(args, out: Outputs) -> None:
    annotations = wio.load_annotations(args.annotations)
    models = _load_models(args.model, annotations)
    config = _fusion_config(args)
    if args.command == "combo" and len(models) < 2:
        raise CliError("combo needs at least two first-level fused files")
    runs = [ModelRun(m, w, d) for m, w, d in models]
    fused = fuse_dataset(runs, config, ensemble_id=args.ensemble_id)
    out.text(args.out, wio.dump_json(wio.detections_to_records(fused, annotations)))
    if annotations.ground_truths:
        report = evaluate(fused, annotations.ground_truths, args.eval_iou_thr, args.tau)
        _emit_report(report, args, out)
    else:
        log.warning("annotation file has no ground truths; skipping evaluation")


def cmd_search(args, out: Outputs) -> None:
    tune = wio.load_annotations(args.annotations)
    universe = tune
    report_split = None
    if args.report_annotations:
        report_split = wio.load_annotations(args.report_annotations)
        universe = tune.merged(report_split)
    models = _load_models(args.model, universe)
    if args.select:
        wanted = [s for s in args.select.split(",") if s]
        known = {m for m, _, _ in models}
        unknown = [s for s in wanted if s not in known]
        if unknown:
            raise CliError(f"--select names unknown model {unknown[0]!r}")
        models = [m for m in models if m[0] in wanted]
    if len(models) < 2:
        raise CliError(f"search needs at least two models in the pool, got {len(models)}")

    tune_ids = {im.image_id for im in tune.images}
    pool = {m: [d for d in dets if d.image_id in tune_ids] for m, _, dets in models}
    config = _fusion_config(args)
    result = search(pool, tune.ground_truths, Criterion.parse(args.criterion), config,
                    dedupe_scaling=args.dedupe, max_weight=args.max_weight,
                    workers=args.workers, top_k=args.top_k,
                    iou_threshold=args.eval_iou_thr, tau=args.tau)
    _emit_report(result, args, out)

    if report_split is not None:
        split_ids = {im.image_id for im in report_split.images}
        full = {m: [d for d in dets if d.image_id in split_ids] for m, _, dets in models}
        _, split_report = evaluate_assignment(result.best, full, report_split.ground_truths, config,
                                              args.eval_iou_thr, args.tau)
        sys.stdout.write("\nreport split:\n" + wio.format_table(split_report))
        if args.report_split_out:
            out.text(args.report_split_out, wio.report_to_json(split_report))
    if args.fused_out:
        fused, _ = evaluate_assignment(result.best, pool, tune.ground_truths, config,
                                       args.eval_iou_thr, args.tau, ensemble_id=args.ensemble_id)
        out.text(args.fused_out, wio.dump_json(wio.detections_to_records(fused, universe)))


def cmd_curve(args, out: Outputs) -> None:
    annotations = wio.load_annotations(args.annotations)
    dets = wio.load_detections(args.detections, annotations).detections
    curve = pr_curve(dets, annotations.ground_truths, args.iou_thr)
    out.text(args.out, wio.pr_curve_csv(curve))
    if args.svg:
        out.text(args.svg, wio.pr_curve_svg(curve))


def cmd_json2csv(args, out: Outputs) -> None:
    n = wio.json_to_csv(args.input, args.output, model_id=args.model_id)
    out.track(args.output)
    print(f"wrote {n} rows to {args.output}")


def cmd_csv2json(args, out: Outputs) -> None:
    n = wio.csv_to_json(args.input, args.output)
    out.track(args.output)
    print(f"wrote {n} records to {args.output}")


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def _png_bytes(arr: np.ndarray, rgb: bool) -> bytes:
    from io import BytesIO

    from PIL import Image

    if rgb:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    buf = BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _preprocess_one(task):
    """Worker body; returns (file name, png bytes, boxes, applied ops)."""
    src, name, boxes, clahe_params, aug, size, rgb = task
    arr, out_boxes, ops = pp.preprocess_image(_read_png(src), boxes, clahe_params, aug, size)
    return name, _png_bytes(arr, rgb), out_boxes, ops


def cmd_preprocess(args, out: Outputs) -> None:
    images_dir = Path(args.images)
    out_dir = Path(args.out)
    clahe_params = pp.ClaheParams(grid=tuple(args.grid), clip_limit=args.clip_limit)
    base_aug = None
    if args.augment:
        base_aug = pp.AugmentParams(args.flip_prob, tuple(args.brightness), tuple(args.contrast), args.seed)

    if args.annotations:
        aset = wio.load_annotations(args.annotations)
        records = aset.images
        boxes_by_image: Dict[str, List] = {}
        for gt in aset.ground_truths:
            boxes_by_image.setdefault(gt.image_id, []).append(gt)
    else:
        aset = None
        files = sorted(p.name for p in images_dir.glob("*.png"))
        records = [wio.ImageRecord(Path(f).stem, None, f) for f in files]
        boxes_by_image = {}

    tasks = []
    for index, rec in enumerate(records):
        src = images_dir / rec.file_name
        if not src.exists():
            raise CliError(f"image file for {rec.image_id!r} not found: {src}")
        aug = base_aug.with_seed(pp.derive_seed(args.seed, index)) if base_aug else None
        boxes = [gt.box for gt in boxes_by_image.get(rec.image_id, [])]
        tasks.append((src, rec.file_name, boxes, clahe_params, aug, args.size, args.rgb))

    workers = (os.cpu_count() or 1) if args.workers is None else max(1, args.workers)
    if workers == 1 or len(tasks) < 2:
        results = [_preprocess_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_preprocess_one, tasks))

    out_dir.mkdir(parents=True, exist_ok=True)
    ops_log = []
    new_gts = []
    for rec, (name, data, boxes, ops) in zip(records, results):
        dst = out_dir / name
        dst.parent.mkdir(parents=True, exist_ok=True)
        dst.write_bytes(data)
        out.track(dst)
        cats = [gt.category for gt in boxes_by_image.get(rec.image_id, [])]
        new_gts.extend(GroundTruth(rec.image_id, b, c) for b, c in zip(boxes, cats))
        if ops is not None:
            ops_log.append({"image_id": rec.image_id, "flipped": ops.flipped,
                            "contrast_factor": ops.contrast_factor,
                            "brightness_delta": ops.brightness_delta})

    if aset is not None:
        size = wio.ImageSize(args.size, args.size)
        new_set = wio.AnnotationSet(
            images=[wio.ImageRecord(im.image_id, size, im.file_name) for im in aset.images],
            ground_truths=new_gts,
            categories=list(aset.categories),
        )
        out.text(out_dir / args.annotations_name, wio.dump_json(wio.annotations_to_doc(new_set)))
    if ops_log:
        out.text(out_dir / "augmentations.json", wio.dump_json(ops_log))
    print(f"processed {len(results)} images into {out_dir}")


# ----------------------------------------------------------------------------
# parser


def _add_fusion_flags(p):
    p.add_argument("--iou-thr", type=float, default=0.5, help="IoU needed to join a fusion cluster (default 0.5)")
    p.add_argument("--skip-box-thr", type=float, default=0.3, help="drop input boxes scoring below this (default 0.3)")
    p.add_argument("--limit-boxes", type=int, default=6000, help="max fused boxes kept per image (default 6000)")
    p.add_argument("--eval-iou-thr", type=float, default=0.5, help="TP IoU threshold for AP50/PR curve (default 0.5)")
    p.add_argument("--tau", type=float, default=0.5, help="TP IoU threshold for LRP (default 0.5)")
    p.add_argument("--ensemble-id", default="ensemble", help="model id given to fused detections")


def _add_report_flags(p):
    p.add_argument("--report", metavar="JSON", help="write the machine-readable report here")
    p.add_argument("--table", metavar="TXT", help="write the table report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("eval", help="AP50 / AR / oLRP for one detection file")
    p.add_argument("-a", "--annotations", required=True, help="COCO-style annotation file")
    p.add_argument("-d", "--detections", required=True, help="detection JSON or CSV file")
    p.add_argument("--model-id", help="model id (default: file stem)")
    p.add_argument("--iou-thr", type=float, default=0.5, help="TP IoU threshold for AP50 (default 0.5)")
    p.add_argument("--tau", type=float, default=0.5, help="TP IoU threshold for LRP (default 0.5)")
    p.add_argument("--score-thr", type=float, default=0.0, help="ignore detections scoring below this")
    _add_report_flags(p)
    p.set_defaults(func=cmd_eval)

    for name, help_text in (("fuse", "weighted boxes fusion of several detection files"),
                            ("combo", "second-level fusion of already fused files")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-a", "--annotations", required=True, help="COCO-style annotation file")
        p.add_argument("-m", "--model", action="append", required=True, metavar="ID=PATH[:WEIGHT]",
                       help="input detections with optional weight (repeatable; weight defaults to 1)")
        p.add_argument("-o", "--out", required=True, help="fused detection file to write")
        _add_fusion_flags(p)
        _add_report_flags(p)
        p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("search", help="exhaustive model/weight search")
    p.add_argument("-a", "--annotations", required=True, help="annotations the search is scored on")
    p.add_argument("-m", "--model", action="append", required=True, metavar="ID=PATH",
                   help="pool member detections (repeatable; weights are searched)")
    p.add_argument("-c", "--criterion", default="ap50", help="ap50, ar or olrp (default ap50)")
    p.add_argument("--select", help="comma-separated subset of model ids forming the pool")
    p.add_argument("--dedupe", action="store_true", help="skip weight tuples that are multiples of earlier ones")
    p.add_argument("--max-weight", type=int, help="largest weight tried (default: pool size)")
    p.add_argument("--workers", type=int, help="worker processes (default: CPU count; 1 = sequential)")
    p.add_argument("--top-k", type=int, default=20, help="leaderboard depth (default 20)")
    p.add_argument("--report-annotations", help="held-out annotations to report the winner on")
    p.add_argument("--report-split-out", metavar="JSON", help="write the held-out report here")
    p.add_argument("--fused-out", metavar="JSON", help="write the winning fused detections here")
    _add_fusion_flags(p)
    _add_report_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("preprocess", help="invert, CLAHE, rescale and augment grayscale PNGs")
    p.add_argument("--images", required=True, help="directory of input PNG files")
    p.add_argument("-a", "--annotations", help="COCO-style annotations for the images")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--annotations-name", default="annotations.json", help="name of the written annotation file")
    p.add_argument("--grid", type=int, nargs=2, default=[11, 11], metavar=("TX", "TY"), help="CLAHE tile grid (default 11 11)")
    p.add_argument("--clip-limit", type=float, default=7.0, help="CLAHE relative clip limit (default 7.0)")
    p.add_argument("--size", type=int, default=pp.TARGET_SIZE, help="output side length (default 800)")
    p.add_argument("--augment", action="store_true", help="apply random flip + brightness/contrast")
    p.add_argument("--flip-prob", type=float, default=0.5, help="horizontal flip probability (default 0.5)")
    p.add_argument("--brightness", type=float, nargs=2, default=[-25.5, 25.5], metavar=("LO", "HI"),
                   help="brightness delta range (default -25.5 25.5)")
    p.add_argument("--contrast", type=float, nargs=2, default=[0.8, 1.2], metavar=("LO", "HI"),
                   help="contrast factor range (default 0.8 1.2)")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")
    p.add_argument("--rgb", action="store_true", help="write 3-channel PNGs")
    p.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("curve", help="precision-recall curve as CSV (and SVG)")
    p.add_argument("-a", "--annotations", required=True)
    p.add_argument("-d", "--detections", required=True)
    p.add_argument("--iou-thr", type=float, default=0.5)
    p.add_argument("-o", "--out", required=True, help="CSV file (recall,precision)")
    p.add_argument("--svg", help="also write an SVG plot here")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("json2csv", help="detection JSON -> CSV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--model-id", help="value for the model_id column (default: file stem)")
    p.set_defaults(func=cmd_json2csv)

    p = sub.add_parser("csv2json", help="detection CSV -> JSON")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_csv2json)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    out = Outputs()
    try:
        args.func(args, out)
    except (CliError, MetricError, SearchError, FusionError, pp.PreprocessError,
            wio.FormatError, ValueError, OSError) as exc:
        out.rollback()
        print(f"wfd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        out.rollback()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
