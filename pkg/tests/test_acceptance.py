"""End-to-end acceptance checks, one group per criterion.

Each test carries ``@pytest.mark.criterion``; conftest prints one PASS/FAIL
line per criterion at the end of the run.
"""

import json
import time

import numpy as np
import pytest

from wfdkit import io as wio
from wfdkit.geometry import BBox, ImageSize, hflip
from wfdkit.metrics import average_precision, average_recall, count_boxes, evaluate, lrp_from_components, pr_curve
from wfdkit.preprocess import (AugmentParams, ClaheParams, augment, clahe, dominant_background,
                               hflip_image, invert_if_light, DARK)
from wfdkit.search import Criterion, search
from wfdkit.wbf import fuse_clusters, fuse_image

from fixtures import (DYNAMIC_RCNN_COUNTS, PAA_COUNTS, THRESHOLDS, complementary_pool, det, fusion_fixture,
                      gt, random_box, scores_matching_counts)
from oracles import brute_ap, rank_rows, oracle_table, reference_clahe, reference_wbf

criterion = pytest.mark.criterion


# 1 ---------------------------------------------------------------------------

@criterion(1, "LRP recombination of published component rows")
class TestLrpRecombination:
    def test_paa_with_augmentation_row(self):
        assert lrp_from_components(0.310, 0.184, 0.286, tau=0.5) == pytest.approx(0.766, abs=0.001)

    def test_sabl_faster_rcnn_row(self):
        assert lrp_from_components(0.303, 0.494, 0.286, tau=0.5) == pytest.approx(0.834, abs=0.002)

    def test_runtime(self):
        start = time.perf_counter()
        for _ in range(1000):
            lrp_from_components(0.310, 0.184, 0.286)
        assert time.perf_counter() - start < 0.1


# 2 ---------------------------------------------------------------------------

@criterion(2, "WBF equals step-by-step reference on 500 random fixtures")
def test_wbf_oracle_equivalence():
    start = time.perf_counter()
    for seed in range(500):
        runs, cfg, raw = fusion_fixture(seed)
        assert len(runs) <= 3 and sum(len(r.detections) for r in runs) <= 6
        ref = reference_wbf(raw, cfg.iou_threshold, cfg.skip_box_threshold)
        clusters = fuse_clusters(runs, cfg)
        origin = {id(d): (ri, di) for ri, r in enumerate(runs) for di, d in enumerate(r.detections)}
        total_w = sum(r.weight for r in runs)
        assert len(clusters) == len(ref), seed
        for cl, want in zip(clusters, ref):
            assert [origin[id(d)] for d, _ in cl.members] == want["members"], seed
            assert max(abs(a - b) for a, b in zip(cl.fused_box.as_tuple(), want["box"])) <= 1e-9, seed
            assert abs(cl.confidence(total_w) - want["score"]) <= 1e-9, seed
        fused = fuse_image(runs, cfg)
        assert [d.score for d in fused] == pytest.approx(sorted((w["score"] for w in ref), reverse=True), abs=1e-9)
    assert time.perf_counter() - start < 5.0


# 3 ---------------------------------------------------------------------------

@criterion(3, "AP hand-check and perfect detector")
class TestApHandCheck:
    def test_tp_fp_tp_over_two_gts(self):
        gts = [gt(1, (0.0, 0.0, 0.3, 0.3)), gt(2, (0.5, 0.5, 0.8, 0.8))]
        dets = [det(1, (0.0, 0.0, 0.3, 0.3), 0.9), det(1, (0.6, 0.0, 0.9, 0.2), 0.8),
                det(2, (0.5, 0.5, 0.8, 0.8), 0.7)]
        assert average_precision(pr_curve(dets, gts)) == pytest.approx(5 / 6, abs=1e-12)
        assert brute_ap(dets, gts) == pytest.approx(5 / 6, abs=1e-12)

    def test_perfect_detector_exact(self):
        rng = np.random.default_rng(0)
        gts = [gt(i, random_box(rng)) for i in range(20)]
        rep = evaluate([det(g.image_id, g.box.as_tuple(), 0.5 + i / 50) for i, g in enumerate(gts)], gts)
        assert rep.ap50 == 1.0 and rep.olrp.total == 0.0


# 4 ---------------------------------------------------------------------------

@criterion(4, "AR on the 10-threshold IoU grid")
class TestArGrid:
    def test_iou_072_gives_half(self):
        g = gt(1, (0.0, 0.0, 0.5, 0.5))
        d = det(1, (0.0, 0.0, 0.36, 0.5), 0.9)  # IoU 0.18 / 0.25 = 0.72
        assert average_recall([d], [g]) == 0.5

    def test_exact_boxes_give_one(self):
        rng = np.random.default_rng(1)
        gts = [gt(i, random_box(rng)) for i in range(10)]
        assert average_recall([det(g.image_id, g.box.as_tuple(), 0.8) for g in gts], gts) == 1.0


# 5 ---------------------------------------------------------------------------

@criterion(5, "box counts non-increasing in threshold; PAA / Dynamic R-CNN crossover")
class TestThresholdCounts:
    def test_monotone_for_random_sets(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            scores = rng.uniform(0, 1, size=int(rng.integers(0, 60)))
            dets = [det(0, (0.1, 0.1, 0.2, 0.2), float(s)) for s in scores]
            counts = [count_boxes(dets, t) for t in THRESHOLDS]
            assert counts == sorted(counts, reverse=True)

    def test_one_stage_two_stage_crossover(self):
        rng = np.random.default_rng(3)
        paa = [det(0, (0.1, 0.1, 0.2, 0.2), s) for s in scores_matching_counts(PAA_COUNTS, THRESHOLDS, rng)]
        dyn = [det(0, (0.1, 0.1, 0.2, 0.2), s) for s in scores_matching_counts(DYNAMIC_RCNN_COUNTS, THRESHOLDS, rng)]
        paa_counts = [count_boxes(paa, t) for t in THRESHOLDS]
        dyn_counts = [count_boxes(dyn, t) for t in THRESHOLDS]
        assert paa_counts == PAA_COUNTS and dyn_counts == DYNAMIC_RCNN_COUNTS
        # many low-confidence boxes vanish faster than few confident ones
        assert paa_counts[0] > dyn_counts[0] and paa_counts[-1] < dyn_counts[-1]
        cross = next(i for i, (a, b) in enumerate(zip(paa_counts, dyn_counts)) if a < b)
        assert all(a < b for a, b in zip(paa_counts[cross:], dyn_counts[cross:]))


# 6 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pool54():
    pool, gts = complementary_pool(n_images=54)
    return pool, gts, oracle_table(pool, gts)


@criterion(6, "search optimal under each criterion and deterministic across worker counts")
class TestSearchDeterminism:
    @pytest.mark.parametrize("name,crit", [("ap50", Criterion.AP50), ("ar", Criterion.AR),
                                           ("olrp", Criterion.OLRP)])
    def test_matches_exhaustive_oracle(self, pool54, name, crit):
        pool, gts, table = pool54
        start = time.perf_counter()
        res = search(pool, gts, crit, workers=1)
        assert time.perf_counter() - start < 60.0
        assert res.evaluated_count == 54
        best = rank_rows(table, name)[0]
        assert (res.best.members, res.best.weights) == (best["members"], best["weights"])
        assert res.best_value == pytest.approx(best[name], abs=1e-12)

    def test_parallel_and_sequential_reports_identical(self, pool54):
        pool, gts, _ = pool54
        for crit in Criterion:
            a = wio.report_to_json(search(pool, gts, crit, workers=1))
            b = wio.report_to_json(search(pool, gts, crit, workers=3))
            c = wio.report_to_json(search(pool, gts, crit, workers=1))
            assert a == b == c


# 7 ---------------------------------------------------------------------------

@criterion(7, "fused ensemble strictly beats every member on a complementary pool")
def test_ensemble_improvement(pool54):
    pool, gts, table = pool54
    singles = {m: brute_ap(dets, gts) for m, dets in pool.items()}
    oracle_best = max(r["ap50"] for r in table)
    assert oracle_best > max(singles.values())
    res = search(pool, gts, Criterion.AP50, workers=1)
    assert res.best_report.ap50 == pytest.approx(oracle_best, abs=1e-12)
    gain = res.best_report.ap50 / max(singles.values()) - 1
    print(f"best single AP50 {max(singles.values()):.4f}, fused {res.best_report.ap50:.4f} (+{gain:.1%})")


# 8 ---------------------------------------------------------------------------

def _random_image(rng):
    h, w = (int(v) for v in rng.integers(1, 48, size=2))
    if rng.random() < 0.5:
        return rng.integers(0, 256, size=(h, w), dtype=np.uint8)
    img = np.full((h, w), int(rng.integers(0, 256)), np.uint8)
    img[: max(1, h // 3)] = int(rng.integers(0, 256))
    return img


@criterion(8, "preprocessing suite")
class TestPreprocessing:
    def test_suite(self):
        start = time.perf_counter()
        rng = np.random.default_rng(8)

        for _ in range(100):
            img = _random_image(rng)
            once = invert_if_light(img)
            assert dominant_background(once) == DARK
            assert (invert_if_light(once) == once).all()

        for value in (0, 17, 128, 254, 255):
            for shape in ((55, 55), (61, 47), (800, 800)):
                img = np.full(shape, value, np.uint8)
                assert (clahe(img, ClaheParams((11, 11), 7.0)) == img).all()

        yy, xx = np.mgrid[0:66, 0:77]
        board = np.where(((yy // 6) + (xx // 6)) % 2 == 0, 30, 200).astype(np.uint8)
        board[::5, ::9] = 120
        assert (clahe(board, ClaheParams((11, 11), 7.0)) == reference_clahe(board, 11, 11, 7.0)).all()

        img = rng.integers(0, 256, size=(33, 21), dtype=np.uint8)
        boxes = [BBox(0.1, 0.2, 0.4, 0.5), BBox(0.55, 0.0, 1.0, 0.3)]
        flip = AugmentParams(1.0, (0.0, 0.0), (1.0, 1.0))
        once, b1, _ = augment(img, boxes, flip)
        twice, b2, _ = augment(once, b1, flip)
        assert (twice == img).all() and (hflip_image(hflip_image(img)) == img).all()
        for a, b in zip(b2, boxes):
            assert a.as_tuple() == pytest.approx(b.as_tuple(), abs=1e-15)
        assert hflip(boxes[0]).as_tuple() == pytest.approx((0.6, 0.2, 0.9, 0.5), abs=1e-15)

        p = AugmentParams(seed=1234)
        r1, r2 = augment(img, boxes, p), augment(img, boxes, p)
        assert r1[0].tobytes() == r2[0].tobytes() and r1[1:] == r2[1:]

        assert time.perf_counter() - start < 10.0


# 9 ---------------------------------------------------------------------------

@criterion(9, "IO round trips")
class TestIoRoundTrips:
    def test_annotations_and_detections(self, tmp_path):
        rng = np.random.default_rng(9)
        images = [wio.ImageRecord(str(i), ImageSize(int(rng.integers(200, 1200)), int(rng.integers(200, 1200))),
                                  f"{i}.png") for i in range(20)]
        gts = []
        for im in images:
            for _ in range(int(rng.integers(0, 3))):
                gts.append(gt(im.image_id, random_box(rng)))
        aset = wio.AnnotationSet(images=images, ground_truths=gts, categories=[(1, "fracture")])
        wio.write_annotations(aset, tmp_path / "a.json")
        first = wio.load_annotations(tmp_path / "a.json")
        wio.write_annotations(first, tmp_path / "b.json")
        assert wio.load_annotations(tmp_path / "b.json") == first

        dets = [det(im.image_id, random_box(rng), float(rng.uniform(0, 1)), "m") for im in images for _ in range(3)]
        wio.write_detections(dets, first, tmp_path / "m.json")
        d1 = wio.load_detections(tmp_path / "m.json", first).detections
        wio.write_detections(d1, first, tmp_path / "m2.json")
        assert wio.load_detections(tmp_path / "m2.json", first, "m").detections == d1

    def test_json_csv_thousand_records(self, tmp_path):
        rng = np.random.default_rng(10)
        recs = []
        for _ in range(1000):
            x, y = (round(float(v), 3) for v in rng.uniform(0, 700, size=2))
            w, h = (round(float(v), 3) for v in rng.uniform(0.5, 100, size=2))
            recs.append({"image_id": int(rng.integers(1, 55)), "category_id": 1, "bbox": [x, y, w, h],
                         "score": round(float(rng.uniform(0, 1)), 4)})
        recs[500]["score"] = 0.8639
        src = tmp_path / "m.json"
        src.write_text(json.dumps(recs), encoding="utf-8")
        assert wio.json_to_csv(src, tmp_path / "m.csv") == 1000
        assert wio.csv_to_json(tmp_path / "m.csv", tmp_path / "back.json") == 1000
        back = json.loads((tmp_path / "back.json").read_text(encoding="utf-8"))
        assert back == recs
        assert back[500]["score"] == 0.8639
