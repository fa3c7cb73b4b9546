"""Tests for video IoU and the AP/AR evaluator."""

import itertools

import numpy as np
import pytest

from vistrack import metrics
from vistrack.errors import ShapeError
from vistrack.metrics import EvalTrack, IOU_THRESHOLDS


def _blob(h, w, y1, y2, x1, x2):
    m = np.zeros((h, w), dtype=bool)
    m[y1:y2, x1:x2] = True
    return m


class TestVideoIoU:
    def test_identical_tracks(self):
        m = _blob(8, 8, 2, 6, 2, 6)
        assert metrics.video_iou([m, m], [m.copy(), m.copy()]) == 1.0

    def test_missing_frames_pad_with_empty(self):
        # prediction covers frame 0 exactly; ground truth continues into
        # frame 1 with an equal-area mask, halving the ratio
        m0 = _blob(8, 8, 1, 4, 1, 4)
        m1 = _blob(8, 8, 4, 7, 4, 7)
        assert metrics.video_iou([m0, None], [m0.copy(), m1]) == 0.5

    def test_matches_pixel_counting_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            t = int(rng.integers(1, 6))
            pred, gt = [], []
            for _ in range(t):
                pred.append(None if rng.random() < 0.25 else rng.random((6, 7)) < 0.4)
                gt.append(None if rng.random() < 0.25 else rng.random((6, 7)) < 0.4)
            inter = 0
            union = 0
            for p, g in zip(pred, gt):
                pm = p if p is not None else np.zeros((6, 7), dtype=bool)
                gm = g if g is not None else np.zeros((6, 7), dtype=bool)
                for i in range(6):
                    for j in range(7):
                        inter += int(pm[i, j] and gm[i, j])
                        union += int(pm[i, j] or gm[i, j])
            expected = inter / union if union else 0.0
            assert abs(metrics.video_iou(pred, gt) - expected) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = [rng.random((5, 5)) < 0.5 for _ in range(3)]
            b = [rng.random((5, 5)) < 0.5 for _ in range(3)]
            assert metrics.video_iou(a, b) == metrics.video_iou(b, a)

    def test_both_empty_is_zero(self):
        assert metrics.video_iou([None, None], [None, None]) == 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            metrics.video_iou([_blob(4, 4, 0, 2, 0, 2)], [_blob(5, 5, 0, 2, 0, 2)])

    def test_growing_intersection_is_monotone(self):
        gt = [_blob(8, 8, 0, 6, 0, 6)]
        small = [_blob(8, 8, 0, 2, 0, 6)]
        large = [_blob(8, 8, 0, 4, 0, 6)]  # larger intersection, same union (subset)
        assert metrics.video_iou(large, gt) > metrics.video_iou(small, gt)


def oracle_evaluate(preds, gts, thresholds):
    """From-first-principles AP: plain loops, explicit PR curve, all tie orders.

    Returns the set of APs produced across every admissible ordering of
    equal-score predictions (greedy matching is rerun per ordering).
    """
    categories = sorted({g.category_id for g in gts})
    results = set()

    def ap_for_order(order_by_video):
        per_threshold = []
        for thr in thresholds:
            per_cat = []
            for cat in categories:
                cat_records = []
                cat_gt = 0
                for video_id in sorted({g.video_id for g in gts} | {p.video_id for p in preds}):
                    vp = [p for p in order_by_video.get((video_id, cat), [])]
                    vg = [g for g in gts if g.video_id == video_id and g.category_id == cat]
                    cat_gt += len(vg)
                    used = set()
                    for p in vp:
                        best, best_iou = None, thr
                        for gi, g in enumerate(vg):
                            if gi in used:
                                continue
                            iou = metrics.video_iou(p.masks, g.masks)
                            if iou >= best_iou:
                                best, best_iou = gi, iou
                        if best is not None:
                            used.add(best)
                            cat_records.append((p.score, True))
                        else:
                            cat_records.append((p.score, False))
                cat_records.sort(key=lambda r: -r[0])
                flags = [tp for _, tp in cat_records]
                tp = fp = 0
                points = []
                for f in flags:
                    tp += int(f)
                    fp += int(not f)
                    points.append((tp / cat_gt if cat_gt else 0.0, tp / (tp + fp)))
                ap = 0.0
                for r in np.linspace(0, 1, 101):
                    best_p = 0.0
                    for rec, prec in points:
                        if rec >= r and prec > best_p:
                            best_p = prec
                    ap += best_p / 101
                per_cat.append(ap if cat_gt else 0.0)
            per_threshold.append(float(np.mean(per_cat)) if per_cat else 0.0)
        return float(np.mean(per_threshold))

    # enumerate orderings of equal-score predictions within each video/category
    keys = sorted({(p.video_id, p.category_id) for p in preds})
    grouped = {
        k: sorted([p for p in preds if (p.video_id, p.category_id) == k], key=lambda p: -p.score) for k in keys
    }

    def orders(group):
        # all permutations that respect descending score
        for perm in itertools.permutations(group):
            if all(perm[i].score >= perm[i + 1].score for i in range(len(perm) - 1)):
                yield list(perm)

    def recurse(i, acc):
        if i == len(keys):
            results.add(round(ap_for_order(dict(acc)), 12))
            return
        for order in orders(grouped[keys[i]]):
            recurse(i + 1, acc + [(keys[i], order)])

    recurse(0, [])
    return results


class TestEvaluate:
    def _simple_gts(self):
        gts = []
        for v in range(5):
            masks = [_blob(16, 16, 2, 9, 2, 9) for _ in range(3)]
            gts.append(EvalTrack(f"v{v}", 1, masks, track_id=1))
            masks2 = [_blob(16, 16, 9, 15, 9, 15) for _ in range(3)]
            gts.append(EvalTrack(f"v{v}", 2, masks2, track_id=2))
        return gts

    def test_perfect_predictions_score_one(self):
        gts = self._simple_gts()
        preds = [EvalTrack(g.video_id, g.category_id, [m.copy() for m in g.masks], 1.0, g.track_id) for g in gts]
        res = metrics.evaluate(preds, gts)
        assert res["AP"] == 1.0
        assert res["AP50"] == 1.0
        assert res["AP75"] == 1.0
        assert res["AR1"] == 1.0
        assert res["AR10"] == 1.0

    def test_empty_predictions_score_zero(self):
        res = metrics.evaluate([], self._simple_gts())
        for key in ("AP", "AP50", "AP75", "AR1", "AR10"):
            assert res[key] == 0.0

    def test_matches_exhaustive_oracle_on_fixtures(self):
        # five videos with controlled IoU levels; score ties only between
        # predictions whose match outcome is identical (always-false decoys),
        # so every admissible ordering yields the same AP
        gts, preds = [], []
        strong_scores = [0.9, 0.85, 0.8, 0.75, 0.7]
        for v in range(5):
            gt_mask = _blob(16, 16, 2, 12, 2, 12)  # 100 px per frame
            gts.append(EvalTrack(f"v{v}", 1, [gt_mask] * 4, track_id=1))
            overlap = [10, 8, 7, 6, 5][v]  # video IoU = overlap / 10
            pm = _blob(16, 16, 2, 2 + overlap, 2, 12)
            preds.append(EvalTrack(f"v{v}", 1, [pm] * 4, score=strong_scores[v], track_id=10 + v))
            decoy = _blob(16, 16, 13, 16, 13, 16)
            preds.append(EvalTrack(f"v{v}", 1, [decoy] * 4, score=0.3, track_id=20 + v))
        # a second tied decoy exercises the ordering enumeration
        preds.append(EvalTrack("v0", 1, [_blob(16, 16, 13, 16, 0, 3)] * 4, score=0.3, track_id=30))
        got = metrics.evaluate(preds, gts)["AP"]
        oracle_values = oracle_evaluate(preds, gts, IOU_THRESHOLDS)
        assert len(oracle_values) == 1  # tie order must not matter here
        assert abs(got - next(iter(oracle_values))) < 1e-9

    def test_split_track_penalty(self):
        # one perfect ground-truth track; the prediction splits it in half
        gt_mask = _blob(16, 16, 2, 10, 2, 10)
        t = 4
        gts = [EvalTrack("v0", 1, [gt_mask] * t, track_id=1)]
        first = [gt_mask, gt_mask, None, None]
        second = [None, None, gt_mask, gt_mask]
        preds = [
            EvalTrack("v0", 1, first, score=0.9, track_id=1),
            EvalTrack("v0", 1, second, score=0.8, track_id=2),
        ]
        for p in preds:
            assert metrics.video_iou(p.masks, gts[0].masks) == 0.5
        res = metrics.evaluate(preds, gts)
        assert res["AP75"] == 0.0
        assert res["AP50"] > 0.0

    def test_equal_score_permutation_invariance(self):
        gts = self._simple_gts()
        preds = [EvalTrack(g.video_id, g.category_id, [m.copy() for m in g.masks], 0.5, g.track_id) for g in gts]
        base = metrics.evaluate(preds, gts)
        for _ in range(5):
            rng = np.random.default_rng(_)
            shuffled = [preds[i] for i in rng.permutation(len(preds))]
            again = metrics.evaluate(shuffled, gts)
            assert again == base

    def test_budget_limits_recall(self):
        # two gt tracks per video but only the top-scoring pred counts at AR1
        gt_mask_a = _blob(16, 16, 1, 7, 1, 7)
        gt_mask_b = _blob(16, 16, 9, 15, 9, 15)
        gts = [
            EvalTrack("v0", 1, [gt_mask_a] * 2, track_id=1),
            EvalTrack("v0", 1, [gt_mask_b] * 2, track_id=2),
        ]
        preds = [
            EvalTrack("v0", 1, [gt_mask_a] * 2, score=0.9, track_id=3),
            EvalTrack("v0", 1, [gt_mask_b] * 2, score=0.8, track_id=4),
        ]
        res = metrics.evaluate(preds, gts)
        assert res["AR1"] == 0.5
        assert res["AR10"] == 1.0
