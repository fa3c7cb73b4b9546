"""Tests for detection decoding, NMS, and online association."""

import itertools

import numpy as np
import pytest

from vistrack import inference
from vistrack.inference import AssocWeights, Detection, MemoryBank, VideoTracker
from vistrack.model import HeadOutputs


def _outputs(cls_maps, box_maps, ctr_maps, image_size=(96, 96), embed_dim=8):
    h8 = image_size[0] // 8
    w8 = image_size[1] // 8
    rng = np.random.default_rng(0)
    return HeadOutputs(
        class_logits=cls_maps,
        box_reg=box_maps,
        centerness=ctr_maps,
        kernel_map=rng.normal(size=(169, h8, w8)).astype(np.float32) * 0.1,
        embedding_map=rng.normal(size=(embed_dim, h8, w8)).astype(np.float32),
        mask_feature=rng.normal(size=(8, h8, w8)).astype(np.float32),
        image_size=image_size,
    )


def _level_maps(image_size=(96, 96), cls_logit=-9.0):
    maps_cls, maps_box, maps_ctr = [], [], []
    for stride in (8, 16, 32):
        h, w = image_size[0] // stride, image_size[1] // stride
        maps_cls.append(np.full((3, h, w), cls_logit))
        maps_box.append(np.full((4, h, w), 10.0))
        maps_ctr.append(np.zeros((h, w)))
    return maps_cls, maps_box, maps_ctr


def _det(box, score, category, embedding, mask=None):
    return Detection(
        box=box,
        score=score,
        category=category,
        kernel=np.zeros(169),
        embedding=np.asarray(embedding, dtype=np.float64),
        mask=mask,
    )


class TestBoxIoU:
    def test_identical(self):
        assert inference.box_iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0

    def test_disjoint(self):
        assert inference.box_iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0

    def test_partial_overlap(self):
        got = inference.box_iou((0, 0, 2, 2), (1, 1, 3, 3))
        assert abs(got - 1.0 / 7.0) < 1e-12


def brute_force_nms(boxes, scores, thresh):
    n = len(boxes)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    suppressed = [False] * n
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        for j in order:
            if j == i or suppressed[j]:
                continue
            if inference.box_iou(boxes[i], boxes[j]) > thresh:
                suppressed[j] = True
    return keep


class TestNMS:
    def test_identical_boxes_leave_one(self):
        boxes = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=float)
        scores = np.array([0.9, 0.8])
        assert inference.nms(boxes, scores, 0.5) == [0]

    def test_matches_quadratic_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n = int(rng.integers(1, 12))
            boxes = []
            for _ in range(n):
                x1, y1 = rng.uniform(0, 60, size=2)
                boxes.append((x1, y1, x1 + rng.uniform(4, 30), y1 + rng.uniform(4, 30)))
            boxes = np.asarray(boxes)
            scores = rng.uniform(0.1, 1.0, size=n)
            assert inference.nms(boxes, scores, 0.5) == brute_force_nms(boxes, scores, 0.5)


class TestDecodeDetections:
    def test_all_probabilities_below_threshold_give_empty(self):
        # sigmoid(-4.0) ~ 0.018 < 0.03 everywhere
        cls_maps, box_maps, ctr_maps = _level_maps(cls_logit=-4.0)
        out = _outputs(cls_maps, box_maps, ctr_maps)
        assert inference.decode_detections(out) == []

    def test_detections_respect_budget_and_threshold(self):
        cls_maps, box_maps, ctr_maps = _level_maps(cls_logit=-9.0)
        cls_maps[0][0, 4:8, 4:8] = 3.0  # a patch of confident locations
        ctr_maps[0][4:8, 4:8] = 2.0
        out = _outputs(cls_maps, box_maps, ctr_maps)
        dets = inference.decode_detections(out, top_t=3, render_masks=False)
        assert 0 < len(dets) <= 3
        for d in dets:
            assert d.score > 0.03
            assert d.category == 1
            x1, y1, x2, y2 = d.box
            assert x1 < x2 and y1 < y2

    def test_duplicate_locations_suppressed(self):
        cls_maps, box_maps, ctr_maps = _level_maps()
        # two adjacent stride-8 cells predicting nearly the same large box
        cls_maps[0][1, 5, 5] = 4.0
        cls_maps[0][1, 5, 6] = 3.5
        ctr_maps[0][5, 5] = 3.0
        ctr_maps[0][5, 6] = 3.0
        box_maps[0][:, 5, 5] = 30.0
        box_maps[0][:, 5, 6] = 30.0
        out = _outputs(cls_maps, box_maps, ctr_maps)
        dets = inference.decode_detections(out, render_masks=False)
        assert len(dets) == 1
        assert dets[0].category == 2

    def test_survivors_match_oracle_on_random_scenes(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            cls_maps, box_maps, ctr_maps = _level_maps()
            n_hot = int(rng.integers(1, 10))
            for _ in range(n_hot):
                lvl = 0
                i, j = rng.integers(0, cls_maps[lvl].shape[1], size=2)
                cls_maps[lvl][rng.integers(0, 3), i, j] = rng.uniform(1.0, 5.0)
                ctr_maps[lvl][i, j] = rng.uniform(0.5, 3.0)
                box_maps[lvl][:, i, j] = rng.uniform(5.0, 30.0, size=4)
            out = _outputs(cls_maps, box_maps, ctr_maps)
            dets = inference.decode_detections(out, top_t=10, render_masks=False)

            # oracle: recompute candidates and run the quadratic NMS per class
            cand = []
            for cls_logits, box_reg, ctr_logits, stride in zip(cls_maps, box_maps, ctr_maps, (8, 16, 32)):
                probs = 1 / (1 + np.exp(-np.asarray(cls_logits)))
                ctr = 1 / (1 + np.exp(-np.asarray(ctr_logits)))
                for i in range(probs.shape[1]):
                    for j in range(probs.shape[2]):
                        c = probs[:, i, j].argmax()
                        p = probs[c, i, j]
                        s = np.sqrt(p * ctr[i, j])
                        if p > 0.03 and s > 0.03:
                            x = stride // 2 + j * stride
                            y = stride // 2 + i * stride
                            l, t, r, b = box_reg[:, i, j]
                            box = (
                                max(0, x - l),
                                max(0, y - t),
                                min(96, x + r),
                                min(96, y + b),
                            )
                            cand.append((box, s, c + 1))
            expected = []
            for cat in sorted({c for _, _, c in cand}):
                idx = [k for k, (_, _, c) in enumerate(cand) if c == cat]
                boxes = np.array([cand[k][0] for k in idx])
                scores = np.array([cand[k][1] for k in idx])
                expected.extend((idx[k], cand[idx[k]][1]) for k in brute_force_nms(boxes, scores, 0.5))
            expected.sort(key=lambda t: (-t[1], t[0]))
            expected = expected[:10]
            assert len(dets) == len(expected)
            for d, (k, s) in zip(dets, expected):
                assert abs(d.score - s) < 1e-9
                assert np.allclose(d.box, cand[k][0], atol=1e-9)

    def test_rendered_masks_are_binary_full_size(self):
        cls_maps, box_maps, ctr_maps = _level_maps()
        cls_maps[0][0, 6, 6] = 4.0
        ctr_maps[0][6, 6] = 2.0
        out = _outputs(cls_maps, box_maps, ctr_maps)
        dets = inference.decode_detections(out)
        assert dets and dets[0].mask.shape == (96, 96)
        assert dets[0].mask.dtype == bool


class TestBisoftmax:
    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        d = rng.normal(size=(4, 6))
        b = rng.normal(size=(3, 6))
        base = inference.bisoftmax_affinity(d, b)
        # adding a constant to all pairwise dot products leaves it unchanged;
        # achieved by appending a shared constant coordinate
        scale = 7.3
        d2 = np.concatenate([d, np.full((4, 1), scale)], axis=1)
        b2 = np.concatenate([b, np.ones((3, 1))], axis=1)
        shifted = inference.bisoftmax_affinity(d2, b2)
        assert np.allclose(base, shifted, atol=1e-12)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(3)
        aff = inference.bisoftmax_affinity(rng.normal(size=(5, 4)), rng.normal(size=(6, 4)))
        assert (aff > 0).all() and (aff <= 1).all()

    def test_single_pair_is_one(self):
        aff = inference.bisoftmax_affinity(np.ones((1, 3)), np.ones((1, 3)))
        assert aff.shape == (1, 1) and aff[0, 0] == 1.0


class TestAssociate:
    def test_empty_bank_spawns_tracks(self):
        bank = MemoryBank()
        dets = [_det((0, 0, 10, 10), 0.9, 1, [1, 0]), _det((20, 20, 30, 30), 0.8, 2, [0, 1])]
        assignments, bank = inference.associate(dets, bank, frame=0)
        assert assignments == [(0, 0), (1, 1)]
        assert bank.next_track_id == 2

    def test_orthogonal_embeddings_identity_assignment(self):
        bank = MemoryBank()
        d0 = [_det((0, 0, 10, 10), 0.9, 1, [8.0, 0.0]), _det((20, 20, 30, 30), 0.9, 2, [0.0, 8.0])]
        inference.associate(d0, bank, frame=0)
        d1 = [_det((0, 0, 10, 10), 0.9, 1, [8.0, 0.0]), _det((20, 20, 30, 30), 0.9, 2, [0.0, 8.0])]
        assignments, bank = inference.associate(d1, bank, frame=1)
        assert assignments == [(0, 0), (1, 1)]
        assert bank.next_track_id == 2  # no new tracks

    def test_low_affinity_spawns_new_track(self):
        bank = MemoryBank()
        inference.associate(
            [_det((0, 0, 10, 10), 0.9, 1, [8.0, 0.0]), _det((20, 20, 30, 30), 0.9, 2, [0.0, 8.0])],
            bank,
            frame=0,
        )
        # dissimilar to both entries, far away, third category
        dets = [_det((60, 60, 80, 80), 0.9, 3, [-8.0, -8.0])]
        assignments, bank = inference.associate(dets, bank, frame=1, new_thresh=0.9)
        assert assignments == [(0, 2)]
        assert bank.next_track_id == 3

    def test_greedy_matches_exhaustive_when_certificate_holds(self):
        rng = np.random.default_rng(4)
        checked = 0
        for _ in range(50):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 5))
            aff = rng.uniform(0.0, 1.0, size=(n, m))
            greedy = inference._greedy_matching(aff, new_thresh=0.0)
            # certificate: every selected pair is max of its row and column
            certificate = all(
                aff[i, j] >= aff[i, :].max() - 1e-12 and aff[i, j] >= aff[:, j].max() - 1e-12
                for i, j in greedy
            )
            if not certificate:
                continue
            checked += 1
            best_val, best_match = -1.0, None
            rows = list(range(n))
            for k in range(0, min(n, m) + 1):
                for rsub in itertools.combinations(rows, k):
                    for csub in itertools.permutations(range(m), k):
                        val = sum(aff[i, j] for i, j in zip(rsub, csub))
                        if val > best_val:
                            best_val = val
                            best_match = set(zip(rsub, csub))
            if len(greedy) == min(n, m):
                assert abs(sum(aff[i, j] for i, j in greedy) - best_val) < 1e-9
        assert checked >= 10

    def test_hungarian_flag(self):
        bank = MemoryBank()
        inference.associate([_det((0, 0, 10, 10), 0.9, 1, [4.0, 0.0])], bank, frame=0)
        weights = AssocWeights(use_hungarian=True)
        dets = [_det((0, 0, 10, 10), 0.9, 1, [4.0, 0.0])]
        assignments, _ = inference.associate(dets, bank, frame=1, weights=weights, new_thresh=0.2)
        assert assignments == [(0, 0)]


class TestVoteCategory:
    def test_simple_majority(self):
        votes = [(1, 0.5)] * 3 + [(2, 0.9)]
        assert inference.vote_category(votes) == 1

    def test_tie_breaks_by_mean_score(self):
        votes = [(1, 0.9), (1, 0.9), (2, 0.5), (2, 0.5)]
        assert inference.vote_category(votes) == 1

    def test_full_tie_breaks_by_lower_id(self):
        votes = [(2, 0.7), (1, 0.7)]
        assert inference.vote_category(votes) == 1

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            votes = [(int(rng.integers(1, 4)), float(rng.uniform(0.1, 1.0))) for _ in range(int(rng.integers(1, 9)))]
            got = inference.vote_category(votes)
            counts = {}
            for c, s in votes:
                counts.setdefault(c, []).append(s)
            best = sorted(counts, key=lambda c: (-len(counts[c]), -np.mean(counts[c]), c))[0]
            assert got == best


class TestVideoTracker:
    def _frames(self):
        mask = np.zeros((32, 32), dtype=bool)
        mask[4:10, 4:10] = True
        f0 = [_det((0, 0, 10, 10), 0.9, 1, [6.0, 0.0], mask), _det((20, 20, 30, 30), 0.8, 2, [0.0, 6.0], mask)]
        f1 = [_det((1, 1, 11, 11), 0.85, 1, [6.0, 0.5], mask), _det((19, 19, 29, 29), 0.8, 2, [0.5, 6.0], mask)]
        f2 = [_det((2, 2, 12, 12), 0.95, 1, [6.0, 0.2], mask)]
        return [f0, f1, f2]

    def test_tracks_have_unique_monotone_ids(self):
        tracks = inference.track_video(self._frames())
        ids = [t.track_id for t in tracks]
        assert len(set(ids)) == len(ids)
        assert ids == sorted(ids)

    def test_track_scores_are_frame_means(self):
        tracks = inference.track_video(self._frames())
        by_id = {t.track_id: t for t in tracks}
        assert abs(by_id[0].score - np.mean([0.9, 0.85, 0.95])) < 1e-12
        assert abs(by_id[1].score - 0.8) < 1e-12

    def test_masks_are_null_where_absent(self):
        tracks = inference.track_video(self._frames())
        by_id = {t.track_id: t for t in tracks}
        assert by_id[1].masks[2] is None
        assert by_id[0].masks[2] is not None

    def test_online_equals_replay(self):
        frames = self._frames()
        online = inference.track_video(frames)
        replay_tracker = VideoTracker(len(frames))
        for t, dets in enumerate(frames):
            replay_tracker.update(t, dets)
        replay = replay_tracker.finalize()
        assert len(online) == len(replay)
        for a, b in zip(online, replay):
            assert a.track_id == b.track_id
            assert a.category_id == b.category_id
            assert a.score == b.score
            assert a.boxes == b.boxes
