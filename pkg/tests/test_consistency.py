"""Tests for the cross-frame kernel consistency loss."""

import numpy as np
import pytest

from vistrack import assign, consistency, maskgen
from vistrack.consistency import ConsistencyPair
from vistrack.datagen import InstanceAnn
from vistrack.errors import ShapeError


def _ann(gid, cat, box, hw=(64, 64)):
    mask = np.zeros(hw, dtype=bool)
    x1, y1, x2, y2 = box
    mask[y1:y2, x1:x2] = True
    return InstanceAnn(gid, cat, mask, box, True)


def _assignment(boxes_by_id, hw=(64, 64)):
    anns = [_ann(gid, cat, box, hw) for gid, (cat, box) in boxes_by_id.items()]
    return assign.assignment_for_frame(anns, hw[0], hw[1])


class TestPairPositives:
    def test_instance_only_in_key_frame_produces_no_pairs(self):
        key = _assignment({1: (1, (8, 8, 32, 32))})
        ref = _assignment({2: (2, (8, 8, 32, 32))})
        pairs = consistency.pair_positives(key, ref)
        assert all(p.instance_id != 1 for p in pairs)
        assert not pairs  # instance 2 missing from key as well

    def test_single_location_each_side_gives_one_pair(self):
        # boxes around one grid center only (stride 8 cell at (12, 12))
        key = _assignment({1: (1, (9, 9, 16, 16))})
        ref = _assignment({1: (1, (41, 41, 48, 48))})
        pairs = consistency.pair_positives(key, ref)
        assert len(pairs) == 1
        assert pairs[0].key_location == (12.0, 12.0)
        assert pairs[0].ref_location == (44.0, 44.0)
        assert pairs[0].instance_id == 1

    def test_pairs_carry_matching_instance_ids(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            boxes_key, boxes_ref = {}, {}
            for gid in range(1, int(rng.integers(2, 5))):
                for target in (boxes_key, boxes_ref):
                    if rng.random() < 0.8:
                        x1, y1 = rng.integers(0, 40, size=2)
                        w, h = rng.integers(6, 24, size=2)
                        target[gid] = (int(rng.integers(1, 4)), (int(x1), int(y1), int(min(63, x1 + w)), int(min(63, y1 + h))))
            key = _assignment(boxes_key)
            ref = _assignment(boxes_ref)
            pairs = consistency.pair_positives(key, ref)
            ref_ids = {gid for _, _, gid, _ in ref.positive_locations()}
            key_positives = key.positive_locations()
            expected = sum(1 for _, _, gid, _ in key_positives if gid in ref_ids)
            assert len(pairs) == expected
            for p in pairs:
                key_ids_at = {gid for x, y, gid, _ in key_positives if (x, y) == p.key_location}
                assert p.instance_id in key_ids_at

    def test_reference_location_has_max_centerness(self):
        key = _assignment({1: (1, (8, 8, 40, 40))})
        ref = _assignment({1: (1, (8, 8, 40, 40))})
        pairs = consistency.pair_positives(key, ref)
        lvl = ref.levels[0]
        w = lvl.grid.shape[1]
        # highest centerness, ties toward the lowest flat index
        _, _, (bi, bj) = min(
            (-float(lvl.centerness_target[i, j]), i * w + j, (i, j))
            for i, j in zip(*np.nonzero(lvl.instance_id == 1))
        )
        bx, by = lvl.grid.centers[bi, bj]
        for p in pairs:
            assert p.ref_location == (bx, by)

    def test_max_pairs_subsamples_deterministically(self):
        key = _assignment({1: (1, (8, 8, 48, 48))})
        ref = _assignment({1: (1, (8, 8, 48, 48))})
        full = consistency.pair_positives(key, ref)
        capped_a = consistency.pair_positives(key, ref, rng_seed=5, max_pairs=3)
        capped_b = consistency.pair_positives(key, ref, rng_seed=5, max_pairs=3)
        assert len(full) > 3
        assert len(capped_a) == 3
        assert capped_a == capped_b
        assert all(p in full for p in capped_a)


class TestConsistencyLoss:
    def test_identical_kernels_and_masks_give_zero(self):
        theta = np.random.default_rng(0).normal(size=169)
        feat = np.random.default_rng(1).normal(size=(8, 6, 6))
        coords = np.random.default_rng(2).normal(size=(2, 6, 6))
        mask = maskgen.mask_head_forward(feat, coords, theta)
        pair = ConsistencyPair(theta, theta.copy(), mask, mask.copy(), 1)
        assert consistency.consistency_loss([pair]) == 0.0

    def test_unit_kernel_difference_equal_masks(self):
        theta = np.zeros(169)
        other = np.zeros(169)
        other[42] = 1.0
        mask = np.zeros((4, 4))
        pair = ConsistencyPair(theta, other, mask, mask.copy(), 1)
        assert consistency.consistency_loss([pair]) == 1.0

    def test_empty_list_gives_zero(self):
        assert consistency.consistency_loss([]) == 0.0

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(3)
        pairs = []
        expected = 0.0
        for gid in range(6):
            tk = rng.normal(size=169)
            tr = rng.normal(size=169)
            mk = rng.normal(size=(5, 5))
            mr = rng.normal(size=(5, 5))
            pairs.append(ConsistencyPair(tk, tr, mk, mr, gid))
            acc = 0.0
            for a, b in zip(tk, tr):
                acc += (a - b) ** 2
            for i in range(5):
                for j in range(5):
                    acc += (mk[i, j] - mr[i, j]) ** 2
            expected += acc
        expected /= len(pairs)
        assert abs(consistency.consistency_loss(pairs) - expected) < 1e-10

    def test_symmetric_under_role_swap(self):
        rng = np.random.default_rng(4)
        tk, tr = rng.normal(size=169), rng.normal(size=169)
        mk, mr = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        fwd = consistency.consistency_loss([ConsistencyPair(tk, tr, mk, mr, 1)])
        bwd = consistency.consistency_loss([ConsistencyPair(tr, tk, mr, mk, 1)])
        assert fwd == bwd

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            consistency.consistency_loss(
                [ConsistencyPair(np.zeros(169), np.zeros(169), np.zeros((3, 3)), np.zeros((4, 4)), 1)]
            )


class TestKernelPairGrads:
    def test_value_matches_consistency_loss(self):
        rng = np.random.default_rng(5)
        feat = rng.normal(size=(8, 5, 5))
        coords = rng.normal(size=(2, 5, 5))
        tk, tr = rng.normal(size=169), rng.normal(size=169)
        value, _, _ = consistency.kernel_pair_loss_and_grads(feat, coords, tk, tr)
        mk = maskgen.mask_head_forward(feat, coords, tk)
        mr = maskgen.mask_head_forward(feat, coords, tr)
        assert abs(value - consistency.consistency_loss([ConsistencyPair(tk, tr, mk, mr, 0)])) < 1e-10

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        eps = 1e-6
        for _ in range(10):
            feat = rng.normal(size=(8, 4, 4))
            coords = rng.normal(size=(2, 4, 4))
            tk, tr = rng.normal(size=169), rng.normal(size=169)
            _, gk, gr = consistency.kernel_pair_loss_and_grads(feat, coords, tk, tr)

            for k in rng.choice(169, size=20, replace=False):
                tp, tm = tk.copy(), tk.copy()
                tp[k] += eps
                tm[k] -= eps
                fp, _, _ = consistency.kernel_pair_loss_and_grads(feat, coords, tp, tr)
                fm, _, _ = consistency.kernel_pair_loss_and_grads(feat, coords, tm, tr)
                fd = (fp - fm) / (2 * eps)
                assert abs(gk[k] - fd) < 1e-5 * max(1.0, abs(fd))

                tp, tm = tr.copy(), tr.copy()
                tp[k] += eps
                tm[k] -= eps
                fp, _, _ = consistency.kernel_pair_loss_and_grads(feat, coords, tk, tp)
                fm, _, _ = consistency.kernel_pair_loss_and_grads(feat, coords, tk, tm)
                fd = (fp - fm) / (2 * eps)
                assert abs(gr[k] - fd) < 1e-5 * max(1.0, abs(fd))
