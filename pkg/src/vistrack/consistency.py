"""Temporal consistency constraint on dynamic kernels and their masks.

For an instance visible in both frames of a training pair, every positive
key-frame location is paired with the reference-frame location of the same
instance that has the highest centerness target. The loss is the mean over
pairs of squared-L2 kernel difference plus squared-L2 difference of the
mask logits the two kernels produce. Both masks are rendered on the key
frame's mask feature with the key location's coordinate map by default, so
the loss is zero exactly when the kernels agree; rendering the reference
mask on the reference frame is available behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assign import Assignment
from .errors import ShapeError
from .maskgen import mask_head_forward, mask_head_grad_theta


@dataclass(frozen=True)
class PositivePair:
    key_location: tuple[float, float]  # (x, y) image coordinates
    ref_location: tuple[float, float]
    instance_id: int


@dataclass
class ConsistencyPair:
    theta_key: np.ndarray
    theta_ref: np.ndarray
    mask_key: np.ndarray      # logits
    mask_ref: np.ndarray      # logits, rendered per the module convention
    instance_id: int


def _best_reference_locations(assign_ref: Assignment) -> dict[int, tuple[float, float]]:
    """Per instance, the positive location with the highest centerness target.

    Ties break toward the lowest flat index in level-major order.
    """
    best: dict[int, tuple[float, tuple[float, float]]] = {}
    for lvl in assign_ref.levels:
        ids = lvl.instance_id.ravel()
        ctr = lvl.centerness_target.ravel()
        xs = lvl.grid.centers[..., 0].ravel()
        ys = lvl.grid.centers[..., 1].ravel()
        for flat in np.flatnonzero(ids >= 0).tolist():
            gid = int(ids[flat])
            score = float(ctr[flat])
            if gid not in best or score > best[gid][0]:
                best[gid] = (score, (float(xs[flat]), float(ys[flat])))
    return {gid: loc for gid, (_, loc) in best.items()}


def pair_positives(
    assign_key: Assignment,
    assign_ref: Assignment,
    rng_seed: int = 0,
    max_pairs: int | None = None,
) -> list[PositivePair]:
    """Pair every positive key location with its instance's best reference location.

    Instances missing from either frame produce no pairs. ``rng_seed``
    only matters when ``max_pairs`` caps the list, in which case a uniform
    subsample is drawn.
    """
    ref_best = _best_reference_locations(assign_ref)
    pairs = []
    for x, y, gid, _ in assign_key.positive_locations():
        if gid in ref_best:
            pairs.append(PositivePair((x, y), ref_best[gid], gid))
    if max_pairs is not None and len(pairs) > max_pairs:
        rng = np.random.default_rng(rng_seed)
        keep = np.sort(rng.choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[i] for i in keep.tolist()]
    return pairs


def consistency_loss(pairs: list[ConsistencyPair]) -> float:
    """Mean over pairs of ||dtheta||^2 + ||dmask||^2; 0 for an empty list."""
    if not pairs:
        return 0.0
    total = 0.0
    for pair in pairs:
        tk = np.asarray(pair.theta_key, dtype=np.float64).ravel()
        tr = np.asarray(pair.theta_ref, dtype=np.float64).ravel()
        if tk.shape != tr.shape:
            raise ShapeError("kernel vectors differ in length")
        mk = np.asarray(pair.mask_key, dtype=np.float64)
        mr = np.asarray(pair.mask_ref, dtype=np.float64)
        if mk.shape != mr.shape:
            raise ShapeError("mask arrays differ in shape")
        total += float(((tk - tr) ** 2).sum() + ((mk - mr) ** 2).sum())
    return total / len(pairs)


def kernel_pair_loss_and_grads(
    feat: np.ndarray,
    coords: np.ndarray,
    theta_key: np.ndarray,
    theta_ref: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Single-pair loss with closed-form gradients w.r.t. both kernels.

    Both masks are rendered from ``feat``/``coords``, so the value matches
    :func:`consistency_loss` on the corresponding one-element pair list.
    """
    tk = np.asarray(theta_key, dtype=np.float64).ravel()
    tr = np.asarray(theta_ref, dtype=np.float64).ravel()
    mk = mask_head_forward(feat, coords, tk)
    mr = mask_head_forward(feat, coords, tr)
    dtheta = tk - tr
    dmask = mk - mr
    value = float((dtheta**2).sum() + (dmask**2).sum())
    grad_key = 2.0 * dtheta + mask_head_grad_theta(feat, coords, tk, 2.0 * dmask)
    grad_ref = -2.0 * dtheta + mask_head_grad_theta(feat, coords, tr, -2.0 * dmask)
    return value, grad_key, grad_ref
