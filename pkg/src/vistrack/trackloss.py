"""Cross-frame contrastive losses on tracking embeddings.

The per-query loss generalizes the one-positive InfoNCE objective to many
positives:

    L(q) = sum_p log(1 + sum_n exp(q.k_n - q.k_p))

over positive embeddings k_p and negative embeddings k_n, using raw dot
products (no temperature, no normalization). The frame-level loss averages
per-query losses over queries that have at least one positive; the
bi-directional loss averages the two frame orderings.

Numpy implementations (values and closed-form gradients) are the reference
used by tests and inference; torch twins feed the training graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .assign import Assignment, LevelAssignment
from .errors import ShapeError


@dataclass
class PairIndices:
    """Flat grid indices for one query; embedding-framework agnostic."""

    query_index: int
    positive_indices: np.ndarray
    negative_indices: np.ndarray
    instance_id: int


@dataclass
class PairSample:
    query: np.ndarray          # [D]
    positives: np.ndarray      # [P, D]
    negatives: np.ndarray      # [N, D]
    instance_id: int


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_pair_indices(
    assign_key: LevelAssignment,
    assign_ref: LevelAssignment,
    n_neg: int,
    rng: np.random.Generator,
) -> list[PairIndices]:
    """One entry per positive key-frame location, in ascending flat order.

    Positives are every reference location of the same instance. Negatives
    are drawn uniformly without replacement from the whole reference grid
    minus that instance's locations; if fewer are available, all are taken.
    """
    if n_neg < 0:
        raise ValueError("n_neg must be nonnegative")
    ids_key = assign_key.instance_id.ravel()
    ids_ref = assign_ref.instance_id.ravel()
    samples = []
    for qi in np.flatnonzero(ids_key >= 0).tolist():
        gid = int(ids_key[qi])
        pos = np.flatnonzero(ids_ref == gid)
        pool = np.flatnonzero(ids_ref != gid)
        take = min(n_neg, pool.size)
        neg = rng.choice(pool, size=take, replace=False) if take > 0 else np.zeros(0, dtype=np.int64)
        samples.append(PairIndices(qi, pos.astype(np.int64), np.sort(neg).astype(np.int64), gid))
    return samples


def _resolve_level(assignment: Assignment | LevelAssignment, grid_shape: tuple[int, int]) -> LevelAssignment:
    if isinstance(assignment, LevelAssignment):
        lvl = assignment
    else:
        matches = [l for l in assignment.levels if l.grid.shape == grid_shape]
        if not matches:
            raise ShapeError(f"no assignment level matches embedding grid {grid_shape}")
        lvl = matches[0]
    if lvl.grid.shape != grid_shape:
        raise ShapeError(f"assignment grid {lvl.grid.shape} does not match embedding grid {grid_shape}")
    return lvl


def sample_pairs(
    emb_key: np.ndarray,
    emb_ref: np.ndarray,
    assign_key: Assignment | LevelAssignment,
    assign_ref: Assignment | LevelAssignment,
    n_neg: int = 128,
    rng_seed: int = 0,
) -> list[PairSample]:
    """Gather query/positive/negative embedding vectors for every key positive."""
    if emb_key.shape[0] != emb_ref.shape[0]:
        raise ShapeError("embedding maps must share the channel dimension")
    grid_key = emb_key.shape[1:]
    grid_ref = emb_ref.shape[1:]
    lvl_key = _resolve_level(assign_key, grid_key)
    lvl_ref = _resolve_level(assign_ref, grid_ref)
    flat_key = emb_key.reshape(emb_key.shape[0], -1)
    flat_ref = emb_ref.reshape(emb_ref.shape[0], -1)
    rng = np.random.default_rng(rng_seed)
    out = []
    for idx in sample_pair_indices(lvl_key, lvl_ref, n_neg, rng):
        out.append(
            PairSample(
                query=flat_key[:, idx.query_index].copy(),
                positives=flat_ref[:, idx.positive_indices].T.copy(),
                negatives=flat_ref[:, idx.negative_indices].T.copy(),
                instance_id=idx.instance_id,
            )
        )
    return out


# ---------------------------------------------------------------------------
# losses (numpy reference)
# ---------------------------------------------------------------------------


def _as_matrix(vectors, dim: int) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, dim)
    arr = np.atleast_2d(arr)
    if arr.shape[1] != dim:
        raise ShapeError(f"vector dimension {arr.shape[1]} does not match query dimension {dim}")
    return arr


def contrastive_loss(q, positives, negatives) -> float:
    """Multi-positive contrastive loss; 0 when either side is empty."""
    q = np.asarray(q, dtype=np.float64).ravel()
    pos = _as_matrix(positives, q.size)
    neg = _as_matrix(negatives, q.size)
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        return 0.0
    s = pos @ q
    d = neg @ q
    diff = d[None, :] - s[:, None]
    m = diff.max(axis=1)
    lse = m + np.log(np.exp(diff - m[:, None]).sum(axis=1))
    return float(np.logaddexp(0.0, lse).sum())


def single_positive_loss(q, positive, negatives) -> float:
    """One-positive softmax form, kept as an independent route for checks."""
    q = np.asarray(q, dtype=np.float64).ravel()
    neg = _as_matrix(negatives, q.size)
    sims = np.concatenate([[np.dot(q, np.asarray(positive, dtype=np.float64))], neg @ q])
    m = sims.max()
    e = np.exp(sims - m)
    return float(-np.log(e[0] / e.sum()))


def contrastive_grad(q, positives, negatives) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form partials of :func:`contrastive_loss` w.r.t. q, positives, negatives."""
    q = np.asarray(q, dtype=np.float64).ravel()
    pos = _as_matrix(positives, q.size)
    neg = _as_matrix(negatives, q.size)
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        return np.zeros_like(q), np.zeros_like(pos), np.zeros_like(neg)
    s = pos @ q
    d = neg @ q
    diff = d[None, :] - s[:, None]
    m = np.maximum(diff.max(axis=1), 0.0)
    log_z = m + np.log(np.exp(-m) + np.exp(diff - m[:, None]).sum(axis=1))
    ratio = np.exp(diff - log_z[:, None])  # exp(d_n - s_p) / Z_p
    coef_pos = -ratio.sum(axis=1)
    coef_neg = ratio.sum(axis=0)
    grad_q = coef_pos @ pos + coef_neg @ neg
    grad_pos = coef_pos[:, None] * q[None, :]
    grad_neg = coef_neg[:, None] * q[None, :]
    return grad_q, grad_pos, grad_neg


def track_loss(samples: list[PairSample]) -> float:
    """Mean per-query loss over queries with at least one positive; 0 if none."""
    values = [
        contrastive_loss(s.query, s.positives, s.negatives)
        for s in samples
        if np.asarray(s.positives).size > 0
    ]
    if not values:
        return 0.0
    return float(np.mean(values))


def bi_track_loss(samples_forward: list[PairSample], samples_backward: list[PairSample]) -> float:
    """Average of the two directional losses of one frame pair."""
    return 0.5 * (track_loss(samples_forward) + track_loss(samples_backward))


# ---------------------------------------------------------------------------
# torch twins for the training graph
# ---------------------------------------------------------------------------


def contrastive_loss_torch(q: torch.Tensor, positives: torch.Tensor, negatives: torch.Tensor) -> torch.Tensor:
    if positives.numel() == 0 or negatives.numel() == 0:
        return q.sum() * 0.0
    s = positives @ q
    d = negatives @ q
    diff = d.unsqueeze(0) - s.unsqueeze(1)
    return F.softplus(torch.logsumexp(diff, dim=1)).sum()


def track_loss_torch(
    emb_key_flat: torch.Tensor,
    emb_ref_flat: torch.Tensor,
    indices: list[PairIndices],
) -> torch.Tensor:
    """Directional loss from flattened [D, N] embedding maps and sampled indices."""
    terms = []
    for idx in indices:
        if idx.positive_indices.size == 0:
            continue
        q = emb_key_flat[:, idx.query_index]
        pos = emb_ref_flat[:, torch.from_numpy(idx.positive_indices)].T
        neg = emb_ref_flat[:, torch.from_numpy(idx.negative_indices)].T
        terms.append(contrastive_loss_torch(q, pos, neg))
    if not terms:
        return emb_key_flat.sum() * 0.0
    return torch.stack(terms).mean()
