"""Per-frame detection decoding and online cross-frame association.

Frame decoding keeps grid locations whose class probability and combined
score sqrt(class_prob * centerness) clear the score threshold, applies
per-class NMS, keeps the top detections, and renders one mask per survivor
from its dynamic kernel. Video association matches detections to a memory
bank by a bi-softmax embedding affinity plus box-overlap and category
cues; finalized tracks take their category by majority vote.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assign import image_diagonal, make_locations
from .maskgen import mask_head_forward, upsample_mask
from .model import HeadOutputs


@dataclass
class Detection:
    box: tuple[float, float, float, float]
    score: float
    category: int
    kernel: np.ndarray
    embedding: np.ndarray
    mask: Optional[np.ndarray]
    location: tuple[float, float] = (0.0, 0.0)


@dataclass
class BankEntry:
    track_id: int
    embedding: np.ndarray
    last_box: tuple[float, float, float, float]
    category_votes: list[tuple[int, float]]
    last_seen_frame: int


@dataclass
class MemoryBank:
    entries: list[BankEntry] = field(default_factory=list)
    next_track_id: int = 0

    def new_track(self, det: Detection, frame: int) -> int:
        tid = self.next_track_id
        self.next_track_id += 1
        self.entries.append(
            BankEntry(tid, det.embedding.copy(), det.box, [(det.category, det.score)], frame)
        )
        return tid


@dataclass
class AssocWeights:
    w_iou: float = 0.5
    w_cls: float = 0.5
    momentum: float = 0.0
    use_hungarian: bool = False


@dataclass
class TrackPrediction:
    track_id: int
    category_id: int
    score: float
    masks: list[Optional[np.ndarray]]
    boxes: list[Optional[tuple[float, float, float, float]]]
    frame_scores: list[Optional[float]]


# ---------------------------------------------------------------------------
# frame decoding
# ---------------------------------------------------------------------------


def box_iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else 0.0


def nms(boxes: np.ndarray, scores: np.ndarray, thresh: float) -> list[int]:
    """Greedy suppression; keeps indices of survivors in descending score order."""
    order = np.argsort(-scores, kind="stable").tolist()
    keep: list[int] = []
    while order:
        i = order.pop(0)
        keep.append(i)
        order = [j for j in order if box_iou(boxes[i], boxes[j]) <= thresh]
    return keep


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def decode_detections(
    outputs: HeadOutputs,
    score_thresh: float = 0.03,
    nms_thresh: float = 0.5,
    top_t: int = 10,
    render_masks: bool = True,
) -> list[Detection]:
    """Decode one frame's raw outputs into at most ``top_t`` detections."""
    if not 0 < score_thresh < 1 or not 0 < nms_thresh < 1:
        raise ValueError("thresholds must lie in (0, 1)")
    if top_t < 1:
        raise ValueError("top_t must be at least 1")
    height, width = outputs.image_size

    cand_boxes, cand_scores, cand_cats, cand_locs = [], [], [], []
    for cls_logits, box_reg, ctr_logits, stride in zip(
        outputs.class_logits, outputs.box_reg, outputs.centerness, outputs.strides
    ):
        probs = _sigmoid(np.asarray(cls_logits, dtype=np.float64))
        ctr = _sigmoid(np.asarray(ctr_logits, dtype=np.float64))
        best_cat = probs.argmax(axis=0)
        best_prob = probs.max(axis=0)
        score = np.sqrt(best_prob * ctr)
        keep = (best_prob > score_thresh) & (score > score_thresh)
        if not keep.any():
            continue
        h, w = best_prob.shape
        grid = make_locations(h, w, stride)
        ii, jj = np.nonzero(keep)
        x = grid.centers[ii, jj, 0]
        y = grid.centers[ii, jj, 1]
        ltrb = np.asarray(box_reg, dtype=np.float64)[:, ii, jj]
        x1 = np.clip(x - ltrb[0], 0, width)
        y1 = np.clip(y - ltrb[1], 0, height)
        x2 = np.clip(x + ltrb[2], 0, width)
        y2 = np.clip(y + ltrb[3], 0, height)
        valid = (x2 > x1) & (y2 > y1)
        for n in np.flatnonzero(valid).tolist():
            cand_boxes.append((float(x1[n]), float(y1[n]), float(x2[n]), float(y2[n])))
            cand_scores.append(float(score[ii[n], jj[n]]))
            cand_cats.append(int(best_cat[ii[n], jj[n]]) + 1)
            cand_locs.append((float(x[n]), float(y[n])))

    if not cand_boxes:
        return []
    boxes = np.asarray(cand_boxes)
    scores = np.asarray(cand_scores)
    cats = np.asarray(cand_cats)

    survivors: list[int] = []
    for cat in np.unique(cats):
        idx = np.flatnonzero(cats == cat)
        kept = nms(boxes[idx], scores[idx], nms_thresh)
        survivors.extend(idx[k] for k in kept)
    survivors.sort(key=lambda i: (-scores[i], i))
    survivors = survivors[:top_t]

    kernel_map = np.asarray(outputs.kernel_map)
    embedding_map = np.asarray(outputs.embedding_map)
    mask_feature = np.asarray(outputs.mask_feature)
    h8, w8 = mask_feature.shape[-2:]
    grid8 = make_locations(h8, w8, 8)
    diag = image_diagonal(height, width)

    dets = []
    for i in survivors:
        x, y = cand_locs[i]
        cj = min(max(int(x // 8), 0), w8 - 1)
        ci = min(max(int(y // 8), 0), h8 - 1)
        kernel = kernel_map[:, ci, cj].astype(np.float64)
        embedding = embedding_map[:, ci, cj].astype(np.float64)
        mask = None
        if render_masks:
            coords = np.stack(
                [(grid8.centers[..., 0] - x) / diag, (grid8.centers[..., 1] - y) / diag], axis=0
            )
            logits = mask_head_forward(mask_feature.astype(np.float64), coords, kernel)
            mask = upsample_mask(logits, height, width) > 0.5
        dets.append(
            Detection(
                box=cand_boxes[i],
                score=cand_scores[i],
                category=int(cats[i]),
                kernel=kernel,
                embedding=embedding,
                mask=mask,
                location=(x, y),
            )
        )
    return dets


# ---------------------------------------------------------------------------
# association
# ---------------------------------------------------------------------------


def bisoftmax_affinity(det_embeddings: np.ndarray, bank_embeddings: np.ndarray) -> np.ndarray:
    """Mean of row-wise and column-wise softmaxes of the dot-product matrix."""
    sims = np.asarray(det_embeddings, dtype=np.float64) @ np.asarray(bank_embeddings, dtype=np.float64).T
    row = np.exp(sims - sims.max(axis=1, keepdims=True))
    row /= row.sum(axis=1, keepdims=True)
    col = np.exp(sims - sims.max(axis=0, keepdims=True))
    col /= col.sum(axis=0, keepdims=True)
    return 0.5 * (row + col)


def affinity_matrix(dets: list[Detection], bank: MemoryBank, weights: AssocWeights) -> np.ndarray:
    det_emb = np.stack([d.embedding for d in dets])
    bank_emb = np.stack([e.embedding for e in bank.entries])
    aff = bisoftmax_affinity(det_emb, bank_emb)
    for i, det in enumerate(dets):
        for j, entry in enumerate(bank.entries):
            aff[i, j] += weights.w_iou * box_iou(det.box, entry.last_box)
            aff[i, j] += weights.w_cls * float(det.category == _entry_category(entry))
    return aff


def _entry_category(entry: BankEntry) -> int:
    return vote_category(entry.category_votes)


def _greedy_matching(aff: np.ndarray, new_thresh: float) -> list[tuple[int, int]]:
    matches = []
    aff = aff.copy()
    n, m = aff.shape
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    while len(used_rows) < n and len(used_cols) < m:
        best = None
        best_val = -np.inf
        for i in range(n):
            if i in used_rows:
                continue
            for j in range(m):
                if j in used_cols:
                    continue
                if aff[i, j] > best_val:
                    best_val = aff[i, j]
                    best = (i, j)
        if best is None or best_val < new_thresh:
            break
        matches.append(best)
        used_rows.add(best[0])
        used_cols.add(best[1])
    return matches


def _hungarian_matching(aff: np.ndarray, new_thresh: float) -> list[tuple[int, int]]:
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(-aff)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if aff[i, j] >= new_thresh]


def associate(
    dets: list[Detection],
    bank: MemoryBank,
    frame: int,
    weights: AssocWeights = AssocWeights(),
    new_thresh: float = 0.5,
) -> tuple[list[tuple[int, int]], MemoryBank]:
    """Match detections to bank entries; unmatched detections spawn tracks.

    Returns (detection index, track id) pairs and the updated bank. With an
    empty bank every detection becomes a new track.
    """
    assignments: list[tuple[int, int]] = []
    matched_rows: set[int] = set()
    if bank.entries and dets:
        aff = affinity_matrix(dets, bank, weights)
        matcher = _hungarian_matching if weights.use_hungarian else _greedy_matching
        for i, j in matcher(aff, new_thresh):
            det = dets[i]
            entry = bank.entries[j]
            mu = weights.momentum
            entry.embedding = mu * entry.embedding + (1 - mu) * det.embedding
            entry.last_box = det.box
            entry.category_votes.append((det.category, det.score))
            entry.last_seen_frame = frame
            assignments.append((i, entry.track_id))
            matched_rows.add(i)
    for i, det in enumerate(dets):
        if i not in matched_rows:
            assignments.append((i, bank.new_track(det, frame)))
    assignments.sort()
    return assignments, bank


def vote_category(votes: list[tuple[int, float]]) -> int:
    """Modal category; ties fall to the higher mean score, then lower id."""
    by_cat: dict[int, list[float]] = {}
    for cat, score in votes:
        by_cat.setdefault(cat, []).append(score)
    return min(
        by_cat,
        key=lambda c: (-len(by_cat[c]), -float(np.mean(by_cat[c])), c),
    )


def finalize_tracks(
    bank: MemoryBank,
    records: dict[int, dict[int, Detection]],
    n_frames: int,
) -> list[TrackPrediction]:
    """Collapse per-frame records into per-track predictions."""
    tracks = []
    for entry in bank.entries:
        frames = records.get(entry.track_id, {})
        masks: list[Optional[np.ndarray]] = [None] * n_frames
        boxes: list[Optional[tuple]] = [None] * n_frames
        scores: list[Optional[float]] = [None] * n_frames
        for t, det in frames.items():
            masks[t] = det.mask
            boxes[t] = det.box
            scores[t] = det.score
        present = [s for s in scores if s is not None]
        if not present:
            continue
        tracks.append(
            TrackPrediction(
                track_id=entry.track_id,
                category_id=vote_category(entry.category_votes),
                score=float(np.mean(present)),
                masks=masks,
                boxes=boxes,
                frame_scores=scores,
            )
        )
    return tracks


class VideoTracker:
    """Stateful per-video association; frames must arrive in order."""

    def __init__(self, n_frames: int, weights: AssocWeights = AssocWeights(), new_thresh: float = 0.5):
        self.n_frames = n_frames
        self.weights = weights
        self.new_thresh = new_thresh
        self.bank = MemoryBank()
        self.records: dict[int, dict[int, Detection]] = {}

    def update(self, frame: int, dets: list[Detection]) -> list[tuple[int, int]]:
        assignments, _ = associate(dets, self.bank, frame, self.weights, self.new_thresh)
        for det_idx, track_id in assignments:
            self.records.setdefault(track_id, {})[frame] = dets[det_idx]
        return assignments

    def finalize(self) -> list[TrackPrediction]:
        return finalize_tracks(self.bank, self.records, self.n_frames)


def track_video(
    per_frame_detections: list[list[Detection]],
    weights: AssocWeights = AssocWeights(),
    new_thresh: float = 0.5,
) -> list[TrackPrediction]:
    tracker = VideoTracker(len(per_frame_detections), weights, new_thresh)
    for t, dets in enumerate(per_frame_detections):
        tracker.update(t, dets)
    return tracker.finalize()
