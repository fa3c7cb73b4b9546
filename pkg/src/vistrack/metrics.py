"""Track-level evaluation: video IoU and AP/AR over mask sequences.

A predicted and a ground-truth track are compared over the whole video:
missing frames count as empty masks, intersections and unions are summed
over frames, and their ratio is the video IoU. AP follows the COCO-style
protocol: greedy highest-score-first matching per video, 101-point
interpolated precision averaged over IoU thresholds 0.50:0.05:0.95 and
over categories; AR is the class-aware recall under per-video prediction
budgets of 1 and 10.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError

IOU_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.96, 0.05), 2).tolist())
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class EvalTrack:
    """One track (predicted or ground truth) of a single video."""

    video_id: str
    category_id: int
    masks: list[Optional[np.ndarray]]
    score: float = 1.0
    track_id: int = 0


def video_iou(
    pred_masks: list[Optional[np.ndarray]],
    gt_masks: list[Optional[np.ndarray]],
    n_frames: Optional[int] = None,
) -> float:
    """Ratio of summed per-frame intersections to summed unions; 0 if both empty."""
    t = n_frames if n_frames is not None else max(len(pred_masks), len(gt_masks))
    if len(pred_masks) > t or len(gt_masks) > t:
        raise ShapeError("mask sequences longer than the stated video length")
    inter = 0
    union = 0
    for k in range(t):
        p = pred_masks[k] if k < len(pred_masks) else None
        g = gt_masks[k] if k < len(gt_masks) else None
        if p is None and g is None:
            continue
        if p is not None and g is not None:
            if p.shape != g.shape:
                raise ShapeError(f"frame {k}: mask shapes {p.shape} vs {g.shape}")
            inter += int(np.logical_and(p, g).sum())
            union += int(np.logical_or(p, g).sum())
        elif p is not None:
            union += int(np.count_nonzero(p))
        else:
            union += int(np.count_nonzero(g))
    return inter / union if union > 0 else 0.0


def _interpolated_ap(tp_flags: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from TP flags aligned to descending scores."""
    if n_gt == 0:
        return 0.0
    if tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    # precision envelope, right to left
    for i in range(precision.size - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    out = np.zeros_like(RECALL_POINTS)
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    valid = idx < precision.size
    out[valid] = precision[idx[valid]]
    return float(out.mean())


def _match_video(
    preds: list[EvalTrack], gts: list[EvalTrack], threshold: float, iou: np.ndarray
) -> list[bool]:
    """Greedy matching in descending score order; returns a TP flag per pred."""
    matched: set[int] = set()
    flags = []
    for pi in range(len(preds)):
        best_gt = -1
        best_iou = threshold
        for gi in range(len(gts)):
            if gi in matched:
                continue
            if iou[pi, gi] >= best_iou:
                best_iou = iou[pi, gi]
                best_gt = gi
        if best_gt >= 0:
            matched.add(best_gt)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _group(tracks: list[EvalTrack]) -> dict[tuple[str, int], list[EvalTrack]]:
    groups: dict[tuple[str, int], list[EvalTrack]] = {}
    for t in tracks:
        groups.setdefault((t.video_id, t.category_id), []).append(t)
    return groups


def evaluate(
    preds: list[EvalTrack],
    gts: list[EvalTrack],
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS,
    ar_budgets: tuple[int, ...] = (1, 10),
) -> dict:
    """AP/AR over videos and categories; categories absent from gts are skipped."""
    categories = sorted({g.category_id for g in gts})
    pred_groups = _group(preds)
    gt_groups = _group(gts)
    video_ids = sorted({g.video_id for g in gts} | {p.video_id for p in preds})

    per_category: dict[int, dict] = {}
    for cat in categories:
        n_gt = sum(len(gt_groups.get((v, cat), [])) for v in video_ids)
        # per video: sorted preds, IoU matrix against gts
        video_data = []
        for v in video_ids:
            vp = sorted(pred_groups.get((v, cat), []), key=lambda t: (-t.score, t.track_id))
            vg = gt_groups.get((v, cat), [])
            iou = np.zeros((len(vp), len(vg)))
            for i, p in enumerate(vp):
                for j, g in enumerate(vg):
                    iou[i, j] = video_iou(p.masks, g.masks, n_frames=max(len(p.masks), len(g.masks)))
            video_data.append((vp, vg, iou))

        ap_per_threshold = []
        recall_budget = {k: [] for k in ar_budgets}
        for threshold in iou_thresholds:
            scores_all, flags_all = [], []
            matched_total = 0
            matched_budget = {k: 0 for k in ar_budgets}
            for vp, vg, iou in video_data:
                flags = _match_video(vp, vg, threshold, iou)
                scores_all.extend(-t.score for t in vp)
                flags_all.extend(flags)
                matched_total += sum(flags)
                for k in ar_budgets:
                    matched_budget[k] += sum(_match_video(vp[:k], vg, threshold, iou[:k]))
            order = np.argsort(np.asarray(scores_all), kind="stable")
            flags_sorted = np.asarray(flags_all, dtype=bool)[order] if flags_all else np.zeros(0, bool)
            ap_per_threshold.append(_interpolated_ap(flags_sorted, n_gt))
            for k in ar_budgets:
                recall_budget[k].append(matched_budget[k] / n_gt if n_gt else 0.0)

        per_category[cat] = {
            "ap_per_threshold": ap_per_threshold,
            "AP": float(np.mean(ap_per_threshold)) if ap_per_threshold else 0.0,
            **{f"AR{k}": float(np.mean(recall_budget[k])) for k in ar_budgets},
        }

    def mean_over_cats(getter) -> float:
        values = [getter(per_category[c]) for c in categories]
        return float(np.mean(values)) if values else 0.0

    idx50 = iou_thresholds.index(0.5) if 0.5 in iou_thresholds else None
    idx75 = iou_thresholds.index(0.75) if 0.75 in iou_thresholds else None
    result = {
        "AP": mean_over_cats(lambda c: c["AP"]),
        "AP50": mean_over_cats(lambda c: c["ap_per_threshold"][idx50]) if idx50 is not None else 0.0,
        "AP75": mean_over_cats(lambda c: c["ap_per_threshold"][idx75]) if idx75 is not None else 0.0,
        **{f"AR{k}": mean_over_cats(lambda c, k=k: c[f"AR{k}"]) for k in ar_budgets},
        "per_category": {
            cat: {key: val for key, val in stats.items() if key != "ap_per_threshold"}
            for cat, stats in per_category.items()
        },
    }
    return result
