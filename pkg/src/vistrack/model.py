"""Desk-scale network, training objective, and training loop.

The network is a small convolutional backbone with a three-level feature
pyramid (strides 8/16/32) and five heads: per-level classification, box
regression, and centerness, plus fused kernel-weight and tracking-embedding
maps at stride 8 alongside an 8-channel mask feature. The training
objective combines the detection/segmentation loss with the weighted
bi-directional tracking loss and the kernel consistency loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import consistency as consistency_mod
from . import trackloss as trackloss_mod
from .assign import Assignment, assignment_for_frame, image_diagonal, make_locations
from .datagen import VideoSample
from .errors import ConfigError, ShapeError, TrainingDiverged
from .maskgen import LevelFusion, kernel_length, mask_heads_forward_torch

FPN_STRIDES = (8, 16, 32)


@dataclass
class TrainConfig:
    """Hyper-parameters of the training objective and loop."""

    lambda_b: float = 0.2
    lambda_c: float = 10.0
    n_neg: int = 128
    embed_dim: int = 32
    mask_channels: int = 8
    num_classes: int = 3
    epochs: int = 10
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_milestones: tuple[int, ...] = ()
    lr_gamma: float = 0.1
    warmup_steps: int = 50
    grad_clip: float = 10.0
    seed: int = 0
    ref_radius: int = 3
    max_kernel_samples: int = 64
    bi_directional: bool = True
    consistency_on_ref: bool = False
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self) -> None:
        if self.lambda_b < 0 or self.lambda_c < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.n_neg < 0:
            raise ConfigError("n_neg must be nonnegative")
        if self.embed_dim <= 0 or self.mask_channels <= 0 or self.num_classes <= 0:
            raise ConfigError("dimensions must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.ref_radius < 1:
            raise ConfigError("ref_radius must be at least 1")


@dataclass
class HeadOutputs:
    """Raw per-frame network outputs.

    Per-level tensors follow pyramid order (strides 8, 16, 32); the kernel
    map, embedding map, and mask feature share the stride-8 grid. Box
    regressions are positive (l, t, r, b) pixel distances; class and
    centerness entries are logits.
    """

    class_logits: list
    box_reg: list
    centerness: list
    kernel_map: object
    embedding_map: object
    mask_feature: object
    image_size: tuple[int, int]
    strides: tuple[int, ...] = FPN_STRIDES

    def to_numpy(self) -> "HeadOutputs":
        def conv(t):
            return t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)

        return HeadOutputs(
            class_logits=[conv(t) for t in self.class_logits],
            box_reg=[conv(t) for t in self.box_reg],
            centerness=[conv(t) for t in self.centerness],
            kernel_map=conv(self.kernel_map),
            embedding_map=conv(self.embedding_map),
            mask_feature=conv(self.mask_feature),
            image_size=self.image_size,
            strides=self.strides,
        )


def _stage(c_in: int, c_out: int, groups: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=2, padding=1, bias=False),
        nn.GroupNorm(groups, c_out),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1, bias=False),
        nn.GroupNorm(groups, c_out),
        nn.ReLU(inplace=True),
    )


def _head_tower(channels: int, depth: int = 2) -> nn.Sequential:
    layers: list[nn.Module] = []
    for _ in range(depth):
        layers += [
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.GroupNorm(8, channels),
            nn.ReLU(inplace=True),
        ]
    return nn.Sequential(*layers)


class VisTrackNet(nn.Module):
    """Backbone + pyramid + detection, kernel, tracking, and mask-feature heads."""

    def __init__(
        self,
        num_classes: int = 3,
        embed_dim: int = 32,
        mask_channels: int = 8,
        fpn_channels: int = 32,
    ):
        super().__init__()
        self.arch = {
            "num_classes": num_classes,
            "embed_dim": embed_dim,
            "mask_channels": mask_channels,
            "fpn_channels": fpn_channels,
        }
        self.num_classes = num_classes
        self.embed_dim = embed_dim
        self.mask_channels = mask_channels
        self.kernel_params = kernel_length(mask_channels)

        self.stage1 = _stage(3, 16, 4)
        self.stage2 = _stage(16, 32, 8)
        self.stage3 = _stage(32, 64, 8)
        self.stage4 = _stage(64, 64, 8)

        c = fpn_channels
        self.lat3 = nn.Conv2d(64, c, 1)
        self.lat4 = nn.Conv2d(64, c, 1)
        self.smooth3 = nn.Conv2d(c, c, 3, padding=1)
        self.smooth4 = nn.Conv2d(c, c, 3, padding=1)
        self.down5 = nn.Conv2d(c, c, 3, stride=2, padding=1)

        self.cls_tower = _head_tower(c)
        self.reg_tower = _head_tower(c)
        self.cls_head = nn.Conv2d(c, num_classes, 3, padding=1)
        self.ctr_head = nn.Conv2d(c, 1, 3, padding=1)
        self.box_head = nn.Conv2d(c, 4, 3, padding=1)
        self.box_scales = nn.Parameter(torch.ones(len(FPN_STRIDES)))

        self.kernel_head = LevelFusion(c, self.kernel_params, n_convs=3, hidden_channels=c)
        self.track_head = LevelFusion(c, embed_dim, n_convs=3, hidden_channels=c)
        self.mask_branch = LevelFusion(c, mask_channels, n_convs=2, hidden_channels=c)

        # rare-positive prior so the focal classification loss starts stable
        nn.init.constant_(self.cls_head.bias, -float(np.log((1 - 0.01) / 0.01)))

    def forward(self, frame) -> HeadOutputs:
        if isinstance(frame, np.ndarray):
            frame = torch.from_numpy(np.ascontiguousarray(frame, dtype=np.float32))
        if frame.dim() != 3 or frame.shape[0] != 3:
            raise ShapeError(f"expected a [3, H, W] frame, got {tuple(frame.shape)}")
        h, w = int(frame.shape[1]), int(frame.shape[2])
        if h % 32 or w % 32:
            raise ShapeError(f"frame size {h}x{w} must be divisible by 32")

        x = frame.unsqueeze(0)
        c3 = self.stage3(self.stage2(self.stage1(x)))
        c4 = self.stage4(c3)
        p4_pre = self.lat4(c4)
        p3 = self.smooth3(self.lat3(c3) + F.interpolate(p4_pre, scale_factor=2.0, mode="nearest"))
        p4 = self.smooth4(p4_pre)
        p5 = self.down5(p4)
        pyramid = [p3, p4, p5]

        class_logits, box_reg, centerness = [], [], []
        for i, (p, stride) in enumerate(zip(pyramid, FPN_STRIDES)):
            ct = self.cls_tower(p)
            rt = self.reg_tower(p)
            class_logits.append(self.cls_head(ct)[0])
            centerness.append(self.ctr_head(ct)[0, 0])
            raw = self.box_head(rt) * self.box_scales[i]
            box_reg.append(torch.exp(raw.clamp(max=8.0))[0] * stride)

        return HeadOutputs(
            class_logits=class_logits,
            box_reg=box_reg,
            centerness=centerness,
            kernel_map=self.kernel_head(p3, p4, p5)[0],
            embedding_map=self.track_head(p3, p4, p5)[0],
            mask_feature=self.mask_branch(p3, p4, p5)[0],
            image_size=(h, w),
        )

    def predict(self, frame) -> HeadOutputs:
        was_training = self.training
        self.eval()
        with torch.no_grad():
            out = self.forward(frame).to_numpy()
        if was_training:
            self.train()
        return out


# ---------------------------------------------------------------------------
# loss components
# ---------------------------------------------------------------------------


def sigmoid_focal_loss(logits: torch.Tensor, targets: torch.Tensor, alpha: float, gamma: float) -> torch.Tensor:
    """Elementwise focal loss on one-hot targets, summed."""
    p = torch.sigmoid(logits)
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = p * targets + (1 - p) * (1 - targets)
    alpha_t = alpha * targets + (1 - alpha) * (1 - targets)
    return (alpha_t * (1 - p_t) ** gamma * ce).sum()


def giou_loss(pred_boxes: torch.Tensor, target_boxes: torch.Tensor) -> torch.Tensor:
    """Per-row 1 - GIoU for xyxy boxes."""
    ix1 = torch.maximum(pred_boxes[:, 0], target_boxes[:, 0])
    iy1 = torch.maximum(pred_boxes[:, 1], target_boxes[:, 1])
    ix2 = torch.minimum(pred_boxes[:, 2], target_boxes[:, 2])
    iy2 = torch.minimum(pred_boxes[:, 3], target_boxes[:, 3])
    inter = (ix2 - ix1).clamp(min=0) * (iy2 - iy1).clamp(min=0)
    area_p = (pred_boxes[:, 2] - pred_boxes[:, 0]) * (pred_boxes[:, 3] - pred_boxes[:, 1])
    area_t = (target_boxes[:, 2] - target_boxes[:, 0]) * (target_boxes[:, 3] - target_boxes[:, 1])
    union = area_p + area_t - inter
    iou = inter / union.clamp(min=1e-9)
    ex1 = torch.minimum(pred_boxes[:, 0], target_boxes[:, 0])
    ey1 = torch.minimum(pred_boxes[:, 1], target_boxes[:, 1])
    ex2 = torch.maximum(pred_boxes[:, 2], target_boxes[:, 2])
    ey2 = torch.maximum(pred_boxes[:, 3], target_boxes[:, 3])
    enclose = ((ex2 - ex1) * (ey2 - ey1)).clamp(min=1e-9)
    giou = iou - (enclose - union) / enclose
    return 1.0 - giou


def dice_loss(probs: torch.Tensor, targets: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Per-instance Dice loss on probabilities; inputs [K, H, W]."""
    inter = (probs * targets).flatten(1).sum(dim=1)
    denom = (probs * probs).flatten(1).sum(dim=1) + (targets * targets).flatten(1).sum(dim=1)
    return 1.0 - 2.0 * inter / (denom + eps)


def _base_centers(h: int, w: int, stride: int = 8) -> torch.Tensor:
    centers = make_locations(h, w, stride).centers  # [h, w, 2]
    return torch.from_numpy(centers.transpose(2, 0, 1).astype(np.float32))


def render_instance_masks(
    mask_feature: torch.Tensor,
    kernels: torch.Tensor,
    locations: torch.Tensor,
    diag: float,
) -> torch.Tensor:
    """Render mask logits for K kernels at their (x, y) locations; [K, h, w]."""
    k = kernels.shape[0]
    h, w = mask_feature.shape[-2:]
    base = _base_centers(h, w).to(mask_feature.dtype)
    coords = (base.unsqueeze(0) - locations.reshape(k, 2, 1, 1)) / diag
    feats = torch.cat([mask_feature.unsqueeze(0).expand(k, -1, -1, -1), coords], dim=1)
    return mask_heads_forward_torch(feats, kernels)


def _positive_entries(assignment: Assignment) -> list[tuple[float, float, int]]:
    return [(x, y, gid) for x, y, gid, _ in assignment.positive_locations()]


def _kernel_cell(x: float, y: float, h8: int, w8: int) -> int:
    j = min(max(int(x // 8), 0), w8 - 1)
    i = min(max(int(y // 8), 0), h8 - 1)
    return i * w8 + j


def condinst_loss(
    outputs: HeadOutputs,
    assignment: Assignment,
    gt_masks: dict[int, np.ndarray],
    config: TrainConfig | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[torch.Tensor, dict]:
    """Detection + segmentation loss for one frame.

    Focal classification over all locations, GIoU box loss and centerness
    BCE on positives, and Dice loss over up to ``max_kernel_samples``
    rendered instance masks. With zero positives only the classification
    term remains.
    """
    cfg = config or TrainConfig()
    height, width = outputs.image_size
    num_classes = outputs.class_logits[0].shape[0]

    cls_sum = None
    n_pos = 0
    pos_pred_boxes, pos_target_boxes = [], []
    pos_ctr_logits, pos_ctr_targets = [], []
    for lvl_out_cls, lvl_out_box, lvl_out_ctr, lvl_assign in zip(
        outputs.class_logits, outputs.box_reg, outputs.centerness, assignment.levels
    ):
        cls_t = torch.from_numpy(lvl_assign.class_target)
        onehot = F.one_hot(cls_t.clamp(min=0), num_classes + 1)[..., 1:].float()
        term = sigmoid_focal_loss(
            lvl_out_cls.permute(1, 2, 0), onehot, cfg.focal_alpha, cfg.focal_gamma
        )
        cls_sum = term if cls_sum is None else cls_sum + term

        pos = lvl_assign.instance_id >= 0
        k = int(pos.sum())
        if k == 0:
            continue
        n_pos += k
        ii, jj = np.nonzero(pos)
        centers = lvl_assign.grid.centers[ii, jj]  # [k, 2]
        cx = torch.from_numpy(centers[:, 0].astype(np.float32))
        cy = torch.from_numpy(centers[:, 1].astype(np.float32))
        pred_ltrb = lvl_out_box[:, ii, jj].T  # [k, 4]
        tgt_ltrb = torch.from_numpy(lvl_assign.box_target[ii, jj].astype(np.float32))
        pos_pred_boxes.append(
            torch.stack([cx - pred_ltrb[:, 0], cy - pred_ltrb[:, 1], cx + pred_ltrb[:, 2], cy + pred_ltrb[:, 3]], dim=1)
        )
        pos_target_boxes.append(
            torch.stack([cx - tgt_ltrb[:, 0], cy - tgt_ltrb[:, 1], cx + tgt_ltrb[:, 2], cy + tgt_ltrb[:, 3]], dim=1)
        )
        pos_ctr_logits.append(lvl_out_ctr[ii, jj])
        pos_ctr_targets.append(torch.from_numpy(lvl_assign.centerness_target[ii, jj].astype(np.float32)))

    cls_loss = cls_sum / max(n_pos, 1)
    zero = cls_loss * 0.0
    box_loss = ctr_loss = mask_loss = zero
    if n_pos > 0:
        box_loss = giou_loss(torch.cat(pos_pred_boxes), torch.cat(pos_target_boxes)).mean()
        ctr_loss = F.binary_cross_entropy_with_logits(torch.cat(pos_ctr_logits), torch.cat(pos_ctr_targets))

        entries = _positive_entries(assignment)
        entries = [e for e in entries if e[2] in gt_masks]
        if len(entries) > cfg.max_kernel_samples:
            if rng is None:
                sel = np.linspace(0, len(entries) - 1, cfg.max_kernel_samples).astype(int)
            else:
                sel = np.sort(rng.choice(len(entries), size=cfg.max_kernel_samples, replace=False))
            entries = [entries[i] for i in sel.tolist()]
        if entries:
            h8, w8 = outputs.mask_feature.shape[-2:]
            kflat = outputs.kernel_map.reshape(outputs.kernel_map.shape[0], -1)
            cells = [_kernel_cell(x, y, h8, w8) for x, y, _ in entries]
            kernels = kflat[:, torch.tensor(cells, dtype=torch.long)].T
            locs = torch.tensor([[x, y] for x, y, _ in entries], dtype=torch.float32)
            logits = render_instance_masks(outputs.mask_feature, kernels, locs, image_diagonal(height, width))
            probs = torch.sigmoid(
                F.interpolate(logits.unsqueeze(1), size=(height, width), mode="bilinear", align_corners=False)
            ).squeeze(1)
            targets = torch.from_numpy(
                np.stack([gt_masks[gid] for _, _, gid in entries]).astype(np.float32)
            )
            mask_loss = dice_loss(probs, targets).mean()

    total = cls_loss + box_loss + ctr_loss + mask_loss
    parts = {
        "cls": float(cls_loss.detach()),
        "box": float(box_loss.detach()),
        "ctr": float(ctr_loss.detach()),
        "dice": float(mask_loss.detach()),
    }
    return total, parts


def bi_track_term(
    out_key: HeadOutputs,
    out_ref: HeadOutputs,
    assign_key: Assignment,
    assign_ref: Assignment,
    config: TrainConfig,
    rng: np.random.Generator,
) -> torch.Tensor:
    lvl_key = assign_key.level_for_stride(8)
    lvl_ref = assign_ref.level_for_stride(8)
    emb_key = out_key.embedding_map.flatten(1)
    emb_ref = out_ref.embedding_map.flatten(1)
    fwd_idx = trackloss_mod.sample_pair_indices(lvl_key, lvl_ref, config.n_neg, rng)
    fwd = trackloss_mod.track_loss_torch(emb_key, emb_ref, fwd_idx)
    if not config.bi_directional:
        return fwd
    bwd_idx = trackloss_mod.sample_pair_indices(lvl_ref, lvl_key, config.n_neg, rng)
    bwd = trackloss_mod.track_loss_torch(emb_ref, emb_key, bwd_idx)
    return 0.5 * (fwd + bwd)


def consistency_term(
    out_key: HeadOutputs,
    out_ref: HeadOutputs,
    assign_key: Assignment,
    assign_ref: Assignment,
    config: TrainConfig,
    rng: np.random.Generator,
) -> torch.Tensor:
    pairs = consistency_mod.pair_positives(
        assign_key, assign_ref, rng_seed=int(rng.integers(2**31)), max_pairs=config.max_kernel_samples
    )
    if not pairs:
        return out_key.kernel_map.sum() * 0.0
    h8, w8 = out_key.mask_feature.shape[-2:]
    kflat_key = out_key.kernel_map.flatten(1)
    kflat_ref = out_ref.kernel_map.flatten(1)
    key_cells = torch.tensor([_kernel_cell(p.key_location[0], p.key_location[1], h8, w8) for p in pairs])
    ref_cells = torch.tensor([_kernel_cell(p.ref_location[0], p.ref_location[1], h8, w8) for p in pairs])
    theta_key = kflat_key[:, key_cells].T
    theta_ref = kflat_ref[:, ref_cells].T
    height, width = out_key.image_size
    diag = image_diagonal(height, width)
    key_locs = torch.tensor([p.key_location for p in pairs], dtype=torch.float32)
    masks_key = render_instance_masks(out_key.mask_feature, theta_key, key_locs, diag)
    if config.consistency_on_ref:
        ref_locs = torch.tensor([p.ref_location for p in pairs], dtype=torch.float32)
        masks_ref = render_instance_masks(out_ref.mask_feature, theta_ref, ref_locs, diag)
    else:
        masks_ref = render_instance_masks(out_key.mask_feature, theta_ref, key_locs, diag)
    kernel_term = ((theta_key - theta_ref) ** 2).flatten(1).sum(dim=1)
    mask_term = ((masks_key - masks_ref) ** 2).flatten(1).sum(dim=1)
    return (kernel_term + mask_term).mean()


def overall_loss(
    out_key: HeadOutputs,
    out_ref: HeadOutputs,
    assign_key: Assignment,
    assign_ref: Assignment,
    gt_masks_key: dict[int, np.ndarray],
    gt_masks_ref: dict[int, np.ndarray],
    config: TrainConfig,
    rng: np.random.Generator | None = None,
) -> tuple[torch.Tensor, dict]:
    """Weighted sum of the three objective terms for one frame pair.

    The detection term averages the two frames' losses; tracking and
    consistency terms couple them. Component values are reported for
    logging alongside the total.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    ck, _ = condinst_loss(out_key, assign_key, gt_masks_key, config, rng)
    cr, _ = condinst_loss(out_ref, assign_ref, gt_masks_ref, config, rng)
    cond = 0.5 * (ck + cr)
    bi = bi_track_term(out_key, out_ref, assign_key, assign_ref, config, rng)
    cons = consistency_term(out_key, out_ref, assign_key, assign_ref, config, rng)
    total = cond + config.lambda_b * bi + config.lambda_c * cons
    parts = {
        "condinst": float(cond.detach()),
        "bi_track": float(bi.detach()),
        "consistency": float(cons.detach()),
        "total": float(total.detach()),
    }
    return total, parts


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def frame_gt_masks(sample: VideoSample, t: int) -> dict[int, np.ndarray]:
    return {a.instance_id: a.mask for a in sample.annotations[t] if a.visible}


def train(dataset: list[VideoSample], config: TrainConfig) -> tuple[VisTrackNet, list[dict]]:
    """Train on random key/reference frame pairs; deterministic given the seed."""
    if not dataset:
        raise ConfigError("training dataset is empty")
    torch.manual_seed(config.seed)
    net = VisTrackNet(
        num_classes=config.num_classes,
        embed_dim=config.embed_dim,
        mask_channels=config.mask_channels,
    )
    rng = np.random.default_rng(config.seed)

    frames, assignments, masks = [], [], []
    for sample in dataset:
        height, width = sample.size
        frames.append([torch.from_numpy(f.astype(np.float32)) for f in sample.frames])
        assignments.append([assignment_for_frame(anns, height, width) for anns in sample.annotations])
        masks.append([frame_gt_masks(sample, t) for t in range(sample.n_frames)])

    optimizer = torch.optim.SGD(
        net.parameters(), lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay
    )

    def lr_at(epoch: int, step: int) -> float:
        lr = config.lr * config.lr_gamma ** sum(1 for m in config.lr_milestones if epoch >= m)
        if step < config.warmup_steps:
            lr *= (step + 1) / config.warmup_steps
        return lr

    log: list[dict] = []
    step = 0
    net.train()
    for epoch in range(config.epochs):
        pairs = [(vi, t) for vi, sample in enumerate(dataset) for t in range(sample.n_frames)]
        order = rng.permutation(len(pairs))
        for pi in order.tolist():
            vi, t_key = pairs[pi]
            n = dataset[vi].n_frames
            lo = max(0, t_key - config.ref_radius)
            hi = min(n - 1, t_key + config.ref_radius)
            choices = [t for t in range(lo, hi + 1) if t != t_key]
            t_ref = int(choices[rng.integers(len(choices))])

            out_key = net(frames[vi][t_key])
            out_ref = net(frames[vi][t_ref])
            total, parts = overall_loss(
                out_key,
                out_ref,
                assignments[vi][t_key],
                assignments[vi][t_ref],
                masks[vi][t_key],
                masks[vi][t_ref],
                config,
                rng,
            )
            if not np.isfinite(parts["total"]):
                raise TrainingDiverged(
                    f"non-finite loss at step {step} (video {dataset[vi].video_id}, "
                    f"frames {t_key}/{t_ref}): {parts}"
                )
            for group in optimizer.param_groups:
                group["lr"] = lr_at(epoch, step)
            optimizer.zero_grad()
            total.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
            optimizer.step()
            log.append({"step": step, "lr": optimizer.param_groups[0]["lr"], **parts})
            step += 1
    net.eval()
    return net, log


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(net: VisTrackNet, path: Path, extra: Optional[dict] = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "arch": net.arch, "extra": extra or {}}
    arrays = {f"param.{k}": v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    np.savez_compressed(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: Path) -> tuple[VisTrackNet, dict]:
    with np.load(path) as data:
        if "__meta__" not in data:
            raise ConfigError(f"{path}: not a checkpoint (missing metadata)")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        net = VisTrackNet(**meta["arch"])
        state = {k[len("param.") :]: torch.from_numpy(data[k]) for k in data.files if k.startswith("param.")}
    net.load_state_dict(state)
    net.eval()
    return net, meta


def train_config_as_dict(config: TrainConfig) -> dict:
    return asdict(config)
