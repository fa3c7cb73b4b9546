"""Mask feature fusion and the dynamic-filter mask head.

A per-instance parameter vector (169 values under defaults) parameterizes
three pointwise conv layers applied to the shared mask feature augmented
with two relative-coordinate channels:

    input (C_mask + 2) -> c1 -> ReLU -> c2 -> ReLU -> 1

The numpy forward/backward here serve as the reference path for tests and
inference; a batched torch forward covers training.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError

MASK_CHANNELS = 8
KERNEL_HIDDEN = (8, 8)


def kernel_length(mask_channels: int = MASK_CHANNELS, hidden: tuple[int, int] = KERNEL_HIDDEN) -> int:
    """Total parameter count of the three-layer head with coordinate input."""
    c_in = mask_channels + 2
    c1, c2 = hidden
    return c_in * c1 + c1 + c1 * c2 + c2 + c2 * 1 + 1


def split_kernel(
    theta: np.ndarray,
    mask_channels: int = MASK_CHANNELS,
    hidden: tuple[int, int] = KERNEL_HIDDEN,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Partition a flat parameter vector into (weight, bias) per layer.

    Order: layer-1 weights, layer-1 biases, layer-2 weights, layer-2
    biases, layer-3 weights, layer-3 bias.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    expected = kernel_length(mask_channels, hidden)
    if theta.size != expected:
        raise ShapeError(f"kernel vector has length {theta.size}, expected {expected}")
    c_in = mask_channels + 2
    c1, c2 = hidden
    sizes = [c_in * c1, c1, c1 * c2, c2, c2, 1]
    parts = np.split(theta, np.cumsum(sizes)[:-1])
    w1 = parts[0].reshape(c1, c_in)
    b1 = parts[1]
    w2 = parts[2].reshape(c2, c1)
    b2 = parts[3]
    w3 = parts[4].reshape(1, c2)
    b3 = parts[5]
    return [(w1, b1), (w2, b2), (w3, b3)]


def mask_head_forward(feat: np.ndarray, coords: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Apply the dynamic head at every pixel; returns logits [h, w]."""
    if feat.shape[1:] != coords.shape[1:]:
        raise ShapeError(f"feature {feat.shape} and coords {coords.shape} differ spatially")
    if coords.shape[0] != 2:
        raise ShapeError("coords must have exactly two channels")
    (w1, b1), (w2, b2), (w3, b3) = split_kernel(theta, mask_channels=feat.shape[0])
    h, w = feat.shape[1:]
    x = np.concatenate([feat, coords], axis=0).reshape(feat.shape[0] + 2, h * w).astype(np.float64)
    a1 = np.maximum(w1 @ x + b1[:, None], 0.0)
    a2 = np.maximum(w2 @ a1 + b2[:, None], 0.0)
    y = w3 @ a2 + b3[:, None]
    return y.reshape(h, w)


def mask_head_grad_theta(
    feat: np.ndarray, coords: np.ndarray, theta: np.ndarray, grad_out: np.ndarray
) -> np.ndarray:
    """Closed-form gradient of sum(grad_out * logits) w.r.t. the flat kernel."""
    (w1, b1), (w2, b2), (w3, _) = split_kernel(theta, mask_channels=feat.shape[0])
    h, w = feat.shape[1:]
    x = np.concatenate([feat, coords], axis=0).reshape(feat.shape[0] + 2, h * w).astype(np.float64)
    z1 = w1 @ x + b1[:, None]
    a1 = np.maximum(z1, 0.0)
    z2 = w2 @ a1 + b2[:, None]
    a2 = np.maximum(z2, 0.0)
    g = np.asarray(grad_out, dtype=np.float64).reshape(1, h * w)

    dw3 = (g * a2).sum(axis=1).reshape(1, -1)
    db3 = g.sum(axis=1)
    d2 = (w3.T @ g) * (z2 > 0)
    dw2 = d2 @ a1.T
    db2 = d2.sum(axis=1)
    d1 = (w2.T @ d2) * (z1 > 0)
    dw1 = d1 @ x.T
    db1 = d1.sum(axis=1)
    return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2, dw3.ravel(), db3])


def mask_heads_forward_torch(features: torch.Tensor, thetas: torch.Tensor) -> torch.Tensor:
    """Batched dynamic head: features [K, C_in, h, w], thetas [K, P] -> logits [K, h, w]."""
    k, c_in, h, w = features.shape
    mask_channels = c_in - 2
    c1, c2 = KERNEL_HIDDEN
    sizes = [c_in * c1, c1, c1 * c2, c2, c2, 1]
    if thetas.shape != (k, sum(sizes)):
        raise ShapeError(f"thetas shape {tuple(thetas.shape)} does not match features with {mask_channels} mask channels")
    w1, b1, w2, b2, w3, b3 = torch.split(thetas, sizes, dim=1)
    x = features.reshape(k, c_in, h * w)
    a1 = torch.relu(torch.bmm(w1.reshape(k, c1, c_in), x) + b1.unsqueeze(-1))
    a2 = torch.relu(torch.bmm(w2.reshape(k, c2, c1), a1) + b2.unsqueeze(-1))
    y = torch.bmm(w3.reshape(k, 1, c2), a2) + b3.unsqueeze(-1)
    return y.reshape(k, h, w)


def upsample_mask(logits: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinearly upsample logits to (height, width), then apply sigmoid."""
    hm, wm = logits.shape
    if height < hm or width < wm:
        raise ShapeError(f"target {height}x{width} smaller than source {hm}x{wm}")
    t = torch.from_numpy(np.ascontiguousarray(logits, dtype=np.float32))[None, None]
    up = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False)
    return torch.sigmoid(up)[0, 0].numpy().astype(np.float64)


class LevelFusion(nn.Module):
    """Shared per-level conv tower, bilinear upsampling to the finest level, sum.

    All convolutions are bias-free so a zero input level contributes
    nothing to the fused map.
    """

    def __init__(self, in_channels: int, out_channels: int, n_convs: int = 1, hidden_channels: int | None = None):
        super().__init__()
        hidden = hidden_channels if hidden_channels is not None else in_channels
        layers: list[nn.Module] = []
        c = in_channels
        for _ in range(n_convs - 1):
            layers.append(nn.Conv2d(c, hidden, 3, padding=1, bias=False))
            layers.append(nn.ReLU(inplace=True))
            c = hidden
        layers.append(nn.Conv2d(c, out_channels, 1, bias=False))
        self.tower = nn.Sequential(*layers)

    def project(self, x: torch.Tensor) -> torch.Tensor:
        return self.tower(x)

    def forward(self, p3: torch.Tensor, p4: torch.Tensor, p5: torch.Tensor) -> torch.Tensor:
        h, w = p3.shape[-2:]
        if p4.shape[-2:] != (h // 2, w // 2) or p5.shape[-2:] != (h // 4, w // 4):
            raise ShapeError(
                f"expected level sizes {(h, w)}, {(h // 2, w // 2)}, {(h // 4, w // 4)}; "
                f"got {tuple(p3.shape[-2:])}, {tuple(p4.shape[-2:])}, {tuple(p5.shape[-2:])}"
            )
        t3 = self.tower(p3)
        t4 = F.interpolate(self.tower(p4), size=(h, w), mode="bilinear", align_corners=False)
        t5 = F.interpolate(self.tower(p5), size=(h, w), mode="bilinear", align_corners=False)
        return t3 + t4 + t5
