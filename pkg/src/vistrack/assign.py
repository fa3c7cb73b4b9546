"""Dense location grids and positive-sample label assignment.

Assignment follows the anchor-free convention: a grid location is a
positive sample of a box when it falls strictly inside it and the largest
of its four boundary distances lies within the level's size range; among
several qualifying boxes the one with minimal area wins (equal areas break
toward the lower instance id, so assignment is order-free).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import InstanceAnn
from .errors import ShapeError

FPN_STRIDES = (8, 16, 32)
STRIDE_LEVELS = {8: 3, 16: 4, 32: 5}

# (lower, upper] bounds on max(l, t, r, b) per pyramid level, in pixels.
DEFAULT_SIZE_RANGES = ((0.0, 64.0), (64.0, 128.0), (128.0, float("inf")))


@dataclass(frozen=True)
class LocationGrid:
    level: int
    stride: int
    centers: np.ndarray  # [h, w, 2] of image-space (x, y)

    @property
    def shape(self) -> tuple[int, int]:
        return self.centers.shape[0], self.centers.shape[1]


def make_locations(h: int, w: int, stride: int, level: int | None = None) -> LocationGrid:
    """Grid of cell centers: (floor(stride/2) + j*stride, floor(stride/2) + i*stride)."""
    half = stride // 2
    xs = half + np.arange(w, dtype=np.float64) * stride
    ys = half + np.arange(h, dtype=np.float64) * stride
    centers = np.stack(np.meshgrid(xs, ys), axis=-1)  # [h, w, 2] -> (x, y)
    if level is None:
        level = STRIDE_LEVELS.get(stride, 0)
    return LocationGrid(level=level, stride=stride, centers=centers)


def grids_for_image(height: int, width: int, strides: tuple[int, ...] = FPN_STRIDES) -> list[LocationGrid]:
    return [make_locations(height // s, width // s, s) for s in strides]


@dataclass
class LevelAssignment:
    """Per-location training targets for one pyramid level."""

    grid: LocationGrid
    class_target: np.ndarray      # [h, w] int64, 0 = background
    box_target: np.ndarray        # [h, w, 4] float (l, t, r, b) distances
    centerness_target: np.ndarray  # [h, w] float in [0, 1]
    instance_id: np.ndarray       # [h, w] int64, -1 = none


@dataclass
class Assignment:
    levels: list[LevelAssignment]

    def level_for_stride(self, stride: int) -> LevelAssignment:
        for lvl in self.levels:
            if lvl.grid.stride == stride:
                return lvl
        raise ShapeError(f"no assignment level with stride {stride}")

    def positive_locations(self) -> list[tuple[float, float, int, float]]:
        """All positives as (x, y, instance_id, centerness), level-major order."""
        out = []
        for lvl in self.levels:
            ii, jj = np.nonzero(lvl.instance_id >= 0)
            for i, j in zip(ii.tolist(), jj.tolist()):
                x, y = lvl.grid.centers[i, j]
                out.append((float(x), float(y), int(lvl.instance_id[i, j]), float(lvl.centerness_target[i, j])))
        return out


def assign_targets(
    grids: list[LocationGrid],
    anns: list[InstanceAnn],
    size_ranges: tuple[tuple[float, float], ...] = DEFAULT_SIZE_RANGES,
) -> Assignment:
    """Assign class/box/centerness/identity targets on every grid.

    Only visible annotations participate. Boxes are half-open pixel
    rectangles, so a location is inside iff all four distances are
    strictly positive.
    """
    if len(grids) != len(size_ranges):
        raise ShapeError("one size range per grid level is required")

    visible = [a for a in anns if a.visible]
    boxes = np.asarray([a.box for a in visible], dtype=np.float64).reshape(len(visible), 4)
    ids = np.asarray([a.instance_id for a in visible], dtype=np.int64)
    cats = np.asarray([a.category_id for a in visible], dtype=np.int64)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1]) if len(visible) else np.zeros(0)
    order = np.lexsort((ids, areas))  # ascending area, ties by lower id

    levels = []
    for grid, (lo, hi) in zip(grids, size_ranges):
        h, w = grid.shape
        cls = np.zeros((h, w), dtype=np.int64)
        box_t = np.zeros((h, w, 4), dtype=np.float64)
        ctr = np.zeros((h, w), dtype=np.float64)
        inst = np.full((h, w), -1, dtype=np.int64)
        taken = np.zeros((h, w), dtype=bool)
        cx = grid.centers[..., 0]
        cy = grid.centers[..., 1]
        for bi in order:
            x1, y1, x2, y2 = boxes[bi]
            l = cx - x1
            t = cy - y1
            r = x2 - cx
            b = y2 - cy
            ltrb = np.stack([l, t, r, b], axis=-1)
            inside = ltrb.min(axis=-1) > 0
            maxd = ltrb.max(axis=-1)
            ok = inside & (maxd > lo) & (maxd <= hi) & ~taken
            if not ok.any():
                continue
            cls[ok] = cats[bi]
            inst[ok] = ids[bi]
            box_t[ok] = ltrb[ok]
            lr = np.minimum(l, r) / np.maximum(l, r)
            tb = np.minimum(t, b) / np.maximum(t, b)
            ctr[ok] = np.sqrt(lr[ok] * tb[ok])
            taken |= ok
        levels.append(LevelAssignment(grid, cls, box_t, ctr, inst))
    return Assignment(levels=levels)


def assignment_for_frame(
    anns: list[InstanceAnn],
    height: int,
    width: int,
    size_ranges: tuple[tuple[float, float], ...] = DEFAULT_SIZE_RANGES,
) -> Assignment:
    return assign_targets(grids_for_image(height, width), anns, size_ranges)


def relative_coords(center: tuple[float, float], grid: LocationGrid, normalizer: float) -> np.ndarray:
    """Map of normalized displacements from ``center`` to every grid cell.

    Channel 0 holds (x' - x) / normalizer, channel 1 holds (y' - y) / normalizer.
    """
    if normalizer <= 0:
        raise ValueError(f"normalizer must be positive, got {normalizer}")
    x, y = center
    dx = (grid.centers[..., 0] - x) / normalizer
    dy = (grid.centers[..., 1] - y) / normalizer
    return np.stack([dx, dy], axis=0)


def image_diagonal(height: int, width: int) -> float:
    return float(np.hypot(height, width))
