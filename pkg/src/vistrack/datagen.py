"""Deterministic synthetic moving-shape videos with instance annotations.

Each video contains a handful of colored shapes (circle, square, triangle)
that translate with constant velocity and reflect off the frame borders.
Overlaps are resolved by a fixed per-video depth order, so occlusion ground
truth is exact. All randomness flows through one seeded generator, which
makes :func:`generate_video` a pure function of ``(config, seed)``.

The module also owns the on-disk formats: per-video directories with PNG
frames and an ``annotations.json``, plus the prediction JSON used by the
inference and evaluation commands.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError

CATEGORY_NAMES = {1: "circle", 2: "square", 3: "triangle"}
CATEGORY_IDS = {name: cid for cid, name in CATEGORY_NAMES.items()}

FRAME_PATTERN = "frame_{:05d}.png"
ANNOTATION_FILE = "annotations.json"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceSpec:
    """A fully pinned-down instance, used to script exact scenes in tests.

    ``t_exit`` is exclusive; ``None`` means the instance stays until the
    last frame. ``size`` is the circumradius of the shape in pixels.
    """

    shape: str
    center: tuple[float, float]
    velocity: tuple[float, float]
    size: float
    t_enter: int = 0
    t_exit: Optional[int] = None
    color: Optional[tuple[int, int, int]] = None


@dataclass(frozen=True)
class GenConfig:
    """Parameters of the synthetic video generator."""

    n_frames: int = 8
    height: int = 96
    width: int = 96
    n_instances: int = 2
    categories: tuple[int, ...] = (1, 2, 3)
    velocity_range: tuple[float, float] = (2.0, 6.0)
    size_range: tuple[float, float] = (12.0, 18.0)
    color_mode: str = "instance"  # "instance" or "category"
    enter_exit_prob: float = 0.0
    # Draw order, far to near; instances later in the list occlude earlier
    # ones. Defaults to index order.
    depth_order: Optional[tuple[int, ...]] = None
    instances: Optional[tuple[InstanceSpec, ...]] = None

    def __post_init__(self) -> None:
        if not 2 <= self.n_frames <= 64:
            raise ConfigError(f"n_frames must be in [2, 64], got {self.n_frames}")
        for name, value in (("height", self.height), ("width", self.width)):
            if not 64 <= value <= 512:
                raise ConfigError(f"{name} must be in [64, 512], got {value}")
        if not 1 <= self.n_instances <= 6:
            raise ConfigError(f"n_instances must be in [1, 6], got {self.n_instances}")
        if not self.categories or any(c not in CATEGORY_NAMES for c in self.categories):
            raise ConfigError(f"categories must be a nonempty subset of {sorted(CATEGORY_NAMES)}")
        vmin, vmax = self.velocity_range
        if vmin < 0 or vmax < vmin:
            raise ConfigError(f"invalid velocity_range {self.velocity_range}")
        smin, smax = self.size_range
        if smin < 2 or smax < smin or smax > min(self.height, self.width) / 2:
            raise ConfigError(f"invalid size_range {self.size_range}")
        if self.color_mode not in ("instance", "category"):
            raise ConfigError(f"unknown color_mode {self.color_mode!r}")
        if not 0.0 <= self.enter_exit_prob <= 1.0:
            raise ConfigError(f"enter_exit_prob must be in [0, 1], got {self.enter_exit_prob}")
        if self.depth_order is not None and sorted(self.depth_order) != list(range(self.n_instances)):
            raise ConfigError("depth_order must be a permutation of instance indices")
        if self.instances is not None:
            if len(self.instances) != self.n_instances:
                raise ConfigError("instances must match n_instances when given")
            for spec in self.instances:
                if spec.shape not in CATEGORY_IDS:
                    raise ConfigError(f"unknown shape {spec.shape!r}")
                if spec.size <= 0:
                    raise ConfigError("instance size must be positive")
                if not 0 <= spec.t_enter < self.n_frames:
                    raise ConfigError("t_enter outside video")
                if spec.t_exit is not None and not spec.t_enter < spec.t_exit <= self.n_frames:
                    raise ConfigError("t_exit must be in (t_enter, n_frames]")


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class InstanceAnn:
    """Per-frame annotation of one instance.

    ``visible`` is false iff the (post-occlusion) mask is all zeros, in
    which case ``box`` is None. Boxes are half-open pixel rectangles
    ``(x1, y1, x2, y2)`` with ``x1 < x2`` and ``y1 < y2``.
    """

    instance_id: int
    category_id: int
    mask: np.ndarray
    box: Optional[tuple[int, int, int, int]]
    visible: bool


@dataclass
class VideoSample:
    """One video: frames as float arrays [3, H, W] in [0, 1] plus annotations."""

    video_id: str
    frames: list[np.ndarray]
    annotations: list[list[InstanceAnn]]

    @property
    def size(self) -> tuple[int, int]:
        return self.frames[0].shape[1], self.frames[0].shape[2]

    @property
    def n_frames(self) -> int:
        return len(self.frames)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def render_shape(shape: str, cx: float, cy: float, size: float, height: int, width: int) -> np.ndarray:
    """Hard binary rasterization of a shape on pixel centers (no anti-aliasing)."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx = xs - cx
    dy = ys - cy
    if shape == "circle":
        return dx * dx + dy * dy <= size * size
    if shape == "square":
        half = size / np.sqrt(2.0)
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if shape == "triangle":
        # equilateral triangle inscribed in the circumcircle, apex up
        ax, ay = cx, cy - size
        bx, by = cx - size * np.sqrt(3.0) / 2.0, cy + size / 2.0
        qx, qy = cx + size * np.sqrt(3.0) / 2.0, cy + size / 2.0
        d1 = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        d2 = (qx - bx) * (ys - by) - (qy - by) * (xs - bx)
        d3 = (ax - qx) * (ys - qy) - (ay - qy) * (xs - qx)
        return (d1 <= 0) & (d2 <= 0) & (d3 <= 0)
    raise ConfigError(f"unknown shape {shape!r}")


def _reflect(p: float, lo: float, hi: float) -> float:
    """Fold p into [lo, hi] with mirror reflection at both ends."""
    span = hi - lo
    if span <= 0:
        return lo
    m = np.mod(p - lo, 2.0 * span)
    return float(lo + span - abs(m - span))


def _instance_color(category_id: int, mode: str, rng: np.random.Generator) -> tuple[int, int, int]:
    if mode == "category":
        base = {1: 0.0, 2: 0.33, 3: 0.62}[category_id]
        hue = (base + rng.uniform(-0.04, 0.04)) % 1.0
    else:
        hue = rng.uniform(0.0, 1.0)
    sat = rng.uniform(0.75, 1.0)
    val = rng.uniform(0.7, 1.0)
    r, g, b = colorsys.hsv_to_rgb(hue, sat, val)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def _sample_specs(config: GenConfig, rng: np.random.Generator) -> list[InstanceSpec]:
    specs = []
    for _ in range(config.n_instances):
        category = int(rng.choice(np.asarray(config.categories)))
        shape = CATEGORY_NAMES[category]
        size = float(rng.uniform(*config.size_range))
        cx = float(rng.uniform(size, config.width - 1 - size))
        cy = float(rng.uniform(size, config.height - 1 - size))
        speed = float(rng.uniform(*config.velocity_range))
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
        t_enter, t_exit = 0, None
        if config.enter_exit_prob > 0 and rng.random() < config.enter_exit_prob:
            if rng.random() < 0.5:
                t_enter = int(rng.integers(1, config.n_frames))
            else:
                t_exit = int(rng.integers(1, config.n_frames))
        specs.append(
            InstanceSpec(
                shape=shape,
                center=(cx, cy),
                velocity=(speed * np.cos(angle), speed * np.sin(angle)),
                size=size,
                t_enter=t_enter,
                t_exit=t_exit,
            )
        )
    return specs


def tight_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Half-open bounding box of the nonzero pixels of a mask."""
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def generate_video(config: GenConfig, seed: int) -> VideoSample:
    """Generate one annotated video; bit-identical for equal (config, seed)."""
    rng = np.random.default_rng(seed)
    specs = list(config.instances) if config.instances is not None else _sample_specs(config, rng)
    colors = []
    for spec in specs:
        cid = CATEGORY_IDS[spec.shape]
        colors.append(spec.color if spec.color is not None else _instance_color(cid, config.color_mode, rng))
    depth = list(config.depth_order) if config.depth_order is not None else list(range(config.n_instances))

    h, w = config.height, config.width
    background = rng.integers(18, 42, size=(h, w, 3), dtype=np.uint8)

    frames: list[np.ndarray] = []
    annotations: list[list[InstanceAnn]] = []
    for t in range(config.n_frames):
        label = np.full((h, w), -1, dtype=np.int64)
        for k in depth:  # far to near; later paint wins contested pixels
            spec = specs[k]
            t_exit = spec.t_exit if spec.t_exit is not None else config.n_frames
            if not spec.t_enter <= t < t_exit:
                continue
            lo_x, hi_x = spec.size, w - 1 - spec.size
            lo_y, hi_y = spec.size, h - 1 - spec.size
            cx = _reflect(spec.center[0] + spec.velocity[0] * t, lo_x, hi_x)
            cy = _reflect(spec.center[1] + spec.velocity[1] * t, lo_y, hi_y)
            label[render_shape(spec.shape, cx, cy, spec.size, h, w)] = k

        image = background.copy()
        anns: list[InstanceAnn] = []
        for k, spec in enumerate(specs):
            mask = label == k
            visible = bool(mask.any())
            if visible:
                image[mask] = colors[k]
            anns.append(
                InstanceAnn(
                    instance_id=k + 1,
                    category_id=CATEGORY_IDS[spec.shape],
                    mask=mask,
                    box=tight_box(mask) if visible else None,
                    visible=visible,
                )
            )
        frames.append(image.transpose(2, 0, 1).astype(np.float32) / 255.0)
        annotations.append(anns)

    return VideoSample(video_id=f"video_{seed:08d}", frames=frames, annotations=annotations)


# ---------------------------------------------------------------------------
# run-length encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RLE:
    """Column-major run-length encoding starting with a (possibly zero) run of zeros."""

    counts: tuple[int, ...]
    size: tuple[int, int]  # (H, W)


def encode_rle(mask: np.ndarray) -> RLE:
    h, w = mask.shape
    flat = np.asarray(mask, dtype=bool).flatten(order="F")
    if flat.size == 0:
        return RLE(counts=(0,), size=(h, w))
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return RLE(counts=tuple(int(c) for c in counts), size=(h, w))


def decode_rle(rle: RLE) -> np.ndarray:
    h, w = rle.size
    total = sum(rle.counts)
    if total != h * w:
        raise FormatError(f"RLE counts sum to {total}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for count in rle.counts:
        if value:
            flat[pos : pos + count] = True
        pos += count
        value = not value
    return flat.reshape((h, w), order="F")


# ---------------------------------------------------------------------------
# dataset serialization
# ---------------------------------------------------------------------------


def save_video(sample: VideoSample, root: Path) -> Path:
    """Write one video directory: PNG frames plus annotations.json."""
    out = Path(root) / sample.video_id
    out.mkdir(parents=True, exist_ok=True)
    height, width = sample.size
    for t, frame in enumerate(sample.frames):
        image = np.round(frame * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(image, mode="RGB").save(out / FRAME_PATTERN.format(t))

    instances = []
    n_instances = max(len(anns) for anns in sample.annotations)
    for idx in range(n_instances):
        per_frame = []
        inst_id = category = None
        for t, anns in enumerate(sample.annotations):
            ann = anns[idx]
            inst_id, category = ann.instance_id, ann.category_id
            if ann.visible:
                rle = encode_rle(ann.mask)
                per_frame.append({"t": t, "rle": {"counts": list(rle.counts), "size": list(rle.size)}, "box": list(ann.box)})
        instances.append({"instance_id": inst_id, "category_id": category, "frames": per_frame})

    payload = {
        "video_id": sample.video_id,
        "height": height,
        "width": width,
        "categories": [{"id": cid, "name": name} for cid, name in sorted(CATEGORY_NAMES.items())],
        "instances": instances,
    }
    with open(out / ANNOTATION_FILE, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    return out


def load_video(video_dir: Path) -> VideoSample:
    video_dir = Path(video_dir)
    ann_path = video_dir / ANNOTATION_FILE
    if not ann_path.is_file():
        raise FormatError(f"missing {ann_path}")
    with open(ann_path) as fh:
        payload = json.load(fh)
    height, width = payload["height"], payload["width"]

    frames = []
    t = 0
    while (video_dir / FRAME_PATTERN.format(t)).is_file():
        image = np.asarray(Image.open(video_dir / FRAME_PATTERN.format(t)).convert("RGB"))
        frames.append(image.transpose(2, 0, 1).astype(np.float32) / 255.0)
        t += 1
    if not frames:
        raise FormatError(f"no frames found in {video_dir}")

    annotations: list[list[InstanceAnn]] = [[] for _ in range(len(frames))]
    for inst in payload["instances"]:
        by_frame = {entry["t"]: entry for entry in inst["frames"]}
        for t in range(len(frames)):
            entry = by_frame.get(t)
            if entry is None:
                mask = np.zeros((height, width), dtype=bool)
                ann = InstanceAnn(inst["instance_id"], inst["category_id"], mask, None, False)
            else:
                mask = decode_rle(RLE(counts=tuple(entry["rle"]["counts"]), size=tuple(entry["rle"]["size"])))
                ann = InstanceAnn(inst["instance_id"], inst["category_id"], mask, tuple(entry["box"]), True)
            annotations[t].append(ann)
    return VideoSample(video_id=payload["video_id"], frames=frames, annotations=annotations)


def load_dataset(root: Path) -> list[VideoSample]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / ANNOTATION_FILE).is_file())
    return [load_video(d) for d in dirs]


def instance_mask_series(sample: VideoSample) -> dict[int, tuple[int, list[Optional[np.ndarray]]]]:
    """Per instance: (category_id, per-frame masks with None where invisible)."""
    series: dict[int, tuple[int, list[Optional[np.ndarray]]]] = {}
    n = sample.n_frames
    for t, anns in enumerate(sample.annotations):
        for ann in anns:
            if ann.instance_id not in series:
                series[ann.instance_id] = (ann.category_id, [None] * n)
            if ann.visible:
                series[ann.instance_id][1][t] = ann.mask
    return series


# ---------------------------------------------------------------------------
# prediction files
# ---------------------------------------------------------------------------


def write_predictions(entries: list[dict], path: Path) -> None:
    """Write the prediction JSON: a list of per-track records.

    Each record: {video_id, category_id, score, segmentations} where
    segmentations holds one RLE dict or null per frame.
    """
    serializable = []
    for entry in entries:
        segs = []
        for seg in entry["segmentations"]:
            if seg is None:
                segs.append(None)
            elif isinstance(seg, RLE):
                segs.append({"counts": list(seg.counts), "size": list(seg.size)})
            else:
                segs.append(seg)
        serializable.append(
            {
                "video_id": entry["video_id"],
                "category_id": int(entry["category_id"]),
                "score": float(entry["score"]),
                "segmentations": segs,
            }
        )
    with open(path, "w") as fh:
        json.dump(serializable, fh, indent=1, sort_keys=True)


def read_predictions(path: Path) -> list[dict]:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise FormatError(f"{path}: prediction file must be a JSON list")
    for i, entry in enumerate(data):
        missing = {"video_id", "category_id", "score", "segmentations"} - set(entry)
        if missing:
            raise FormatError(f"{path}: entry {i} missing keys {sorted(missing)}")
        for t, seg in enumerate(entry["segmentations"]):
            if seg is not None and ("counts" not in seg or "size" not in seg):
                raise FormatError(f"{path}: entry {i} frame {t} has a malformed RLE")
    return data


def prediction_masks(entry: dict) -> list[Optional[np.ndarray]]:
    masks: list[Optional[np.ndarray]] = []
    for seg in entry["segmentations"]:
        if seg is None:
            masks.append(None)
        else:
            masks.append(decode_rle(RLE(counts=tuple(seg["counts"]), size=tuple(seg["size"]))))
    return masks


def config_as_dict(config: GenConfig) -> dict:
    return asdict(config)
