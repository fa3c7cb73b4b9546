"""Command-line surface: generate-data, train, infer, eval, plot.

All commands read one declarative config file (YAML or JSON) with one
section per command; flags override file values and the fully resolved
configuration is echoed into the output directory. Exit codes: 0 success,
1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import datagen, inference, metrics
from .datagen import GenConfig
from .errors import ConfigError, FormatError, TrainingDiverged
from .model import TrainConfig

OUTPUT_ROOT_ENV = "VISTRACK_OUTPUT_ROOT"
LOG_COLUMNS = ("step", "condinst", "bi_track", "consistency", "total")


@dataclasses.dataclass
class InferConfig:
    score_thresh: float = 0.03
    nms_thresh: float = 0.5
    top_t: int = 10
    w_iou: float = 0.5
    w_cls: float = 0.5
    momentum: float = 0.0
    use_hungarian: bool = False
    new_thresh: float = 0.5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    if p.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    elif p.suffix == ".json":
        data = json.loads(text)
    else:
        raise ConfigError(f"unsupported config format: {p.suffix}")
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping of sections")
    return data


def _apply_overrides(section: dict, overrides: list[str], section_name: str) -> dict:
    import yaml

    merged = dict(section)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        if "." in key:
            sec, key = key.split(".", 1)
            if sec != section_name:
                continue
        merged[key] = yaml.safe_load(value)
    return merged


def _build_dataclass(cls, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")
    coerced = {}
    for f in dataclasses.fields(cls):
        if f.name not in values:
            continue
        v = values[f.name]
        if isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        coerced[f.name] = v
    return cls(**coerced)


def _resolve_out(out: str) -> Path:
    path = Path(out)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _prepare_out_dir(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out_dir: Path, command: str, payload: dict) -> None:
    with open(out_dir / "config_used.json", "w") as fh:
        json.dump({"command": command, **payload}, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    section = _apply_overrides(_load_config_file(args.config).get("generate", {}), args.set, "generate")
    n_videos = int(section.pop("n_videos", 4))
    if n_videos < 0:
        raise ConfigError("n_videos must be nonnegative")
    gen_config = _build_dataclass(GenConfig, section, "generate")
    out = _prepare_out_dir(_resolve_out(args.out), args.force)

    video_ids = []
    for i in range(n_videos):
        sample = datagen.generate_video(gen_config, args.seed + i)
        datagen.save_video(sample, out)
        video_ids.append(sample.video_id)

    manifest = {"videos": video_ids, "seed": args.seed, "config": datagen.config_as_dict(gen_config)}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    _echo_config(out, "generate-data", {"seed": args.seed, "generate": datagen.config_as_dict(gen_config), "n_videos": n_videos})
    print(f"wrote {n_videos} videos to {out}")
    return 0


def cmd_train(args) -> int:
    from . import model as model_mod

    section = _apply_overrides(_load_config_file(args.config).get("train", {}), args.set, "train")
    if args.seed is not None:
        section["seed"] = args.seed
    train_config = _build_dataclass(TrainConfig, section, "train")
    dataset = datagen.load_dataset(Path(args.dataset))
    if not dataset:
        raise ConfigError(f"no videos found under {args.dataset}")
    out = _prepare_out_dir(_resolve_out(args.out), args.force)

    net, log = model_mod.train(dataset, train_config)
    model_mod.save_checkpoint(net, out / "checkpoint.npz", extra=model_mod.train_config_as_dict(train_config))
    with open(out / "loss_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow([row["step"]] + [f"{row[c]:.10g}" for c in LOG_COLUMNS[1:]])
    _echo_config(out, "train", {"train": model_mod.train_config_as_dict(train_config), "dataset": str(args.dataset)})
    final = log[-1]["total"] if log else float("nan")
    print(f"trained {train_config.epochs} epochs, {len(log)} steps, final loss {final:.6g}")
    return 0


def _track_to_prediction(track: inference.TrackPrediction, video_id: str) -> dict:
    segs = [None if m is None else datagen.encode_rle(m) for m in track.masks]
    return {
        "video_id": video_id,
        "category_id": track.category_id,
        "score": track.score,
        "segmentations": segs,
    }


def cmd_infer(args) -> int:
    from . import model as model_mod

    section = _apply_overrides(_load_config_file(args.config).get("infer", {}), args.set, "infer")
    infer_config = _build_dataclass(InferConfig, section, "infer")
    net, _ = model_mod.load_checkpoint(Path(args.checkpoint))
    dataset = datagen.load_dataset(Path(args.dataset))
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    weights = inference.AssocWeights(
        w_iou=infer_config.w_iou,
        w_cls=infer_config.w_cls,
        momentum=infer_config.momentum,
        use_hungarian=infer_config.use_hungarian,
    )
    entries = []
    dump = []
    for sample in dataset:
        tracker = inference.VideoTracker(sample.n_frames, weights, infer_config.new_thresh)
        frame_dump = []
        for t, frame in enumerate(sample.frames):
            outputs = net.predict(frame)
            dets = inference.decode_detections(
                outputs,
                score_thresh=infer_config.score_thresh,
                nms_thresh=infer_config.nms_thresh,
                top_t=infer_config.top_t,
            )
            assignments = tracker.update(t, dets)
            if args.dump:
                frame_dump.append(
                    {
                        "frame": t,
                        "detections": [
                            {
                                "box": list(dets[i].box),
                                "score": dets[i].score,
                                "category": dets[i].category,
                                "track_id": tid,
                                "embedding": dets[i].embedding.tolist(),
                            }
                            for i, tid in assignments
                        ],
                    }
                )
        for track in tracker.finalize():
            entries.append(_track_to_prediction(track, sample.video_id))
        if args.dump:
            dump.append({"video_id": sample.video_id, "frames": frame_dump})

    datagen.write_predictions(entries, out)
    if args.dump:
        with open(_resolve_out(args.dump), "w") as fh:
            json.dump(dump, fh, indent=1, sort_keys=True)
    print(f"wrote {len(entries)} predicted tracks to {out}")
    return 0


def _gt_eval_tracks(dataset: list[datagen.VideoSample]) -> list[metrics.EvalTrack]:
    tracks = []
    for sample in dataset:
        for gid, (category, masks) in sorted(datagen.instance_mask_series(sample).items()):
            if all(m is None for m in masks):
                continue
            tracks.append(metrics.EvalTrack(sample.video_id, category, masks, score=1.0, track_id=gid))
    return tracks


def _pred_eval_tracks(entries: list[dict]) -> list[metrics.EvalTrack]:
    tracks = []
    for i, entry in enumerate(entries):
        masks = datagen.prediction_masks(entry)
        tracks.append(
            metrics.EvalTrack(entry["video_id"], entry["category_id"], masks, score=entry["score"], track_id=i)
        )
    return tracks


def cmd_eval(args) -> int:
    entries = datagen.read_predictions(Path(args.predictions))
    dataset = datagen.load_dataset(Path(args.dataset))
    result = metrics.evaluate(_pred_eval_tracks(entries), _gt_eval_tracks(dataset))
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(result, fh, indent=1, sort_keys=True)
    print(
        "AP {AP:.4f}  AP50 {AP50:.4f}  AP75 {AP75:.4f}  AR1 {AR1:.4f}  AR10 {AR10:.4f}".format(**result)
    )
    return 0


def pca_project(embeddings: np.ndarray) -> np.ndarray:
    """Project row vectors onto their top two principal components."""
    x = np.asarray(embeddings, dtype=np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    comps = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros((2 - vt.shape[0], vt.shape[1]))])
    return x @ comps.T


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = _prepare_out_dir(_resolve_out(args.out), args.force)
    written = []
    if args.log:
        rows = []
        with open(args.log) as fh:
            reader = csv.DictReader(fh)
            rows = [row for row in reader]
        fig, ax = plt.subplots(figsize=(7, 4))
        if rows:
            steps = [int(r["step"]) for r in rows]
            for col in LOG_COLUMNS[1:]:
                ax.plot(steps, [float(r[col]) for r in rows], label=col)
            ax.legend()
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        fig.savefig(out / "loss_curve.png", dpi=100)
        plt.close(fig)
        written.append("loss_curve.png")
    if args.dump:
        with open(args.dump) as fh:
            dump = json.load(fh)
        embeddings, track_ids = [], []
        for video in dump:
            for frame in video["frames"]:
                for det in frame["detections"]:
                    embeddings.append(det["embedding"])
                    track_ids.append(det["track_id"])
        fig, ax = plt.subplots(figsize=(5, 5))
        if embeddings:
            xy = pca_project(np.asarray(embeddings))
            ax.scatter(xy[:, 0], xy[:, 1], c=track_ids, cmap="tab10", s=12)
        ax.set_xlabel("component 1")
        ax.set_ylabel("component 2")
        fig.savefig(out / "embeddings.png", dpi=100)
        plt.close(fig)
        written.append("embeddings.png")
    if not written:
        raise ConfigError("plot requires --log and/or --dump")
    print(f"wrote {', '.join(written)} to {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="vistrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML/JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--force", action="store_true")

    p = sub.add_parser("generate-data")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump", default=None, help="optional per-frame detection dump (JSON)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot")
    common(p)
    p.add_argument("--log", default=None)
    p.add_argument("--dump", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
