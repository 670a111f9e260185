"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 runtime or numeric error. Verbosity
is controlled by the ``GMRW_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from gmrw.core import GMRWError
from gmrw.data import generate_sprite_clip, load_frame_directory, save_frames
from gmrw.metrics import evaluate, sample_queries_strided
from gmrw.model import load_checkpoint
from gmrw.tracker import TrackerConfig, pair_motion, track
from gmrw.train import RunConfig, train
from gmrw.trackio import read_tracks, write_tracks
from gmrw.viz import flow_to_color

log = logging.getLogger("gmrw")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} does not exist")
        try:
            config = RunConfig.load(path)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config {path}: {exc}") from exc
    else:
        config = RunConfig()
    if getattr(args, "seed", None) is not None:
        config.optimizer = replace(config.optimizer, seed=args.seed)
        config.data = replace(config.data, seed=args.seed)
    return config


def _require_file(path, what):
    if path is None or not Path(path).is_file():
        raise UsageError(f"{what} {path} does not exist")


def cmd_train(args) -> int:
    config = _load_config(args)
    if args.steps is not None:
        config.optimizer = replace(config.optimizer, steps=args.steps)
    if args.no_label_warp:
        config.augment = replace(config.augment, label_warp=False)
    if args.no_smoothness:
        config.objective = replace(config.objective, use_smoothness=False)
    if args.train_stride is not None:
        config.augment = replace(config.augment, train_stride=args.train_stride)
    if args.eval_stride is not None:
        config.tracker = replace(config.tracker, eval_stride=args.eval_stride)
    out = Path(args.out) if args.out else None
    checkpoint = Path(args.checkpoint) if args.checkpoint else (out / "model.pt" if out else None)
    log_path = out / "loss.csv" if out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        config.paths = replace(config.paths, checkpoint=str(checkpoint), log=str(log_path))
        config.save(out / "config.yaml")
    train(config, checkpoint, log_path)
    print(f"checkpoint written to {checkpoint or config.paths.checkpoint}")
    return EXIT_OK


def cmd_track(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.queries, "queries file")
    config = _load_config(args)
    model, _ = load_checkpoint(args.checkpoint, config.model if args.config else None)
    clip = load_frame_directory(args.frames)
    queries, size = read_tracks(args.queries, queries_only=True)
    if size != (clip.height, clip.width):
        raise GMRWError(f"queries are for {size[0]}x{size[1]} frames, clip is {clip.height}x{clip.width}")
    mode = args.mode or config.tracker.mode
    stride = args.stride if args.stride is not None else (
        config.tracker.eval_stride if args.config and config.tracker.mode == mode else None)
    tracker_cfg = replace(config.tracker, mode=mode, eval_stride=stride)
    tracks = track(clip, queries.query_points(), model, tracker_cfg, ids=queries.ids)
    write_tracks(args.out, tracks, (clip.height, clip.width))
    print(f"{len(tracks)} tracks ({mode}, stride {tracker_cfg.stride}) written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _require_file(args.pred, "prediction file")
    _require_file(args.gt, "ground-truth file")
    config = _load_config(args)
    pred, pred_size = read_tracks(args.pred)
    gt, gt_size = read_tracks(args.gt)
    if pred_size != gt_size:
        raise GMRWError(f"frame size mismatch: predictions {pred_size}, ground truth {gt_size}")
    report = evaluate(pred, gt, gt_size, config.metrics)
    text = json.dumps(report.to_dict(), indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(report.summary())
    return EXIT_OK


def cmd_flowviz(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    model, _ = load_checkpoint(args.checkpoint)
    clip = load_frame_directory(args.frames)
    a, b = args.pair
    if not (0 <= a < clip.num_frames and 0 <= b < clip.num_frames):
        raise UsageError(f"frame pair {a},{b} outside clip of {clip.num_frames} frames")
    fwd, _ = pair_motion(clip.frames[a], clip.frames[b], model, args.stride)
    image = flow_to_color(fwd.as_image())
    s = fwd.grid.stride
    image = np.repeat(np.repeat(image, s, axis=0), s, axis=1)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(args.out)
    print(f"flow {a}->{b} rendered to {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    config = _load_config(args)
    scene = config.data
    if args.num_frames is not None:
        scene = replace(scene, num_frames=args.num_frames)
    if args.seed is not None:
        scene = replace(scene, seed=args.seed)
    sample = generate_sprite_clip(scene)
    out = Path(args.out)
    save_frames(sample.clip, out / "frames")
    gt = sample_queries_strided(sample.gt, config.metrics.query_stride)
    write_tracks(out / "gt.jsonl", gt, (sample.clip.height, sample.clip.width))
    print(f"{sample.clip.num_frames} frames and {len(gt)} ground-truth queries written to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    """Train and score the ablation ladder: CRW, + label warping, + smoothness, + train stride 2."""
    from gmrw.pipeline import evaluate_sprite_suite

    base = _load_config(args)
    if args.steps is not None:
        base.optimizer = replace(base.optimizer, steps=args.steps)
    rows = [
        ("CRW", dict(label_warp=False), dict(use_smoothness=False), 4),
        ("+ Label Warping", dict(label_warp=True), dict(use_smoothness=False), 4),
        ("+ Smoothness loss", dict(label_warp=True), dict(use_smoothness=True), 4),
        ("+ Train stride s=2", dict(label_warp=True), dict(use_smoothness=True), 2),
    ]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = replace(base.data, num_frames=args.eval_frames)
    seeds = range(args.eval_seed, args.eval_seed + args.eval_clips)
    lines = ["variant\tAJ\tdelta_avg\tOA"]
    for name, aug, obj, train_stride in rows:
        cfg = RunConfig.from_dict(base.to_dict())
        cfg.augment = replace(cfg.augment, train_stride=train_stride, **aug)
        cfg.objective = replace(cfg.objective, **obj)
        tag = name.strip("+ ").lower().replace(" ", "_").replace("=", "")
        model = train(cfg, out / f"{tag}.pt", out / f"{tag}.csv")
        result = evaluate_sprite_suite(model, scene, seeds, cfg.tracker, cfg.metrics)
        r = result.model
        lines.append(f"{name}\t{r.aj:.4f}\t{r.delta_avg:.4f}\t{r.oa:.4f}")
        print(lines[-1])
    (out / "ablation.tsv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gmrw", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--config", metavar="PATH", help="YAML run configuration")
        if seed:
            p.add_argument("--seed", type=int, help="override optimizer and data seeds")

    p = sub.add_parser("train", help="self-supervised training on generated sprite clips")
    common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--no-label-warp", action="store_true", help="share one crop for both directions")
    p.add_argument("--no-smoothness", action="store_true")
    p.add_argument("--train-stride", type=int, choices=(1, 2, 4))
    p.add_argument("--eval-stride", type=int, choices=(1, 2, 4))
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--out", metavar="PATH", help="run directory for checkpoint, loss log and config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="track query points through a frame directory")
    common(p, seed=False)
    p.add_argument("--checkpoint", metavar="PATH", required=True)
    p.add_argument("--frames", metavar="DIR", required=True)
    p.add_argument("--queries", metavar="PATH", required=True)
    p.add_argument("--mode", choices=("chained", "direct"))
    p.add_argument("--stride", "--eval-stride", dest="stride", type=int, choices=(1, 2, 4))
    p.add_argument("--out", metavar="PATH", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a track file against ground truth")
    common(p, seed=False)
    p.add_argument("--pred", metavar="PATH", required=True)
    p.add_argument("--gt", metavar="PATH", required=True)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flowviz", help="render expected flow between two frames")
    p.add_argument("--checkpoint", metavar="PATH", required=True)
    p.add_argument("--frames", metavar="DIR", required=True)
    p.add_argument("--pair", type=int, nargs=2, default=(0, 1), metavar=("A", "B"))
    p.add_argument("--stride", type=int, choices=(1, 2, 4), default=4)
    p.add_argument("--out", metavar="PATH", required=True)
    p.set_defaults(func=cmd_flowviz)

    p = sub.add_parser("generate", help="write a synthetic sprite clip and its ground truth")
    common(p)
    p.add_argument("--num-frames", type=int)
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ablate", help="train and score the ablation ladder")
    common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-clips", type=int, default=8)
    p.add_argument("--eval-frames", type=int, default=10)
    p.add_argument("--eval-seed", type=int, default=10_000)
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GMRW_LOG_LEVEL", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gmrw: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GMRWError, FloatingPointError, OSError, ValueError) as exc:
        print(f"gmrw: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
