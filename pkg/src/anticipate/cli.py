"""Command-line entry point: generate, train, eval, predict.

Exit codes: 0 success, 2 usage/config error, 1 runtime error.
`ANTICIPATE_THREADS` caps the eval inference worker pool.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import metrics as metrics_mod
from .fa_block import Variant
from .model import forward_video, load_checkpoint, StreamPredictor
from .optim import TrainConfig, train

VARIANT_NAMES = [v.value for v in Variant]

# Keys accepted in a `key = value` config file, with their parse functions.
_CONFIG_KEYS = {
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "seed": int,
    "variant": str,
    "dropout": float,
    "d": int,
    "n_objects": int,
    "loss_exponent": str,
    "precision": int,
    "clip_norm": float,
    "checkpoint_every": int,
    "data": str,
    "out": str,
    "threshold": float,
    "ap_mode": str,
}


class CliError(Exception):
    """Bad flags or config content; maps to exit code 2."""


def parse_config_file(path: str) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONFIG_KEYS:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](raw)
        except ValueError:
            raise CliError(f"{path}:{lineno}: bad value {raw!r} for {key}") from None
    return values


def _effective(defaults: dict, file_values: dict, cli_values: dict) -> dict:
    merged = dict(defaults)
    merged.update(file_values)
    merged.update({k: v for k, v in cli_values.items() if v is not None})
    return merged


def _echo_config(config: dict) -> None:
    for key in sorted(config):
        print(f"config: {key} = {config[key]}")


def _worker_count() -> int:
    raw = os.environ.get("ANTICIPATE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(f"ANTICIPATE_THREADS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    test_pos = round(args.pos * args.test_fraction)
    test_neg = round(args.neg * args.test_fraction)
    tau = args.tau if args.tau is not None else data_mod.default_tau(args.frames)
    videos = data_mod.generate_synthetic(
        args.pos, args.neg, s=args.frames, n=args.objects, d=args.feature_dim,
        fps=args.fps, seed=args.seed, difficulty=args.difficulty, tau=tau)
    positives = [v for v in videos if v.positive]
    negatives = [v for v in videos if not v.positive]

    manifest = data_mod.DatasetManifest(comments=[
        "synthetic feature dataset",
        f"pos={args.pos} neg={args.neg} frames={args.frames} objects={args.objects} "
        f"d={args.feature_dim} fps={args.fps} tau={tau} "
        f"seed={args.seed} difficulty={args.difficulty} test_fraction={args.test_fraction}",
    ])
    for group, n_test in ((positives, test_pos), (negatives, test_neg)):
        for i, sample in enumerate(group):
            name = f"{sample.video_id}.fab"
            data_mod.write_feature_file(sample, out / name)
            split = "test" if i < n_test else "train"
            manifest.paths(split).append(Path(name))
    data_mod.write_manifest(manifest, out / "manifest.txt")
    print(f"wrote {len(videos)} feature files and manifest to {out}")
    return 0


def cmd_train(args) -> int:
    defaults = {
        "epochs": 40, "batch_size": 10, "learning_rate": 1e-4, "seed": 0,
        "variant": "final", "dropout": 0.5, "d": None, "n_objects": None,
        "loss_exponent": "intent", "precision": 32, "clip_norm": None,
        "checkpoint_every": 10, "data": None, "out": None,
    }
    file_values = parse_config_file(args.config) if args.config else {}
    cli_values = {k: getattr(args, k) for k in defaults}
    cfg = _effective(defaults, file_values, cli_values)
    if cfg["data"] is None or cfg["out"] is None:
        raise CliError("train: --data and --out are required (flag or config file)")
    if cfg["variant"] not in VARIANT_NAMES:
        raise CliError(f"train: unknown variant {cfg['variant']!r}")
    _echo_config(cfg)

    data_dir = Path(cfg["data"])
    manifest_path = data_dir / "manifest.txt" if data_dir.is_dir() else data_dir
    if not manifest_path.exists():
        print(f"error: no manifest at {manifest_path}", file=sys.stderr)
        return 1
    manifest = data_mod.read_manifest(manifest_path)
    dataset = data_mod.load_split(manifest, "train", base_dir=manifest_path.parent)
    if not dataset:
        print(f"error: manifest {manifest_path} has no train split", file=sys.stderr)
        return 1
    sample = dataset[0]

    config = TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"], seed=cfg["seed"],
        variant=Variant(cfg["variant"]), dropout=cfg["dropout"],
        d=cfg["d"] if cfg["d"] is not None else sample.d,
        n_objects=cfg["n_objects"] if cfg["n_objects"] is not None else sample.max_objects,
        loss_exponent=cfg["loss_exponent"], precision=cfg["precision"],
        clip_norm=cfg["clip_norm"], checkpoint_every=cfg["checkpoint_every"],
    )
    params, history = train(dataset, config, out_dir=cfg["out"], log=print)
    census = params.census()
    print(f"parameters: {census['total']}")
    print(f"final mean loss: {history[-1].mean_loss:.6f}")
    print(f"checkpoint: {Path(cfg['out']) / 'checkpoint.bin'}")
    return 0


def _score_samples(samples, params) -> list[metrics_mod.VideoScore]:
    def score(sample):
        probs = forward_video(sample, params).data
        return metrics_mod.VideoScore(
            probs=np.clip(probs[:, 1], 0.0, 1.0), positive=sample.positive,
            tau=sample.tau, fps=sample.fps, video_id=sample.video_id)

    workers = _worker_count()
    if workers == 1:
        return [score(s) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(score, samples))


def cmd_eval(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    data_dir = Path(args.data)
    manifest_path = data_dir / "manifest.txt" if data_dir.is_dir() else data_dir
    manifest = data_mod.read_manifest(manifest_path)
    samples = data_mod.load_split(manifest, args.split, base_dir=manifest_path.parent)
    if not samples:
        print(f"error: manifest {manifest_path} has no {args.split} split", file=sys.stderr)
        return 1
    for s in samples:
        if s.d != meta["d"]:
            raise ValueError(f"{s.video_id}: feature dim {s.d} != checkpoint d {meta['d']}")

    scores = _score_samples(samples, params)
    curve = metrics_mod.sweep(scores, ap_mode=args.ap_mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_mod.export_pr_curve(curve, out / "pr_curve.csv")
    with open(out / "probabilities.csv", "w") as fh:
        fh.write("video_id,frame,probability\n")
        for s in scores:
            for t, p in enumerate(s.probs, start=1):
                fh.write(f"{s.video_id},{t},{repr(float(p))}\n")
    print(f"videos: {len(scores)}  variant: {meta['variant'].value}")
    print(f"mAP: {curve.map:.4f}")
    print(f"ATTA: {curve.atta:.4f} s")
    return 0


def cmd_predict(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    sample = data_mod.read_feature_file(args.file)
    if sample.d != meta["d"]:
        raise ValueError(f"feature dim {sample.d} != checkpoint d {meta['d']}")
    predictor = StreamPredictor(params)
    alarm = False
    print("frame,probability,alarm")
    for t in range(sample.n_frames):
        prob = predictor.feed(t + 1, sample.object_feats[t], sample.frame_feats[t],
                              int(sample.n_objects[t]))
        alarm = alarm or prob >= args.threshold
        print(f"{t + 1},{repr(prob)},{int(alarm)}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anticipate",
        description="Train and evaluate an accident-anticipation model on feature sequences.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic feature dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--pos", type=int, required=True, help="number of accident videos")
    g.add_argument("--neg", type=int, required=True, help="number of normal videos")
    g.add_argument("--frames", type=int, default=100)
    g.add_argument("--objects", type=int, default=9)
    g.add_argument("--feature-dim", type=int, default=32, dest="feature_dim")
    g.add_argument("--fps", type=float, default=20.0)
    g.add_argument("--tau", type=int, default=None,
                   help="accident frame for positives (default: last tenth boundary)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--difficulty", type=float, default=1.0)
    g.add_argument("--test-fraction", type=float, default=0.0, dest="test_fraction")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset manifest")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--data", help="dataset directory or manifest path")
    t.add_argument("--out", help="output directory for checkpoints and logs")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--learning-rate", type=float, dest="learning_rate")
    t.add_argument("--variant", choices=VARIANT_NAMES)
    t.add_argument("--seed", type=int)
    t.add_argument("--dropout", type=float)
    t.add_argument("--d", type=int, help="feature dimension (default: from data)")
    t.add_argument("--n-objects", type=int, dest="n_objects")
    t.add_argument("--loss-exponent", choices=["intent", "intent-frames", "literal"],
                   dest="loss_exponent")
    t.add_argument("--precision", type=int, choices=[32, 64])
    t.add_argument("--clip-norm", type=float, dest="clip_norm")
    t.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="compute mAP/ATTA for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--out", default=".")
    e.add_argument("--ap-mode", choices=["interp", "trapezoid"], default="interp",
                   dest="ap_mode")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="stream per-frame probabilities for one file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--file", required=True)
    p.add_argument("--threshold", type=float, default=0.8)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
