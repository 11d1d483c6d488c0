"""Command line entry points.

Subcommands:
    generate  build a synthetic corpus directory from a config
    train     train a model on a corpus (optionally resuming)
    eval      compare a checkpoint against classical baselines, write CSV
    infer     run refine / complete / future on one sequence file
    study     completion quality versus frame-drop rate, write CSV

Every failure exits with status 1 and a single `error:` line on stderr.
"""

import argparse
import csv
import os
import sys
from dataclasses import replace

import torch
import yaml

from .config import AppConfig, load_config
from .corruption import CorruptionSpec, corrupt_sequence
from .errors import MotionFillError, ShapeMismatch
from .metrics import evaluate_sequence, mean_row, write_report_csv
from .model import MotionTransformer
from .pseq import load_corpus, load_sequence, save_corpus, save_sequence
from .synthgen import generate_corpus
from .tasks import (
    complete,
    frame_drop_study,
    median_smooth,
    nearest_fill,
    poses_to_sequence,
    predict_future,
    refine,
    savgol_smooth,
)
from .train import Trainer, build_model, load_checkpoint

STUDY_FIELDS = ("drop_frac", "mpjpe_model", "mpjpe_nearest", "mpjpe_savgol", "gain_model", "gain_savgol")


def _app_config(path) -> AppConfig:
    return load_config(path) if path else AppConfig()


def _check_skeleton(model, seq):
    if model.config.num_joints != seq.skeleton.num_rotations:
        raise ShapeMismatch(
            f"model expects {model.config.num_joints} rotations per frame, "
            f"sequence has {seq.skeleton.num_rotations}"
        )


def cmd_generate(args) -> int:
    cfg = _app_config(args.config)
    count = args.count if args.count is not None else cfg.num_sequences
    spec = cfg.generation if args.seed is None else replace(cfg.generation, seed=args.seed)
    corpus = generate_corpus(spec, count)
    save_corpus(args.out, corpus)
    print(
        f"wrote {len(corpus)} sequences "
        f"({len(corpus.train)}/{len(corpus.val)}/{len(corpus.test)} train/val/test) to {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.data)
    if args.resume:
        trainer = Trainer.restore(args.resume, corpus.train, log_path=args.log)
        print(f"resumed from {args.resume} at step {trainer.step_count}")
    else:
        cfg = _app_config(args.config)
        model = MotionTransformer(cfg.model, rng_seed=cfg.train.seed)
        trainer = Trainer(model, corpus.train, cfg.train, log_path=args.log)
    every = trainer.config.eval_every

    def progress(step, parts):
        if step % every == 0:
            print(f"step {step} loss {parts['total']:.5f}", flush=True)

    trainer.run(steps=args.steps, progress=progress)
    trainer.save(args.out)
    print(f"saved checkpoint at step {trainer.step_count} to {args.out}")
    return 0


def _smoothing_windows(n: int):
    return min(11, 2 * n - 1), min(9, 2 * n - 1)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = build_model(ckpt)
    sequences = getattr(load_corpus(args.data), args.split)
    if args.limit is not None:
        sequences = sequences[: args.limit]
    if not sequences:
        raise MotionFillError(f"split {args.split!r} of {args.data} is empty")
    # pose swaps need a batch dimension, so they are off in per-sequence eval
    base_spec = ckpt.train_config.corruption if ckpt.train_config else CorruptionSpec()
    spec = replace(base_spec, random_pose_frac=0.0)
    generator = torch.Generator().manual_seed(args.seed)

    rows = []
    for i, seq in enumerate(sequences):
        _check_skeleton(model, seq)
        corrupted, _ = corrupt_sequence(seq, spec, generator)
        gt = seq.joints()
        sg_win, med_win = _smoothing_windows(len(seq))
        filled = nearest_fill(corrupted)
        preds = {
            "model": complete(corrupted, model),
            "nearest_fill": filled,
            "savgol": savgol_smooth(filled, window=sg_win) if sg_win >= 3 else filled,
            "median": median_smooth(filled, window=med_win) if med_win >= 3 else filled,
        }
        for method, pred in preds.items():
            rows.append(evaluate_sequence(f"{args.split}_{i:04d}", method, pred.joints(), gt, seq.fps))

    methods = ("model", "nearest_fill", "savgol", "median")
    means = [mean_row([r for r in rows if r.method == m]) for m in methods]
    write_report_csv(args.report, rows + means)
    print(f"{'method':<14}{'mpjpe_mm':>10}{'pa_mm':>9}{'accel':>12}{'pck3d_%':>9}")
    for m in means:
        print(f"{m.method:<14}{m.mpjpe_mm:>10.2f}{m.pa_mpjpe_mm:>9.2f}{m.accel_err_mm_s2:>12.1f}{m.pck3d_pct:>9.2f}")
    print(f"wrote {len(rows) + len(means)} rows to {args.report}")
    return 0


def cmd_infer(args) -> int:
    model = build_model(load_checkpoint(args.ckpt))
    seq = load_sequence(args.input)
    _check_skeleton(model, seq)
    if args.task == "refine":
        out = refine(seq, model)
    elif args.task == "complete":
        out = complete(seq, model)
    else:
        if args.horizon < 1:
            raise MotionFillError("the future task needs --horizon of at least 1")
        poses = predict_future(seq, args.horizon, model, observed=args.observed)
        out = poses_to_sequence(poses, seq.skeleton, seq.fps)
    save_sequence(args.output, out)
    print(f"{args.task}: wrote {len(out)} frames to {args.output}")
    return 0


def cmd_study(args) -> int:
    model = build_model(load_checkpoint(args.ckpt))
    sequences = getattr(load_corpus(args.data), args.split)
    if args.limit is not None:
        sequences = sequences[: args.limit]
    if not sequences:
        raise MotionFillError(f"split {args.split!r} of {args.data} is empty")
    for seq in sequences:
        _check_skeleton(model, seq)
    try:
        fracs = [float(x) for x in args.drops.split(",") if x.strip()]
    except ValueError as exc:
        raise MotionFillError(f"bad --drops list: {exc}") from exc
    rows = frame_drop_study(sequences, model, fracs, torch.Generator().manual_seed(args.seed))

    tmp = f"{args.report}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=STUDY_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    os.replace(tmp, args.report)
    for row in rows:
        print(
            f"drop {row['drop_frac']:.2f}: model {row['mpjpe_model']:.2f}mm "
            f"nearest {row['mpjpe_nearest']:.2f}mm savgol {row['mpjpe_savgol']:.2f}mm "
            f"(gain {row['gain_model']:.3f} vs {row['gain_savgol']:.3f})"
        )
    print(f"wrote {len(rows)} rows to {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionfill", description="Pose sequence denoising and completion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic corpus directory")
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--out", required=True, help="corpus directory to create")
    p.add_argument("--count", type=int, help="override the corpus size")
    p.add_argument("--seed", type=int, help="override the generation seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on a corpus directory")
    p.add_argument("--config", help="YAML experiment config (ignored with --resume)")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int, help="train this many further steps instead of to max_steps")
    p.add_argument("--log", help="JSONL training log path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against baselines")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--report", required=True, help="CSV to write")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--limit", type=int, help="evaluate at most this many sequences")
    p.add_argument("--seed", type=int, default=0, help="corruption seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run one task on one .pseq file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", choices=("refine", "complete", "future"), required=True)
    p.add_argument("--input", required=True, help=".pseq file to read")
    p.add_argument("--output", required=True, help=".pseq file to write")
    p.add_argument("--horizon", type=int, default=8, help="frames to predict (future task)")
    p.add_argument("--observed", type=int, help="trailing frames to condition on (future task)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("study", help="completion error versus frame-drop rate")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--report", required=True, help="CSV to write")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--drops", default="0.1,0.25,0.5", help="comma-separated drop fractions")
    p.add_argument("--limit", type=int, help="use at most this many sequences")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_study)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MotionFillError, OSError, ValueError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
