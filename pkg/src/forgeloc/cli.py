"""Command-line entry points: forgegen, train, eval, attack, ablate, report.

Config comes from an optional JSON file plus repeatable `--set key.path=value`
overrides; every failure exits nonzero with a machine-readable error record
on stderr.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .ablation import AXES, run_ablation, write_ablation
from .attacks import curve_to_csv, default_attack_suite, robustness_curve
from .config import (ExperimentConfig, apply_overrides, config_from_dict,
                     config_to_dict, stable_seed)
from .errors import ForgeLocError
from .forgegen import read_dataset, write_dataset
from .train import (ensure_dataset, evaluate_checkpoint, load_checkpoint,
                    predict_masks, resolve)


def _load_experiment(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        with open(args.config) as f:
            data = json.load(f)
    else:
        data = config_to_dict(ExperimentConfig())
    data = apply_overrides(data, getattr(args, "set", None) or [])
    return config_from_dict(data)


def cmd_forgegen(args) -> int:
    cfg = _load_experiment(args)
    out = Path(args.out) if args.out else resolve(cfg.data_dir)
    samples = write_dataset(cfg.dataset, out)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    from .train import train
    cfg = _load_experiment(args)
    result = train(cfg)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    report = evaluate_checkpoint(args.checkpoint, split=args.split,
                                 data_dir=args.data_dir, out_dir=args.out,
                                 threshold=args.threshold)
    print(report.to_csv(), end="")
    return 0


def _checkpoint_predictor(ckpt_path):
    """predict_fn over numpy images sharing the evaluation noise stream."""
    model, cfg, _ = load_checkpoint(ckpt_path)

    def predict(images):
        batch = torch.stack([torch.from_numpy(np.asarray(im, dtype=np.float32))
                             for im in images])
        preds = predict_masks(model, batch, stable_seed(cfg.seed, "eval_noise"),
                              cfg.train.batch_size)
        return [p[0].numpy() for p in preds]

    return predict, cfg


def cmd_attack(args) -> int:
    predict, cfg = _checkpoint_predictor(args.checkpoint)
    data_dir = Path(args.data_dir) if args.data_dir else ensure_dataset(cfg)
    samples = read_dataset(data_dir, split=args.split)
    rows = robustness_curve(predict, samples, default_attack_suite(),
                            threshold=args.threshold,
                            attack_seed=stable_seed(cfg.seed, "attack"))
    csv_text = curve_to_csv(rows)
    out = Path(args.out) if args.out else resolve(cfg.output_dir) / "robustness.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    print(csv_text, end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_experiment(args)
    rows = run_ablation(cfg, args.axis, split=args.split)
    out_dir = Path(args.out) if args.out else resolve(cfg.output_dir) / "ablation"
    write_ablation(rows, out_dir, args.axis)
    from .ablation import ablation_to_csv
    print(ablation_to_csv(rows), end="")
    return 0


def cmd_report(args) -> int:
    with open(args.input) as f:
        data = json.load(f)
    if isinstance(data, list):  # ablation rows
        keys = [k for k in data[0]]
        widths = {k: max(len(k), *(len(f"{r[k]:.4f}" if isinstance(r[k], float)
                                       else str(r[k])) for r in data))
                  for k in keys}
        print("  ".join(k.ljust(widths[k]) for k in keys))
        for r in data:
            print("  ".join(
                (f"{r[k]:.4f}" if isinstance(r[k], float) else str(r[k])).ljust(widths[k])
                for k in keys))
    else:  # metric report
        print(f"threshold: {data['threshold']}")
        print(f"{'dataset':<12}{'n':>6}{'F1':>10}{'IoU':>10}")
        for d in data["datasets"]:
            print(f"{d['name']:<12}{d['n_images']:>6}{d['f1']:>10.4f}{d['iou']:>10.4f}")
        avg = data["weighted_avg"]
        total = sum(d["n_images"] for d in data["datasets"])
        print(f"{'weighted':<12}{total:>6}{avg['f1']:>10.4f}{avg['iou']:>10.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="forgeloc",
        description="Dual-branch image forgery localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")

    p = sub.add_parser("forgegen", help="emit the synthetic dataset")
    add_config_args(p)
    p.add_argument("--out", help="dataset directory (default: config data_dir)")
    p.set_defaults(func=cmd_forgegen)

    p = sub.add_parser("train", help="train a model")
    add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--data-dir")
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="robustness curves for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--data-dir")
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("ablate", help="run one ablation axis")
    add_config_args(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render a stored report")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ForgeLocError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    except OSError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
