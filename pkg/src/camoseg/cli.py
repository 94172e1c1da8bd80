"""Command line: synthesize data, train, adversarially finetune, evaluate, camouflage."""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .config import ConfigError, apply_config, parse_config_text
from .data import DatasetError, export_dataset, load_dataset, synth_dataset
from .metrics import evaluate_pairs
from .train import (Checkpoint, TrainingDivergedError, adversarial_train, evaluate,
                    pretrain_detector, synthesize)


class UserError(Exception):
    """Operator mistake (bad flags, missing files): reported on one line, exit 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def _new_run_dir(runs_root, command):
    runs_root = Path(runs_root)
    runs_root.mkdir(parents=True, exist_ok=True)
    n = 1
    while True:
        candidate = runs_root / f"{command}-{n:03d}"
        try:
            candidate.mkdir(exist_ok=False)
            return candidate
        except FileExistsError:
            n += 1


def _write_manifest(run_dir, command, args, *, seed=None, cfg_hash=None, outputs=()):
    manifest = {
        "command": command,
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in args.items()},
        "package_version": __version__,
        "seed": seed,
        "config_hash": cfg_hash,
        "outputs": [str(o) for o in outputs],
    }
    (Path(run_dir) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _resolve_configs(config_path, set_overrides, seed=None):
    mapping = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise UserError(f"config file not found: {path}")
        mapping.update(parse_config_text(path.read_text()))
    for item in set_overrides or ():
        if "=" not in item:
            raise UserError(f"--set expects KEY=VALUE, got '{item}'")
        extra = parse_config_text(item)
        mapping.update(extra)
    if seed is not None:
        mapping["train.seed"] = seed
    return apply_config(mapping)


def _load_checkpoint(path):
    p = Path(path)
    if not p.is_file():
        raise UserError(f"checkpoint not found: {p}")
    return Checkpoint.load(p)


def _plot_losses(log_path, out_path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = {}
    with open(log_path) as fh:
        for line in fh:
            rec = json.loads(line)
            curves.setdefault(rec["phase"], []).append(rec["total"])
    fig, ax = plt.subplots(figsize=(7, 4))
    for phase, values in curves.items():
        ax.plot(values, label=phase)
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def _plot_metrics(report, out_path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = ["mae", "f_measure", "e_measure", "s_measure"]
    values = [getattr(report, n) for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, values)
    ax.set_ylim(0, 1)
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.3f}", ha="center")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def _write_metrics(run_dir, report):
    (run_dir / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    csv_path = run_dir / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "mae", "f_measure", "e_measure", "s_measure"])
        for row in report.per_image:
            writer.writerow([row["id"], f"{row['mae']:.6f}", f"{row['f_measure']:.6f}",
                             f"{row['e_measure']:.6f}", f"{row['s_measure']:.6f}"])
        writer.writerow(["mean", f"{report.mae:.6f}", f"{report.f_measure:.6f}",
                         f"{report.e_measure:.6f}", f"{report.s_measure:.6f}"])
    return csv_path


def _cmd_synth(args):
    try:
        samples = synth_dataset(args.n, args.size, args.seed, args.contrast)
    except ValueError as exc:
        raise UserError(str(exc)) from exc
    out = export_dataset(samples, args.out)
    run_dir = _new_run_dir(args.runs, "synth")
    _write_manifest(run_dir, "synth",
                    {"n": args.n, "size": args.size, "seed": args.seed,
                     "contrast": args.contrast, "out": args.out},
                    seed=args.seed, outputs=[out])
    print(f"wrote {len(samples)} image/mask pairs to {out}")
    print(f"run dir: {run_dir}")
    return 0


def _cmd_train(args):
    model_cfg, train_cfg = _resolve_configs(args.config, args.set, args.seed)
    samples = load_dataset(args.data, args.split)
    run_dir = _new_run_dir(args.runs, "train")
    log_path = run_dir / "log.jsonl"
    ckpt = pretrain_detector(train_cfg, samples, model_cfg, log_path=log_path)
    ckpt_path = run_dir / "checkpoint.pt"
    ckpt.save(ckpt_path)
    outputs = [ckpt_path, log_path]
    if args.plots:
        plot_path = run_dir / "loss_curve.png"
        _plot_losses(log_path, plot_path)
        outputs.append(plot_path)
    _write_manifest(run_dir, "train",
                    {"data": args.data, "split": args.split, "config": args.config,
                     "set": list(args.set or ())},
                    seed=train_cfg.seed, cfg_hash=ckpt.config_hash, outputs=outputs)
    print(f"trained {ckpt.epoch} epochs on {len(samples)} samples")
    print(f"checkpoint: {ckpt_path}")
    print(f"run dir: {run_dir}")
    return 0


def _cmd_advtrain(args):
    model_cfg, train_cfg = _resolve_configs(args.config, args.set, args.seed)
    init = _load_checkpoint(args.init_ckpt)
    samples = load_dataset(args.data, args.split)
    run_dir = _new_run_dir(args.runs, "advtrain")
    log_path = run_dir / "log.jsonl"
    ckpt = adversarial_train(train_cfg, samples, init, log_path=log_path)
    ckpt_path = run_dir / "checkpoint.pt"
    ckpt.save(ckpt_path)
    outputs = [ckpt_path, log_path]
    if args.plots:
        plot_path = run_dir / "loss_curve.png"
        _plot_losses(log_path, plot_path)
        outputs.append(plot_path)
    _write_manifest(run_dir, "advtrain",
                    {"data": args.data, "split": args.split, "config": args.config,
                     "init_ckpt": args.init_ckpt, "set": list(args.set or ())},
                    seed=train_cfg.seed, cfg_hash=ckpt.config_hash, outputs=outputs)
    print(f"adversarial training finished after {ckpt.epoch} epochs")
    print(f"checkpoint: {ckpt_path}")
    print(f"run dir: {run_dir}")
    return 0


def _load_pred_gt_pairs(pred_dir, gt_dir):
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    if not pred_dir.is_dir() or not gt_dir.is_dir():
        raise UserError("--pred-dir and --gt-dir must be directories")
    pairs, ids = [], []
    gt_files = sorted((p for p in gt_dir.iterdir() if p.is_file()), key=lambda p: p.stem)
    if not gt_files:
        raise UserError(f"no ground-truth masks under {gt_dir}")
    for gt_path in gt_files:
        matches = sorted(pred_dir.glob(gt_path.stem + ".*"))
        if not matches:
            raise UserError(f"no prediction for '{gt_path.stem}' under {pred_dir}")
        pred = np.asarray(Image.open(matches[0]).convert("L"), dtype=np.float64) / 255.0
        gt = np.asarray(Image.open(gt_path).convert("L")) >= 128
        if pred.shape != gt.shape:
            raise UserError(f"size mismatch for '{gt_path.stem}': {pred.shape} vs {gt.shape}")
        pairs.append((pred, gt.astype(np.float64)))
        ids.append(gt_path.stem)
    return pairs, ids


def _cmd_eval(args):
    if (args.ckpt is None) == (args.pred_dir is None):
        raise UserError("pass exactly one of --ckpt (with --data) or --pred-dir (with --gt-dir)")
    if args.ckpt is not None:
        if args.data is None:
            raise UserError("--ckpt evaluation needs --data")
        ckpt = _load_checkpoint(args.ckpt)
        samples = load_dataset(args.data, args.split)
        report = evaluate(ckpt.detector, samples, batch_size=args.batch_size)
        source = {"ckpt": args.ckpt, "data": args.data, "split": args.split}
    else:
        if args.gt_dir is None:
            raise UserError("--pred-dir evaluation needs --gt-dir")
        pairs, ids = _load_pred_gt_pairs(args.pred_dir, args.gt_dir)
        report = evaluate_pairs(pairs, ids)
        source = {"pred_dir": args.pred_dir, "gt_dir": args.gt_dir}

    run_dir = _new_run_dir(args.runs, "eval")
    csv_path = _write_metrics(run_dir, report)
    outputs = [csv_path, run_dir / "metrics.json"]
    if args.plots:
        plot_path = run_dir / "metrics.png"
        _plot_metrics(report, plot_path)
        outputs.append(plot_path)
    _write_manifest(run_dir, "eval", source, outputs=outputs)
    print(f"evaluated {report.count} images")
    print(f"MAE={report.mae:.4f} F={report.f_measure:.4f} "
          f"E={report.e_measure:.4f} S={report.s_measure:.4f}")
    print(f"run dir: {run_dir}")
    return 0


def _cmd_camouflage(args):
    ckpt = _load_checkpoint(args.ckpt)
    if ckpt.generator is None:
        raise UserError(f"checkpoint {args.ckpt} has no generator (run advtrain first)")
    samples = load_dataset(args.data, args.split)
    run_dir = _new_run_dir(args.runs, "camouflage")
    out_dir = Path(args.out) if args.out else run_dir / "images"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for sid, img in synthesize(ckpt.generator, samples, batch_size=args.batch_size):
        arr = (img.permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
        path = out_dir / f"{sid}.png"
        Image.fromarray(arr).save(path)
        written.append(path)
    _write_manifest(run_dir, "camouflage",
                    {"ckpt": args.ckpt, "data": args.data, "out": str(out_dir)},
                    cfg_hash=ckpt.config_hash, outputs=written)
    print(f"wrote {len(written)} camouflaged images to {out_dir}")
    print(f"run dir: {run_dir}")
    return 0


def build_parser():
    parser = _Parser(prog="camoseg",
                     description="Camouflaged object segmentation: data synthesis, "
                                 "training, adversarial finetuning, evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--runs", default="runs", help="root directory for run outputs")

    p = sub.add_parser("synth", help="write a deterministic synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="number of image/mask pairs")
    p.add_argument("--size", type=int, required=True, help="square image size (>= 32)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contrast", type=float, default=0.25,
                   help="object/background mean intensity offset, in (0, 0.5]")
    p.add_argument("--out", required=True, help="dataset output directory")
    add_common(p)
    p.set_defaults(func=_cmd_synth)

    for name, helptext, func in (
            ("train", "pretrain the detector on a dataset", _cmd_train),
            ("advtrain", "adversarial generator/detector training", _cmd_advtrain)):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help="dataset root (images/ + masks/)")
        p.add_argument("--split", default=None, help="optional subdirectory of --data")
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable")
        p.add_argument("--seed", type=int, default=None, help="shortcut for train.seed")
        p.add_argument("--plots", action="store_true", help="write a loss curve png")
        if name == "advtrain":
            p.add_argument("--init-ckpt", required=True,
                           help="pretrained detector checkpoint to start from")
        add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a directory of predictions")
    p.add_argument("--ckpt", default=None, help="checkpoint to evaluate (with --data)")
    p.add_argument("--data", default=None, help="dataset root (images/ + masks/)")
    p.add_argument("--split", default=None)
    p.add_argument("--pred-dir", default=None, help="saved prediction maps (with --gt-dir)")
    p.add_argument("--gt-dir", default=None, help="ground-truth masks for --pred-dir")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--plots", action="store_true", help="write a metric bar chart")
    add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("camouflage", help="apply a trained generator to a dataset")
    p.add_argument("--ckpt", required=True, help="checkpoint holding a generator")
    p.add_argument("--data", required=True, help="dataset root (images/ + masks/)")
    p.add_argument("--split", default=None)
    p.add_argument("--out", default=None, help="output image directory (default: run dir)")
    p.add_argument("--batch-size", type=int, default=8)
    add_common(p)
    p.set_defaults(func=_cmd_camouflage)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UserError, ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
