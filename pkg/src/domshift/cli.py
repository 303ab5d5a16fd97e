"""Command-line entry point: ``domshift <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .camsim import DegradationConfig, degrade_set, make_paired_set
from .classify import (ClassifierTrainConfig, classifier_load, classifier_save, classifier_train, cyclical_schedule,
                       evaluate)
from .config import RunConfig
from .data import PairedImageSet, gen_shapes_dataset, scan_folder
from .errors import ConfigError, DataError, ShapeError, StageError, TrainingError
from .experiment import run_experiment, write_classifier_log
from .optim import ScheduleSpec
from .shiftnet import ShifterTrainConfig, shift_dataset, shifter_load, shifter_save, shifter_train

log = logging.getLogger("domshift")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors here exit with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _camera_from(path) -> DegradationConfig:
    if path is None:
        print("note: no --config given; using the default 'virtual Cozmo' camera profile")
        return DegradationConfig.virtual_cozmo()
    return RunConfig.load(path).camera()


def cmd_gen_data(args) -> int:
    ds = gen_shapes_dataset(args.out, classes=args.classes, per_class=args.per_class,
                            resolution=args.size, seed=args.seed)
    print(f"wrote {len(ds)} images at {args.size}x{args.size} to {args.out}")
    for name, count in ds.class_counts().items():
        print(f"  {name}: {count}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    camera = _camera_from(args.config)
    source = scan_folder(args.input)
    if args.paired:
        pairs = make_paired_set(source, camera, args.seed, args.out)
        print(f"wrote {len(pairs)} pairs under {args.out}/clean and {args.out}/low")
    else:
        out = degrade_set(source, camera, args.seed, args.out)
        print(f"wrote {len(out)} degraded images to {args.out}")
    return EXIT_OK


def cmd_train_shifter(args) -> int:
    pairs = PairedImageSet.from_dir(args.pairs)
    schedule = ScheduleSpec(kind="step-decay", base_lr=args.lr, decay_factor=args.decay_factor,
                            decay_every=args.decay_every)
    config = ShifterTrainConfig(epochs=args.epochs, batch_size=args.batch, schedule=schedule, seed=args.seed)
    params, history = shifter_train(pairs, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    shifter_save(params, out)
    log_path = Path(args.log) if args.log else out.with_suffix(".csv")
    rows = ["epoch,train_l2,val_l2"]
    for i, tr in enumerate(history.train_l2):
        rows.append(f"{i + 1},{tr:.8f},{history.val_l2[i]:.8f}" if history.val_l2 else f"{i + 1},{tr:.8f},")
    log_path.write_text("\n".join(rows) + "\n")
    last = f"{history.val_l2[-1]:.6f}" if history.val_l2 else "n/a"
    print(f"trained on {len(pairs)} pairs for {args.epochs} epochs; final val L2 {last}")
    print(f"weights: {out}\nloss log: {log_path}")
    return EXIT_OK


def cmd_shift(args) -> int:
    params = shifter_load(args.weights)
    source = scan_folder(args.input)
    out = shift_dataset(params, source, args.out)
    print(f"shifted {len(out)} images into {args.out}")
    return EXIT_OK


def _print_evaluation(ev, label, out=None):
    print(f"{label} accuracy: {ev.accuracy:.4f}")
    if out is not None:
        header = "true\\pred," + ",".join(ev.class_names)
        rows = [header] + [f"{name}," + ",".join(str(v) for v in row) for name, row in zip(ev.class_names, ev.confusion)]
        Path(out).write_text("\n".join(rows) + "\n")
        print(f"confusion matrix: {out}")


def cmd_train_classifier(args) -> int:
    train_sets = [scan_folder(p) for p in args.train]
    val = scan_folder(args.val)
    config = ClassifierTrainConfig(epochs=args.epochs, batch_size=args.batch,
                                   schedule=cyclical_schedule(args.lr_min, args.lr_max, args.ramp_steps),
                                   freeze_prefix=args.freeze, seed=args.seed)
    params, history = classifier_train(train_sets, val, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    classifier_save(params, out)
    write_classifier_log(history, out.with_suffix(".csv"))
    print(f"best epoch {history.best_epoch + 1}: val accuracy {history.val_acc[history.best_epoch]:.4f}")
    print(f"model: {out}")
    for path in args.test or []:
        ev = evaluate(params, scan_folder(path))
        _print_evaluation(ev, str(path))
    return EXIT_OK


def cmd_eval(args) -> int:
    params = classifier_load(args.model)
    ev = evaluate(params, scan_folder(args.test))
    _print_evaluation(ev, str(args.test), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.defaults()
    if args.out:
        cfg = cfg.with_values(out_dir=args.out)
    out = Path(cfg["out_dir"])
    report = run_experiment(cfg, out)
    # figures need matplotlib; imported lazily so other commands start fast
    from .plotting import render_report_figures

    (out / "report.txt").write_text(report.to_text())
    (out / "report.csv").write_text(report.to_csv())
    (out / "per_seed.csv").write_text(report.per_seed_csv())
    (out / "config.txt").write_text(report.config_text)
    figures = render_report_figures(report, out / "figures")
    print(report.to_text(), end="")
    print(f"report: {out / 'report.txt'}, {out / 'report.csv'}")
    print("figures: " + ", ".join(str(p) for p in figures))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="domshift", formatter_class=fmt,
                     description="Train a small network that maps clean images to a low-quality camera domain, "
                                 "and use it to adapt image classifiers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render the procedural shapes dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory (one subfolder per class)")
    p.add_argument("--classes", type=int, default=5, help="number of shape classes (2-10)")
    p.add_argument("--per-class", type=int, default=400, help="images per class")
    p.add_argument("--size", type=int, default=64, help="image side in pixels")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("degrade", help="pass a labeled folder through the simulated camera", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="labeled image folder")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="config file whose camera.* keys set the camera (default: virtual Cozmo)")
    p.add_argument("--seed", type=int, default=0, help="random seed for noise and jitter")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--paired", action="store_true", help="write clean/ and low/ pairs for shifter training")
    mode.add_argument("--labeled", action="store_true", help="write a degraded copy with the same class layout")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train-shifter", help="train the domain-shifting network on paired images",
                       formatter_class=fmt)
    p.add_argument("--pairs", required=True, help="paired folder with clean/ and low/")
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--log", help="per-epoch loss CSV (default: weight path with .csv suffix)")
    p.add_argument("--epochs", type=int, default=100, help="training epochs")
    p.add_argument("--batch", type=int, default=32, help="minibatch size")
    p.add_argument("--lr", type=float, default=0.01, help="initial Adam learning rate")
    p.add_argument("--decay-factor", type=float, default=0.5, help="learning-rate multiplier per decay step")
    p.add_argument("--decay-every", type=int, default=30, help="epochs between decay steps")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_train_shifter)

    p = sub.add_parser("shift", help="map a labeled folder through a trained shifter", formatter_class=fmt)
    p.add_argument("--weights", required=True, help="shifter weight file")
    p.add_argument("--in", dest="input", required=True, help="labeled image folder")
    p.add_argument("--out", required=True, help="output directory (same class layout)")
    p.set_defaults(func=cmd_shift)

    defaults = ClassifierTrainConfig()
    p = sub.add_parser("train-classifier", help="train the classifier on one or more labeled folders",
                       formatter_class=fmt)
    p.add_argument("--train", action="append", required=True,
                   help="labeled training folder; repeat to train on the union")
    p.add_argument("--val", required=True, help="labeled validation folder (model selection)")
    p.add_argument("--test", action="append", help="labeled folder to evaluate after training; may repeat")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--epochs", type=int, default=defaults.epochs, help="training epochs")
    p.add_argument("--batch", type=int, default=defaults.batch_size, help="minibatch size")
    p.add_argument("--lr-min", type=float, default=defaults.schedule.lr_min, help="learning rate at cycle start")
    p.add_argument("--lr-max", type=float, default=defaults.schedule.lr_max, help="ramp end learning rate")
    p.add_argument("--ramp-steps", type=int, default=defaults.schedule.ramp_steps, help="epochs per cycle")
    p.add_argument("--freeze", type=int, default=defaults.freeze_prefix, help="leading layers kept frozen")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("eval", help="evaluate a trained classifier", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model file from train-classifier")
    p.add_argument("--test", required=True, help="labeled test folder")
    p.add_argument("--out", help="write the confusion matrix as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the four-regime comparison end to end", formatter_class=fmt)
    p.add_argument("--config", help="key = value config file (default: all defaults)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.set_defaults(func=cmd_experiment)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, (DataError, ShapeError, OSError)):
        return EXIT_DATA
    return EXIT_TRAINING


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    np.seterr(over="ignore", invalid="ignore")
    try:
        return args.func(args)
    except (ConfigError, DataError, ShapeError, StageError, TrainingError, OSError) as exc:
        print(f"domshift {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
