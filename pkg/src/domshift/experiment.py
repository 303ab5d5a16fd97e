"""End-to-end comparison of the four training regimes.

For every seed: build (or index) the labeled clean data and split it, make
low-quality copies of each split, build paired data for the two shifter
policies, train both shifters, shift the clean splits, train four
classifiers and score each on the clean and the degraded test split.

Regimes:
  source-supervised   clean training split only
  ours-unsupervised   clean + shifted, shifter pairs include task-class images
  ours-zero-shot      clean + shifted, shifter pairs exclude the task classes
  target-supervised   degraded training split only (an upper reference)
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camsim import degrade_set, make_paired_set
from .classify import ClassifierHistory, classifier_train, evaluate
from .config import RunConfig
from .data import SHAPE_FAMILIES, LabeledImageSet, exclude_classes, gen_shapes_dataset, scan_folder, split
from .errors import ConfigError, DataError, DomShiftError, StageError
from .seeding import derive_seed
from .shiftnet import ShifterHistory, shift_dataset, shift_images, shifter_save, shifter_train

log = logging.getLogger(__name__)

REGIMES = ("source-supervised", "ours-unsupervised", "ours-zero-shot", "target-supervised")
POLICIES = ("zero-shot", "unsupervised")

# acceptance margins, in accuracy fractions
GAIN_OVER_SOURCE = 0.05
GAP_TO_TARGET = 0.03
CLEAN_SACRIFICE = 0.02
UNSUP_SLACK = 0.01
_EPS = 1e-9


@dataclass
class SeedResult:
    seed: int
    accuracies: dict  # regime -> (clean accuracy, degraded accuracy)
    shifter_histories: dict = field(default_factory=dict)  # policy -> ShifterHistory
    classifier_histories: dict = field(default_factory=dict)  # regime -> ClassifierHistory
    samples: dict = field(default_factory=dict)  # "clean" / "degraded" / "shifted" -> (n, 3, H, W)


@dataclass(frozen=True)
class TrendCheck:
    name: str
    passed: bool
    lhs: float
    rhs: float


@dataclass
class ExperimentReport:
    runs: list
    config_text: str

    @property
    def seeds(self) -> tuple:
        return tuple(r.seed for r in self.runs)

    def median(self) -> dict:
        out = {}
        for regime in REGIMES:
            clean = statistics.median(r.accuracies[regime][0] for r in self.runs)
            degraded = statistics.median(r.accuracies[regime][1] for r in self.runs)
            out[regime] = (clean, degraded)
        return out

    def trend(self) -> list:
        """Acceptance ordering evaluated on per-regime medians over seeds."""
        m = self.median()
        src, unsup, zs, tgt = (m[r] for r in REGIMES)
        checks = [
            ("degraded: ours-zero-shot >= source-supervised + 5 points", zs[1], src[1] + GAIN_OVER_SOURCE),
            ("degraded: target-supervised >= ours-zero-shot - 3 points", tgt[1], zs[1] - GAP_TO_TARGET),
            ("clean: ours-zero-shot >= source-supervised - 2 points", zs[0], src[0] - CLEAN_SACRIFICE),
            ("degraded: ours-unsupervised >= ours-zero-shot - 1 point", unsup[1], zs[1] - UNSUP_SLACK),
        ]
        return [TrendCheck(name, lhs + _EPS >= rhs, lhs, rhs) for name, lhs, rhs in checks]

    @property
    def trend_ok(self) -> bool:
        return all(c.passed for c in self.trend())

    def to_csv(self) -> str:
        rows = ["regime,clean_acc,degraded_acc"]
        for regime, (clean, degraded) in self.median().items():
            rows.append(f"{regime},{clean:.4f},{degraded:.4f}")
        return "\n".join(rows) + "\n"

    def per_seed_csv(self) -> str:
        rows = ["seed,regime,clean_acc,degraded_acc"]
        for run in self.runs:
            for regime in REGIMES:
                clean, degraded = run.accuracies[regime]
                rows.append(f"{run.seed},{regime},{clean:.4f},{degraded:.4f}")
        return "\n".join(rows) + "\n"

    def to_text(self) -> str:
        seeds = ", ".join(str(s) for s in self.seeds)
        width = max(len(r) for r in REGIMES)
        lines = [f"Test accuracy (%), median over seeds {seeds}", "",
                 f"{'regime':<{width}}  {'clean':>7}  {'degraded':>8}"]
        for regime, (clean, degraded) in self.median().items():
            lines.append(f"{regime:<{width}}  {100 * clean:7.2f}  {100 * degraded:8.2f}")
        lines += ["", "Trend checks"]
        for c in self.trend():
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}  ({100 * c.lhs:.2f} vs {100 * c.rhs:.2f})")
        lines.append(f"  verdict: {'PASS' if self.trend_ok else 'FAIL'}")
        lines += ["", "Per seed (clean / degraded, %)"]
        for run in self.runs:
            cells = "  ".join(f"{r}={100 * a[0]:.2f}/{100 * a[1]:.2f}" for r, a in run.accuracies.items())
            lines.append(f"  seed {run.seed}: {cells}")
        lines += ["", "Resolved configuration", ""]
        lines += ["  " + line if line else "" for line in self.config_text.splitlines()]
        return "\n".join(lines) + "\n"


class _Stage:
    """Context manager that re-raises failures as StageError(name, cause)."""

    def __init__(self, name, seed):
        self.name = name
        self.seed = seed

    def __enter__(self):
        log.info("seed %d: %s", self.seed, self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (DomShiftError, OSError, ValueError)) \
                and not isinstance(exc, StageError):
            raise StageError(f"{self.name} (seed {self.seed})", exc) from exc
        return False


def _task_data(cfg: RunConfig, seed: int, work: Path) -> LabeledImageSet:
    if cfg["data.root"]:
        return scan_folder(cfg["data.root"])
    return gen_shapes_dataset(work / "clean", classes=cfg["data.classes"], per_class=cfg["data.per_class"],
                              resolution=cfg["data.size"], seed=derive_seed(seed, "dataset"))


def _recorded_split(recorded: LabeledImageSet, part: LabeledImageSet) -> LabeledImageSet:
    """Entries of a recorded degraded copy matching ``part`` by class and file stem."""
    if tuple(recorded.class_names) != tuple(part.class_names):
        raise DataError(f"recorded set classes {list(recorded.class_names)} differ from "
                        f"{list(part.class_names)}", recorded.root)
    by_stem = {str(Path(rel).with_suffix("")): (rel, lab) for rel, lab in recorded.entries}
    entries = []
    for rel, _ in part.entries:
        key = str(Path(rel).with_suffix(""))
        if key not in by_stem:
            raise DataError(f"no recorded counterpart for {rel}", recorded.root)
        entries.append(by_stem[key])
    return LabeledImageSet(recorded.root, tuple(entries), recorded.class_names)


def _pair_pool(cfg: RunConfig, seed: int, task: LabeledImageSet, work: Path) -> LabeledImageSet:
    """Images for zero-shot pairs, with every task class excluded."""
    if cfg["data.pairs_root"]:
        pool = scan_folder(cfg["data.pairs_root"])
    else:
        pool = gen_shapes_dataset(work / "pool", classes=len(SHAPE_FAMILIES), per_class=cfg["data.pairs_per_family"],
                                  resolution=cfg["data.size"], seed=derive_seed(seed, "pairs"))
    overlap = sorted(set(pool.class_names) & set(task.class_names))
    if overlap:
        pool = exclude_classes(pool, overlap)
    return pool


def _task_subset(train: LabeledImageSet, per_class: int, seed: int) -> LabeledImageSet:
    """A small unlabeled sample of each task class from the training split."""
    rng = np.random.default_rng(derive_seed(seed, "unsup-subset"))
    picked = []
    for label in range(len(train.class_names)):
        idx = [i for i, (_, lab) in enumerate(train.entries) if lab == label]
        chosen = sorted(rng.permutation(len(idx))[:per_class].tolist())
        picked.extend(train.entries[idx[i]] for i in chosen)
    return LabeledImageSet(train.root, tuple(sorted(picked)), train.class_names)


def _write_shifter_log(history: ShifterHistory, path: Path) -> None:
    rows = ["epoch,train_l2,val_l2"]
    for i, tr in enumerate(history.train_l2):
        val = f"{history.val_l2[i]:.8f}" if history.val_l2 else ""
        rows.append(f"{i + 1},{tr:.8f},{val}")
    path.write_text("\n".join(rows) + "\n")


def write_classifier_log(history: ClassifierHistory, path: Path) -> None:
    rows = ["epoch,lr,train_loss,train_acc,val_loss,val_acc"]
    for i in range(len(history.train_loss)):
        rows.append(f"{i + 1},{history.lr[i]:.8g},{history.train_loss[i]:.6f},{history.train_acc[i]:.4f},"
                    f"{history.val_loss[i]:.6f},{history.val_acc[i]:.4f}")
    path.write_text("\n".join(rows) + "\n")


def run_seed(cfg: RunConfig, seed: int, work) -> SeedResult:
    work = Path(work)
    work.mkdir(parents=True, exist_ok=True)
    camera = cfg.camera()

    with _Stage("data", seed):
        task = _task_data(cfg, seed, work)
        if len(task.active_classes) < 2:
            raise DataError("need at least 2 classes", task.root)
        train, val, test = split(task, cfg.split_spec(derive_seed(seed, "split")))
        names = ("train", "val", "test")
        if cfg["data.degraded_root"]:
            recorded = scan_folder(cfg["data.degraded_root"])
            degraded = {n: _recorded_split(recorded, s) for n, s in zip(names, (train, val, test))}
        else:
            degraded = {n: degrade_set(s, camera, derive_seed(seed, "camera", n), work / f"degraded_{n}")
                        for n, s in zip(names, (train, val, test))}

    with _Stage("pairs", seed):
        pool = _pair_pool(cfg, seed, task, work)
        zero_shot = make_paired_set(pool, camera, derive_seed(seed, "camera", "pairs"), work / "pairs_zero-shot")
        subset = _task_subset(train, cfg["data.unsup_per_class"], seed)
        if cfg["data.degraded_root"]:
            task_pairs = (subset.load()[0], _recorded_split(recorded, subset).load()[0])
        else:
            extra = make_paired_set(subset, camera, derive_seed(seed, "camera", "task-pairs"), work / "pairs_task")
            task_pairs = extra.load()
        zs_arrays = zero_shot.load()
        if zs_arrays[0].shape[2:] != task_pairs[0].shape[2:]:
            raise DataError(f"pair images are {zs_arrays[0].shape[2:]} but task images are "
                            f"{task_pairs[0].shape[2:]}", pool.root)
        pair_sets = {
            "zero-shot": zs_arrays,
            "unsupervised": tuple(np.concatenate([a, b]) for a, b in zip(zs_arrays, task_pairs)),
        }

    # one shifter seed and one classifier seed per repetition, so regimes differ only in their data
    shifter_cfg = cfg.shifter(derive_seed(seed, "shifter"))
    classifier_cfg = cfg.classifier(derive_seed(seed, "classifier"))
    result = SeedResult(seed, {})
    shifted = {}
    for policy in POLICIES:
        with _Stage(f"shifter-{policy}", seed):
            params, history = shifter_train(pair_sets[policy], shifter_cfg)
            shifter_save(params, work / f"shifter_{policy}.bin")
            _write_shifter_log(history, work / f"shifter_{policy}.csv")
            result.shifter_histories[policy] = history
        with _Stage(f"shift-{policy}", seed):
            shifted[policy] = {n: shift_dataset(params, s, work / f"shifted_{policy}_{n}")
                               for n, s in (("train", train), ("val", val))}
            if policy == "zero-shot":
                x_test = test.load()[0][:8]
                result.samples = {"clean": x_test, "degraded": degraded["test"].load()[0][:8],
                                  "shifted": shift_images(params, x_test)}

    plans = {
        "source-supervised": ([train], val),
        "ours-unsupervised": ([train, shifted["unsupervised"]["train"]], val),
        "ours-zero-shot": ([train, shifted["zero-shot"]["train"]], val),
        "target-supervised": ([degraded["train"]], degraded["val"]),
    }
    for regime in REGIMES:
        train_sets, val_set = plans[regime]
        with _Stage(f"classifier-{regime}", seed):
            params, history = classifier_train(train_sets, val_set, classifier_cfg)
            write_classifier_log(history, work / f"classifier_{regime}.csv")
            result.classifier_histories[regime] = history
        with _Stage(f"evaluate-{regime}", seed):
            clean_acc = evaluate(params, test).accuracy
            degraded_acc = evaluate(params, degraded["test"]).accuracy
            result.accuracies[regime] = (clean_acc, degraded_acc)
            log.info("seed %d: %s clean=%.4f degraded=%.4f", seed, regime, clean_acc, degraded_acc)
    return result


def run_experiment(cfg: RunConfig, out_dir=None) -> ExperimentReport:
    """Run every seed in ``cfg`` and collect the report; intermediate data goes under ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg["out_dir"])
    if not cfg["experiment.seeds"]:
        raise ConfigError("no seeds given")
    runs = [run_seed(cfg, seed, out / f"seed_{seed}") for seed in cfg["experiment.seeds"]]
    return ExperimentReport(runs, cfg.to_text())
