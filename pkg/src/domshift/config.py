"""Flat ``key = value`` run configuration.

Lines look like ``shifter.epochs = 100``; ``#`` starts a comment. Keys are
grouped by prefix (``shifter.``, ``classifier.``, ``camera.``, ``data.``,
``experiment.``). Unknown keys are rejected and every key has a default, so
an empty file describes a complete run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .camsim import DegradationConfig
from .classify import ClassifierTrainConfig, cyclical_schedule
from .data import SplitSpec
from .errors import ConfigError
from .optim import ScheduleSpec
from .shiftnet import ShifterTrainConfig


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _str(text: str) -> str:
    return text


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


_COZMO = DegradationConfig.virtual_cozmo()


@dataclass(frozen=True)
class Key:
    default: object
    parse: Callable
    doc: str


SCHEMA = {
    "out_dir": Key("experiment_out", _str, "directory for reports, figures and intermediate data"),
    "experiment.seeds": Key((0, 1, 2), _ints, "top-level seeds; each seed is one full repetition"),
    "data.root": Key("", _str, "labeled image folder; empty means render the procedural shapes dataset"),
    "data.pairs_root": Key("", _str, "image folder for zero-shot pairs; empty means render disjoint shape families"),
    "data.degraded_root": Key("", _str, "recorded low-quality copy of data.root (same layout); empty means simulate"),
    "data.classes": Key(5, int, "procedural dataset: number of classes"),
    "data.per_class": Key(400, int, "procedural dataset: images per class"),
    "data.size": Key(32, int, "procedural dataset: image side in pixels (multiple of 4)"),
    "data.split": Key((0.6, 0.2, 0.2), _floats, "train, validation, test fractions"),
    "data.pairs_per_family": Key(100, int, "procedural zero-shot pairs per disjoint family"),
    "data.unsup_per_class": Key(20, int, "task-class images added to the pairs in the unsupervised setting"),
    "shifter.epochs": Key(100, int, "shifter training epochs"),
    "shifter.batch_size": Key(32, int, "shifter minibatch size"),
    "shifter.lr": Key(0.01, float, "initial Adam learning rate"),
    "shifter.decay_factor": Key(0.5, float, "learning-rate multiplier per decay step"),
    "shifter.decay_every": Key(30, int, "epochs between decay steps"),
    "shifter.validation_fraction": Key(0.1, float, "fraction of pairs held out for validation"),
    "classifier.epochs": Key(100, int, "classifier training epochs"),
    "classifier.batch_size": Key(32, int, "classifier minibatch size"),
    "classifier.lr_min": Key(0.02, float, "learning rate at the start of each cycle"),
    "classifier.lr_max": Key(0.2, float, "learning rate the exponential ramp heads towards"),
    "classifier.ramp_steps": Key(20, int, "epochs per learning-rate cycle"),
    "classifier.freeze_prefix": Key(0, int, "number of leading layers kept at their initial weights"),
    "camera.gamma": Key(_COZMO.gamma, float, "power-law exponent of the tone map"),
    "camera.black_lift": Key(_COZMO.black_lift, float, "output level of pure black"),
    "camera.white_clip": Key(_COZMO.white_clip, float, "output level of pure white"),
    "camera.color_matrix": Key(tuple(v for row in _COZMO.color_matrix for v in row), _floats, "row-major 3x3 colour mixing matrix"),
    "camera.noise_sigma": Key(_COZMO.noise_sigma, float, "std of additive Gaussian noise"),
    "camera.blur_sigma": Key(_COZMO.blur_sigma, float, "Gaussian blur std in pixels"),
    "camera.jitter_px": Key(_COZMO.jitter_px, int, "maximum integer translation in pixels"),
}


def _nested_matrix(flat):
    if len(flat) != 9:
        raise ConfigError(f"camera.color_matrix needs 9 numbers, got {len(flat)}")
    return tuple(tuple(flat[3 * r:3 * r + 3]) for r in range(3))


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k: spec.default for k, spec in SCHEMA.items()})

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        values = cls.defaults().values
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                values[key] = SCHEMA[key].parse(value)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text, str(path))

    def __getitem__(self, key):
        return self.values[key]

    def with_values(self, **updates) -> "RunConfig":
        """Copy with overrides; keyword names use ``__`` for ``.`` (``shifter__epochs=5``)."""
        values = dict(self.values)
        for name, value in updates.items():
            key = name.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = value
        cfg = RunConfig(values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        # building every typed config runs its own checks
        self.camera()
        self.shifter()
        self.classifier()
        self.split_spec(0)
        if self["data.size"] % 4 or self["data.size"] < 8:
            raise ConfigError(f"data.size must be a multiple of 4 and >= 8, got {self['data.size']}")
        if not self["experiment.seeds"]:
            raise ConfigError("experiment.seeds must list at least one seed")
        for key in ("data.classes", "data.per_class", "data.pairs_per_family"):
            if self[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self["data.unsup_per_class"] < 0:
            raise ConfigError("data.unsup_per_class must be >= 0")

    def camera(self) -> DegradationConfig:
        matrix = _nested_matrix(self["camera.color_matrix"])
        return DegradationConfig(
            gamma=self["camera.gamma"], black_lift=self["camera.black_lift"], white_clip=self["camera.white_clip"],
            color_matrix=matrix, noise_sigma=self["camera.noise_sigma"], blur_sigma=self["camera.blur_sigma"],
            jitter_px=self["camera.jitter_px"],
        )

    def shifter(self, seed: int = 0) -> ShifterTrainConfig:
        schedule = ScheduleSpec(kind="step-decay", base_lr=self["shifter.lr"],
                                decay_factor=self["shifter.decay_factor"], decay_every=self["shifter.decay_every"])
        return ShifterTrainConfig(epochs=self["shifter.epochs"], batch_size=self["shifter.batch_size"],
                                  schedule=schedule, seed=seed,
                                  validation_fraction=self["shifter.validation_fraction"])

    def classifier(self, seed: int = 0) -> ClassifierTrainConfig:
        schedule = cyclical_schedule(self["classifier.lr_min"], self["classifier.lr_max"],
                                     self["classifier.ramp_steps"])
        return ClassifierTrainConfig(epochs=self["classifier.epochs"], batch_size=self["classifier.batch_size"],
                                     schedule=schedule, freeze_prefix=self["classifier.freeze_prefix"], seed=seed)

    def split_spec(self, seed: int) -> SplitSpec:
        return SplitSpec(fractions=tuple(self["data.split"]), seed=seed)

    def to_text(self) -> str:
        """Resolved configuration in the same format ``parse`` reads."""
        lines = []
        for key, spec in SCHEMA.items():
            lines.append(f"# {spec.doc}")
            lines.append(f"{key} = {_fmt(self[key])}")
        return "\n".join(lines) + "\n"

