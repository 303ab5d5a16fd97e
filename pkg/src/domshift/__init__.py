"""Learned clean-to-low-quality image shifting for camera domain adaptation.

The public pieces are re-exported here; see the submodules for details.
"""

from .camsim import DegradationConfig, degrade, degrade_set, make_paired_set
from .classify import (ClassifierParams, ClassifierTrainConfig, classifier_init, classifier_load, classifier_save,
                       classifier_train, evaluate)
from .config import RunConfig
from .data import LabeledImageSet, PairedImageSet, SplitSpec, gen_shapes_dataset, load_image, scan_folder, split
from .errors import (ConfigError, DataError, DomShiftError, ShapeError, StageError, TrainingError,
                     WeightsError)
from .experiment import ExperimentReport, run_experiment
from .shiftnet import (ShiftNetParams, ShifterTrainConfig, shift_dataset, shifter_forward, shifter_init,
                       shifter_load, shifter_save, shifter_train)

__version__ = "0.1.0"

__all__ = [
    "ClassifierParams", "ClassifierTrainConfig", "ConfigError", "DataError", "DegradationConfig", "DomShiftError",
    "ExperimentReport", "LabeledImageSet", "PairedImageSet", "RunConfig", "ShapeError", "ShiftNetParams",
    "ShifterTrainConfig", "SplitSpec", "StageError", "TrainingError", "WeightsError", "classifier_init",
    "classifier_load", "classifier_save", "classifier_train", "degrade", "degrade_set", "evaluate",
    "gen_shapes_dataset", "load_image", "make_paired_set", "run_experiment", "scan_folder", "shift_dataset",
    "shifter_forward", "shifter_init", "shifter_load", "shifter_save", "shifter_train", "split",
]
