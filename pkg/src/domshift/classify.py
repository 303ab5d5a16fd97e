"""Small CNN classifier, its SGD training loop, and evaluation.

Four conv blocks (3->16->32->64->64, 3x3, stride 2, pad 1, ReLU), global
average pooling and a dense layer to K logits. Inputs in [0, 1] are centred
by subtracting 0.5 before the first layer. A prefix of layers can be frozen;
frozen layers keep their initial weights exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import LabeledImageSet, batch_iter
from .errors import ConfigError, DataError, ShapeError, TrainingError, WeightsError
from .layers import flatten, init_layer, unflatten
from .optim import ScheduleSpec, sgd_step
from .seeding import derive_seed

log = logging.getLogger(__name__)

CONV_CHANNELS = (3, 16, 32, 64, 64)
LAYER_NAMES = ("conv1", "conv2", "conv3", "conv4", "dense")
INPUT_OFFSET = 0.5


@dataclass(frozen=True)
class ClassifierParams:
    layers: tuple
    class_names: tuple
    frozen: tuple = (False,) * len(LAYER_NAMES)

    def __post_init__(self):
        if len(self.frozen) != len(self.layers):
            raise ConfigError(f"{len(self.frozen)} freeze flags for {len(self.layers)} layers")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def arrays(self) -> list:
        return flatten(self.layers)

    def with_arrays(self, arrays) -> "ClassifierParams":
        return replace(self, layers=unflatten(self.layers, arrays))

    def freeze_prefix(self, count: int) -> "ClassifierParams":
        if not 0 <= count <= len(self.layers):
            raise ConfigError(f"freeze_prefix must be in [0, {len(self.layers)}], got {count}")
        return replace(self, frozen=tuple(i < count for i in range(len(self.layers))))


def cyclical_schedule(lr_min=0.02, lr_max=0.2, ramp_steps=20) -> ScheduleSpec:
    return ScheduleSpec(kind="cyclical-exp", lr_min=lr_min, lr_max=lr_max, ramp_steps=ramp_steps)


@dataclass(frozen=True)
class ClassifierTrainConfig:
    epochs: int = 100
    batch_size: int = 32
    schedule: ScheduleSpec = field(default_factory=cyclical_schedule)
    freeze_prefix: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.schedule.kind != "cyclical-exp":
            raise ConfigError("the classifier uses the cyclical-exp schedule")
        if not 0 <= self.freeze_prefix <= len(LAYER_NAMES):
            raise ConfigError(f"freeze_prefix must be in [0, {len(LAYER_NAMES)}], got {self.freeze_prefix}")


@dataclass
class ClassifierHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1


def classifier_init(class_names, seed: int, zero: bool = False) -> ClassifierParams:
    class_names = tuple(class_names)
    if len(class_names) < 2:
        raise ConfigError(f"need at least 2 classes, got {len(class_names)}")
    rng = np.random.default_rng(derive_seed(seed, "classifier-init"))
    layers = []
    for i in range(4):
        spec = T.ConvSpec(CONV_CHANNELS[i], CONV_CHANNELS[i + 1], 3, stride=2, padding=1)
        layers.append(init_layer(LAYER_NAMES[i], spec, rng, zero=zero))
    k, c = len(class_names), CONV_CHANNELS[-1]
    layers.append(init_layer("dense", None, rng, weight_shape=(k, c), fan_in=c, zero=zero))
    return ClassifierParams(tuple(layers), class_names)


def _forward(params: ClassifierParams, x):
    inputs, pre = [], []
    h = T.as_tensor(x) - T.DTYPE(INPUT_OFFSET)
    for layer in params.layers[:4]:
        inputs.append(h)
        z = layer.forward(h)
        pre.append(z)
        h = T.relu(z)
    pooled_in = h
    h = T.global_avg_pool(h)
    inputs.append(h)
    logits = params.layers[4].forward(h)
    return logits, inputs, pre, pooled_in


def classifier_logits(params: ClassifierParams, images, batch_size: int = 256) -> np.ndarray:
    """(N, K) logits for a batch of (N, 3, H, W) images."""
    x = T.as_tensor(images, "images")
    if x.shape[1] != 3:
        raise ShapeError(f"classifier expects 3 channels, got {x.shape[1]}", dim="channels")
    out = [_forward(params, x[s:s + batch_size])[0] for s in range(0, len(x), batch_size)]
    return np.concatenate(out).reshape(len(x), -1)


def _loss_and_grads(params, x, y):
    logits, inputs, pre, pooled_in = _forward(params, x)
    loss, g = T.softmax_cross_entropy(logits, y)
    correct = int(np.sum(logits.reshape(len(y), -1).argmax(axis=1) == y))
    grads = [None] * (2 * len(params.layers))
    # stop backprop at the first trainable layer; frozen layers need no gradients
    first = next((i for i, f in enumerate(params.frozen) if not f), len(params.layers))
    lg = params.layers[4].backward(inputs[4], g)
    grads[8], grads[9] = lg.d_weight, lg.d_bias
    if first < 4:
        g = T.global_avg_pool_backward(pooled_in.shape, lg.d_input)
        for i in range(3, first - 1, -1):
            g = T.relu_backward(pre[i], g)
            lg = params.layers[i].backward(inputs[i], g, input_grad=i > first)
            grads[2 * i], grads[2 * i + 1] = lg.d_weight, lg.d_bias
            g = lg.d_input
    return loss, correct, grads


def _sgd_update(params: ClassifierParams, grads, lr):
    arrays = params.arrays()
    new = list(arrays)
    for i, frozen in enumerate(params.frozen):
        if not frozen:
            new[2 * i], new[2 * i + 1] = sgd_step(arrays[2 * i:2 * i + 2], grads[2 * i:2 * i + 2], lr)
    return params.with_arrays(new)


def _eval_arrays(params, x, y, batch_size=256):
    logits = classifier_logits(params, x, batch_size)
    loss, _ = T.softmax_cross_entropy(logits, y)
    return loss, float(np.mean(logits.argmax(axis=1) == y))


def _check_vocab(sets: Sequence[LabeledImageSet], class_names):
    for s in sets:
        if tuple(s.class_names) != tuple(class_names):
            raise DataError(f"vocabulary mismatch: {list(s.class_names)} vs {list(class_names)}", s.root)


def load_union(sets: Sequence[LabeledImageSet]):
    """Decode and concatenate several labeled sets in a canonical, argument-order-independent order."""
    if not sets:
        raise DataError("no training sets given")
    _check_vocab(sets, sets[0].class_names)
    keyed = []
    for s in sets:
        x, y = s.load()
        keyed.extend(((s.root / rel).resolve().as_posix(), x[i], y[i]) for i, (rel, _) in enumerate(s.entries))
    keyed.sort(key=lambda t: t[0])
    return np.stack([k[1] for k in keyed]), np.array([k[2] for k in keyed], dtype=np.int64)


def train_on_arrays(x, y, xv, yv, class_names, config: ClassifierTrainConfig = ClassifierTrainConfig(),
                    init: ClassifierParams | None = None):
    """Core training loop over in-memory arrays. See ``classifier_train``."""
    if len(xv) == 0:
        raise DataError("validation set is empty")
    params = init or classifier_init(class_names, config.seed)
    params = params.freeze_prefix(config.freeze_prefix)
    history = ClassifierHistory()
    best, best_key = params, None
    batch_seed = derive_seed(config.seed, "classifier-batches")
    for epoch in range(config.epochs):
        lr = config.schedule.lr(epoch)
        total_loss, total_correct = 0.0, 0
        for xb, yb in batch_iter((x, y), config.batch_size, batch_seed, epoch):
            loss, correct, grads = _loss_and_grads(params, xb, yb)
            if not np.isfinite(loss):
                raise TrainingError(f"classifier loss became non-finite at epoch {epoch + 1} (lr={lr:.3g})")
            params = _sgd_update(params, grads, lr)
            total_loss += loss * len(xb)
            total_correct += correct
        vloss, vacc = _eval_arrays(params, xv, yv)
        history.train_loss.append(total_loss / len(x))
        history.train_acc.append(total_correct / len(x))
        history.val_loss.append(vloss)
        history.val_acc.append(vacc)
        history.lr.append(lr)
        key = (vacc, -vloss)
        if best_key is None or key > best_key:
            best, best_key, history.best_epoch = params, key, epoch
        log.info("classifier epoch %d/%d lr=%.3g loss=%.4f acc=%.4f val_loss=%.4f val_acc=%.4f",
                 epoch + 1, config.epochs, lr, history.train_loss[-1], history.train_acc[-1], vloss, vacc)
    return best, history


def classifier_train(train: LabeledImageSet | Sequence[LabeledImageSet], val: LabeledImageSet,
                     config: ClassifierTrainConfig = ClassifierTrainConfig(), init: ClassifierParams | None = None):
    """Train on the union of ``train`` sets; return the best-validation-accuracy parameters.

    Ties in validation accuracy go to the lower validation loss.
    """
    sets = [train] if isinstance(train, LabeledImageSet) else list(train)
    _check_vocab(sets + [val], val.class_names)
    if not val.entries:
        raise DataError("validation set is empty", val.root)
    if not 0 <= config.freeze_prefix <= len(LAYER_NAMES):
        raise ConfigError(f"freeze_prefix must be in [0, {len(LAYER_NAMES)}], got {config.freeze_prefix}")
    x, y = load_union(sets)
    xv, yv = val.load()
    return train_on_arrays(x, y, xv, yv, val.class_names, config, init)


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class
    class_names: tuple


def score_predictions(predicted, labels, num_classes: int) -> tuple:
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    return float(np.mean(predicted == labels)), confusion


def evaluate_arrays(params: ClassifierParams, x, y) -> Evaluation:
    if len(x) == 0:
        raise DataError("test set is empty")
    pred = classifier_logits(params, x).argmax(axis=1)
    acc, confusion = score_predictions(pred, y, params.num_classes)
    return Evaluation(acc, confusion, params.class_names)


def evaluate(params: ClassifierParams, test: LabeledImageSet) -> Evaluation:
    if tuple(test.class_names) != params.class_names:
        raise DataError(f"vocabulary mismatch: test {list(test.class_names)} vs model {list(params.class_names)}",
                        test.root)
    x, y = test.load()
    return evaluate_arrays(params, x, y)


# ---------------------------------------------------------------------------
# model files
#
#   CLASSIFIER v1 <K>
#   classes <name>\t<name>...
#   frozen <0|1>,<0|1>,...
#   tensor <name> <d0,d1,...> <byte offset into data block>
#   ...
#   end
#   <little-endian float32 blocks, declaration order>

MODEL_MAGIC = "CLASSIFIER"
MODEL_VERSION = "v1"


def classifier_save(params: ClassifierParams, path) -> None:
    for name in params.class_names:
        if not name or any(ch in name for ch in "\t\n"):
            raise DataError(f"class name {name!r} cannot be stored", path)
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION} {params.num_classes}",
             "classes " + "\t".join(params.class_names),
             "frozen " + ",".join(str(int(f)) for f in params.frozen)]
    blobs, offset = [], 0
    for layer in params.layers:
        for suffix, arr in (("weight", layer.weight), ("bias", layer.bias)):
            data = np.asarray(arr, dtype="<f4").tobytes()
            lines.append(f"tensor {layer.name}.{suffix} {','.join(map(str, arr.shape))} {offset}")
            blobs.append(data)
            offset += len(data)
    lines.append("end")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8") + b"".join(blobs))


def classifier_load(path) -> ClassifierParams:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise WeightsError(f"cannot read model: {exc}", path) from exc
    end = raw.find(b"\nend\n")
    if end < 0:
        raise WeightsError("missing header terminator (truncated or not a model file)", path)
    try:
        header = raw[:end].decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise WeightsError("header is not UTF-8", path) from exc
    body = raw[end + len(b"\nend\n"):]
    first = header[0].split()
    if len(first) != 3 or first[0] != MODEL_MAGIC or first[1] != MODEL_VERSION:
        raise WeightsError(f"bad magic line {header[0]!r}", path)
    if len(header) < 3 or not header[1].startswith("classes ") or not header[2].startswith("frozen "):
        raise WeightsError("missing classes/frozen lines", path)
    class_names = tuple(header[1][len("classes "):].split("\t"))
    if len(class_names) != int(first[2]):
        raise WeightsError(f"header declares {first[2]} classes but lists {len(class_names)}", path)
    frozen = tuple(bool(int(v)) for v in header[2][len("frozen "):].split(","))
    template = classifier_init(class_names, 0, zero=True)
    records = header[3:]
    if len(records) != 2 * len(template.layers) or len(frozen) != len(template.layers):
        raise WeightsError("architecture mismatch: unexpected tensor or layer count", path)
    arrays = []
    for rec, want in zip(records, template.arrays()):
        parts = rec.split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise WeightsError(f"malformed manifest line {rec!r}", path)
        shape, offset = tuple(int(d) for d in parts[2].split(",")), int(parts[3])
        if shape != want.shape:
            raise WeightsError(f"architecture mismatch: {parts[1]} {shape}, expected {want.shape}", path)
        nbytes = 4 * int(np.prod(shape))
        if offset < 0 or offset + nbytes > len(body):
            raise WeightsError(f"truncated data for {parts[1]}", path)
        arrays.append(np.frombuffer(body[offset:offset + nbytes], dtype="<f4").astype(np.float32).reshape(shape))
    return replace(template.with_arrays(arrays), frozen=frozen)
