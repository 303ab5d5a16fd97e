"""The domain-shifting network: a 4-layer conv/deconv regressor clean -> low quality.

Architecture (channels, kernel, stride):

    conv 3->64 k3 s2 p1 -> ReLU -> conv 64->128 k3 s2 p1 -> ReLU
    -> deconv 128->64 k2 s2 -> ReLU -> deconv 64->3 k2 s2 -> sigmoid

Output resolution equals input resolution whenever H and W are divisible
by 4. No normalisation layers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import LabeledImageSet, PairedImageSet, batch_iter, load_image, write_image, writing_dir
from .errors import ConfigError, DataError, ShapeError, TrainingError, WeightsError
from .layers import Layer, flatten, init_layer, unflatten
from .optim import AdamState, ScheduleSpec, adam_step
from .seeding import derive_seed

log = logging.getLogger(__name__)

ARCHITECTURE = (
    ("conv1", T.ConvSpec(3, 64, 3, stride=2, padding=1)),
    ("conv2", T.ConvSpec(64, 128, 3, stride=2, padding=1)),
    ("deconv3", T.ConvSpec(128, 64, 2, stride=2, padding=0, transposed=True)),
    ("deconv4", T.ConvSpec(64, 3, 2, stride=2, padding=0, transposed=True)),
)
ARCH_TAG = "3-64-128-64-3 k3,3,2,2 s2,2,2,2"


@dataclass(frozen=True)
class ShiftNetParams:
    layers: tuple
    resolution: tuple = (64, 64)

    @property
    def num_params(self) -> int:
        return sum(layer.size for layer in self.layers)

    def arrays(self) -> list:
        return flatten(self.layers)

    def with_arrays(self, arrays) -> "ShiftNetParams":
        return replace(self, layers=unflatten(self.layers, arrays))


@dataclass(frozen=True)
class ShifterTrainConfig:
    epochs: int = 100
    batch_size: int = 32
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        if self.schedule.kind != "step-decay":
            raise ConfigError("the shifter uses a step-decay schedule")


@dataclass
class ShifterHistory:
    train_l2: list = field(default_factory=list)
    val_l2: list = field(default_factory=list)
    lr: list = field(default_factory=list)


def shifter_init(seed: int, resolution=(64, 64)) -> ShiftNetParams:
    rng = np.random.default_rng(derive_seed(seed, "shifter-init"))
    layers = tuple(init_layer(name, spec, rng) for name, spec in ARCHITECTURE)
    return ShiftNetParams(layers, tuple(resolution))


def zero_shifter(resolution=(64, 64)) -> ShiftNetParams:
    layers = tuple(init_layer(name, spec, None, zero=True) for name, spec in ARCHITECTURE)
    return ShiftNetParams(layers, tuple(resolution))


def _check_batch(batch):
    x = T.as_tensor(batch, "batch")
    if x.shape[1] != 3:
        raise ShapeError(f"shifter expects 3 channels, got {x.shape[1]}", dim="channels")
    h, w = x.shape[2:]
    if h % 4 or w % 4:
        raise ShapeError(f"height and width must be divisible by 4, got {h}x{w}", dim="height" if h % 4 else "width")
    return x


def _forward(params: ShiftNetParams, x):
    """Returns (output, per-layer inputs, pre-activations) for backprop."""
    inputs, pre = [], []
    h = x
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        inputs.append(h)
        z = layer.forward(h)
        pre.append(z)
        h = T.sigmoid(z) if i == last else T.relu(z)
    return h, inputs, pre


def shifter_forward(params: ShiftNetParams, batch) -> np.ndarray:
    """Map clean images (N, 3, H, W) in [0, 1] to simulated low-quality images in (0, 1)."""
    return _forward(params, _check_batch(batch))[0]


def feature_sizes(params: ShiftNetParams, batch) -> list:
    """Spatial size of each layer's output, for architecture inspection."""
    _, _, pre = _forward(params, _check_batch(batch))
    return [z.shape[2:] for z in pre]


def _loss_and_grads(params, x, target):
    out, inputs, pre = _forward(params, x)
    loss, g = T.mse_loss(out, target)
    grads = [None] * (2 * len(params.layers))
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        layer = params.layers[i]
        g = T.sigmoid_backward(pre[i], g) if i == last else T.relu_backward(pre[i], g)
        lg = layer.backward(inputs[i], g, input_grad=i > 0)
        grads[2 * i], grads[2 * i + 1] = lg.d_weight, lg.d_bias
        g = lg.d_input
    return loss, grads


def _mean_l2(params, clean, low, batch_size=64):
    total = 0.0
    for s in range(0, len(clean), batch_size):
        out = shifter_forward(params, clean[s:s + batch_size])
        total += float(np.sum(np.square(out - low[s:s + batch_size], dtype=np.float64)))
    return total / clean.size


def shifter_train(pairs, config: ShifterTrainConfig = ShifterTrainConfig(), init: ShiftNetParams | None = None):
    """Fit the shifter to (clean, low) pairs with Adam and step-decayed learning rate.

    ``pairs`` is a PairedImageSet or a ``(clean, low)`` tuple of arrays.
    Returns ``(params, ShifterHistory)``; the final-epoch weights are returned.
    """
    clean, low = pairs.load() if isinstance(pairs, PairedImageSet) else pairs
    clean = _check_batch(clean)
    low = T.as_tensor(low, "low")
    if clean.shape != low.shape:
        raise ShapeError(f"clean {clean.shape} and low {low.shape} differ", dim="shape")
    n = len(clean)
    if n < 2 * config.batch_size:
        raise DataError(f"need at least {2 * config.batch_size} pairs for batch size {config.batch_size}, got {n}")

    order = np.random.default_rng(derive_seed(config.seed, "shifter-val")).permutation(n)
    n_val = int(round(config.validation_fraction * n))
    if config.validation_fraction > 0:
        n_val = max(n_val, 1)
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    xtr, ytr = clean[train_idx], low[train_idx]
    xva, yva = clean[val_idx], low[val_idx]

    params = init or shifter_init(config.seed, clean.shape[2:])
    params = replace(params, resolution=tuple(clean.shape[2:]))
    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    history = ShifterHistory()
    for epoch in range(config.epochs):
        lr = config.schedule.lr(epoch)
        total = 0.0
        for xb, yb in batch_iter((xtr, ytr), config.batch_size, derive_seed(config.seed, "shifter"), epoch):
            loss, grads = _loss_and_grads(params, xb, yb)
            if not np.isfinite(loss):
                raise TrainingError(f"shifter loss became non-finite at epoch {epoch + 1} (lr={lr:.3g})")
            arrays, state = adam_step(arrays, grads, state, lr)
            params = params.with_arrays(arrays)
            total += loss * len(xb)
        history.train_l2.append(total / len(xtr))
        history.lr.append(lr)
        if n_val:
            history.val_l2.append(_mean_l2(params, xva, yva))
        log.info("shifter epoch %d/%d lr=%.5g train_l2=%.6f%s", epoch + 1, config.epochs, lr,
                 history.train_l2[-1], f" val_l2={history.val_l2[-1]:.6f}" if n_val else "")
    return params, history


def shift_images(params: ShiftNetParams, images, batch_size: int = 64) -> np.ndarray:
    x = _check_batch(images)
    return np.concatenate([shifter_forward(params, x[s:s + batch_size]) for s in range(0, len(x), batch_size)])


def shift_dataset(params: ShiftNetParams, images: LabeledImageSet, out_path, batch_size: int = 64) -> LabeledImageSet:
    """Pass every image through the shifter and write it under ``out_path`` with the same layout."""
    out = Path(out_path)
    entries = []
    with writing_dir(out):
        for name in images.class_names:
            (out / name).mkdir(parents=True, exist_ok=True)
        for s in range(0, len(images), batch_size):
            chunk = images.entries[s:s + batch_size]
            batch = np.concatenate([load_image(images.root / rel) for rel, _ in chunk])
            shifted = shifter_forward(params, batch)
            for (rel, label), img in zip(chunk, shifted):
                rel_png = Path(rel).with_suffix(".png").as_posix()
                write_image(img, out / rel_png)
                entries.append((rel_png, label))
    return LabeledImageSet(out, tuple(entries), images.class_names, excluded=images.excluded)


# ---------------------------------------------------------------------------
# weight files
#
#   SHIFTNET v1 <H> <W>
#   arch <ARCH_TAG>
#   tensor <name> <d0,d1,...> <byte offset into data block>
#   ...
#   end
#   <little-endian float32 blocks, declaration order>

MAGIC = "SHIFTNET"
VERSION = "v1"


def shifter_save(params: ShiftNetParams, path) -> None:
    lines = [f"{MAGIC} {VERSION} {params.resolution[0]} {params.resolution[1]}", f"arch {ARCH_TAG}"]
    blobs, offset = [], 0
    for layer in params.layers:
        for suffix, arr in (("weight", layer.weight), ("bias", layer.bias)):
            data = np.asarray(arr, dtype="<f4").tobytes()
            lines.append(f"tensor {layer.name}.{suffix} {','.join(map(str, arr.shape))} {offset}")
            blobs.append(data)
            offset += len(data)
    lines.append("end")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs))


def _expected_tensors():
    for name, spec in ARCHITECTURE:
        yield f"{name}.weight", spec.weight_shape()
        yield f"{name}.bias", (spec.out_channels,)


def shifter_load(path) -> ShiftNetParams:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise WeightsError(f"cannot read weights: {exc}", path) from exc
    end = raw.find(b"\nend\n")
    if end < 0:
        raise WeightsError("missing header terminator (truncated or not a weight file)", path)
    try:
        header = raw[:end].decode("ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise WeightsError("header is not ASCII", path) from exc
    body = raw[end + len(b"\nend\n"):]

    first = header[0].split()
    if len(first) != 4 or first[0] != MAGIC:
        raise WeightsError(f"bad magic line {header[0]!r}", path)
    if first[1] != VERSION:
        raise WeightsError(f"unsupported version {first[1]!r} (expected {VERSION})", path)
    resolution = (int(first[2]), int(first[3]))
    if len(header) < 2 or header[1] != f"arch {ARCH_TAG}":
        raise WeightsError(f"architecture mismatch: file has {header[1] if len(header) > 1 else '?'!r}, "
                           f"expected 'arch {ARCH_TAG}'", path)

    arrays = []
    expected = list(_expected_tensors())
    records = header[2:]
    if len(records) != len(expected):
        raise WeightsError(f"architecture mismatch: {len(records)} tensors, expected {len(expected)}", path)
    for rec, (want_name, want_shape) in zip(records, expected):
        parts = rec.split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise WeightsError(f"malformed manifest line {rec!r}", path)
        name, shape, offset = parts[1], tuple(int(d) for d in parts[2].split(",")), int(parts[3])
        if name != want_name or shape != want_shape:
            raise WeightsError(f"architecture mismatch: {name} {shape}, expected {want_name} {want_shape}", path)
        nbytes = 4 * int(np.prod(shape))
        if offset < 0 or offset + nbytes > len(body):
            raise WeightsError(f"truncated data for {name}", path)
        arrays.append(np.frombuffer(body[offset:offset + nbytes], dtype="<f4").astype(np.float32).reshape(shape))
    layers = tuple(Layer(name, spec, arrays[2 * i], arrays[2 * i + 1]) for i, (name, spec) in enumerate(ARCHITECTURE))
    return ShiftNetParams(layers, resolution)
