"""Adam and plain SGD updates, plus the two learning-rate schedules.

Parameters are passed as lists of arrays; updates return new arrays and
never mutate their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "step-decay"
    base_lr: float = 0.01
    decay_factor: float = 0.5
    decay_every: int = 30
    lr_min: float = 1e-5
    lr_max: float = 1e-3
    ramp_steps: int = 20

    def __post_init__(self):
        if self.kind not in ("step-decay", "cyclical-exp"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if min(self.base_lr, self.lr_min, self.lr_max) <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1 or self.ramp_steps < 1:
            raise ConfigError("decay_every and ramp_steps must be >= 1")

    def lr(self, step: int) -> float:
        if self.kind == "step-decay":
            return step_decay_lr(self, step)
        return cyclical_exp_lr(self, step)


def step_decay_lr(spec: ScheduleSpec, epoch: int) -> float:
    """base_lr * decay_factor ** floor(epoch / decay_every)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return spec.base_lr * spec.decay_factor ** (epoch // spec.decay_every)


def cyclical_exp_lr(spec: ScheduleSpec, iteration: int) -> float:
    """Sawtooth: exponential ramp from lr_min toward lr_max, restarting every ramp_steps."""
    if iteration < 0:
        raise ConfigError(f"iteration must be >= 0, got {iteration}")
    i = iteration % spec.ramp_steps
    return exp_ramp(spec.lr_min, spec.lr_max, i / spec.ramp_steps)


def exp_ramp(lr_min: float, lr_max: float, fraction: float) -> float:
    """Geometric interpolation: lr_min at fraction 0, lr_max at fraction 1."""
    # log-space form keeps decade grids exact, e.g. (1e-5, 1e-3, 0.5) -> 1e-4
    lo = math.log10(lr_min)
    return 10 ** (lo + (math.log10(lr_max) - lo) * fraction)


def _check_pairs(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients", dim="count")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"parameter {i}: shape {np.shape(p)} vs gradient {np.shape(g)}", dim=f"param[{i}]")


def sgd_step(params, grads, lr):
    if lr <= 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    _check_pairs(params, grads)
    return [(p - np.float32(lr) * g).astype(p.dtype, copy=False) for p, g in zip(params, grads)]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state: AdamState, lr):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if lr <= 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    _check_pairs(params, grads)
    _check_pairs(params, state.m)
    _check_pairs(params, state.v)
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = (b1 * m + (1 - b1) * g).astype(p.dtype, copy=False)
        v = (b2 * v + (1 - b2) * np.square(g)).astype(p.dtype, copy=False)
        step = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        new_params.append((p - step).astype(p.dtype, copy=False))
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, m=new_m, v=new_v, t=t)
