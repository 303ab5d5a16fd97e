import numpy as np
import pytest
from hypothesis import given, strategies as st

from domshift.errors import ConfigError, ShapeError
from domshift.optim import (
    AdamState,
    ScheduleSpec,
    adam_step,
    cyclical_exp_lr,
    exp_ramp,
    sgd_step,
    step_decay_lr,
)

CYCLIC = ScheduleSpec(kind="cyclical-exp", lr_min=1e-5, lr_max=1e-3, ramp_steps=20)


def test_adam_zero_gradient_is_identity():
    p = [np.array([1.0, -2.0], np.float32)]
    new, state = adam_step(p, [np.zeros(2, np.float32)], AdamState.zeros_like(p), lr=0.1)
    np.testing.assert_array_equal(new[0], p[0])
    assert state.t == 1


def test_adam_first_step_is_signed_lr():
    p = [np.zeros(3, np.float32)]
    g = [np.array([0.3, -5.0, 2e-3], np.float32)]
    new, _ = adam_step(p, g, AdamState.zeros_like(p), lr=0.01)
    np.testing.assert_allclose(new[0], -0.01 * np.sign(g[0]), rtol=1e-4)


def test_adam_descends_quadratic():
    w = [np.array([1.0], np.float32)]
    state = AdamState.zeros_like(w)
    history = [abs(float(w[0][0]))]
    for _ in range(10):
        w, state = adam_step(w, [2 * w[0]], state, lr=0.1)
        history.append(abs(float(w[0][0])))
    assert all(b < a for a, b in zip(history, history[1:]))


def test_adam_does_not_mutate_inputs():
    p = [np.ones(2, np.float32)]
    state = AdamState.zeros_like(p)
    adam_step(p, [np.ones(2, np.float32)], state, lr=0.1)
    assert np.all(p[0] == 1) and state.t == 0 and not np.any(state.m[0])


def test_adam_shape_mismatch():
    p = [np.ones(2, np.float32)]
    with pytest.raises(ShapeError):
        adam_step(p, [np.ones(3, np.float32)], AdamState.zeros_like(p), lr=0.1)


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False, width=32).filter(lambda g: abs(g) > 1e-3),
                min_size=1, max_size=8),
       st.integers(1, 30))
def test_adam_constant_gradient_step_bounded_by_lr(gs, steps):
    lr = 0.05
    g = [np.array(gs, np.float32)]
    p = [np.zeros(len(gs), np.float32)]
    state = AdamState.zeros_like(p)
    for _ in range(steps):
        new, state = adam_step(p, g, state, lr=lr)
        assert np.all(np.abs(new[0] - p[0]) <= lr * (1 + 1e-5))
        p = new


@given(st.integers(0, 50))
def test_adam_zero_gradient_identity_any_state(t):
    rng = np.random.default_rng(t)
    p = [rng.standard_normal(4).astype(np.float32)]
    state = AdamState(m=[np.zeros(4, np.float32)], v=[rng.random(4).astype(np.float32)], t=t)
    new, _ = adam_step(p, [np.zeros(4, np.float32)], state, lr=0.3)
    np.testing.assert_array_equal(new[0], p[0])


def test_sgd_values():
    assert sgd_step([np.array([1.0], np.float32)], [np.array([2.0], np.float32)], 0.1)[0][0] == pytest.approx(0.8)
    p = [np.array([3.0], np.float32)]
    assert sgd_step(p, [np.zeros(1, np.float32)], 0.1)[0][0] == 3.0


def test_sgd_quadratic_monotone():
    # f(w) = 2 w^2, curvature 4; any lr < 0.5 contracts
    w = [np.array([1.0], np.float32)]
    losses = []
    for _ in range(20):
        losses.append(2 * float(w[0][0]) ** 2)
        w = sgd_step(w, [4 * w[0]], 0.2)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_sgd_rejects_bad_lr_and_shapes():
    with pytest.raises(ConfigError):
        sgd_step([np.ones(1)], [np.ones(1)], 0.0)
    with pytest.raises(ShapeError):
        sgd_step([np.ones(1)], [np.ones(2)], 0.1)


def test_step_decay_table():
    spec = ScheduleSpec()
    assert step_decay_lr(spec, 0) == 0.01
    assert step_decay_lr(spec, 30) == 0.005
    assert step_decay_lr(spec, 65) == 0.0025


def test_cyclical_table():
    assert cyclical_exp_lr(CYCLIC, 0) == 1e-5
    assert cyclical_exp_lr(CYCLIC, 10) == 1e-4
    assert exp_ramp(1e-5, 1e-3, 1.0) == 1e-3
    assert cyclical_exp_lr(CYCLIC, 20) == 1e-5


@given(st.integers(0, 10_000))
def test_schedules_shape(i):
    assert step_decay_lr(ScheduleSpec(), i + 1) <= step_decay_lr(ScheduleSpec(), i)
    lr = cyclical_exp_lr(CYCLIC, i)
    assert 1e-5 <= lr < 1e-3
    assert lr == cyclical_exp_lr(CYCLIC, i + 20)


@pytest.mark.parametrize("kwargs", [
    {"kind": "cosine"}, {"base_lr": 0.0}, {"decay_factor": 1.5}, {"ramp_steps": 0},
])
def test_schedule_validation(kwargs):
    with pytest.raises(ConfigError):
        ScheduleSpec(**kwargs)
