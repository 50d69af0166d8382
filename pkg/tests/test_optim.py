import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mobileunetr.autodiff import Tensor, precision
from mobileunetr.errors import ShapeMismatchError
from mobileunetr.optim import OptimState, ScheduleSpec, adamw_step, decay_mask, lr_at


def adam_reference(theta, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def scalar_param(value):
    with precision(np.float64):
        return Tensor(np.array([value]), requires_grad=True)


def test_schedule_anchor_values():
    assert abs(lr_at(0) - 1e-5) < 1e-12
    assert abs(lr_at(40) - 4e-4) < 1e-12
    assert abs(lr_at(240) - 2e-4) < 1e-12
    assert abs(lr_at(440) - 0.0) < 1e-12


def test_schedule_is_continuous_at_warmup_end():
    assert abs(lr_at(40 - 1e-9) - lr_at(40 + 1e-9)) < 1e-12


@given(st.floats(0, 440))
def test_schedule_bounded(epoch):
    assert 0.0 <= lr_at(epoch) <= 4e-4 + 1e-18


def test_schedule_rejects_out_of_range():
    with pytest.raises(ValueError):
        lr_at(-1)
    with pytest.raises(ValueError):
        lr_at(441)
    with pytest.raises(ValueError):
        ScheduleSpec(warmup_epochs=50, total_epochs=50)


def test_scaled_schedule_with_floor():
    spec = ScheduleSpec(base_lr=1e-3, warmup_epochs=10, total_epochs=110, min_lr=1e-4)
    assert lr_at(0, spec) == pytest.approx(1e-4)
    assert lr_at(60, spec) == pytest.approx(5.5e-4)
    assert lr_at(110, spec) == pytest.approx(1e-4)


def test_zero_grad_no_decay_leaves_params():
    p = scalar_param(1.5)
    state = OptimState.for_params([p], weight_decay=0.0)
    adamw_step([p], [np.zeros(1)], state, 0.1)
    assert p.data[0] == 1.5 and state.t == 1


def test_decoupled_decay_only():
    p = scalar_param(1.0)
    state = OptimState.for_params([p], weight_decay=0.01)
    adamw_step([p], [np.zeros(1)], state, 0.1)
    assert p.data[0] == pytest.approx(0.999, abs=1e-15)


def test_first_step_moves_by_lr():
    p = scalar_param(0.3)
    state = OptimState.for_params([p], weight_decay=0.0)
    adamw_step([p], [np.ones(1)], state, 0.1)
    assert p.data[0] == pytest.approx(0.3 - 0.1, abs=1e-8)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(0, 0.1), st.floats(1e-4, 0.1))
def test_matches_scalar_reference(grads, wd, lr):
    p = scalar_param(0.7)
    state = OptimState.for_params([p], weight_decay=wd)
    for g in grads:
        adamw_step([p], [np.array([g])], state, lr)
    assert p.data[0] == pytest.approx(adam_reference(0.7, grads, lr, wd), rel=1e-9, abs=1e-12)


def test_constant_gradient_update_tends_to_lr():
    p = scalar_param(0.0)
    state = OptimState.for_params([p], weight_decay=0.0)
    prev, steps = 0.0, []
    for _ in range(200):
        adamw_step([p], [np.array([0.37])], state, 0.01)
        steps.append(prev - p.data[0])
        prev = p.data[0]
    assert abs(steps[-1] - 0.01) < 1e-6


def test_decay_mask_skips_vectors():
    params = [Tensor(np.ones((2, 2)), requires_grad=True), Tensor(np.ones(2), requires_grad=True)]
    assert decay_mask(params) == [True, False]
    state = OptimState.for_params(params, decay_mask(params), weight_decay=0.5)
    adamw_step(params, [np.zeros((2, 2)), np.zeros(2)], state, 0.1)
    assert (params[0].data == 0.95).all() and (params[1].data == 1.0).all()


def test_shape_mismatch():
    p = scalar_param(1.0)
    state = OptimState.for_params([p])
    with pytest.raises(ShapeMismatchError):
        adamw_step([p], [np.zeros(2)], state, 0.1)
