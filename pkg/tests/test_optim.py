import math

import numpy as np
import pytest

from aroma.linalg import NumericError, make_rng
from aroma.optim import AdamConfig, OptimizerSlot, WarmupSchedule, adam_step, lr_at, reset_states


def test_first_step_closed_form():
    slot = OptimizerSlot.zeros_like(np.zeros(1))
    new = adam_step(np.zeros(1), np.array([0.5]), slot, AdamConfig(eps=1e-8), 1e-3)
    assert abs(new[0] - (-9.99999980e-4)) < 1e-12
    assert slot.step == 1


def test_zero_grad_is_noop():
    p = np.array([1.0, -2.0])
    new = adam_step(p, np.zeros(2), OptimizerSlot.zeros_like(p), AdamConfig(), 1e-2)
    np.testing.assert_array_equal(new, p)


def reference_adam(theta, steps, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    # scalar-by-scalar loop on f(theta) = 0.5 * sum(c * theta^2)
    c = [1.0 + i for i in range(len(theta))]
    theta = list(theta)
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    for t in range(1, steps + 1):
        for i in range(len(theta)):
            g = c[i] * theta[i]
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            theta[i] = theta[i] - lr * mh / (math.sqrt(vh) + eps) - lr * wd * theta[i]
    return theta


@pytest.mark.parametrize("wd", [0.0, 0.01])
def test_trajectory_matches_reference(wd):
    theta0 = [1.0, -0.5, 2.0]
    c = np.array([1.0, 2.0, 3.0])
    p = np.array(theta0)
    slot = OptimizerSlot.zeros_like(p)
    cfg = AdamConfig(weight_decay=wd)
    for _ in range(100):
        p = adam_step(p, c * p, slot, cfg, 1e-2)
    np.testing.assert_allclose(p, reference_adam(theta0, 100, 1e-2, wd=wd), rtol=1e-12, atol=1e-15)


def test_non_finite_gradient_leaves_state():
    p = np.ones(3)
    slot = OptimizerSlot.zeros_like(p)
    adam_step(p, np.ones(3), slot, AdamConfig(), 1e-3)
    m, v, step = slot.m.copy(), slot.v.copy(), slot.step
    with pytest.raises(NumericError):
        adam_step(p, np.array([1.0, np.inf, 0.0]), slot, AdamConfig(), 1e-3)
    np.testing.assert_array_equal(slot.m, m)
    np.testing.assert_array_equal(slot.v, v)
    assert slot.step == step


def test_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        AdamConfig(eps=0.0)
    with pytest.raises(ValueError):
        adam_step(np.ones(1), np.ones(1), OptimizerSlot.zeros_like(np.ones(1)), AdamConfig(), -1.0)


def filled_slot(n, seed=0):
    r = np.random.default_rng(seed)
    return OptimizerSlot(r.uniform(0.1, 1.0, n), r.uniform(0.1, 1.0, n), step=7)


def test_reset_full_and_none():
    slot = reset_states(filled_slot(20), 1.0, make_rng(0))
    assert not slot.m.any() and not slot.v.any() and slot.step == 0
    ref = filled_slot(20)
    slot = reset_states(filled_slot(20), 0.0, make_rng(0))
    np.testing.assert_array_equal(slot.m, ref.m)
    np.testing.assert_array_equal(slot.v, ref.v)
    assert slot.step == 0


def test_reset_counts_999_of_1000_reproducibly():
    a = reset_states(filled_slot(1000), 0.999, make_rng(42))
    b = reset_states(filled_slot(1000), 0.999, make_rng(42))
    assert int(np.sum(a.m == 0.0)) == 999
    np.testing.assert_array_equal(a.m == 0.0, a.v == 0.0)
    np.testing.assert_array_equal(a.m, b.m)


def test_reset_can_keep_step_counter():
    slot = reset_states(filled_slot(10), 0.5, make_rng(1), reset_step_counter=False)
    assert slot.step == 7 and int(np.sum(slot.m == 0.0)) == 5


def test_reset_2d_shapes_kept():
    slot = OptimizerSlot(np.ones((1, 6)), np.ones((1, 6)))
    reset_states(slot, 0.5, make_rng(3))
    assert slot.m.shape == (1, 6) and int(np.sum(slot.m == 0)) == 3


def test_lr_examples():
    assert lr_at(WarmupSchedule(initial_warmup_steps=100), 0) == 0.0
    sched = WarmupSchedule(base_lr=1e-4, rewarmup_steps=50)
    assert abs(lr_at(sched, 1234, 25) - 5e-5) < 1e-20


def test_lr_hand_table_two_resets():
    sched = WarmupSchedule(base_lr=1.0, initial_warmup_steps=4, rewarmup_steps=2)
    # (global step, updates since last reset or None) -> lr, resets before steps 6 and 9
    table = [(0, None, 0.0), (1, None, 0.25), (2, None, 0.5), (3, None, 0.75), (4, None, 1.0),
             (5, None, 1.0), (6, 0, 0.0), (7, 1, 0.5), (8, 2, 1.0), (9, 0, 0.0), (10, 1, 0.5),
             (11, 2, 1.0), (12, 3, 1.0)]
    for step, since, want in table:
        assert lr_at(sched, step, since) == want, (step, since)


def test_lr_linear_decay_and_no_warmup():
    sched = WarmupSchedule(base_lr=2.0, initial_warmup_steps=0, decay="linear", horizon=10)
    assert lr_at(sched, 0) == 2.0
    assert lr_at(sched, 5) == 1.0
    assert lr_at(sched, 12) == 0.0
    with pytest.raises(ValueError):
        WarmupSchedule(decay="linear")
