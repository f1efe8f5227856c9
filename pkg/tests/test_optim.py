from __future__ import annotations

import numpy as np
import pytest

from saslab import tensor as T
from saslab.gradcheck import finite_diff_grad
from saslab.optim import AdamW, LinearWarmupSchedule
from saslab.tensor import GradientTape, Tensor, backward


def test_schedule_endpoints():
    sched = LinearWarmupSchedule(peak_lr=1e-3, warmup_steps=100, total_steps=1000)
    assert sched.rate_at(0) == 0.0
    assert sched.rate_at(1) == pytest.approx(1e-5)
    assert sched.rate_at(100) == pytest.approx(1e-3)
    assert sched.rate_at(550) == pytest.approx(1e-3 * 450 / 900)
    assert sched.rate_at(1000) == 0.0
    assert sched.rate_at(5000) == 0.0


def test_schedule_without_warmup():
    sched = LinearWarmupSchedule(peak_lr=1e-2, warmup_steps=0, total_steps=10)
    assert sched.rate_at(0) == pytest.approx(1e-2)


def test_zero_grad_zero_decay_is_identity():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True, name="p")
    opt = AdamW({"p": p}, LinearWarmupSchedule(1e-2, 0, 100), weight_decay=0.0)
    before = p.data.copy()
    for _ in range(5):
        opt.step({})
    np.testing.assert_array_equal(p.data, before)


def test_first_update_matches_hand_computation():
    # One AdamW step by hand: g=0.5, lr=1e-2 (no warmup), betas (0.9, 0.999),
    # eps 1e-8, wd 0.1. m=0.05, v=0.00025; mhat=0.5, vhat=0.25;
    # update = 0.5 / (0.5 + 1e-8) ~= 0.99999998; p' = 1 - lr*(update + 0.1*1).
    p = Tensor(np.array([1.0]), requires_grad=True, name="p")
    opt = AdamW({"p": p}, LinearWarmupSchedule(1e-2, 0, 100), weight_decay=0.1)
    opt.step({p: Tensor(np.array([0.5]))})
    expected = 1.0 - 1e-2 * (0.5 / (np.sqrt(0.25) + 1e-8) + 0.1 * 1.0)
    np.testing.assert_allclose(p.data, [expected], rtol=0, atol=1e-15)


def test_shape_mismatch_rejected():
    p = Tensor(np.zeros(3), requires_grad=True, name="p")
    opt = AdamW({"p": p}, LinearWarmupSchedule(1e-2, 0, 10))
    with pytest.raises(ValueError):
        opt.step({p: Tensor(np.zeros(4))})


def test_quadratic_descent_after_warmup():
    # Closed-form 2-D quadratic oracle: f(x) = 0.5 (x-c)^T A (x-c) with A
    # diagonal, optimum value 0 at c. Loss must strictly decrease once the
    # rate is past warmup, and end far below the start.
    c = np.array([1.5, -2.0])
    a = np.array([2.0, 0.5])

    def f_val(x):
        return float(0.5 * (a * (x - c) ** 2).sum())

    x = Tensor(np.zeros(2), requires_grad=True, name="x")
    opt = AdamW({"x": x}, LinearWarmupSchedule(0.03, 20, 200), weight_decay=0.0)
    losses = []
    for _ in range(200):
        with GradientTape() as tape:
            diff = T.sub(x, Tensor(c))
            loss = T.scale(T.reduce_sum(T.mul(Tensor(a), T.mul(diff, diff))), 0.5)
            losses.append(loss.item())
            grads = backward(loss, tape)
        opt.step(grads)
    assert losses[0] == pytest.approx(f_val(np.zeros(2)))
    # Adam's step size is ~rate, so descent is strict until the optimum is
    # reached (~distance/rate + warmup steps, past step 100 here).
    window = losses[20:100]
    assert all(b < a_ for a_, b in zip(window, window[1:]))
    assert losses[-1] < 0.05 * losses[0]


def test_finite_diff_on_square():
    p = {"x": Tensor(np.array([1.0]), requires_grad=True)}
    est = finite_diff_grad(lambda ps: float(ps["x"].data[0] ** 2), p, 1e-5)
    assert abs(est["x"][0] - 2.0) < 1e-9


def test_finite_diff_on_constant():
    p = {"x": Tensor(np.array([3.0]), requires_grad=True)}
    est = finite_diff_grad(lambda ps: 7.0, p, 1e-5)
    assert abs(est["x"][0]) < 1e-9


def test_finite_diff_rejects_bad_step():
    p = {"x": Tensor(np.array([1.0]), requires_grad=True)}
    with pytest.raises(ValueError):
        finite_diff_grad(lambda ps: 0.0, p, 0.0)


def test_state_round_trip():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True, name="p")
    opt = AdamW({"p": p}, LinearWarmupSchedule(1e-2, 0, 100))
    opt.step({p: Tensor(np.array([0.1, -0.2]))})
    arrays = {k: v.copy() for k, v in opt.state_arrays().items()}
    opt2 = AdamW({"p": p}, LinearWarmupSchedule(1e-2, 0, 100))
    opt2.load_state(arrays, opt.step_count)
    assert opt2.step_count == 1
    np.testing.assert_array_equal(opt2.m["p"], opt.m["p"])
    np.testing.assert_array_equal(opt2.v["p"], opt.v["p"])
