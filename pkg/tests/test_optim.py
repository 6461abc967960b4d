import numpy as np
import pytest

from lorasc.errors import ArgumentError, NumericError
from lorasc.optim import (AdamWState, LrPolicy, Schedule, adamw_step,
                          compressed_schedule, effective_lr, lr_at,
                          reinit_optimizer)


def scalar_params(value=1.0):
    return {"p": np.array([[value]], dtype=np.float64)}


class TestAdamW:
    def test_zero_gradient_leaves_parameter(self):
        params = scalar_params(0.7)
        state = reinit_optimizer(params, LrPolicy(0.1))
        adamw_step(state, params, {"p": np.zeros((1, 1))}, 0.1)
        assert params["p"][0, 0] == 0.7

    def test_first_step_moves_by_about_lr(self):
        # g=1 at step 1: bias correction gives m_hat/sqrt(v_hat) = 1
        params = scalar_params(0.0)
        state = reinit_optimizer(params, LrPolicy(0.05))
        adamw_step(state, params, {"p": np.ones((1, 1))}, 0.05)
        assert params["p"][0, 0] == pytest.approx(-0.05, rel=1e-6)

    def test_quadratic_convergence(self):
        params = scalar_params(1.0)
        state = reinit_optimizer(params, LrPolicy(0.1))
        for _ in range(200):
            grad = {"p": 2.0 * params["p"]}
            adamw_step(state, params, grad, 0.1)
        assert abs(params["p"][0, 0]) < 1e-2

    def test_decoupled_weight_decay(self):
        params = scalar_params(2.0)
        state = reinit_optimizer(params, LrPolicy(0.1), weight_decay=0.5)
        adamw_step(state, params, {"p": np.zeros((1, 1))}, 0.1)
        # zero gradient: only the decay term moves p, by lr*wd*p
        assert params["p"][0, 0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_nan_gradient_names_parameter(self):
        params = scalar_params()
        state = reinit_optimizer(params, LrPolicy(0.1))
        with pytest.raises(NumericError, match="'p'"):
            adamw_step(state, params, {"p": np.array([[np.nan]])}, 0.1)

    def test_empty_params_rejected(self):
        with pytest.raises(ArgumentError):
            reinit_optimizer({}, LrPolicy(0.1))


class TestSchedules:
    def test_linear_endpoints_and_midpoint(self):
        sched = Schedule("linear", 1e-3, 0.0, 5)
        assert lr_at(sched, 0) == 1e-3
        assert lr_at(sched, 4) == 0.0
        assert lr_at(sched, 2) == pytest.approx(5e-4)

    def test_linear_monotone(self):
        sched = Schedule("linear", 1.0, 0.1, 17)
        values = [lr_at(sched, s) for s in range(17)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_cosine_endpoints(self):
        sched = Schedule("cosine", 3e-4, 1e-5, 11)
        assert lr_at(sched, 0) == pytest.approx(3e-4, abs=1e-12)
        assert lr_at(sched, 10) == pytest.approx(1e-5, abs=1e-12)

    def test_constant(self):
        sched = Schedule("constant", 2e-3, 0.0, 9)
        assert all(lr_at(sched, s) == 2e-3 for s in range(9))

    def test_step_out_of_range_rejected(self):
        sched = Schedule("linear", 1.0, 0.0, 4)
        with pytest.raises(ArgumentError):
            lr_at(sched, 4)
        with pytest.raises(ArgumentError):
            lr_at(sched, -1)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ArgumentError):
            Schedule("exponential", 1.0, 0.0, 4)


class TestCompressedSchedule:
    def test_compress_1250_to_250(self):
        base = Schedule("linear", 1e-3, 0.0, 1250)
        sched = compressed_schedule(base, 250)
        assert sched.total_steps == 250
        assert lr_at(sched, 0) == 1e-3
        assert lr_at(sched, 249) == 0.0

    def test_no_compression_is_identity(self):
        base = Schedule("linear", 1e-3, 0.0, 100)
        assert compressed_schedule(base, 100) == base

    def test_single_step_degenerates_to_constant_start(self):
        base = Schedule("linear", 1e-3, 0.0, 1250)
        sched = compressed_schedule(base, 1)
        assert sched.kind == "constant"
        assert lr_at(sched, 0) == 1e-3

    def test_zero_steps_rejected(self):
        with pytest.raises(ArgumentError):
            compressed_schedule(Schedule("linear", 1.0, 0.0, 10), 0)

    def test_endpoint_fidelity_for_all_budgets(self):
        base = Schedule("linear", 5e-4, 1e-5, 1000)
        for budget in (2, 3, 10, 333, 1000):
            sched = compressed_schedule(base, budget)
            assert lr_at(sched, 0) == 5e-4
            assert lr_at(sched, budget - 1) == pytest.approx(1e-5, abs=1e-18)


class TestLrPolicy:
    def test_b_suffix_takes_ratio_at_every_step(self):
        params = {"t.a": np.zeros((2, 2)), "t.b": np.zeros((2, 2))}
        state = reinit_optimizer(params, LrPolicy(1e-3, b_ratio=16.0))
        sched = Schedule("linear", 1e-3, 0.0, 7)
        for step in range(6):  # lr 0 at the final step; ratio is 16x elsewhere
            lr = lr_at(sched, step)
            assert effective_lr(state, "t.b", lr) == pytest.approx(16.0 * effective_lr(state, "t.a", lr))

    def test_default_ratio_is_one(self):
        params = {"t.a": np.zeros((1, 1)), "t.b": np.zeros((1, 1))}
        state = reinit_optimizer(params, LrPolicy(1e-3))
        assert effective_lr(state, "t.b", 1e-3) == effective_lr(state, "t.a", 1e-3)

    def test_ratio_below_one_rejected(self):
        with pytest.raises(ArgumentError):
            LrPolicy(1e-3, b_ratio=0.5)

    def test_ratio_changes_updates(self):
        params = {"t.a": np.array([[0.0]]), "t.b": np.array([[0.0]])}
        state = reinit_optimizer(params, LrPolicy(0.01, b_ratio=16.0))
        grads = {"t.a": np.ones((1, 1)), "t.b": np.ones((1, 1))}
        adamw_step(state, params, grads, 0.01)
        assert params["t.b"][0, 0] == pytest.approx(16.0 * params["t.a"][0, 0], rel=1e-9)


class TestOptimizerAmnesia:
    def test_reinit_equals_from_scratch(self):
        params = {"t.a": np.ones((2, 2)), "t.b": np.ones((2, 2))}
        state = reinit_optimizer(params, LrPolicy(0.1))
        grads = {"t.a": np.full((2, 2), 0.3), "t.b": np.full((2, 2), -0.2)}
        for _ in range(5):
            adamw_step(state, params, grads, 0.1)
        again = reinit_optimizer(params, LrPolicy(0.1))
        scratch = AdamWState(params, LrPolicy(0.1))
        assert again.step_count == scratch.step_count == 0
        for name in params:
            np.testing.assert_array_equal(again.m[name], scratch.m[name])
            np.testing.assert_array_equal(again.v[name], scratch.v[name])
            assert np.all(again.m[name] == 0.0) and np.all(again.v[name] == 0.0)

    def test_post_reinit_step_equals_first_ever_step(self):
        p1 = {"x.a": np.array([[1.0]])}
        p2 = {"x.a": np.array([[1.0]])}
        grads = {"x.a": np.array([[0.5]])}
        warm = reinit_optimizer(p1, LrPolicy(0.1))
        for _ in range(3):
            adamw_step(warm, p1, grads, 0.1)
        p1["x.a"][0, 0] = 1.0
        warm = reinit_optimizer(p1, LrPolicy(0.1))  # the reinit under test
        adamw_step(warm, p1, grads, 0.1)
        cold = reinit_optimizer(p2, LrPolicy(0.1))
        adamw_step(cold, p2, grads, 0.1)
        np.testing.assert_array_equal(p1["x.a"], p2["x.a"])
