"""Adam update arithmetic and the cosine schedule endpoints."""

import numpy as np
import pytest

from engpred.autodiff import Tensor
from engpred.errors import NumericError
from engpred.optim import AdamState, adam_step, cosine_lr


def _setup(values):
    params = {"w": Tensor(np.asarray(values, dtype=np.float64))}
    return params, AdamState.for_params(params)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params, state = _setup([1.0, -2.0, 3.0])
        before = params["w"].data.copy()
        # Second-moment history decays; with no first-moment signal the
        # update is exactly zero.
        state.v["w"][:] = 0.25
        adam_step(params, {"w": np.zeros(3)}, state, lr=1e-2)
        np.testing.assert_array_equal(params["w"].data, before)
        np.testing.assert_allclose(state.m["w"], 0.0)
        np.testing.assert_allclose(state.v["w"], 0.25 * 0.999)

    def test_first_step_from_zero_state(self):
        g = np.array([0.3, -2.0, 0.0001])
        lr, eps = 1e-3, 1e-8
        params, state = _setup([0.0, 0.0, 0.0])
        adam_step(params, {"w": g}, state, lr=lr, eps=eps)
        # After bias correction, m_hat = g and v_hat = g^2, so the update is
        # -lr * g / (|g| + eps) elementwise.
        expected = -lr * g / (np.abs(g) + eps)
        np.testing.assert_allclose(params["w"].data, expected, rtol=1e-12)

    def test_constant_gradient_step_magnitude_approaches_lr(self):
        g = np.array([0.7, -0.01])
        lr = 1e-3
        params, state = _setup([0.0, 0.0])
        prev = params["w"].data.copy()
        for _ in range(400):
            prev = params["w"].data.copy()
            adam_step(params, {"w": g}, state, lr=lr)
        step = params["w"].data - prev
        np.testing.assert_allclose(np.abs(step), lr, rtol=1e-3)
        assert np.all(np.sign(step) == -np.sign(g))

    def test_missing_grad_treated_as_zero(self):
        params, state = _setup([4.0])
        adam_step(params, {}, state, lr=1e-2)
        np.testing.assert_array_equal(params["w"].data, [4.0])

    def test_non_finite_gradient_rejected(self):
        params, state = _setup([1.0])
        with pytest.raises(NumericError):
            adam_step(params, {"w": np.array([np.inf])}, state, lr=1e-3)

    def test_lr_zero_is_identity(self):
        params, state = _setup([1.0, 2.0])
        before = params["w"].data.copy()
        adam_step(params, {"w": np.array([0.5, -0.5])}, state, lr=0.0)
        np.testing.assert_array_equal(params["w"].data, before)

    def test_state_counter_increments(self):
        params, state = _setup([1.0])
        for expected in (1, 2, 3):
            adam_step(params, {"w": np.array([0.1])}, state, lr=1e-3)
            assert state.t == expected


class TestCosineLr:
    def test_endpoints(self):
        assert cosine_lr(0, 1000) == pytest.approx(1e-4)
        assert cosine_lr(1000, 1000) == pytest.approx(1e-7)

    def test_midpoint(self):
        assert cosine_lr(500, 1000) == pytest.approx((1e-4 + 1e-7) / 2)

    def test_custom_bounds(self):
        assert cosine_lr(0, 10, lr_max=0.5, lr_min=0.1) == pytest.approx(0.5)
        assert cosine_lr(10, 10, lr_max=0.5, lr_min=0.1) == pytest.approx(0.1)

    def test_monotone_decreasing(self):
        values = [cosine_lr(s, 100) for s in range(101)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            cosine_lr(-1, 10)
        with pytest.raises(ValueError):
            cosine_lr(11, 10)
        with pytest.raises(ValueError):
            cosine_lr(0, 0)
