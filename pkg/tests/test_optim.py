import math

import numpy as np

from dcmatch.optim import AdamWState, adamw_step, cosine_lr
from dcmatch.params import ModelDims, ParamStore


def fresh_params(seed=0):
    dims = ModelDims(frames=2, channels=3, proj_dim=2, classes=2)
    return ParamStore.init(dims, np.random.default_rng(seed))


class TestAdamW:
    def test_zero_gradients_zero_decay_leave_params(self):
        params = fresh_params()
        before = {name: tensor.copy() for name, tensor, _ in params.named_params()}
        state = AdamWState.for_params(params)
        params.zero_grads()
        adamw_step(params, state, lr=0.1, weight_decay=0.0)
        for name, tensor, _ in params.named_params():
            assert np.array_equal(tensor, before[name])

    def test_decay_only_step_shrinks_by_exact_factor(self):
        params = fresh_params()
        before = {name: tensor.copy() for name, tensor, _ in params.named_params()}
        state = AdamWState.for_params(params)
        params.zero_grads()
        lr, wd = 0.05, 0.1
        adamw_step(params, state, lr=lr, weight_decay=wd)
        factor = 1.0 - lr * wd
        for name, tensor, _ in params.named_params():
            assert np.array_equal(tensor, before[name] * factor)

    def test_single_step_on_quadratic_matches_hand_update(self):
        # f(x) = x^2 at x = 1: gradient 2, first moment hat 2, second
        # moment hat 4, update lr * 2 / (2 + eps)
        params = fresh_params()
        params.proj_bias[:] = 0.0
        params.proj_bias[0] = 1.0
        state = AdamWState.for_params(params)
        params.zero_grads()
        params.grads["proj_bias"][0] = 2.0
        lr, eps = 0.01, 1e-8
        adamw_step(params, state, lr=lr, weight_decay=0.0, eps=eps)
        expected = 1.0 - lr * (2.0 / (math.sqrt(4.0) + eps))
        assert abs(params.proj_bias[0] - expected) < 1e-15

    def test_two_steps_track_reference_adam(self):
        params = fresh_params()
        params.proj_bias[:] = 0.0
        params.proj_bias[0] = 1.0
        state = AdamWState.for_params(params)
        beta1, beta2, lr, eps = 0.9, 0.999, 0.1, 1e-8
        x, m, v = 1.0, 0.0, 0.0
        for t in (1, 2):
            g = 2.0 * x
            params.zero_grads()
            params.grads["proj_bias"][0] = g
            adamw_step(params, state, lr=lr, weight_decay=0.0,
                       beta1=beta1, beta2=beta2, eps=eps)
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            mhat = m / (1 - beta1**t)
            vhat = v / (1 - beta2**t)
            x = x - lr * mhat / (math.sqrt(vhat) + eps)
            assert abs(params.proj_bias[0] - x) < 1e-12

    def test_step_count_advances(self):
        params = fresh_params()
        state = AdamWState.for_params(params)
        params.zero_grads()
        adamw_step(params, state, lr=0.1)
        adamw_step(params, state, lr=0.1)
        assert state.step == 2


class TestCosineSchedule:
    def test_endpoints(self):
        assert cosine_lr(0.5, 0, 100) == 0.5
        assert abs(cosine_lr(0.5, 100, 100)) < 1e-16

    def test_midpoint_is_half(self):
        assert abs(cosine_lr(1.0, 50, 100) - 0.5) < 1e-12

    def test_clamps_outside_range(self):
        assert cosine_lr(1.0, -5, 100) == 1.0
        assert abs(cosine_lr(1.0, 150, 100)) < 1e-16

    def test_degenerate_total(self):
        assert cosine_lr(0.3, 10, 0) == 0.3
