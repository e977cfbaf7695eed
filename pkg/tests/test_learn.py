import numpy as np
import pytest

from dcmatch.data import sample_episode
from dcmatch.errors import ShapeError
from dcmatch.evaluate import EvalSettings, FeatureCache
from dcmatch.learn import (
    LossConfig,
    episode_gradcheck,
    finite_diff_report,
    forward,
    forward_backward,
    precompute_episode,
)
from dcmatch.params import ModelDims, ParamStore


def make_params(bundle, proj_dim, seed=1, data_bank=False):
    dims = ModelDims(
        frames=bundle.frames,
        channels=bundle.channels,
        proj_dim=proj_dim,
        classes=bundle.num_classes,
    )
    params = ParamStore.init(dims, np.random.default_rng(seed))
    if data_bank:
        cache = FeatureCache(bundle, 0.8)
        params.set_bank_from_representations(cache.all_video_reprs(), bundle.labels)
    return params


def make_pre(bundle, rng, way=4, shot=1, queries=1):
    cache = FeatureCache(bundle, 0.8)
    episode = sample_episode(bundle, way, shot, queries, rng)
    return precompute_episode(bundle, episode, cache, EvalSettings(alpha=0.8))


class TestForward:
    def test_loss_decomposition_exact(self, tiny_bundle_b, rng):
        params = make_params(tiny_bundle_b, 8)
        pre = make_pre(tiny_bundle_b, rng)
        cfg = LossConfig(lambda1=0.7, lambda2=1.3)
        parts = forward(params, pre, cfg)
        total = parts.align + 0.7 * parts.match + 1.3 * parts.guidance
        assert abs(parts.loss - total) < 1e-12
        assert abs(parts.guidance - (parts.kl + parts.ce)) < 1e-12

    def test_zero_weights_leave_gen_and_bank_untouched(self, tiny_bundle_b, rng):
        params = make_params(tiny_bundle_b, 8)
        pre = make_pre(tiny_bundle_b, rng)
        params.zero_grads()
        forward_backward(params, pre, LossConfig(lambda1=0.0, lambda2=0.0))
        assert np.all(params.grads["gen_weight"] == 0.0)
        assert np.all(params.grads["gen_bias"] == 0.0)
        assert np.all(params.grads["bank"] == 0.0)
        assert np.any(params.grads["proj_weight"] != 0.0)

    def test_teacherless_bundle_gives_zero_guidance(self, tiny_bundle_b, rng):
        stripped = type(tiny_bundle_b)(
            features=tiny_bundle_b.features.copy(),
            ids=list(tiny_bundle_b.ids),
            labels=tiny_bundle_b.labels.copy(),
            class_names=list(tiny_bundle_b.class_names),
            teachers=None,
            text_embeddings=tiny_bundle_b.text_embeddings,
        )
        params = make_params(stripped, 8)
        pre = make_pre(stripped, rng)
        parts = forward(params, pre, LossConfig())
        assert parts.guidance == 0.0
        assert parts.match > 0.0

    def test_projection_text_dim_mismatch_raises(self, tiny_bundle_b, rng):
        params = make_params(tiny_bundle_b, 5)  # text bank is 8-dimensional
        pre = make_pre(tiny_bundle_b, rng)
        with pytest.raises(ShapeError):
            forward(params, pre, LossConfig())

    def test_forward_does_not_write_grads(self, tiny_bundle_b, rng):
        params = make_params(tiny_bundle_b, 8)
        pre = make_pre(tiny_bundle_b, rng)
        params.zero_grads()
        forward(params, pre, LossConfig())
        for _, _, grad in params.named_params():
            assert np.all(grad == 0.0)


class TestFiniteDifferences:
    def test_quadratic_toy_loss(self, tiny_bundle_b):
        # per-tensor means keep the loss O(1): cancellation noise stays
        # far below the 1e-8 bar for an exactly quadratic objective
        params = make_params(tiny_bundle_b, 8)
        targets = {
            name: np.random.default_rng(7).standard_normal(tensor.shape)
            for name, tensor, _ in params.named_params()
        }

        def loss_fn():
            return sum(
                float(np.mean((tensor - targets[name]) ** 2))
                for name, tensor, _ in params.named_params()
            )

        params.zero_grads()
        for name, tensor, grad in params.named_params():
            grad[:] = 2.0 * (tensor - targets[name]) / tensor.size
        report = finite_diff_report(
            params, loss_fn, epsilon=1e-3, rng=np.random.default_rng(0), coords_per_tensor=40
        )
        assert report.max_rel_error < 1e-8

    def test_zero_gradient_coordinates_have_zero_error(self, tiny_bundle_b):
        params = make_params(tiny_bundle_b, 8)

        def loss_fn():
            return 3.5

        params.zero_grads()
        report = finite_diff_report(
            params, loss_fn, epsilon=1e-3, rng=np.random.default_rng(0), coords_per_tensor=10
        )
        assert report.max_rel_error == 0.0

    def test_full_model_gradients_verify(self, tiny_bundle_b):
        params = make_params(tiny_bundle_b, 8, data_bank=True)
        rng = np.random.default_rng(4)
        cache = FeatureCache(tiny_bundle_b, 0.8)
        cfg = LossConfig(lambda1=0.8, lambda2=1.2)
        worst = 0.0
        for trial in range(4):
            episode = sample_episode(tiny_bundle_b, 4, 2, 2, rng)
            pre = precompute_episode(tiny_bundle_b, episode, cache, EvalSettings(alpha=0.8))
            report = episode_gradcheck(
                params, pre, cfg, rng=np.random.default_rng(trial), coords_per_tensor=80
            )
            worst = max(worst, report.max_rel_error)
        assert worst < 1e-4

    def test_gradients_accumulate_across_calls(self, tiny_bundle_b, rng):
        params = make_params(tiny_bundle_b, 8)
        pre = make_pre(tiny_bundle_b, rng)
        cfg = LossConfig()
        params.zero_grads()
        forward_backward(params, pre, cfg)
        once = params.grads["proj_weight"].copy()
        forward_backward(params, pre, cfg)
        assert np.allclose(params.grads["proj_weight"], 2.0 * once)
