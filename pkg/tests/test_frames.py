import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcmatch.dcorr import centered_alpha_distances, dcorr2, dcorr2_reference
from dcmatch.errors import InputError, ShapeError
from dcmatch.frames import (
    corr_grid,
    frame_alpha_d_stack,
    interframe_corr,
    stack_self_products,
    video_alpha_d_average,
)
from conftest import random_video


class TestFrameStack:
    def test_constant_frame_gives_zero_matrix(self):
        video = np.ones((1, 5, 4))
        stack = frame_alpha_d_stack(video, 0.8)
        assert stack.shape == (1, 4, 4)
        assert np.all(stack == 0.0)

    def test_two_channel_structure(self, rng):
        video = random_video(rng, frames=1, tokens=5, channels=2)
        stack = frame_alpha_d_stack(video, 0.8)
        c = stack[0, 0, 1]
        assert c > 0.0
        assert np.allclose(stack[0], [[-c, c], [c, -c]])

    def test_matches_per_frame_kernel_bitwise(self, rng):
        video = random_video(rng, frames=3, tokens=6, channels=5)
        stack = frame_alpha_d_stack(video, 0.7)
        for t in range(3):
            expected = centered_alpha_distances(video[t].T, 0.7)
            assert np.array_equal(stack[t], expected)

    def test_invariants_on_random_video(self, rng):
        video = random_video(rng, frames=8, tokens=10, channels=16)
        stack = frame_alpha_d_stack(video, 0.8)
        for t in range(8):
            mat = stack[t]
            assert np.array_equal(mat, mat.T)
            bound = 1e-9 * 16 * max(np.abs(mat).max(), 1.0)
            assert np.abs(mat.sum(axis=0)).max() < bound
            assert np.abs(mat.sum(axis=1)).max() < bound

    def test_class_token_exclusion_changes_result(self, rng):
        video = random_video(rng, frames=2, tokens=6, channels=4)
        with_token = frame_alpha_d_stack(video, 0.8, include_class_token=True)
        without = frame_alpha_d_stack(video, 0.8, include_class_token=False)
        manual = frame_alpha_d_stack(video[:, 1:, :], 0.8)
        assert not np.allclose(with_token, without)
        assert np.array_equal(without, manual)

    def test_rejects_single_channel(self, rng):
        with pytest.raises(InputError):
            frame_alpha_d_stack(rng.standard_normal((2, 4, 1)), 0.8)

    def test_deterministic_recompute(self, rng):
        video = random_video(rng)
        first = frame_alpha_d_stack(video, 0.8)
        second = frame_alpha_d_stack(video, 0.8)
        assert np.array_equal(first, second)


class TestInterframeCorr:
    def test_self_video_diagonal_is_one(self, rng):
        stack = frame_alpha_d_stack(random_video(rng), 0.8)
        grid = interframe_corr(stack, stack)
        assert np.allclose(np.diagonal(grid), 1.0)

    def test_entries_in_unit_interval(self, rng):
        a = frame_alpha_d_stack(random_video(rng), 0.8)
        b = frame_alpha_d_stack(random_video(rng), 0.8)
        grid = interframe_corr(a, b)
        assert np.all(grid >= 0.0) and np.all(grid <= 1.0)

    def test_matches_scalar_dcorr2(self, rng):
        a = frame_alpha_d_stack(random_video(rng), 0.8)
        b = frame_alpha_d_stack(random_video(rng), 0.8)
        grid = interframe_corr(a, b)
        for i in range(a.shape[0]):
            for j in range(b.shape[0]):
                assert abs(grid[i, j] - dcorr2(a[i], b[j])) < 1e-12

    def test_matches_reference_oracle(self, rng):
        va = random_video(rng, frames=2, tokens=4, channels=5)
        vb = random_video(rng, frames=3, tokens=4, channels=5)
        grid = interframe_corr(
            frame_alpha_d_stack(va, 0.8), frame_alpha_d_stack(vb, 0.8)
        )
        for i in range(2):
            for j in range(3):
                ref = dcorr2_reference(va[i].T, vb[j].T, 0.8)
                assert abs(grid[i, j] - ref) <= 1e-10 * max(1.0, abs(ref))

    def test_transpose_is_bitwise_exact(self, rng):
        a = frame_alpha_d_stack(random_video(rng, frames=3), 0.8)
        b = frame_alpha_d_stack(random_video(rng, frames=5), 0.8)
        assert np.array_equal(interframe_corr(a, b), interframe_corr(b, a).T)

    def test_channel_dimension_mismatch(self, rng):
        a = frame_alpha_d_stack(random_video(rng, channels=4), 0.8)
        b = frame_alpha_d_stack(random_video(rng, channels=5), 0.8)
        with pytest.raises(ShapeError):
            interframe_corr(a, b)

    def test_cached_norms_path_matches(self, rng):
        a = frame_alpha_d_stack(random_video(rng), 0.8)
        b = frame_alpha_d_stack(random_video(rng), 0.8)
        grid = corr_grid(a, stack_self_products(a), b, stack_self_products(b))
        assert np.allclose(grid, interframe_corr(a, b), rtol=0, atol=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31),
           scale=st.sampled_from([0.1, 10.0]))
    def test_channel_scaling_leaves_grid(self, seed, scale):
        r = np.random.default_rng(seed)
        va = random_video(r, frames=3, tokens=5, channels=6)
        vb = random_video(r, frames=3, tokens=5, channels=6)
        base = interframe_corr(frame_alpha_d_stack(va, 0.8), frame_alpha_d_stack(vb, 0.8))
        scaled = interframe_corr(
            frame_alpha_d_stack(scale * va, 0.8), frame_alpha_d_stack(scale * vb, 0.8)
        )
        assert np.abs(base - scaled).max() <= 1e-9

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31))
    def test_token_permutation_invariance(self, seed):
        r = np.random.default_rng(seed)
        va = random_video(r, frames=2, tokens=6, channels=5)
        vb = random_video(r, frames=2, tokens=6, channels=5)
        perm = r.permutation(6)
        base = interframe_corr(frame_alpha_d_stack(va, 0.8), frame_alpha_d_stack(vb, 0.8))
        permuted = interframe_corr(
            frame_alpha_d_stack(va[:, perm, :], 0.8),
            frame_alpha_d_stack(vb[:, perm, :], 0.8),
        )
        assert np.abs(base - permuted).max() <= 1e-12


class TestVideoAverage:
    def test_single_frame_passthrough(self, rng):
        stack = frame_alpha_d_stack(random_video(rng, frames=1), 0.8)
        assert np.array_equal(video_alpha_d_average(stack), stack[0])

    def test_cancellation(self, rng):
        mat = centered_alpha_distances(rng.standard_normal((4, 3)), 0.8)
        stack = np.stack([mat, -mat])
        assert np.allclose(video_alpha_d_average(stack), 0.0)

    def test_centering_preserved(self, rng):
        stack = frame_alpha_d_stack(random_video(rng, frames=6, channels=8), 0.8)
        avg = video_alpha_d_average(stack)
        assert np.array_equal(avg, avg.T)
        assert np.abs(avg.sum(axis=0)).max() < 1e-9 * max(np.abs(avg).max() * 8, 1.0)

    def test_empty_stack_rejected(self):
        with pytest.raises(InputError):
            video_alpha_d_average(np.zeros((0, 3, 3)))
