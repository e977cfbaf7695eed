"""Frame-level distance-correlation machinery for videos.

A video is a (T, tokens, d) tensor of token embeddings.  Each frame is
read column-wise: the d channels are the observations, each a vector
over the tokens.  Per frame this yields a (d, d) centered alpha-distance
matrix; stacks of those matrices drive both the inter-frame correlation
grid and the video-level averaged representation.
"""
from __future__ import annotations

import numpy as np

from .dcorr import CLAMP_GUARD, DEFAULT_ALPHA, check_alpha
from .errors import InputError, NumericalConsistencyError, ShapeError


def as_video(features) -> np.ndarray:
    """Validate and widen a (T, tokens, d) feature tensor to float64."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 3:
        raise InputError(f"video features must be 3-d (frames, tokens, channels), got {arr.shape}")
    t, tokens, d = arr.shape
    if t < 1:
        raise InputError("video must have at least one frame")
    if tokens < 2:
        raise InputError("video must have at least two tokens per frame")
    if d < 2:
        raise InputError("need at least two channels to form observations")
    if not np.all(np.isfinite(arr)):
        raise InputError("video features contain non-finite entries")
    return arr


def frame_alpha_d_stack(
    video, alpha: float = DEFAULT_ALPHA, include_class_token: bool = True
) -> np.ndarray:
    """Per-frame centered alpha-distance matrices, shape (T, d, d).

    Channels are the observations, so each frame contributes a d x d
    matrix built from distances between its channel columns.  The class
    token (row 0) participates unless ``include_class_token`` is False.
    """
    arr = as_video(video)
    a = check_alpha(alpha)
    if not include_class_token:
        if arr.shape[1] < 3:
            raise InputError("cannot drop the class token with fewer than three tokens")
        arr = arr[:, 1:, :]
    obs = np.transpose(arr, (0, 2, 1))  # (T, d, tokens)
    diff = obs[:, :, None, :] - obs[:, None, :, :]
    dist = np.sqrt(np.einsum("tklp,tklp->tkl", diff, diff))
    raw = dist**a
    # Same centering arithmetic as dcorr.double_center, batched over frames.
    rm = raw.mean(axis=2)
    gm = raw.mean(axis=(1, 2))
    return (raw - (rm[:, :, None] + rm[:, None, :])) + gm[:, None, None]


def stack_self_products(stack: np.ndarray) -> np.ndarray:
    """sum(A_t * A_t) per frame, the normalizers for correlation grids."""
    return np.einsum("tkl,tkl->t", stack, stack)


def _check_stack(stack, name: str) -> np.ndarray:
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ShapeError(f"{name} must be a (frames, d, d) stack, got {arr.shape}")
    return arr


def _ratio_grid(g: np.ndarray, na: np.ndarray, nb: np.ndarray) -> np.ndarray:
    """Normalize a cross-product grid with the same policy as dcorr2."""
    ok = (na[:, None] > 0.0) & (nb[None, :] > 0.0)
    denom = np.sqrt(np.outer(na, nb))
    ratio = np.where(ok, g / np.where(ok, denom, 1.0), 0.0)
    if not np.all(np.isfinite(ratio)) or float(ratio.min()) < -CLAMP_GUARD or float(
        ratio.max()
    ) > 1.0 + CLAMP_GUARD:
        raise NumericalConsistencyError(
            "inter-frame correlation left [0, 1] beyond the guard band"
        )
    return np.clip(ratio, 0.0, 1.0)


def corr_grid(support_stack, support_norms, query_stack, query_norms) -> np.ndarray:
    """Correlation grid from stacks whose self products are already known."""
    s2 = support_stack.reshape(support_stack.shape[0], -1)
    q2 = query_stack.reshape(query_stack.shape[0], -1)
    return _ratio_grid(s2 @ q2.T, support_norms, query_norms)


def interframe_corr(support, query) -> np.ndarray:
    """Grid of squared distance correlations between frame matrices.

    Entry (i, j) correlates support frame i with query frame j; all
    entries lie in [0, 1].  Swapping the arguments returns the bitwise
    transpose: the cross products are computed in a canonical operand
    order so BLAS reduction order cannot break the symmetry.
    """
    sa = _check_stack(support, "support stack")
    qa = _check_stack(query, "query stack")
    if sa.shape[1] != qa.shape[1]:
        raise ShapeError(
            f"channel dimensions differ: {sa.shape[1]} vs {qa.shape[1]}"
        )
    sa = np.ascontiguousarray(sa)
    qa = np.ascontiguousarray(qa)
    if sa.tobytes() <= qa.tobytes():
        g = sa.reshape(sa.shape[0], -1) @ qa.reshape(qa.shape[0], -1).T
    else:
        g = (qa.reshape(qa.shape[0], -1) @ sa.reshape(sa.shape[0], -1).T).T
    return _ratio_grid(g, stack_self_products(sa), stack_self_products(qa))


def video_alpha_d_average(stack) -> np.ndarray:
    """Elementwise mean of the per-frame matrices: the video-level representation."""
    arr = _check_stack(stack, "stack")
    if arr.shape[0] < 1:
        raise InputError("cannot average an empty stack")
    return arr.mean(axis=0)
