"""Task-conditioned matching over inter-frame correlation grids.

The matching matrix is produced by an affine generator from a task
prototype (query summary plus mean support summary); the episode score
for a class is the Frobenius inner product of that matrix with the
class's inter-frame correlation grid.  Cosine, pooled-cosine (GAP) and
bidirectional mean-Hausdorff baselines are included for comparison,
plus hybrids that swap their inter-frame similarities for correlation
grid entries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dcorr import DEFAULT_ALPHA
from .errors import InputError, ShapeError
from .frames import as_video, frame_alpha_d_stack, interframe_corr
from .numerics import softmax

BASELINES = ("cosine", "gap", "bimhm")


def class_token_average(video, proj_weight=None, proj_bias=None) -> np.ndarray:
    """Frame-averaged class token, optionally passed through a linear map.

    Averaging before projecting is equivalent to projecting per frame
    and averaging, since the map is affine.
    """
    arr = as_video(video)
    mean_token = arr[:, 0, :].mean(axis=0)
    if proj_weight is None:
        if proj_bias is not None:
            raise InputError("projection bias given without a weight")
        return mean_token
    w = np.asarray(proj_weight, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != mean_token.shape[0]:
        raise ShapeError(
            f"projection weight {w.shape} does not accept {mean_token.shape[0]} channels"
        )
    out = mean_token @ w
    if proj_bias is not None:
        b = np.asarray(proj_bias, dtype=np.float64)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"projection bias shape {b.shape} != ({w.shape[1]},)")
        out = out + b
    return out


def task_prototype(query_summary, support_summaries) -> np.ndarray:
    """Query summary plus the mean over the whole support set's summaries."""
    q = np.asarray(query_summary, dtype=np.float64)
    supports = [np.asarray(s, dtype=np.float64) for s in support_summaries]
    if not supports:
        raise InputError("support summary list is empty")
    stack = np.stack(supports)
    if stack.shape[1:] != q.shape:
        raise ShapeError(f"summary dimensions differ: {stack.shape[1:]} vs {q.shape}")
    return q + stack.mean(axis=0)


def generate_matching(weights, bias, prototype) -> np.ndarray:
    """Affine generator output reshaped row-major to (T, T).

    Row index is the support frame, column index the query frame,
    matching the orientation of the inter-frame grids.
    """
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    p = np.asarray(prototype, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"generator weights must be 2-d, got {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"generator bias shape {b.shape} != ({w.shape[0]},)")
    if p.shape != (w.shape[1],):
        raise ShapeError(f"prototype shape {p.shape} != ({w.shape[1]},)")
    cells = w.shape[0]
    frames = math.isqrt(cells)
    if frames * frames != cells:
        raise ShapeError(f"generator output size {cells} is not a square number")
    return (w @ p + b).reshape(frames, frames)


def match_score(m_task, m_if) -> float:
    """Frobenius inner product between matching matrix and correlation grid."""
    a = np.asarray(m_task, dtype=np.float64)
    b = np.asarray(m_if, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"matrix shapes differ: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


@dataclass
class EpisodeScores:
    """Per-class logits and the softmax prediction over them."""

    logits: np.ndarray
    probs: np.ndarray


def episode_scores(class_scores, temperature: float = 1.0) -> EpisodeScores:
    scores = np.asarray(class_scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 1:
        raise InputError(f"class scores must be a non-empty vector, got {scores.shape}")
    logits = float(temperature) * scores
    return EpisodeScores(logits=logits, probs=softmax(logits))


def episode_logits(
    support_videos_by_class,
    query_video,
    gen_weights,
    gen_bias,
    *,
    proj_weight=None,
    proj_bias=None,
    alpha: float = DEFAULT_ALPHA,
    temperature: float = 1.0,
    include_class_token: bool = True,
) -> EpisodeScores:
    """Score one query against an episode's support set.

    ``support_videos_by_class`` is a list of per-class lists of videos
    (K shots each).  The class score averages the matching score over
    the shots; with K = 1 it reduces to the single pairwise score.
    """
    if not support_videos_by_class or any(not shots for shots in support_videos_by_class):
        raise InputError("every episode class needs at least one support video")
    q_stack = frame_alpha_d_stack(query_video, alpha, include_class_token)
    q_summary = class_token_average(query_video, proj_weight, proj_bias)
    summaries = [
        class_token_average(v, proj_weight, proj_bias)
        for shots in support_videos_by_class
        for v in shots
    ]
    proto = task_prototype(q_summary, summaries)
    m_task = generate_matching(gen_weights, gen_bias, proto)
    scores = []
    for shots in support_videos_by_class:
        shot_scores = []
        for video in shots:
            grid = interframe_corr(
                frame_alpha_d_stack(video, alpha, include_class_token), q_stack
            )
            shot_scores.append(match_score(m_task, grid))
        scores.append(float(np.mean(shot_scores)))
    return episode_scores(np.array(scores), temperature)


def matching_loss(probs, label: int) -> float:
    """Cross entropy of an episode prediction against the true class slot."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise InputError(f"probabilities must be a vector, got {p.shape}")
    if not 0 <= int(label) < p.size:
        raise InputError(f"label {label} out of range for {p.size} classes")
    return float(-np.log(p[int(label)]))


# ---------------------------------------------------------------------------
# baseline metrics
# ---------------------------------------------------------------------------


def frame_token_means(video) -> np.ndarray:
    """Mean token vector per frame, shape (T, d)."""
    return as_video(video).mean(axis=1)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def baseline_cosine(support, query) -> float:
    """Mean cosine similarity between aligned frame-mean vectors."""
    fs = frame_token_means(support)
    fq = frame_token_means(query)
    if fs.shape != fq.shape:
        raise ShapeError(f"frame-mean shapes differ: {fs.shape} vs {fq.shape}")
    return float(np.mean([_cosine(fs[t], fq[t]) for t in range(fs.shape[0])]))


def baseline_gap(support, query) -> float:
    """Cosine similarity of spatio-temporally mean-pooled features."""
    vs = as_video(support).mean(axis=(0, 1))
    vq = as_video(query).mean(axis=(0, 1))
    if vs.shape != vq.shape:
        raise ShapeError(f"pooled shapes differ: {vs.shape} vs {vq.shape}")
    return _cosine(vs, vq)


def _bimhm_from_dist(dist: np.ndarray) -> float:
    return float(-(dist.min(axis=0).mean() + dist.min(axis=1).mean()))


def baseline_bimhm(support, query) -> float:
    """Negative bidirectional mean-Hausdorff distance over frame means.

    Per-frame distance is 1 - cosine; higher return values mean more
    similar videos.
    """
    fs = frame_token_means(support)
    fq = frame_token_means(query)
    if fs.shape[1] != fq.shape[1]:
        raise ShapeError(f"channel dimensions differ: {fs.shape[1]} vs {fq.shape[1]}")
    dist = np.array(
        [[1.0 - _cosine(fs[i], fq[j]) for j in range(fq.shape[0])] for i in range(fs.shape[0])]
    )
    return _bimhm_from_dist(dist)


def hybrid_with_interframe(
    baseline: str,
    support,
    query,
    alpha: float = DEFAULT_ALPHA,
    include_class_token: bool = True,
) -> float:
    """Rerun a baseline with correlation-grid entries as its similarities.

    The cosine and mean-Hausdorff baselines consume an inter-frame
    similarity matrix, which is replaced wholesale; the pooled-cosine
    baseline gains the mean grid entry as an additive term.
    """
    if baseline not in BASELINES:
        raise InputError(f"unknown baseline {baseline!r}, expected one of {BASELINES}")
    grid = interframe_corr(
        frame_alpha_d_stack(support, alpha, include_class_token),
        frame_alpha_d_stack(query, alpha, include_class_token),
    )
    if baseline == "cosine":
        if grid.shape[0] != grid.shape[1]:
            raise ShapeError("diagonal cosine requires equal frame counts")
        return float(np.mean(np.diagonal(grid)))
    if baseline == "gap":
        return baseline_gap(support, query) + float(grid.mean())
    return _bimhm_from_dist(1.0 - grid)
