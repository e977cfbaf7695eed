"""Distillation-style guidance losses and the total training objective.

A bank of per-class weight matrices scores the video-level averaged
distance matrix; the resulting distribution is pulled toward a teacher
distribution by KL divergence and supervised by cross entropy on both
branches.  A separate alignment loss classifies projected class-token
summaries against a bank of unit-norm text embeddings.
"""
from __future__ import annotations

import numpy as np

from .errors import InputError, ShapeError
from .numerics import log_softmax, softmax

TEACHER_FLOOR = 1e-8
SIMPLEX_TOL = 1e-9


def check_simplex(p, tol: float = SIMPLEX_TOL) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise InputError(f"distribution must be a vector of at least two entries, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("distribution contains non-finite entries")
    if float(arr.min()) < -tol:
        raise InputError("distribution has negative entries")
    if abs(float(arr.sum()) - 1.0) > max(tol, 1e-9):
        raise InputError(f"distribution sums to {float(arr.sum())!r}, not 1")
    return arr


def floor_distribution(q, floor: float = TEACHER_FLOOR) -> np.ndarray:
    """Raise zero entries to ``floor`` and renormalize onto the simplex."""
    arr = check_simplex(q, tol=1e-6)
    out = np.maximum(arr, floor)
    return out / out.sum()


def student_distribution(video_repr, bank, temperature: float = 1.0) -> np.ndarray:
    """Softmax over inner products of the video representation with each
    class's weight matrix."""
    a = np.asarray(video_repr, dtype=np.float64)
    w = np.asarray(bank, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"video representation must be square, got {a.shape}")
    if w.ndim != 3 or w.shape[1:] != a.shape:
        raise ShapeError(f"bank shape {w.shape} does not match representation {a.shape}")
    if w.shape[0] < 2:
        raise InputError("bank needs at least two classes")
    logits = np.einsum("kl,ckl->c", a, w)
    return softmax(float(temperature) * logits)


def kl_guidance(p, q) -> float:
    """KL(p || q) with the student first; zero student entries contribute zero.

    The teacher must already be floored away from zero.
    """
    ps = check_simplex(p)
    qs = check_simplex(q)
    if ps.shape != qs.shape:
        raise ShapeError(f"distribution sizes differ: {ps.size} vs {qs.size}")
    if float(qs.min()) <= 0.0:
        raise InputError("teacher distribution has zero entries; floor it first")
    mask = ps > 0.0
    return float(np.sum(ps[mask] * (np.log(ps[mask]) - np.log(qs[mask]))))


def guidance_cross_entropy(p, q, label: int) -> float:
    """-log p[label] - log q[label], supervising both branches."""
    ps = check_simplex(p)
    qs = check_simplex(q)
    if ps.shape != qs.shape:
        raise ShapeError(f"distribution sizes differ: {ps.size} vs {qs.size}")
    idx = int(label)
    if not 0 <= idx < ps.size:
        raise InputError(f"label {label} out of range for {ps.size} classes")
    if ps[idx] <= 0.0 or qs[idx] <= 0.0:
        raise InputError("cross entropy undefined: zero probability at the label")
    return float(-np.log(ps[idx]) - np.log(qs[idx]))


def guidance_total(kl: float, ce: float) -> float:
    """Unweighted sum of the KL and cross-entropy terms."""
    return float(kl) + float(ce)


def alignment_loss(summary, text_bank, label: int, temperature: float = 1.0) -> float:
    """Cross entropy of cosine-similarity logits against the class label."""
    u = np.asarray(summary, dtype=np.float64)
    w = np.asarray(text_bank, dtype=np.float64)
    if u.ndim != 1:
        raise InputError(f"summary must be a vector, got {u.shape}")
    if w.ndim != 2 or w.shape[1] != u.shape[0]:
        raise ShapeError(f"text bank shape {w.shape} does not match summary {u.shape}")
    idx = int(label)
    if not 0 <= idx < w.shape[0]:
        raise InputError(f"label {label} out of range for {w.shape[0]} classes")
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        raise InputError("summary has zero norm; cosine similarity undefined")
    norms_w = np.linalg.norm(w, axis=1)
    cosines = (w @ u) / (norm * norms_w)
    logp = log_softmax(float(temperature) * cosines)
    return float(-logp[idx])


def total_loss(
    l_align: float,
    l_match: float,
    l_guide: float,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
) -> float:
    """Alignment plus weighted matching and guidance terms."""
    return float(l_align) + float(lambda1) * float(l_match) + float(lambda2) * float(l_guide)
