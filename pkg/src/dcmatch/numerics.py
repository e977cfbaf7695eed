"""Small shared numerical helpers."""
from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def mean_ci95(outcomes: np.ndarray) -> tuple[float, float]:
    """Mean and 1.96-sigma normal-approximation half width over outcomes."""
    x = np.asarray(outcomes, dtype=np.float64)
    n = x.size
    if n == 0:
        return 0.0, 0.0
    mean = float(x.mean())
    if n == 1:
        return mean, 0.0
    stderr = float(x.std(ddof=1)) / np.sqrt(n)
    return mean, 1.96 * stderr
