"""Alpha-powered distance correlation kernel.

Given m paired observations of two random vectors, the squared
distance correlation is computed from double-centered matrices of
alpha-powered pairwise Euclidean distances:

    dist[k, l] = ||x_k - x_l||^alpha                (alpha in (0, 2))
    A = dist - rowmean - colmean + grandmean        (double centering)
    dcov2(A, B)  = (1/m^2) * sum(A * B)
    dcorr2(A, B) = sum(A * B) / sqrt(sum(A * A) * sum(B * B))

The correlation lies in [0, 1] and detects nonlinear as well as linear
dependence; 0 distances are raised to 0 regardless of alpha.

``dcorr2_reference`` is an intentionally independent re-implementation
with explicit Python loops, used as a cross-check oracle.  It shares no
array code with the fast path.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InputError, NumericalConsistencyError, ShapeError

DEFAULT_ALPHA = 0.8

# Ratios inside [-CLAMP_GUARD, 0) and (1, 1 + CLAMP_GUARD] are treated as
# floating-point noise and clamped; anything further out raises.
CLAMP_GUARD = 1e-9


def check_alpha(alpha: float) -> float:
    a = float(alpha)
    if math.isnan(a) or not 0.0 < a < 2.0:
        raise InputError(f"alpha must lie strictly inside (0, 2), got {alpha!r}")
    return a


def as_observations(obs) -> np.ndarray:
    """Coerce to a float64 (m, p) matrix of m observations."""
    arr = np.asarray(obs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"observations must be a 2-d matrix, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise InputError("need at least two observations")
    if arr.shape[1] < 1:
        raise InputError("observations must have at least one coordinate")
    if not np.all(np.isfinite(arr)):
        raise InputError("observation matrix contains non-finite entries")
    return arr


def pairwise_alpha_distances(obs, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Matrix of ||x_k - x_l||^alpha; symmetric with a zero diagonal."""
    arr = as_observations(obs)
    a = check_alpha(alpha)
    diff = arr[:, None, :] - arr[None, :, :]
    dist = np.sqrt(np.einsum("klp,klp->kl", diff, diff))
    return dist**a


def double_center(raw) -> np.ndarray:
    """Subtract row and column means and add back the grand mean.

    Requires a symmetric square matrix with (near-)zero diagonal; the
    output rows and columns sum to zero up to rounding.
    """
    mat = np.asarray(raw, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InputError(f"expected a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise InputError("distance matrix contains non-finite entries")
    scale = float(np.abs(mat).max()) if mat.size else 0.0
    tol = 1e-9 * (1.0 + scale)
    if not np.allclose(mat, mat.T, rtol=0.0, atol=tol):
        raise InputError("distance matrix must be symmetric")
    if float(np.abs(np.diagonal(mat)).max(initial=0.0)) > tol:
        raise InputError("distance matrix must have a zero diagonal")
    # Row means equal column means for symmetric input; the grouped offset
    # (rm_k + rm_l) keeps the result bitwise symmetric.
    rm = mat.mean(axis=1)
    gm = mat.mean()
    return (mat - (rm[:, None] + rm[None, :])) + gm


def centered_alpha_distances(obs, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Double-centered alpha-distance matrix of an observation set."""
    return double_center(pairwise_alpha_distances(obs, alpha))


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    ma = np.asarray(a, dtype=np.float64)
    mb = np.asarray(b, dtype=np.float64)
    if ma.ndim != 2 or ma.shape[0] != ma.shape[1]:
        raise ShapeError(f"first matrix is not square: shape {ma.shape}")
    if mb.shape != ma.shape:
        raise ShapeError(f"matrix shapes differ: {ma.shape} vs {mb.shape}")
    return ma, mb


def dcov2(a, b) -> float:
    """Squared distance covariance (1/m^2) * sum(A * B) of centered matrices."""
    ma, mb = _check_pair(a, b)
    m = ma.shape[0]
    return float(np.sum(ma * mb)) / (m * m)


def corr_ratio(tr_ab: float, tr_aa: float, tr_bb: float) -> float:
    """Normalize a cross product by the self products, with the clamp policy.

    Degenerate self products (identically constant observations) give 0.
    """
    if tr_aa <= 0.0 or tr_bb <= 0.0:
        return 0.0
    r = tr_ab / math.sqrt(tr_aa * tr_bb)
    if not math.isfinite(r) or r < -CLAMP_GUARD or r > 1.0 + CLAMP_GUARD:
        raise NumericalConsistencyError(
            f"correlation ratio {r!r} outside [0, 1] beyond the {CLAMP_GUARD} guard band"
        )
    return min(max(r, 0.0), 1.0)


def dcorr2(a, b) -> float:
    """Squared distance correlation of two centered matrices, in [0, 1]."""
    ma, mb = _check_pair(a, b)
    with np.errstate(invalid="ignore"):  # non-finite input surfaces via the guard
        tr_ab = float(np.sum(ma * mb))
        tr_aa = float(np.sum(ma * ma))
        tr_bb = float(np.sum(mb * mb))
    return corr_ratio(tr_ab, tr_aa, tr_bb)


def dcorr2_from_observations(x, y, alpha: float = DEFAULT_ALPHA) -> float:
    """End-to-end dcorr2 from two observation matrices with shared row count."""
    ox = as_observations(x)
    oy = as_observations(y)
    if ox.shape[0] != oy.shape[0]:
        raise ShapeError(
            f"observation counts differ: {ox.shape[0]} vs {oy.shape[0]} rows"
        )
    return dcorr2(centered_alpha_distances(ox, alpha), centered_alpha_distances(oy, alpha))


# ---------------------------------------------------------------------------
# brute-force reference (oracle); plain Python on purpose
# ---------------------------------------------------------------------------


def _reference_rows(obs) -> list[tuple[float, ...]]:
    if hasattr(obs, "tolist"):
        obs = obs.tolist()
    rows = []
    for row in obs:
        if isinstance(row, (int, float)):
            row = [row]
        vals = tuple(float(v) for v in row)
        if not all(math.isfinite(v) for v in vals):
            raise InputError("observation matrix contains non-finite entries")
        rows.append(vals)
    if len(rows) < 2:
        raise InputError("need at least two observations")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InputError("ragged observation matrix")
    return rows


def _reference_centered(rows: list[tuple[float, ...]], alpha: float) -> list[list[float]]:
    m = len(rows)
    dist = [[0.0] * m for _ in range(m)]
    for k in range(m):
        for l in range(k + 1, m):
            s = 0.0
            for u, v in zip(rows[k], rows[l]):
                d = u - v
                s += d * d
            e = math.sqrt(s) ** alpha
            dist[k][l] = e
            dist[l][k] = e
    row_means = [sum(r) / m for r in dist]
    col_means = [sum(dist[k][l] for k in range(m)) / m for l in range(m)]
    grand = sum(row_means) / m
    return [
        [dist[k][l] - row_means[k] - col_means[l] + grand for l in range(m)]
        for k in range(m)
    ]


def dcorr2_reference(x, y, alpha: float = DEFAULT_ALPHA) -> float:
    """Loop-based squared distance correlation used to cross-check the fast path."""
    a = check_alpha(alpha)
    rx = _reference_rows(x)
    ry = _reference_rows(y)
    if len(rx) != len(ry):
        raise ShapeError(f"observation counts differ: {len(rx)} vs {len(ry)} rows")
    ca = _reference_centered(rx, a)
    cb = _reference_centered(ry, a)
    m = len(rx)
    tr_ab = tr_aa = tr_bb = 0.0
    for k in range(m):
        for l in range(m):
            tr_ab += ca[k][l] * cb[k][l]
            tr_aa += ca[k][l] * ca[k][l]
            tr_bb += cb[k][l] * cb[k][l]
    if tr_aa <= 0.0 or tr_bb <= 0.0:
        return 0.0
    return tr_ab / math.sqrt(tr_aa * tr_bb)
