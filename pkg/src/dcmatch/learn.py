"""Episode forward pass, closed-form gradients, and finite-difference checks.

Features are constants here (the encoders that produce them live
upstream), so gradients flow only into the matching generator, the
class-prototype bank, and the projection.  The learnable graph is
shallow; each loss term's derivative is written out directly rather
than going through a tape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Episode, FeatureBundle
from .errors import InputError, ShapeError
from .evaluate import EvalSettings, FeatureCache, episode_grids
from .guidance import floor_distribution
from .numerics import log_softmax, softmax
from .params import PARAM_NAMES, ParamStore


@dataclass
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    match_temperature: float = 1.0
    guidance_temperature: float = 1.0
    align_temperature: float = 1.0


@dataclass
class EpisodeTensors:
    """Everything about one episode that does not depend on parameters."""

    way: int
    shot: int
    class_if_mean: np.ndarray  # (Q, N, T*T) shot-averaged grids, flattened
    query_pos: np.ndarray  # (Q,)
    support_token_means: np.ndarray  # (S, d)
    query_token_means: np.ndarray  # (Q, d)
    all_token_means: np.ndarray  # (M, d) supports then queries
    all_labels: np.ndarray  # (M,) global class ids
    all_reprs: np.ndarray  # (M, d, d) video-level representations
    teacher: np.ndarray | None  # (R, C) floored rows for covered videos
    teacher_rows: np.ndarray | None  # (R,) indices into the M videos
    text_bank: np.ndarray | None  # (C, d_text)
    classes: np.ndarray  # (N,) global ids of the episode classes


def precompute_episode(
    bundle: FeatureBundle,
    episode: Episode,
    cache: FeatureCache,
    settings: EvalSettings,
) -> EpisodeTensors:
    grids = episode_grids(bundle, episode, cache, settings)
    q_n, way = grids.shape[:2]
    class_if_mean = grids.mean(axis=2).reshape(q_n, way, -1)
    sup_idx = [int(i) for i in episode.support.ravel()]
    q_idx = [int(i) for i in episode.queries]
    all_idx = sup_idx + q_idx
    sup_tm = np.stack([cache.token_mean(i) for i in sup_idx])
    q_tm = np.stack([cache.token_mean(i) for i in q_idx])
    all_tm = np.concatenate([sup_tm, q_tm], axis=0)
    all_labels = bundle.labels[all_idx]
    all_reprs = np.stack([cache.video_repr(i) for i in all_idx])
    teacher = teacher_rows = None
    raw = bundle.teacher_rows()
    if raw is not None:
        mask, mat = raw
        covered = [pos for pos, i in enumerate(all_idx) if mask[i]]
        if covered:
            teacher_rows = np.array(covered, dtype=np.int64)
            teacher = np.stack(
                [floor_distribution(mat[all_idx[pos]]) for pos in covered]
            )
    return EpisodeTensors(
        way=episode.way,
        shot=episode.shot,
        class_if_mean=class_if_mean,
        query_pos=episode.query_pos.copy(),
        support_token_means=sup_tm,
        query_token_means=q_tm,
        all_token_means=all_tm,
        all_labels=all_labels,
        all_reprs=all_reprs,
        teacher=teacher,
        teacher_rows=teacher_rows,
        text_bank=bundle.text_embeddings,
        classes=episode.classes.copy(),
    )


@dataclass
class ForwardParts:
    loss: float
    align: float
    match: float
    guidance: float
    kl: float
    ce: float


def _forward_impl(
    params: ParamStore, pre: EpisodeTensors, cfg: LossConfig, with_grads: bool
) -> ForwardParts:
    pw, pb = params.proj_weight, params.proj_bias
    gw, gb = params.gen_weight, params.gen_bias
    l_align = l_match = l_guide = kl_mean = ce_mean = 0.0

    # vision-text alignment over every episode video
    if pre.text_bank is not None:
        bank_t = pre.text_bank
        if bank_t.shape[1] != pw.shape[1]:
            raise ShapeError(
                f"projection dim {pw.shape[1]} != text embedding dim {bank_t.shape[1]}"
            )
        m_count = pre.all_token_means.shape[0]
        u = pre.all_token_means @ pw + pb
        norms = np.linalg.norm(u, axis=1)
        if np.any(norms == 0.0):
            raise InputError("a projected summary has zero norm")
        wnorms = np.linalg.norm(bank_t, axis=1)
        cosm = (u @ bank_t.T) / (norms[:, None] * wnorms[None, :])
        logits_a = cfg.align_temperature * cosm
        logp_a = log_softmax(logits_a, axis=1)
        rows = np.arange(m_count)
        l_align = float(-logp_a[rows, pre.all_labels].mean())
        if with_grads:
            p_a = np.exp(logp_a)
            dcos = p_a.copy()
            dcos[rows, pre.all_labels] -= 1.0
            dcos *= cfg.align_temperature / m_count
            wn = bank_t / wnorms[:, None]
            uhat = u / norms[:, None]
            du = (dcos @ wn - uhat * np.sum(dcos * cosm, axis=1)[:, None]) / norms[:, None]
            params.grads["proj_weight"] += pre.all_token_means.T @ du
            params.grads["proj_bias"] += du.sum(axis=0)

    # task-conditioned matching over the queries
    if cfg.lambda1 != 0.0:
        q_n = pre.query_token_means.shape[0]
        sup_sum = pre.support_token_means @ pw + pb
        q_sum = pre.query_token_means @ pw + pb
        mean_sup = sup_sum.mean(axis=0)
        proto = q_sum + mean_sup[None, :]
        m_task = proto @ gw.T + gb
        scores = np.einsum("qf,qnf->qn", m_task, pre.class_if_mean)
        logits_m = cfg.match_temperature * scores
        logp_m = log_softmax(logits_m, axis=1)
        rows_q = np.arange(q_n)
        l_match = float(-logp_m[rows_q, pre.query_pos].mean())
        if with_grads:
            p_m = np.exp(logp_m)
            dscores = p_m.copy()
            dscores[rows_q, pre.query_pos] -= 1.0
            dscores *= cfg.match_temperature / q_n
            dmtask = np.einsum("qn,qnf->qf", dscores, pre.class_if_mean)
            params.grads["gen_weight"] += cfg.lambda1 * (dmtask.T @ proto)
            params.grads["gen_bias"] += cfg.lambda1 * dmtask.sum(axis=0)
            dproto = dmtask @ gw
            dsum = dproto.sum(axis=0)
            params.grads["proj_weight"] += cfg.lambda1 * (
                pre.query_token_means.T @ dproto
                + np.outer(pre.support_token_means.mean(axis=0), dsum)
            )
            params.grads["proj_bias"] += cfg.lambda1 * 2.0 * dsum

    # teacher-guided classification of the video representations
    if cfg.lambda2 != 0.0 and pre.teacher is not None:
        rows_t = pre.teacher_rows
        reprs = pre.all_reprs[rows_t].reshape(rows_t.size, -1)
        z = reprs @ params.bank.reshape(params.bank.shape[0], -1).T
        logits_g = cfg.guidance_temperature * z
        logp_g = log_softmax(logits_g, axis=1)
        p_g = np.exp(logp_g)
        logq = np.log(pre.teacher)
        lg = logp_g - logq
        kl_terms = np.sum(p_g * lg, axis=1)
        labels_t = pre.all_labels[rows_t]
        rr = np.arange(rows_t.size)
        ce_terms = -logp_g[rr, labels_t] - logq[rr, labels_t]
        kl_mean = float(kl_terms.mean())
        ce_mean = float(ce_terms.mean())
        l_guide = kl_mean + ce_mean
        if with_grads:
            dz = p_g * (lg - kl_terms[:, None])
            dz_ce = p_g.copy()
            dz_ce[rr, labels_t] -= 1.0
            dz = (dz + dz_ce) * (cfg.guidance_temperature / rows_t.size)
            params.grads["bank"] += cfg.lambda2 * (dz.T @ reprs).reshape(params.bank.shape)

    loss = l_align + cfg.lambda1 * l_match + cfg.lambda2 * l_guide
    return ForwardParts(
        loss=loss, align=l_align, match=l_match, guidance=l_guide, kl=kl_mean, ce=ce_mean
    )


def forward(params: ParamStore, pre: EpisodeTensors, cfg: LossConfig) -> ForwardParts:
    """Loss terms only; leaves gradient buffers untouched."""
    return _forward_impl(params, pre, cfg, with_grads=False)


def forward_backward(params: ParamStore, pre: EpisodeTensors, cfg: LossConfig) -> ForwardParts:
    """Loss terms plus exact gradients accumulated into the store."""
    return _forward_impl(params, pre, cfg, with_grads=True)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


@dataclass
class TensorCheck:
    name: str
    coordinate: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    per_tensor: dict[str, TensorCheck]


def finite_diff_report(
    params: ParamStore,
    loss_fn,
    epsilon: float = 1e-4,
    rng: np.random.Generator | None = None,
    coords_per_tensor: int = 200,
) -> FiniteDiffReport:
    """Central differences on a random coordinate subsample per tensor.

    ``params.grads`` must already hold the analytic gradients of
    ``loss_fn()`` (a zero-argument closure re-evaluating the loss).
    Relative error uses |analytic| + |numeric| + 1e-12 as denominator.
    """
    if epsilon <= 0.0:
        raise InputError("epsilon must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    per_tensor: dict[str, TensorCheck] = {}
    worst = 0.0
    for name, tensor, grad in params.named_params():
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        count = min(flat.size, coords_per_tensor)
        coords = rng.choice(flat.size, size=count, replace=False)
        best = TensorCheck(name, -1, 0.0, 0.0, 0.0)
        for idx in coords:
            idx = int(idx)
            saved = flat[idx]
            flat[idx] = saved + epsilon
            up = loss_fn()
            flat[idx] = saved - epsilon
            down = loss_fn()
            flat[idx] = saved
            numeric = (up - down) / (2.0 * epsilon)
            analytic = float(gflat[idx])
            rel = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)
            if rel >= best.rel_error:
                best = TensorCheck(name, idx, analytic, numeric, rel)
        per_tensor[name] = best
        worst = max(worst, best.rel_error)
    return FiniteDiffReport(max_rel_error=worst, per_tensor=per_tensor)


def episode_gradcheck(
    params: ParamStore,
    pre: EpisodeTensors,
    cfg: LossConfig,
    epsilon: float = 1e-4,
    rng: np.random.Generator | None = None,
    coords_per_tensor: int = 200,
) -> FiniteDiffReport:
    """Analytic-vs-numeric gradient comparison for one episode."""
    params.zero_grads()
    forward_backward(params, pre, cfg)
    return finite_diff_report(
        params,
        lambda: forward(params, pre, cfg).loss,
        epsilon=epsilon,
        rng=rng,
        coords_per_tensor=coords_per_tensor,
    )
