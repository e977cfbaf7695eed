"""Episodic evaluation across metrics with a shared per-video cache.

Per-video derived quantities (frame matrix stacks, their self products,
video-level representations, frame and token means) depend only on the
bundle, alpha and the class-token flag, so one cache serves every
pairing in every episode.  Episode scoring is pure given a parameter
snapshot; a worker pool may evaluate episodes concurrently and results
are keyed by episode index so parallelism never changes the output.
"""
from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Episode, FeatureBundle
from .dcorr import DEFAULT_ALPHA
from .errors import InputError
from .frames import corr_grid, frame_alpha_d_stack, stack_self_products, video_alpha_d_average
from .numerics import log_softmax, mean_ci95
from .params import CheckpointMeta, ParamStore

METRICS = (
    "tsdcm",
    "ifdc",
    "cosine",
    "gap",
    "bimhm",
    "hybrid-cosine",
    "hybrid-gap",
    "hybrid-bimhm",
)
GRID_METRICS = ("tsdcm", "ifdc", "hybrid-cosine", "hybrid-gap", "hybrid-bimhm")
JOBS_ENV_VAR = "DCMATCH_JOBS"


@dataclass
class EvalSettings:
    alpha: float = DEFAULT_ALPHA
    match_temperature: float = 1.0
    guidance_temperature: float = 1.0
    fusion_weight: float = 1.0
    include_class_token: bool = True
    shot_aggregate: str = "score-mean"  # or "feature-mean"

    def validate(self) -> "EvalSettings":
        if self.shot_aggregate not in ("score-mean", "feature-mean"):
            raise InputError(f"unknown shot aggregate {self.shot_aggregate!r}")
        return self


class FeatureCache:
    """Lazy per-video derived tensors for one (bundle, alpha, token-flag)."""

    def __init__(self, bundle: FeatureBundle, alpha: float = DEFAULT_ALPHA,
                 include_class_token: bool = True):
        self.bundle = bundle
        self.alpha = float(alpha)
        self.include_class_token = include_class_token
        self._stacks: dict[int, np.ndarray] = {}
        self._norms: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        # cheap enough to materialize eagerly
        feats = bundle.features.astype(np.float64)
        self._frame_means = feats.mean(axis=2)  # (V, T, d)
        self._token_means = feats[:, :, 0, :].mean(axis=1)  # (V, d)
        self._pooled = feats.mean(axis=(1, 2))  # (V, d)

    def stack(self, index: int) -> np.ndarray:
        got = self._stacks.get(index)
        if got is None:
            got = frame_alpha_d_stack(
                self.bundle.video(index), self.alpha, self.include_class_token
            )
            with self._lock:
                self._stacks.setdefault(index, got)
                self._norms.setdefault(index, stack_self_products(got))
            got = self._stacks[index]
        return got

    def norms(self, index: int) -> np.ndarray:
        self.stack(index)
        return self._norms[index]

    def video_repr(self, index: int) -> np.ndarray:
        return video_alpha_d_average(self.stack(index))

    def all_video_reprs(self) -> np.ndarray:
        return np.stack([self.video_repr(i) for i in range(self.bundle.num_videos)])

    def frame_means(self, index: int) -> np.ndarray:
        return self._frame_means[index]

    def token_mean(self, index: int) -> np.ndarray:
        return self._token_means[index]

    def pooled(self, index: int) -> np.ndarray:
        return self._pooled[index]


@dataclass
class MetricSpec:
    """A metric to evaluate, optionally with trained parameters attached."""

    name: str
    params: ParamStore | None = None
    meta: CheckpointMeta | None = None
    label: str = ""

    def __post_init__(self):
        if self.name not in METRICS:
            raise InputError(f"unknown metric {self.name!r}, expected one of {METRICS}")
        if not self.label:
            self.label = self.name


@dataclass
class EvalOutcome:
    outcomes: np.ndarray  # per-episode fraction of correct queries
    accuracy: float
    ci95: float


def episode_grids(
    bundle: FeatureBundle,
    episode: Episode,
    cache: FeatureCache,
    settings: EvalSettings,
) -> np.ndarray:
    """Correlation grids, shape (queries, way, shots, T, T).

    In feature-mean shot aggregation the K support videos of a class
    are averaged into one pseudo-video first, so the shot axis is 1.
    """
    t = bundle.frames
    q_n = episode.queries.size
    if settings.shot_aggregate == "feature-mean" and episode.shot > 1:
        class_stacks = []
        for row in episode.support:
            pseudo = np.mean([bundle.video(int(i)) for i in row], axis=0)
            class_stacks.append(
                frame_alpha_d_stack(pseudo, settings.alpha, settings.include_class_token)
            )
        class_norms = [stack_self_products(s) for s in class_stacks]
        grids = np.zeros((q_n, episode.way, 1, t, t))
        for qi, q in enumerate(episode.queries):
            qs, qn = cache.stack(int(q)), cache.norms(int(q))
            for ci in range(episode.way):
                grids[qi, ci, 0] = corr_grid(class_stacks[ci], class_norms[ci], qs, qn)
        return grids
    grids = np.zeros((q_n, episode.way, episode.shot, t, t))
    for qi, q in enumerate(episode.queries):
        qs, qn = cache.stack(int(q)), cache.norms(int(q))
        for ci in range(episode.way):
            for ki, s in enumerate(episode.support[ci]):
                grids[qi, ci, ki] = corr_grid(
                    cache.stack(int(s)), cache.norms(int(s)), qs, qn
                )
    return grids


def _pair_cosine(fs: np.ndarray, fq: np.ndarray) -> float:
    num = np.einsum("td,td->t", fs, fq)
    den = np.linalg.norm(fs, axis=1) * np.linalg.norm(fq, axis=1)
    vals = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return float(vals.mean())


def _pair_gap(ps: np.ndarray, pq: np.ndarray) -> float:
    den = float(np.linalg.norm(ps)) * float(np.linalg.norm(pq))
    if den == 0.0:
        return 0.0
    return float(np.dot(ps, pq) / den)


def _pair_bimhm_dist(fs: np.ndarray, fq: np.ndarray) -> np.ndarray:
    num = fs @ fq.T
    den = np.outer(np.linalg.norm(fs, axis=1), np.linalg.norm(fq, axis=1))
    sim = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return 1.0 - sim


def _bimhm_score(dist: np.ndarray) -> float:
    return float(-(dist.min(axis=0).mean() + dist.min(axis=1).mean()))


def tsdcm_logits(
    episode: Episode,
    grid_mean: np.ndarray,
    cache: FeatureCache,
    params: ParamStore,
    meta: CheckpointMeta | None,
    settings: EvalSettings,
) -> np.ndarray:
    """Matching logits per query, with the trained-bank prior fused in when
    the checkpoint was trained with guidance enabled."""
    match_t = meta.match_temperature if meta is not None else settings.match_temperature
    sup_idx = [int(i) for i in episode.support.ravel()]
    sup_tm = np.stack([cache.token_mean(i) for i in sup_idx])
    q_tm = np.stack([cache.token_mean(int(i)) for i in episode.queries])
    sup_sum = sup_tm @ params.proj_weight + params.proj_bias
    q_sum = q_tm @ params.proj_weight + params.proj_bias
    proto = q_sum + sup_sum.mean(axis=0)[None, :]
    m_task = proto @ params.gen_weight.T + params.gen_bias
    q_n, way = grid_mean.shape[:2]
    scores = np.einsum("qf,qnf->qn", m_task, grid_mean.reshape(q_n, way, -1))
    logits = match_t * scores
    if meta is not None and meta.glac_enabled and meta.fusion_weight != 0.0:
        for qi, q in enumerate(episode.queries):
            z = np.einsum("kl,ckl->c", cache.video_repr(int(q)), params.bank)
            restricted = z[episode.classes]
            logits[qi] += meta.fusion_weight * log_softmax(
                meta.guidance_temperature * restricted
            )
    return logits


def score_episode(
    bundle: FeatureBundle,
    episode: Episode,
    specs: list[MetricSpec],
    cache: FeatureCache,
    settings: EvalSettings,
) -> dict[str, float]:
    """Fraction of correctly classified queries per metric."""
    grids = None
    grid_mean = None
    if any(s.name in GRID_METRICS for s in specs):
        grids = episode_grids(bundle, episode, cache, settings)
        grid_mean = grids.mean(axis=2)
    results: dict[str, float] = {}
    q_n = episode.queries.size
    for spec in specs:
        name = spec.name
        if name == "tsdcm":
            if spec.params is None:
                raise InputError("tsdcm evaluation needs a parameter store")
            logits = tsdcm_logits(episode, grid_mean, cache, spec.params, spec.meta, settings)
            preds = np.argmax(logits, axis=1)
        elif name == "ifdc":
            preds = np.argmax(grid_mean.mean(axis=(2, 3)), axis=1)
        elif name == "hybrid-cosine":
            diag = np.trace(grid_mean, axis1=2, axis2=3) / grid_mean.shape[2]
            preds = np.argmax(diag, axis=1)
        elif name == "hybrid-bimhm":
            scores = np.zeros((q_n, episode.way))
            for qi in range(q_n):
                for ci in range(episode.way):
                    scores[qi, ci] = float(
                        np.mean([_bimhm_score(1.0 - g) for g in grids[qi, ci]])
                    )
            preds = np.argmax(scores, axis=1)
        else:
            # plain baselines aggregate by score mean over the K shots;
            # hybrid-gap adds the mean grid entry to each pair's score
            scores = np.zeros((q_n, episode.way))
            for qi, q in enumerate(episode.queries):
                qv = int(q)
                for ci in range(episode.way):
                    shot_scores = []
                    for s in episode.support[ci]:
                        sv = int(s)
                        if name == "cosine":
                            val = _pair_cosine(cache.frame_means(sv), cache.frame_means(qv))
                        elif name == "gap":
                            val = _pair_gap(cache.pooled(sv), cache.pooled(qv))
                        elif name == "bimhm":
                            val = _bimhm_score(
                                _pair_bimhm_dist(cache.frame_means(sv), cache.frame_means(qv))
                            )
                        elif name == "hybrid-gap":
                            val = _pair_gap(cache.pooled(sv), cache.pooled(qv))
                        else:
                            raise InputError(f"unhandled metric {name!r}")
                        shot_scores.append(val)
                    scores[qi, ci] = float(np.mean(shot_scores))
                    if name == "hybrid-gap":
                        scores[qi, ci] += float(grid_mean[qi, ci].mean())
            preds = np.argmax(scores, axis=1)
        results[spec.label] = float(np.mean(preds == episode.query_pos))
    return results


def default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def evaluate_bundle(
    bundle: FeatureBundle,
    episodes: list[Episode],
    specs: list[MetricSpec],
    settings: EvalSettings,
    cache: FeatureCache | None = None,
    jobs: int = 1,
) -> dict[str, EvalOutcome]:
    """Evaluate metrics over a fixed episode list; order-stable under jobs."""
    settings.validate()
    if not episodes:
        raise InputError("no episodes to evaluate")
    if cache is None:
        cache = FeatureCache(bundle, settings.alpha, settings.include_class_token)
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise InputError("metric labels must be unique")
    per_label = {label: np.zeros(len(episodes)) for label in labels}

    def run(index: int) -> tuple[int, dict[str, float]]:
        return index, score_episode(bundle, episodes[index], specs, cache, settings)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for index, result in pool.map(run, range(len(episodes))):
                for label, value in result.items():
                    per_label[label][index] = value
    else:
        for index in range(len(episodes)):
            _, result = run(index)
            for label, value in result.items():
                per_label[label][index] = value
    out = {}
    for label in labels:
        mean, ci = mean_ci95(per_label[label])
        out[label] = EvalOutcome(outcomes=per_label[label], accuracy=mean, ci95=ci)
    return out
