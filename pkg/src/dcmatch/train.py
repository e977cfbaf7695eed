"""Episodic training loop over a feature bundle.

One episode per optimizer step (optionally accumulated), AdamW with a
cosine schedule, and periodic evaluation on a fixed held-out episode
stream.  Runs are fully deterministic under a fixed seed: the training
sampler, the evaluation episode list, and parameter initialization all
derive from independent children of one seed sequence.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import FeatureBundle, sample_episode
from .dcorr import DEFAULT_ALPHA, check_alpha
from .errors import InputError, TrainingError
from .evaluate import EvalSettings, FeatureCache, MetricSpec, evaluate_bundle
from .learn import (
    FiniteDiffReport,
    LossConfig,
    episode_gradcheck,
    forward_backward,
    precompute_episode,
)
from .optim import AdamWState, adamw_step, cosine_lr
from .params import CheckpointMeta, ModelDims, ParamStore


@dataclass
class TrainConfig:
    way: int = 5
    shot: int = 1
    queries_per_class: int = 1
    episodes: int = 2000
    lr: float = 0.02
    weight_decay: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    alpha: float = DEFAULT_ALPHA
    match_temperature: float = 1.0
    guidance_temperature: float = 1.0
    align_temperature: float = 1.0
    proj_dim: int = 16
    include_class_token: bool = True
    shot_aggregate: str = "score-mean"
    grad_accumulation: int = 1
    fusion_weight: float = 1.0
    eval_interval: int = 500
    eval_episodes: int = 200
    seed: int = 0

    def validate(self) -> "TrainConfig":
        check_alpha(self.alpha)
        if self.way < 2 or self.shot < 1 or self.queries_per_class < 1:
            raise InputError("way must be >= 2, shot and queries-per-class >= 1")
        if self.episodes < 1:
            raise InputError("episodes must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise InputError("learning rate and weight decay must be nonnegative")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InputError("loss weights must be nonnegative")
        if min(self.match_temperature, self.guidance_temperature, self.align_temperature) <= 0:
            raise InputError("temperatures must be positive")
        if self.proj_dim < 1:
            raise InputError("projection dimension must be positive")
        if self.grad_accumulation < 1:
            raise InputError("gradient accumulation must be >= 1")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise InputError("evaluation interval and episode count must be positive")
        if self.shot_aggregate not in ("score-mean", "feature-mean"):
            raise InputError(f"unknown shot aggregate {self.shot_aggregate!r}")
        return self

    def loss_config(self) -> LossConfig:
        return LossConfig(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            match_temperature=self.match_temperature,
            guidance_temperature=self.guidance_temperature,
            align_temperature=self.align_temperature,
        )

    def eval_settings(self) -> EvalSettings:
        return EvalSettings(
            alpha=self.alpha,
            match_temperature=self.match_temperature,
            guidance_temperature=self.guidance_temperature,
            fusion_weight=self.fusion_weight,
            include_class_token=self.include_class_token,
            shot_aggregate=self.shot_aggregate,
        )


@dataclass
class HistoryEntry:
    step: int
    loss: float
    align: float
    match: float
    guidance: float
    lr: float
    eval_accuracy: float | None = None


@dataclass
class TrainResult:
    params: ParamStore
    meta: CheckpointMeta
    config: TrainConfig
    history: list[HistoryEntry] = field(default_factory=list)
    final_accuracy: float = 0.0
    duration_seconds: float = 0.0


def _checkpoint_meta(cfg: TrainConfig, glac_enabled: bool) -> CheckpointMeta:
    return CheckpointMeta(
        alpha=cfg.alpha,
        match_temperature=cfg.match_temperature,
        guidance_temperature=cfg.guidance_temperature,
        align_temperature=cfg.align_temperature,
        lambda1=cfg.lambda1,
        lambda2=cfg.lambda2,
        fusion_weight=cfg.fusion_weight,
        glac_enabled=glac_enabled,
        include_class_token=cfg.include_class_token,
    )


def _validate_bundle_for_training(bundle: FeatureBundle, cfg: TrainConfig) -> None:
    if cfg.way > bundle.num_classes:
        raise InputError(
            f"way {cfg.way} exceeds the bundle's {bundle.num_classes} classes"
        )
    if bundle.text_embeddings is not None and bundle.text_embeddings.shape[1] != cfg.proj_dim:
        raise InputError(
            f"projection dim {cfg.proj_dim} must equal the text embedding dim "
            f"{bundle.text_embeddings.shape[1]} for the alignment loss"
        )


def train(bundle: FeatureBundle, cfg: TrainConfig) -> TrainResult:
    cfg.validate()
    _validate_bundle_for_training(bundle, cfg)
    started = time.perf_counter()
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_train = np.random.default_rng(seeds[1])
    rng_eval = np.random.default_rng(seeds[2])

    dims = ModelDims(
        frames=bundle.frames,
        channels=bundle.channels,
        proj_dim=cfg.proj_dim,
        classes=bundle.num_classes,
    )
    params = ParamStore.init(dims, rng_init)
    cache = FeatureCache(bundle, cfg.alpha, cfg.include_class_token)
    glac_enabled = cfg.lambda2 > 0.0 and bundle.teachers is not None
    if glac_enabled:
        params.set_bank_from_representations(cache.all_video_reprs(), bundle.labels)
    meta = _checkpoint_meta(cfg, glac_enabled)

    eval_episodes = [
        sample_episode(bundle, cfg.way, cfg.shot, cfg.queries_per_class, rng_eval)
        for _ in range(cfg.eval_episodes)
    ]
    settings = cfg.eval_settings()
    loss_cfg = cfg.loss_config()
    opt = AdamWState.for_params(params)
    history: list[HistoryEntry] = []
    last_accuracy = 0.0

    def run_eval() -> float:
        spec = MetricSpec("tsdcm", params=params, meta=meta)
        out = evaluate_bundle(bundle, eval_episodes, [spec], settings, cache=cache)
        return out["tsdcm"].accuracy

    params.zero_grads()
    for step in range(cfg.episodes):
        episode = sample_episode(bundle, cfg.way, cfg.shot, cfg.queries_per_class, rng_train)
        pre = precompute_episode(bundle, episode, cache, settings)
        parts = forward_backward(params, pre, loss_cfg)
        if not np.isfinite(parts.loss):
            raise TrainingError(
                f"non-finite loss {parts.loss!r} at episode {step} "
                f"(classes {episode.classes.tolist()})"
            )
        lr = cosine_lr(cfg.lr, step, cfg.episodes)
        if (step + 1) % cfg.grad_accumulation == 0:
            if cfg.grad_accumulation > 1:
                params.scale_grads(1.0 / cfg.grad_accumulation)
            adamw_step(params, opt, lr, cfg.weight_decay)
            if not params.all_finite():
                raise TrainingError(f"non-finite parameter after update at episode {step}")
            params.zero_grads()
        entry = HistoryEntry(
            step=step,
            loss=parts.loss,
            align=parts.align,
            match=parts.match,
            guidance=parts.guidance,
            lr=lr,
        )
        if (step + 1) % cfg.eval_interval == 0 or step + 1 == cfg.episodes:
            last_accuracy = run_eval()
            entry.eval_accuracy = last_accuracy
        history.append(entry)

    return TrainResult(
        params=params,
        meta=meta,
        config=cfg,
        history=history,
        final_accuracy=last_accuracy,
        duration_seconds=time.perf_counter() - started,
    )


def gradcheck(
    bundle: FeatureBundle,
    cfg: TrainConfig,
    n_episodes: int = 20,
    epsilon: float = 1e-4,
    coords_per_tensor: int = 200,
) -> tuple[float, list[FiniteDiffReport]]:
    """Finite-difference verification over freshly sampled episodes."""
    cfg.validate()
    _validate_bundle_for_training(bundle, cfg)
    if n_episodes < 1:
        raise InputError("need at least one episode to check")
    if epsilon <= 0.0:
        raise InputError("epsilon must be positive")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_init = np.random.default_rng(seeds[0])
    rng_episodes = np.random.default_rng(seeds[1])
    rng_coords = np.random.default_rng(seeds[2])
    dims = ModelDims(
        frames=bundle.frames,
        channels=bundle.channels,
        proj_dim=cfg.proj_dim,
        classes=bundle.num_classes,
    )
    params = ParamStore.init(dims, rng_init)
    cache = FeatureCache(bundle, cfg.alpha, cfg.include_class_token)
    glac_enabled = cfg.lambda2 > 0.0 and bundle.teachers is not None
    if glac_enabled:
        params.set_bank_from_representations(cache.all_video_reprs(), bundle.labels)
    settings = cfg.eval_settings()
    loss_cfg = cfg.loss_config()
    reports = []
    worst = 0.0
    for _ in range(n_episodes):
        episode = sample_episode(
            bundle, cfg.way, cfg.shot, cfg.queries_per_class, rng_episodes
        )
        pre = precompute_episode(bundle, episode, cache, settings)
        report = episode_gradcheck(
            params,
            pre,
            loss_cfg,
            epsilon=epsilon,
            rng=rng_coords,
            coords_per_tensor=coords_per_tensor,
        )
        reports.append(report)
        worst = max(worst, report.max_rel_error)
    return worst, reports
