"""Distance-correlation frame matching for few-shot video classification.

The stack, bottom up: an alpha-distance correlation kernel (``dcorr``),
per-frame matrix machinery (``frames``), task-conditioned matching and
baseline metrics (``matching``), distillation-style guidance losses
(``guidance``), closed-form gradients and training (``learn``, ``optim``,
``train``), feature bundles and synthetic data (``data``), episodic
evaluation (``evaluate``), and a CLI (``cli``).
"""

from .dcorr import (
    DEFAULT_ALPHA,
    centered_alpha_distances,
    dcorr2,
    dcorr2_from_observations,
    dcorr2_reference,
    dcov2,
    double_center,
    pairwise_alpha_distances,
)
from .data import Episode, FeatureBundle, SyntheticConfig, load_bundle, sample_episode, save_bundle, synth_generate
from .evaluate import EvalSettings, FeatureCache, MetricSpec, evaluate_bundle
from .frames import frame_alpha_d_stack, interframe_corr, video_alpha_d_average
from .params import CheckpointMeta, ModelDims, ParamStore, load_checkpoint, save_checkpoint
from .train import TrainConfig, gradcheck, train

__all__ = [
    "DEFAULT_ALPHA",
    "CheckpointMeta",
    "Episode",
    "EvalSettings",
    "FeatureBundle",
    "FeatureCache",
    "MetricSpec",
    "ModelDims",
    "ParamStore",
    "SyntheticConfig",
    "TrainConfig",
    "centered_alpha_distances",
    "dcorr2",
    "dcorr2_from_observations",
    "dcorr2_reference",
    "dcov2",
    "double_center",
    "evaluate_bundle",
    "frame_alpha_d_stack",
    "gradcheck",
    "interframe_corr",
    "load_bundle",
    "load_checkpoint",
    "pairwise_alpha_distances",
    "sample_episode",
    "save_bundle",
    "save_checkpoint",
    "synth_generate",
    "train",
    "video_alpha_d_average",
]

__version__ = "0.1.0"
