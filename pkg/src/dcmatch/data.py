"""Feature bundles on disk, episode sampling, and synthetic generators.

A bundle is a directory:

    manifest.json        format version, dtype tag, dimensions, class
                         names, per-video records (id, class, offset)
    features.bin         flat little-endian float32 payload indexed
                         [video][frame][token][channel]
    teacher.csv          optional: video id followed by a C-column
                         probability distribution per row
    text_embeddings.csv  optional: one unit-norm row per class

Teachers are stored raw (flooring happens when they are consumed) so a
save/load round trip is bitwise lossless.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BundleManifestError,
    BundlePayloadError,
    BundleShapeError,
    InputError,
    TeacherFileError,
    TextBankError,
)

FORMAT_VERSION = 1
DTYPE_TAG = "f32le"
MANIFEST_NAME = "manifest.json"
FEATURES_NAME = "features.bin"
TEACHER_NAME = "teacher.csv"
TEXT_NAME = "text_embeddings.csv"


@dataclass
class FeatureBundle:
    """In-memory bundle of per-video token features plus optional extras."""

    features: np.ndarray  # (videos, frames, tokens, channels) float32
    ids: list[str]
    labels: np.ndarray  # (videos,) int
    class_names: list[str]
    teachers: dict[str, np.ndarray] | None = None
    text_embeddings: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 4:
            raise InputError(f"features must be 4-d, got shape {self.features.shape}")
        v, t, tokens, d = self.features.shape
        if t < 1 or tokens < 2 or d < 2:
            raise InputError(f"degenerate bundle dimensions {self.features.shape}")
        if len(self.ids) != v or self.labels.shape != (v,):
            raise InputError("ids/labels do not match the number of videos")
        if len(set(self.ids)) != v:
            raise InputError("video ids are not unique")
        if not self.class_names:
            raise InputError("bundle declares no classes")
        if v and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise InputError("video label outside the declared class list")
        if not np.all(np.isfinite(self.features)):
            raise InputError("bundle features contain non-finite entries")

    @property
    def num_videos(self) -> int:
        return self.features.shape[0]

    @property
    def frames(self) -> int:
        return self.features.shape[1]

    @property
    def tokens(self) -> int:
        return self.features.shape[2]

    @property
    def channels(self) -> int:
        return self.features.shape[3]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def videos_of_class(self, class_index: int) -> np.ndarray:
        return np.flatnonzero(self.labels == class_index)

    def video(self, index: int) -> np.ndarray:
        """Float64 view of one video's features."""
        return self.features[index].astype(np.float64)

    def teacher_rows(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(mask, matrix) of raw teacher rows aligned with video order."""
        if not self.teachers:
            return None
        mask = np.zeros(self.num_videos, dtype=bool)
        mat = np.zeros((self.num_videos, self.num_classes))
        for i, vid in enumerate(self.ids):
            row = self.teachers.get(vid)
            if row is not None:
                mask[i] = True
                mat[i] = row
        return mask, mat


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_bundle(bundle: FeatureBundle, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    stride = bundle.frames * bundle.tokens * bundle.channels * 4
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": DTYPE_TAG,
        "frames": bundle.frames,
        "tokens": bundle.tokens,
        "channels": bundle.channels,
        "classes": list(bundle.class_names),
        "videos": [
            {"id": vid, "class": int(bundle.labels[i]), "offset": i * stride}
            for i, vid in enumerate(bundle.ids)
        ],
    }
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    payload = np.ascontiguousarray(bundle.features, dtype="<f4")
    with open(os.path.join(path, FEATURES_NAME), "wb") as fh:
        fh.write(payload.tobytes())
    if bundle.teachers:
        with open(os.path.join(path, TEACHER_NAME), "w", encoding="utf-8") as fh:
            for vid in bundle.ids:
                row = bundle.teachers.get(vid)
                if row is None:
                    continue
                fh.write(vid + "," + ",".join(repr(float(x)) for x in row) + "\n")
    if bundle.text_embeddings is not None:
        with open(os.path.join(path, TEXT_NAME), "w", encoding="utf-8") as fh:
            for row in np.asarray(bundle.text_embeddings, dtype=np.float64):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")


def _manifest_int(manifest: dict, key: str) -> int:
    value = manifest.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise BundleManifestError(f"manifest field {key!r} must be an integer")
    return value


def _load_manifest(path: str) -> dict:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise BundleManifestError(f"cannot read {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BundleManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise BundleManifestError("manifest root must be an object")
    for key in ("format_version", "dtype", "frames", "tokens", "channels", "classes", "videos"):
        if key not in manifest:
            raise BundleManifestError(f"manifest is missing field {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise BundleManifestError(
            f"unsupported format version {manifest['format_version']!r}"
        )
    if manifest["dtype"] != DTYPE_TAG:
        raise BundleManifestError(f"unsupported dtype tag {manifest['dtype']!r}")
    return manifest


def load_bundle(path: str) -> FeatureBundle:
    manifest = _load_manifest(path)
    frames = _manifest_int(manifest, "frames")
    tokens = _manifest_int(manifest, "tokens")
    channels = _manifest_int(manifest, "channels")
    if frames < 1 or tokens < 2 or channels < 2:
        raise BundleManifestError(
            f"degenerate dimensions frames={frames} tokens={tokens} channels={channels}"
        )
    class_names = manifest["classes"]
    if not isinstance(class_names, list) or not class_names or not all(
        isinstance(c, str) for c in class_names
    ):
        raise BundleManifestError("manifest field 'classes' must be a non-empty string list")
    records = manifest["videos"]
    if not isinstance(records, list) or not records:
        raise BundleManifestError("manifest field 'videos' must be a non-empty list")

    stride = frames * tokens * channels * 4
    ids: list[str] = []
    labels: list[int] = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or not {"id", "class", "offset"} <= rec.keys():
            raise BundleManifestError(f"video record {i} is malformed")
        vid, cls, offset = rec["id"], rec["class"], rec["offset"]
        if not isinstance(vid, str) or not isinstance(cls, int) or not isinstance(offset, int):
            raise BundleManifestError(f"video record {i} has wrong field types")
        if not 0 <= cls < len(class_names):
            raise BundleManifestError(f"video {vid!r} labels unknown class {cls}")
        if offset != i * stride:
            raise BundleShapeError(
                f"video {vid!r} declares offset {offset}, expected {i * stride}"
            )
        ids.append(vid)
        labels.append(cls)
    if len(set(ids)) != len(ids):
        raise BundleManifestError("duplicate video ids in manifest")

    features_path = os.path.join(path, FEATURES_NAME)
    try:
        with open(features_path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise BundlePayloadError(f"cannot read {features_path}: {exc}") from exc
    expected = len(records) * stride
    if len(blob) < expected:
        raise BundlePayloadError(
            f"payload truncated: {len(blob)} bytes, expected {expected}"
        )
    if len(blob) > expected:
        raise BundleShapeError(
            f"payload length mismatch: {len(blob)} bytes, manifest declares {expected}"
        )
    features = np.frombuffer(blob, dtype="<f4").reshape(
        len(records), frames, tokens, channels
    )
    if not np.all(np.isfinite(features)):
        raise BundlePayloadError("payload contains non-finite values")

    teachers = _load_teachers(path, ids, len(class_names))
    text = _load_text_bank(path, len(class_names))
    return FeatureBundle(
        features=features.copy(),
        ids=ids,
        labels=np.array(labels),
        class_names=list(class_names),
        teachers=teachers,
        text_embeddings=text,
    )


def _load_teachers(path: str, ids: list[str], num_classes: int) -> dict[str, np.ndarray] | None:
    teacher_path = os.path.join(path, TEACHER_NAME)
    if not os.path.exists(teacher_path):
        return None
    known = set(ids)
    teachers: dict[str, np.ndarray] = {}
    with open(teacher_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != num_classes + 1:
                raise TeacherFileError(
                    f"teacher row {lineno} has {len(parts) - 1} values, expected {num_classes}"
                )
            vid = parts[0]
            if vid not in known:
                raise TeacherFileError(f"teacher row {lineno} references unknown video {vid!r}")
            if vid in teachers:
                raise TeacherFileError(f"duplicate teacher row for video {vid!r}")
            try:
                row = np.array([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise TeacherFileError(f"teacher row {lineno} is not numeric: {exc}") from exc
            if not np.all(np.isfinite(row)) or float(row.min()) < -1e-9:
                raise TeacherFileError(f"teacher row {lineno} has invalid probabilities")
            if abs(float(row.sum()) - 1.0) > 1e-6:
                raise TeacherFileError(
                    f"teacher row {lineno} sums to {float(row.sum())!r}, not 1 within 1e-6"
                )
            teachers[vid] = np.maximum(row, 0.0)
    return teachers or None


def _load_text_bank(path: str, num_classes: int) -> np.ndarray | None:
    text_path = os.path.join(path, TEXT_NAME)
    if not os.path.exists(text_path):
        return None
    rows = []
    with open(text_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(x) for x in line.split(",")])
            except ValueError as exc:
                raise TextBankError(f"text row {lineno} is not numeric: {exc}") from exc
    if len(rows) != num_classes:
        raise TextBankError(f"text bank has {len(rows)} rows, expected {num_classes}")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or min(widths) < 2:
        raise TextBankError("text bank rows have inconsistent or too-small widths")
    bank = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(bank)):
        raise TextBankError("text bank contains non-finite values")
    norms = np.linalg.norm(bank, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise TextBankError("text bank rows must be unit norm within 1e-6")
    return bank


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------


@dataclass
class Episode:
    """One N-way K-shot task: grouped support indices plus labelled queries."""

    way: int
    shot: int
    classes: np.ndarray  # (N,) global class ids
    support: np.ndarray  # (N, K) video indices grouped by class
    queries: np.ndarray  # (Q,) video indices
    query_pos: np.ndarray  # (Q,) position of the query's class within `classes`


def sample_episode(
    bundle: FeatureBundle,
    way: int,
    shot: int,
    queries_per_class: int,
    rng: np.random.Generator,
) -> Episode:
    """Uniformly sample a support/query split with disjoint videos."""
    if way < 2 or way > bundle.num_classes:
        raise InputError(
            f"way must be in [2, {bundle.num_classes}] for this bundle, got {way}"
        )
    if shot < 1 or queries_per_class < 1:
        raise InputError("shot and queries-per-class must be positive")
    classes = np.sort(rng.choice(bundle.num_classes, size=way, replace=False))
    need = shot + queries_per_class
    support = np.zeros((way, shot), dtype=np.int64)
    queries: list[int] = []
    query_pos: list[int] = []
    for pos, cls in enumerate(classes):
        pool = bundle.videos_of_class(int(cls))
        if pool.size < need:
            raise InputError(
                f"class {bundle.class_names[int(cls)]!r} has {pool.size} videos, "
                f"needs {need} for {shot}-shot with {queries_per_class} queries"
            )
        pick = rng.choice(pool, size=need, replace=False)
        support[pos] = pick[:shot]
        queries.extend(int(v) for v in pick[shot:])
        query_pos.extend([pos] * queries_per_class)
    return Episode(
        way=way,
        shot=shot,
        classes=classes,
        support=support,
        queries=np.array(queries, dtype=np.int64),
        query_pos=np.array(query_pos, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Knobs for the synthetic feature generators.

    Scenario A separates classes by mean frame trajectories, so linear
    metrics solve it.  Scenario B hides the class in nonlinear channel
    dependence: per-frame hidden scalars drive nonlinear feature maps
    mixed through bundle-wide token-centered loadings, and a balanced
    per-video sign flip wipes the class signal out of every first
    moment.  ``gamma`` scales the dependence signal (0 means chance
    level for every metric), ``sigma`` the additive noise.  With
    ``temporal_shift`` each video's hidden trajectory is circularly
    rolled by a random offset, so only order-insensitive views of the
    dependence structure identify the class reliably.
    """

    scenario: str = "B"
    classes: int = 20
    videos_per_class: int = 30
    frames: int = 8
    tokens: int = 10
    channels: int = 32
    text_dim: int = 16
    gamma: float = 1.0
    sigma: float = 0.5
    hidden_jitter: float = 0.1
    temporal_shift: bool = True
    teacher_fidelity: float = 0.9
    teacher_sharpness: float = 2.0
    seed: int = 0

    def validate(self) -> "SyntheticConfig":
        if self.scenario not in ("A", "B"):
            raise InputError(f"unknown scenario {self.scenario!r}, expected 'A' or 'B'")
        if min(self.classes, self.videos_per_class, self.frames) < 1:
            raise InputError("classes, videos_per_class and frames must be positive")
        if self.classes < 2:
            raise InputError("need at least two classes")
        if self.tokens < 2 or self.channels < 2 or self.text_dim < 2:
            raise InputError("tokens, channels and text_dim must be at least 2")
        if self.gamma < 0 or self.sigma < 0 or self.hidden_jitter < 0:
            raise InputError("gamma, sigma and hidden_jitter must be nonnegative")
        if not 0.0 <= self.teacher_fidelity <= 1.0:
            raise InputError("teacher_fidelity must lie in [0, 1]")
        if self.teacher_sharpness <= 0:
            raise InputError("teacher_sharpness must be positive")
        return self


def _hidden_feature_map(h: np.ndarray) -> np.ndarray:
    """Standardized nonlinear features of hidden scalars, unit per frame.

    Components are sin, square and absolute value, centered and scaled
    by their closed-form moments under a standard normal input.
    """
    s_sin = math.sqrt((1.0 - math.exp(-8.0)) / 2.0)
    s_sq = math.sqrt(2.0)
    s_abs = math.sqrt(1.0 - 2.0 / math.pi)
    feats = np.stack(
        [
            np.sin(2.0 * h) / s_sin,
            (h * h - 1.0) / s_sq,
            (np.abs(h) - math.sqrt(2.0 / math.pi)) / s_abs,
        ],
        axis=-1,
    )
    norms = np.linalg.norm(feats, axis=-1, keepdims=True)
    return feats / np.maximum(norms, 1e-12)


def _teacher_from_latents(
    latent: np.ndarray,
    class_latents: np.ndarray,
    labels: np.ndarray,
    sharpness: float,
    fidelity: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Softmax over negative latent distances, with label-noise swaps."""
    d2 = ((latent[:, None, :] - class_latents[None, :, :]) ** 2).mean(axis=2)
    logits = -sharpness * d2
    logits = logits - logits.max(axis=1, keepdims=True)
    q = np.exp(logits)
    q /= q.sum(axis=1, keepdims=True)
    n, c = q.shape
    for i in range(n):
        if rng.random() >= fidelity:
            wrong = int(rng.integers(c - 1))
            if wrong >= labels[i]:
                wrong += 1
            true = int(labels[i])
            q[i, true], q[i, wrong] = q[i, wrong], q[i, true]
    return q


def synth_generate(config: SyntheticConfig, rng: np.random.Generator | None = None) -> FeatureBundle:
    cfg = config.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    c, n, t = cfg.classes, cfg.videos_per_class, cfg.frames
    tokens, d = cfg.tokens, cfg.channels
    total = c * n
    ids = [f"vid_{i:05d}" for i in range(total)]
    class_names = [f"class_{i:02d}" for i in range(c)]
    labels = np.repeat(np.arange(c), n)
    features = np.zeros((total, t, tokens, d), dtype=np.float32)

    text = rng.standard_normal((c, cfg.text_dim))
    text /= np.linalg.norm(text, axis=1, keepdims=True)

    if cfg.scenario == "A":
        mu = rng.standard_normal((c, t, d))
        latents = np.zeros((total, t * d))
        for v in range(total):
            noise = cfg.sigma * rng.standard_normal((t, tokens, d))
            video = mu[labels[v]][:, None, :] + noise
            features[v] = video.astype(np.float32)
            latents[v] = video.mean(axis=1).ravel()
        class_latents = mu.reshape(c, t * d)
    else:
        loadings = rng.standard_normal((d, tokens, 3))
        loadings -= loadings.mean(axis=1, keepdims=True)  # kills token means
        base = rng.standard_normal((c, t))
        latents = np.zeros((total, t))
        for v in range(total):
            h = base[labels[v]] + cfg.hidden_jitter * rng.standard_normal(t)
            latents[v] = h  # pre-shift trajectory is the ground-truth latent
            if cfg.temporal_shift and t > 1:
                h = np.roll(h, int(rng.integers(t)))
            frame_feats = _hidden_feature_map(h)  # (t, 3)
            signal = np.einsum("kpf,tf->tpk", loadings, frame_feats)
            sign = 1.0 if v % 2 == 0 else -1.0  # balanced within each class
            video = cfg.gamma * sign * signal + cfg.sigma * rng.standard_normal(
                (t, tokens, d)
            )
            features[v] = video.astype(np.float32)
        class_latents = base

    q = _teacher_from_latents(
        latents, class_latents, labels, cfg.teacher_sharpness, cfg.teacher_fidelity, rng
    )
    teachers = {vid: q[i] for i, vid in enumerate(ids)}
    return FeatureBundle(
        features=features,
        ids=ids,
        labels=labels,
        class_names=class_names,
        teachers=teachers,
        text_embeddings=text,
    )


def chance_accuracy(way: int) -> float:
    return 1.0 / way


def make_variant(config: SyntheticConfig, **changes) -> SyntheticConfig:
    """Copy a config with selected fields replaced."""
    return replace(config, **changes)
