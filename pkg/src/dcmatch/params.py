"""Learnable parameters, their gradient buffers, and checkpoint I/O.

Checkpoints are a small versioned binary: an 8-byte magic string, a
uint32 version, five uint32 dimension/flag words, seven float64
hyperparameters, then every parameter tensor as little-endian float64
in declared order.  A sidecar text manifest lists the tensor shapes.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, InputError, ShapeError

CHECKPOINT_MAGIC = b"DCMCKPT1"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("gen_weight", "gen_bias", "bank", "proj_weight", "proj_bias")

FLAG_GLAC = 1
FLAG_CLASS_TOKEN = 2


@dataclass
class ModelDims:
    frames: int
    channels: int
    proj_dim: int
    classes: int

    def validate(self) -> "ModelDims":
        if min(self.frames, self.proj_dim) < 1 or self.channels < 2 or self.classes < 2:
            raise InputError(f"invalid model dimensions {self}")
        return self


@dataclass
class CheckpointMeta:
    """Hyperparameters frozen into a checkpoint alongside the tensors."""

    alpha: float = 0.8
    match_temperature: float = 1.0
    guidance_temperature: float = 1.0
    align_temperature: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    fusion_weight: float = 1.0
    glac_enabled: bool = False
    include_class_token: bool = True


class ParamStore:
    """All learnable tensors with paired, same-shaped gradient buffers."""

    def __init__(self, dims: ModelDims):
        dims.validate()
        self.dims = dims
        cells = dims.frames * dims.frames
        self.gen_weight = np.zeros((cells, dims.proj_dim))
        self.gen_bias = np.zeros(cells)
        self.bank = np.zeros((dims.classes, dims.channels, dims.channels))
        self.proj_weight = np.zeros((dims.channels, dims.proj_dim))
        self.proj_bias = np.zeros(dims.proj_dim)
        self.grads = {name: np.zeros_like(getattr(self, name)) for name in PARAM_NAMES}

    @classmethod
    def init(cls, dims: ModelDims, rng: np.random.Generator) -> "ParamStore":
        """Neutral starting point: near-uniform matching, small random rest."""
        store = cls(dims)
        cells = dims.frames * dims.frames
        eps = 1.0 / math.sqrt(dims.proj_dim * cells)
        store.gen_weight[:] = rng.uniform(-eps, eps, size=store.gen_weight.shape)
        store.gen_bias[:] = 1.0 / cells
        sym = rng.standard_normal(store.bank.shape)
        store.bank[:] = 0.01 * (sym + np.transpose(sym, (0, 2, 1))) / 2.0
        store.proj_weight[:] = rng.standard_normal(store.proj_weight.shape) / math.sqrt(
            dims.channels
        )
        return store

    def named_params(self):
        for name in PARAM_NAMES:
            yield name, getattr(self, name), self.grads[name]

    def zero_grads(self) -> None:
        for grad in self.grads.values():
            grad.fill(0.0)

    def scale_grads(self, factor: float) -> None:
        for grad in self.grads.values():
            grad *= factor

    def all_finite(self) -> bool:
        return all(
            np.all(np.isfinite(getattr(self, name))) and np.all(np.isfinite(self.grads[name]))
            for name in PARAM_NAMES
        )

    def copy(self) -> "ParamStore":
        other = ParamStore(self.dims)
        for name in PARAM_NAMES:
            getattr(other, name)[:] = getattr(self, name)
            other.grads[name][:] = self.grads[name]
        return other

    def set_bank_from_representations(self, reprs: np.ndarray, labels: np.ndarray) -> None:
        """Data-driven bank init: per-class mean video representations."""
        if reprs.shape[1:] != self.bank.shape[1:]:
            raise ShapeError(
                f"representations {reprs.shape} do not match bank {self.bank.shape}"
            )
        for c in range(self.dims.classes):
            rows = np.flatnonzero(labels == c)
            if rows.size:
                self.bank[c] = reprs[rows].mean(axis=0)


def save_checkpoint(params: ParamStore, meta: CheckpointMeta, path: str) -> None:
    dims = params.dims
    flags = (FLAG_GLAC if meta.glac_enabled else 0) | (
        FLAG_CLASS_TOKEN if meta.include_class_token else 0
    )
    header = struct.pack(
        "<5I", dims.frames, dims.channels, dims.proj_dim, dims.classes, flags
    )
    hypers = struct.pack(
        "<7d",
        meta.alpha,
        meta.match_temperature,
        meta.guidance_temperature,
        meta.align_temperature,
        meta.lambda1,
        meta.lambda2,
        meta.fusion_weight,
    )
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(header)
        fh.write(hypers)
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
    with open(path + ".manifest.txt", "w", encoding="utf-8") as fh:
        for name in PARAM_NAMES:
            shape = " ".join(str(s) for s in getattr(params, name).shape)
            fh.write(f"{name} {shape}\n")


def load_checkpoint(path: str) -> tuple[ParamStore, CheckpointMeta]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    fixed = len(CHECKPOINT_MAGIC) + 4 + 20 + 56
    if len(blob) < fixed:
        raise CheckpointError("checkpoint shorter than its fixed header")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic string")
    cursor = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", blob, cursor)
    cursor += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    frames, channels, proj_dim, classes, flags = struct.unpack_from("<5I", blob, cursor)
    cursor += 20
    (
        alpha,
        match_t,
        guidance_t,
        align_t,
        lambda1,
        lambda2,
        fusion_weight,
    ) = struct.unpack_from("<7d", blob, cursor)
    cursor += 56
    try:
        dims = ModelDims(frames, channels, proj_dim, classes)
        params = ParamStore(dims)
    except InputError as exc:
        raise CheckpointError(f"checkpoint header invalid: {exc}") from exc
    for name in PARAM_NAMES:
        tensor = getattr(params, name)
        nbytes = tensor.size * 8
        chunk = blob[cursor : cursor + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"checkpoint truncated inside tensor {name!r}")
        tensor[:] = np.frombuffer(chunk, dtype="<f8").reshape(tensor.shape)
        cursor += nbytes
    if cursor != len(blob):
        raise CheckpointError(f"{len(blob) - cursor} trailing bytes after tensors")
    meta = CheckpointMeta(
        alpha=alpha,
        match_temperature=match_t,
        guidance_temperature=guidance_t,
        align_temperature=align_t,
        lambda1=lambda1,
        lambda2=lambda2,
        fusion_weight=fusion_weight,
        glac_enabled=bool(flags & FLAG_GLAC),
        include_class_token=bool(flags & FLAG_CLASS_TOKEN),
    )
    return params, meta
