"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .params import ParamStore


@dataclass
class AdamWState:
    """First/second moment accumulators per tensor plus the step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamStore) -> "AdamWState":
        state = cls()
        for name, tensor, _ in params.named_params():
            state.m[name] = np.zeros_like(tensor)
            state.v[name] = np.zeros_like(tensor)
        return state


def adamw_step(
    params: ParamStore,
    state: AdamWState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One update from the gradients currently held in the store.

    Weight decay is decoupled: parameters are first multiplied by
    (1 - lr * weight_decay), so a decay-only step shrinks them by
    exactly that factor.
    """
    if lr < 0.0 or weight_decay < 0.0:
        raise InputError("learning rate and weight decay must be nonnegative")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, tensor, grad in params.named_params():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        if weight_decay != 0.0:
            tensor *= 1.0 - lr * weight_decay
        tensor -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Half-cosine decay from base_lr at step 0 toward 0 at total_steps."""
    if total_steps <= 0:
        return base_lr
    s = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * s / total_steps))
