"""Adam with bias correction and the step learning-rate decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor

__all__ = ["AdamState", "adam_step", "LrSchedule"]


@dataclass
class AdamState:
    """First/second moment accumulators; canonical published constants."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One Adam update, in place on ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("parameter/gradient/state count mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Step decay: lr(epoch) = max(initial · factor^(epoch // period), floor).

    With the defaults this visits exactly 1e-3, 1e-4, 1e-5, 1e-6 over 200
    epochs.
    """

    initial: float = 1e-3
    floor: float = 1e-6
    factor: float = 0.1
    period: int = 50

    def lr(self, epoch: int) -> float:
        return max(self.initial * self.factor ** (epoch // self.period), self.floor)
