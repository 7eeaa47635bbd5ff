"""Adam optimizer over named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: list[Parameter], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update with bias correction.

    Frozen parameters and parameters whose gradient is absent or identically
    zero are left untouched (their moments too), so a step with no gradient
    signal is a no-op.
    """
    state.step += 1
    t = state.step
    m_scale = lr / (1 - beta1 ** t)
    v_scale = 1.0 / np.sqrt(1 - beta2 ** t)
    for p in params:
        if not p.trainable:
            continue
        g = p.grad
        if g is None or not np.any(g):
            continue
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * np.square(g)
        denom = np.sqrt(v)
        denom *= v_scale
        denom += eps
        update = m / denom
        update *= m_scale
        p.data -= update


def clear_grads(params: list[Parameter]) -> None:
    for p in params:
        p.grad = None
