"""AdamW with decoupled weight decay.

Updates are in place: `adamw_step` mutates the `.data` of each parameter
tensor and returns the same list. Moment tensors live in AdamWState and are
shape-matched to their parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamWState:
    lr: float = 2e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @staticmethod
    def init(params, lr=2e-4, weight_decay=0.05, beta1=0.9, beta2=0.999, eps=1e-8):
        state = AdamWState(lr=lr, weight_decay=weight_decay, beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros(p.shape, dtype=p.dtype) for p in params]
        state.v = [np.zeros(p.shape, dtype=p.dtype) for p in params]
        return state


def adamw_step(state: AdamWState, params, grads):
    """One update: moments, bias correction, then decoupled decay."""
    if len(params) != len(state.m):
        raise ShapeError(
            f"state tracks {len(state.m)} params, got {len(params)}"
        )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != p.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.shape}")
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (
            state.lr * (m_hat / (np.sqrt(v_hat) + state.eps))
            + state.lr * state.weight_decay * p.data
        )
    return params
