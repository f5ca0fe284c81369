"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.8
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """Apply one Adam update in place and return ``params``.

    ``params`` maps names to :class:`GradTensor` (or plain arrays); ``grads``
    maps the same names to gradient arrays. ``grads=None`` reads each
    tensor's ``.grad``. Missing gradients count as zero.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        values = getattr(p, "values", p)
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(values)
        elif g.shape != values.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {values.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(values)
            state.v[name] = np.zeros_like(values)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        values -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return params
