"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..tensor import Tensor


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              lr_scales: Sequence[float] | None = None, names: Sequence[str] | None = None) -> list[np.ndarray]:
    """One Adam update; returns new parameter arrays and advances ``state`` in place."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for k, g in enumerate(grads):
        if not np.isfinite(g).all():
            label = names[k] if names else f"#{k}"
            raise FloatingPointError(f"non-finite gradient for parameter {label}")
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {params[k].shape}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        lr = state.lr * (lr_scales[k] if lr_scales is not None else 1.0)
        out.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
    return out


class Adam:
    """Optimizer over tensors; reads ``.grad`` and writes ``.data``.

    ``lr_scales`` gives per-parameter multipliers of the base learning rate.
    Parameters with no gradient after backward are treated as having a zero gradient.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 lr_scales: Sequence[float] | None = None):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        self.lr_scales = list(lr_scales) if lr_scales is not None else None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        names = [p.name or f"#{k}" for k, p in enumerate(self.params)]
        new = adam_step(self.state, [p.data for p in self.params], grads, self.lr_scales, names)
        for p, arr in zip(self.params, new):
            p.data = arr
