"""Adam with bias correction, per-group learning rates and decoupled decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
                lrs: dict[str, float], beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-8,
                weight_decay: float = 0.0, decayed: set[str] | frozenset = frozenset()) -> AdamState:
    """One in-place step over named arrays; ``lrs`` gives each name's rate.

    Weight decay is decoupled: decayed names shrink by ``lr * weight_decay``
    before the Adam update, independently of the gradient.
    """
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        lr = lrs[name]
        if weight_decay and name in decayed:
            p -= lr * weight_decay * p
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


def adam_step(params, grads, state: AdamState, lr: float, lr_projection: float | None = None,
              beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-8, weight_decay: float = 0.0,
              lr_gate: float | None = None) -> AdamState:
    """Adam step on a :class:`ModelParams` using its optimizer groups.

    Inherited input projections run at ``lr_projection`` (default ``lr/10``),
    the fusion gate at ``lr_gate`` (default ``lr``), everything else at
    ``lr``. Decay applies to weight matrices only.
    """
    if lr_projection is None:
        lr_projection = lr / 10
    rates = {"projection": lr_projection, "gate": lr if lr_gate is None else lr_gate, "new": lr}
    lrs = {k: rates[g] for k, g in params.groups().items()}
    return adam_update(params.named(), grads.named(), state, lrs, beta1, beta2, eps, weight_decay, params.decayed())
