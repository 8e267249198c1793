"""Adam with per-layer freezing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .freeze import FreezeSpec, layer_of

DEFAULT_LR = 0.003


class DivergenceError(FloatingPointError):
    """A gradient contained NaN or Inf."""


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict, lr: float = DEFAULT_LR, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """Zeroed moment accumulators shaped like ``params`` (name -> array)."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    m = {k: np.zeros_like(p) for k, p in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}
    return AdamState(lr, beta1, beta2, eps, 0, m, v)


def adam_step(state: AdamState, params: dict, grads: dict, freeze: FreezeSpec | None = None):
    """One bias-corrected Adam update, in place.

    Tensors whose layer is frozen (and their moments) are left untouched.
    ``grads`` may omit frozen tensors.
    """
    live = [k for k in params if freeze is None or freeze.is_trainable(layer_of(k))]
    for k in live:
        if k not in grads:
            raise KeyError(f"no gradient for trainable tensor {k}")
        g = grads[k]
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {k}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr / (1.0 - b1 ** state.t)
    bc2 = 1.0 - b2 ** state.t
    for k in live:
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[k] -= step * m / (np.sqrt(v / bc2) + state.eps)
    return params, state
