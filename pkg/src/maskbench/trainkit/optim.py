"""Adam with bias correction and global-norm gradient clipping."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """In-place Adam update of every parameter that received a gradient."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name!r} at optimizer step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)).astype(p.dtype)
    return params, state


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_grad_norm(grads, max_norm=5.0):
    """Scale all gradients by max_norm / norm when the global L2 norm exceeds max_norm."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}
    return dict(grads)
