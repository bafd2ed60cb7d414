"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def state_arrays(self) -> dict:
        out = {}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out


def adam_step(params: dict[str, Tensor], state: AdamState, grads: dict[str, np.ndarray] | None = None) -> None:
    """Update ``params`` in place from their ``.grad`` (or ``grads`` when given).

    Weight decay is decoupled: ``theta -= lr * wd * theta`` happens before the
    moment update. A non-finite gradient aborts the whole step untouched.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    for name, g in grads.items():
        if g is None:
            raise NumericError(f"parameter {name!r} has no gradient")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}; update aborted")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name].astype(np.float64)
        theta = p.data.astype(np.float64)
        if state.weight_decay:
            theta = theta - state.lr * state.weight_decay * theta
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        # moments are kept at parameter precision
        state.m[name] = m.astype(p.dtype)
        state.v[name] = v.astype(p.dtype)
        theta = theta - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = theta.astype(p.dtype)
