"""Adam with bias correction."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    """In-place Adam update of ``params``; returns the updated ``state``.

    ``state`` holds ``t`` and first/second moment dicts keyed like ``params``.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    m = state.setdefault("m", {})
    v = state.setdefault("v", {})
    t = state.get("t", 0) + 1
    state["t"] = t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        mm = m.get(name)
        if mm is None:
            mm = m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        vv = v[name]
        mm *= beta1
        mm += (1.0 - beta1) * g
        vv *= beta2
        vv += (1.0 - beta2) * (g * g)
        step = (lr / c1) * mm / (np.sqrt(vv / c2) + eps)
        p -= step.astype(p.dtype, copy=False)
    return state


class Adam:
    def __init__(self, params: Iterable[Parameter], beta1=0.9, beta2=0.999, eps=1e-8, max_grad_norm: float | None = None):
        self.params = {p.name: p for p in params}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.max_grad_norm = max_grad_norm
        self.state: dict = {}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
        if not np.isfinite(norm):
            raise FloatingPointError("non-finite gradient")
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / norm
            grads = {k: g * g.dtype.type(scale) for k, g in grads.items()}
        data = {k: p.data for k, p in self.params.items()}
        adam_step(data, grads, self.state, lr, self.beta1, self.beta2, self.eps)
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, a in self.state.get("m", {}).items():
            out[f"adam.m.{k}"] = a
        for k, a in self.state.get("v", {}).items():
            out[f"adam.v.{k}"] = a
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.state = {"t": t, "m": {}, "v": {}}
        for key, a in arrays.items():
            if key.startswith("adam.m."):
                self.state["m"][key[7:]] = a.copy()
            elif key.startswith("adam.v."):
                self.state["v"][key[7:]] = a.copy()
