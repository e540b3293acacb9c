"""Central finite-difference oracle for tensorgrad gradients."""

from __future__ import annotations

import numpy as np

from rlpath.tensorgrad import Tensor, backward


def numeric_grad(f, arrays, k, eps=1e-5, max_entries=None, rng=None):
    """d f / d arrays[k] by central differences; f takes raw float64 arrays."""
    x = arrays[k]
    g = np.zeros_like(x)
    flat = list(np.ndindex(*x.shape))
    if max_entries is not None and len(flat) > max_entries:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(flat), size=max_entries, replace=False)
        flat = [flat[p] for p in pick]
    for idx in flat:
        old = x[idx]
        x[idx] = old + eps
        fp = f(*arrays)
        x[idx] = old - eps
        fm = f(*arrays)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g, flat


def max_rel_error(build, arrays, eps=1e-5, max_entries=None, seed=0):
    """Compare analytic and numeric gradients of the scalar ``build(*tensors)``."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    backward(loss)

    def f(*raw):
        return build(*[Tensor(r) for r in raw]).item()

    worst = 0.0
    rng = np.random.default_rng(seed)
    for k, t in enumerate(tensors):
        num, entries = numeric_grad(f, [a.copy() for a in arrays], k, eps, max_entries, rng)
        ana = t.grad if t.grad is not None else np.zeros_like(arrays[k])
        for idx in entries:
            a, n = ana[idx], num[idx]
            denom = max(abs(a), abs(n), 1e-6)
            worst = max(worst, abs(a - n) / denom)
    return worst


def param_grad_error(net_list, loss_fn, per_param=4, eps=1e-6, seed=0):
    """Worst relative error between backprop and central differences over sampled parameter entries."""
    params = [p for n in net_list for p in n.params]
    loss = loss_fn()
    grads = backward(loss, params)
    gen = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        for k in gen.choice(flat.size, size=min(per_param, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + eps
            fp = loss_fn().item()
            flat[k] = old - eps
            fm = loss_fn().item()
            flat[k] = old
            num = (fp - fm) / (2 * eps)
            ana = grads[p.name].reshape(-1)[k]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    return worst
