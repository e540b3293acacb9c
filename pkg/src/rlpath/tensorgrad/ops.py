"""Differentiable operations.

Layers: conv2d, maxpool2 / upsample2 (``resample``), relu / tanh
(``activation``), concat_channels, elementwise add.  The remaining ops are
the arithmetic the losses and the policy objective are written in.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        axes = ["batch", "channels", "height", "width"] if a.data.ndim == 4 else None
        for k, (da, db) in enumerate(zip(a.shape, b.shape)):
            if da != db:
                label = axes[k] if axes else f"axis {k}"
                raise ShapeError(f"{op}: {label} mismatch ({da} vs {db}); shapes {a.shape} and {b.shape}")
        raise ShapeError(f"{op}: rank mismatch, shapes {a.shape} and {b.shape}")


def _scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


# --- elementwise arithmetic -------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if _scalar(b):
        return make(a.data + a.dtype.type(b), (a,), lambda g: (g,), "add_scalar")
    b = as_tensor(b, a)
    _same_shape(a, b, "add")
    return make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if _scalar(b):
        return make(a.data - a.dtype.type(b), (a,), lambda g: (g,), "sub_scalar")
    b = as_tensor(b, a)
    _same_shape(a, b, "sub")
    return make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    if _scalar(b):
        c = a.dtype.type(b)
        return make(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    b = as_tensor(b, a)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a: Tensor, b) -> Tensor:
    if _scalar(b):
        c = a.dtype.type(b)
        return make(a.data / c, (a,), lambda g: (g / c,), "div_scalar")
    b = as_tensor(b, a)
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return make(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make(ad * ad, (a,), lambda g: (2 * g * ad,), "square")


def power(a: Tensor, p: float) -> Tensor:
    """``a ** p`` for a positive base."""
    ad = a.data
    out = ad ** a.dtype.type(p)
    return make(out, (a,), lambda g: (g * a.dtype.type(p) * ad ** a.dtype.type(p - 1),), "power")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sgn = np.sign(a.data)
    return make(np.abs(a.data), (a,), lambda g: (g * sgn,), "abs")


def clip(a: Tensor, lo: float | None, hi: float | None) -> Tensor:
    """Clamp values; gradient passes only where the value was inside."""
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return make(out, (a,), lambda g: (g * inside,), "clip")


def maximum(a: Tensor, floor: float) -> Tensor:
    return clip(a, floor, None)


# --- reductions and reshapes ---------------------------------------------------


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.full(shape, g, dtype=a.dtype),)
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        gg = np.expand_dims(g, tuple(k % len(shape) for k in ax))
        return (np.broadcast_to(gg, shape).astype(a.dtype),)

    return make(np.asarray(out, dtype=a.dtype), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[k] for k in ax]))
    return mul(sum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def repeat_batch(a: Tensor, n: int) -> Tensor:
    """Tile a batch-1 tensor ``n`` times along axis 0."""
    if a.shape[0] != 1:
        raise ShapeError(f"repeat_batch: batch axis must be 1, got {a.shape[0]}")
    return make(np.repeat(a.data, n, axis=0), (a,), lambda g: (g.sum(0, keepdims=True),), "repeat_batch")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels needs 4-d tensors")
    for k, label in ((0, "batch"), (2, "height"), (3, "width")):
        if a.shape[k] != b.shape[k]:
            raise ShapeError(f"concat_channels: {label} mismatch ({a.shape[k]} vs {b.shape[k]})")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return make(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]), "concat")


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return make(a.data[:, start:stop], (a,), bw, "slice_channels")


# --- activations -------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return make(a.data * pos, (a,), lambda g: (g * pos,), "relu")


def tanh(a: Tensor) -> Tensor:
    """tanh kept strictly inside (-1, 1) at the working precision."""
    lim = np.nextafter(a.dtype.type(1), a.dtype.type(0))
    out = np.clip(np.tanh(a.data), -lim, lim)
    return make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "tanh":
        return tanh(a)
    raise ValueError(f"unknown activation {kind!r}")


# --- convolution and resampling ---------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation. x (B,C,H,W), w (O,C,k,k), b (O,)."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-d (batch, channels, height, width), got {x.shape}")
    if w.data.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: weight must be (out, in, k, k), got {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride >= 1 and padding >= 0 required")
    B, C, H, W = x.shape
    O, Ci, k, _ = w.shape
    if Ci != C:
        raise ShapeError(f"conv2d: channels axis mismatch (input {C}, weight expects {Ci})")
    if b is not None and b.shape != (O,):
        raise ShapeError(f"conv2d: bias must have shape ({O},), got {b.shape}")
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: height/width {H}x{W} too small for kernel {k} with padding {padding}")
    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    s = stride
    if k == 1 and s == 1:
        cols = xd.reshape(B, C, H * W)
    else:
        cols = np.empty((B, C, k, k, Ho, Wo), dtype=xd.dtype)
        for di in range(k):
            for dj in range(k):
                cols[:, :, di, dj] = xd[:, :, di : di + s * Ho : s, dj : dj + s * Wo : s]
        cols = cols.reshape(B, C * k * k, Ho * Wo)
    w2 = w.data.reshape(O, C * k * k)
    out = np.matmul(w2, cols).reshape(B, O, Ho, Wo)
    if b is not None:
        out += b.data[None, :, None, None]
    Hp, Wp = xd.shape[2], xd.shape[3]

    def bw(g):
        g2 = g.reshape(B, O, Ho * Wo)
        gw = gx = gb = None
        if w.requires_grad:
            gw = g2[0] @ cols[0].T
            for bi in range(1, B):
                gw += g2[bi] @ cols[bi].T
            gw = gw.reshape(w.shape).astype(w.dtype, copy=False)
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            if k == 1 and s == 1:
                dx = dcols.reshape(B, C, H, W)
            else:
                dcols = dcols.reshape(B, C, k, k, Ho, Wo)
                dx = np.zeros((B, C, Hp, Wp), dtype=x.dtype)
                for di in range(k):
                    for dj in range(k):
                        dx[:, :, di : di + s * Ho : s, dj : dj + s * Wo : s] += dcols[:, :, di, dj]
                if padding:
                    dx = dx[:, :, padding:-padding, padding:-padding]
            gx = np.ascontiguousarray(dx)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make(out, parents, bw, "conv2d")


def maxpool2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2: height and width must be even, got {H}x{W}")
    win = x.data.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        g4 = np.zeros((B, C, H // 2, W // 2, 4), dtype=g.dtype)
        np.put_along_axis(g4, idx[..., None], g[..., None], axis=-1)
        return (g4.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W),)

    return make(out, (x,), bw, "maxpool2")


def upsample2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make(out, (x,), lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),), "upsample2")


def resample(x: Tensor, mode: str) -> Tensor:
    if mode == "maxpool2":
        return maxpool2(x)
    if mode == "upsample2_nearest":
        return upsample2(x)
    raise ValueError(f"unknown resample mode {mode!r}")


def avgpool2(x: Tensor) -> Tensor:
    """2x2 mean pooling; an odd trailing row/column is dropped."""
    B, C, H, W = x.shape
    h2, w2 = H // 2, W // 2
    xd = x.data[:, :, : 2 * h2, : 2 * w2]
    out = xd.reshape(B, C, h2, 2, w2, 2).mean(axis=(3, 5))

    def bw(g):
        full = np.zeros((B, C, H, W), dtype=g.dtype)
        q = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * g.dtype.type(0.25)
        full[:, :, : 2 * h2, : 2 * w2] = q
        return (full,)

    return make(out, (x,), bw, "avgpool2")


def filter_separable(x: Tensor, taps: np.ndarray) -> Tensor:
    """Valid-mode per-channel filtering with ``taps`` along height then width."""
    taps = np.asarray(taps, dtype=x.dtype)
    n = taps.shape[0]
    B, C, H, W = x.shape
    Ho, Wo = H - n + 1, W - n + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"filter_separable: image {H}x{W} smaller than {n}-tap window")
    xd = x.data
    mid = np.zeros((B, C, Ho, W), dtype=x.dtype)
    for t in range(n):
        mid += taps[t] * xd[:, :, t : t + Ho, :]
    out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
    for t in range(n):
        out += taps[t] * mid[:, :, :, t : t + Wo]

    def bw(g):
        gm = np.zeros((B, C, Ho, W), dtype=g.dtype)
        for t in range(n):
            gm[:, :, :, t : t + Wo] += taps[t] * g
        gx = np.zeros((B, C, H, W), dtype=g.dtype)
        for t in range(n):
            gx[:, :, t : t + Ho, :] += taps[t] * gm
        return (gx,)

    return make(out, (x,), bw, "filter_separable")
