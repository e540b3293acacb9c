"""Dense tensors with a reverse-mode tape.

Shapes never broadcast implicitly: binary ops require identical shapes or a
Python scalar operand.  Gradients are accumulated in float of the same dtype
as the data (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand dimensions disagree; the message names the axis."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward_fn: Callable | None = None,
        name: str | None = None,
        op: str = "leaf",
        dtype=None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{tag})"

    # arithmetic sugar; the functions live in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __neg__(self):
        from . import ops

        return ops.neg(self)


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ()

    def __init__(self, data, name: str, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True, name=name, op="param")


def make(data, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Result node; only records the tape entry when some input needs grad."""
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def topo_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in creation-compatible (topological) order."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Parameter] | None = None, seed_grad: np.ndarray | None = None) -> dict:
    """Reverse sweep from a scalar ``loss``.

    Returns ``{name: grad}`` for ``params`` (zeros for any parameter the loss
    does not reach).  Leaf ``.grad`` fields reached by this sweep are reset
    first, then filled, so they never mix two losses.
    """
    if seed_grad is None and loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else None
    order = topo_order(loss)
    for node in order:
        if node.backward_fn is None:
            node.grad = None
    for p in params or ():
        p.grad = None
    grads: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data) if seed_grad is None else np.asarray(seed_grad, dtype=loss.dtype)
    }
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        in_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(f"internal: grad shape {pg.shape} != input shape {parent.shape} in {node.op}")
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    out = {}
    if params is not None:
        for p in params:
            out[p.name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out


class Graph:
    """The tape behind a loss: operation nodes in topological order plus the
    trainable parameters they reference."""

    def __init__(self, loss: Tensor):
        self.loss = loss
        self.nodes = topo_order(loss)
        self.parameters = {n.name: n for n in self.nodes if isinstance(n, Parameter)}

    def backward(self) -> dict:
        return backward(self.loss, self.parameters.values())


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
