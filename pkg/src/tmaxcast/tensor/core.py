"""Reverse-mode autodiff tensor."""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run forward passes without recording the graph."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """An ndarray plus the bookkeeping needed for backprop.

    ``backward_fn`` receives the gradient of this node and returns one
    gradient (or ``None``) per parent, in order.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False,
                 parents: Sequence["Tensor"] = (), backward_fn: Callable | None = None, op: str = ""):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):  # 0-d op results come back as numpy scalars
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op

    # -- construction helpers -------------------------------------------
    @classmethod
    def result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: Callable, op: str) -> "Tensor":
        """Wrap an op output, recording the graph edge only when something upstream needs grads."""
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            return cls(data, True, parents, backward_fn, op)
        return cls(data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- backprop ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad.

        Nodes are visited in reverse topological order, each exactly once;
        contributions along multiple paths are summed before a node passes
        its gradient on.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import add, neg
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        from .ops import add, neg
        return add(as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        from .ops import neg
        return neg(self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __getitem__(self, index):
        from .ops import getitem
        return getitem(self, index)

    def sum(self):
        from .ops import sum_all
        return sum_all(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float32))


def _topo_order(root: Tensor) -> list[Tensor]:
    """Parents before children; iterative to survive deep graphs."""
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
