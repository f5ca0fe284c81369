"""Dense tensors with a recorded graph for reverse-mode differentiation.

Every differentiable op produces a new :class:`GradTensor` that remembers its
parents and a closure mapping the output gradient to parent gradients. A call
to :func:`backward` walks that graph once in reverse topological order and
then releases it, so each forward recording feeds exactly one backward.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import DimensionError, GraphError

_node_ids = itertools.count()
_mode = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextmanager
def no_grad():
    """Run ops without recording them (inference, detached passes)."""
    prev = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


class GradTensor:
    __slots__ = ("values", "grad", "requires_grad", "node_id", "_parents", "_backward", "_consumed")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        arr = np.asarray(values)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self._parents: tuple[GradTensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._consumed

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float("nan")

    def detach(self) -> GradTensor:
        return GradTensor(self.values, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"GradTensor(shape={self.shape}, dtype={self.dtype}{flag})"


def as_tensor(x, dtype=None) -> GradTensor:
    if isinstance(x, GradTensor):
        if dtype is not None and x.dtype != dtype:
            raise DimensionError(f"expected dtype {np.dtype(dtype)}, got {x.dtype}")
        return x
    return GradTensor(x, dtype=dtype)


def record(values: np.ndarray, parents: Sequence[GradTensor], backward_fn: BackwardFn) -> GradTensor:
    """Wrap an op result, attaching it to the graph when any parent is tracked."""
    tracked = grad_enabled() and any(p.requires_grad for p in parents)
    out = GradTensor(values, requires_grad=tracked)
    if tracked:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topological_order(root: GradTensor) -> list[GradTensor]:
    order: list[GradTensor] = []
    seen: set[int] = set()
    stack: list[tuple[GradTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        if node._consumed:
            raise GraphError(
                "graph already consumed by a previous backward; re-run the forward pass"
            )
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.node_id not in seen:
                stack.append((parent, False))
    return order


def backward(loss: GradTensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked ancestor ``t``.

    The recorded graph is released afterwards; calling backward again on the
    same loss raises :class:`GraphError`.
    """
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward; re-run the forward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tracked tensor")
    if grad is None:
        if loss.values.size != 1:
            raise DimensionError(f"backward needs a scalar loss or an explicit grad, got shape {loss.shape}")
        grad = np.ones_like(loss.values)
    elif np.shape(grad) != loss.shape:
        raise DimensionError(f"seed grad shape {np.shape(grad)} != loss shape {loss.shape}")

    order = _topological_order(loss)
    loss.grad = np.array(grad, dtype=loss.dtype) if loss.grad is None else loss.grad + grad
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, g in zip(node._parents, parent_grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                raise DimensionError(
                    f"internal gradient shape {g.shape} does not match tensor shape {parent.shape}"
                )
            parent.grad = g.copy() if parent.grad is None else parent.grad + g

    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True
