"""Dense tensors with reverse-mode automatic differentiation.

Every value flowing through the networks is a ``Tensor``: a float64 numpy
array plus an optional gradient buffer and a backward closure. Calling
``backward()`` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients into every reachable tensor.

All arithmetic is double precision; single precision appears only in the
snapshot file format (see snapshot.py).
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Shape mismatch in a tensor operation, naming the offending axis."""

    def __init__(self, op: str, axis, expected, got):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(
            f"{op}: axis {axis!r} expected extent {expected}, got {got}"
        )


class Tensor:
    """n-dimensional value/gradient pair, node of the autodiff graph."""

    __slots__ = ("data", "grad", "_backward", "_prev", "name")

    def __init__(self, data, _prev: tuple = (), name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._backward = None  # closure set by the op that produced this node
        self._prev = _prev
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), name=self.name)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Reverse-mode pass from this node.

        ``grad`` defaults to ones (i.e. 1.0 for a scalar loss). Gradients
        accumulate: persistent parameter tensors keep summing until
        ``zero_grad`` is called, which is what mini-batch training relies on.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        self.accumulate_grad(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad_graph(self) -> None:
        """Clear gradients of every node reachable from this one."""
        for node in topo_order(self):
            node.grad = None


def topo_order(root: Tensor) -> list:
    """Iterative DFS topological order (graphs can be thousands of nodes deep)."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._prev:
            if id(child) not in visited:
                stack.append((child, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)


def require_axis(op: str, axis, expected, got) -> None:
    if expected != got:
        raise DimensionError(op, axis, expected, got)
