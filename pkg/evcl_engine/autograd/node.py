
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DimensionError

BackwardFn = Callable[[np.ndarray], None]


class Node:
    """
    A float64 value recorded on a dynamic tape.

    Every op creates a new Node holding its parents and a closure that pushes the
    output gradient into them. Nodes are confined to a single worker.
    """

    # ndarray (op) Node defers to the reflected Node operator.
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False,
                 parents: Sequence["Node"] = (), op: str = "leaf"):
        self.value: np.ndarray = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents: Tuple["Node", ...] = tuple(p for p in parents if p.requires_grad)
        self._backward: Optional[BackwardFn] = None

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += grad

    def _tape(self) -> List["Node"]:
        # Iterative post-order DFS, each node appears once.
        order: List[Node] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self):
        """Reverse-mode pass from a scalar root. Gradients are recomputed from zero on every call."""
        if self.value.size != 1:
            raise DimensionError("backward (root must be scalar)", self.shape)
        if not self.requires_grad:
            return
        tape = self._tape()
        for node in tape:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in reversed(tape):
            if node._backward is not None:
                node._backward(node.grad)

    # Operator sugar, implemented in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Node):
            raise TypeError("division is only defined by constants")
        return ops.mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def parameter(value) -> Node:
    return Node(np.array(value, dtype=np.float64, copy=True), requires_grad=True)


def constant(value) -> Node:
    return Node(value)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad
