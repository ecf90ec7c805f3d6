
from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionError, DomainError
from .node import Node, as_node, unbroadcast

ELEMENTWISE_OPS = ("add", "sub", "mul", "exp", "log", "square", "relu", "softplus", "sqrt", "neg")
REDUCE_OPS = ("sum", "mean")


def _make(value: np.ndarray, parents: Sequence[Node], op: str) -> Node:
    return Node(value, requires_grad=any(p.requires_grad for p in parents), parents=parents, op=op)


def _broadcast_shape(op: str, a: Node, b: Node):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)
    out = _make(a.value @ b.value, (a, b), "matmul")

    def _backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    out._backward = _backward
    return out


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)
    out = _make(a.value + b.value, (a, b), "add")

    def _backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g, b.shape))

    out._backward = _backward
    return out


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("sub", a, b)
    out = _make(a.value - b.value, (a, b), "sub")

    def _backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(-g, b.shape))

    out._backward = _backward
    return out


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("mul", a, b)
    out = _make(a.value * b.value, (a, b), "mul")

    def _backward(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g * a.value, b.shape))

    out._backward = _backward
    return out


def neg(x) -> Node:
    x = as_node(x)
    out = _make(-x.value, (x,), "neg")

    def _backward(g):
        x._accumulate(-g)

    out._backward = _backward
    return out


def exp(x) -> Node:
    x = as_node(x)
    y = np.exp(x.value)
    out = _make(y, (x,), "exp")

    def _backward(g):
        x._accumulate(g * y)

    out._backward = _backward
    return out


def log(x) -> Node:
    x = as_node(x)
    if np.any(x.value <= 0):
        raise DomainError(f"log: input must be strictly positive (min={x.value.min()})")
    out = _make(np.log(x.value), (x,), "log")

    def _backward(g):
        x._accumulate(g / x.value)

    out._backward = _backward
    return out


def square(x) -> Node:
    x = as_node(x)
    out = _make(x.value * x.value, (x,), "square")

    def _backward(g):
        x._accumulate(2.0 * x.value * g)

    out._backward = _backward
    return out


def sqrt(x) -> Node:
    x = as_node(x)
    if np.any(x.value < 0):
        raise DomainError(f"sqrt: input must be nonnegative (min={x.value.min()})")
    y = np.sqrt(x.value)
    out = _make(y, (x,), "sqrt")

    def _backward(g):
        x._accumulate(g * 0.5 / y)

    out._backward = _backward
    return out


def relu(x) -> Node:
    """max(x, 0); the subgradient at 0 is 0."""
    x = as_node(x)
    mask = (x.value > 0).astype(np.float64)
    out = _make(x.value * mask, (x,), "relu")

    def _backward(g):
        x._accumulate(g * mask)

    out._backward = _backward
    return out


def softplus(x) -> Node:
    x = as_node(x)
    out = _make(np.logaddexp(0.0, x.value), (x,), "softplus")

    def _backward(g):
        x._accumulate(g * np.exp(-np.logaddexp(0.0, -x.value)))

    out._backward = _backward
    return out


_UNARY = {"exp": exp, "log": log, "square": square, "relu": relu,
          "softplus": softplus, "sqrt": sqrt, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args) -> Node:
    if op in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op} takes one operand, got {len(args)}")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise TypeError(f"{op} takes two operands, got {len(args)}")
        return _BINARY[op](*args)
    raise ValueError(f"Unknown elementwise op '{op}', expected one of {ELEMENTWISE_OPS}")


def _check_axis(op: str, x: Node, axis: Optional[int]) -> Optional[int]:
    if axis is None:
        return None
    ndim = x.value.ndim
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op} (axis {axis} out of range)", x.shape)
    return axis % ndim


def sum(x, axis: Optional[int] = None) -> Node:  # noqa: A001
    x = as_node(x)
    axis = _check_axis("sum", x, axis)
    out = _make(x.value.sum(axis=axis), (x,), "sum")

    def _backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    out._backward = _backward
    return out


def mean(x, axis: Optional[int] = None) -> Node:
    x = as_node(x)
    axis = _check_axis("mean", x, axis)
    count = x.value.size if axis is None else x.shape[axis]
    out = _make(x.value.mean(axis=axis), (x,), "mean")

    def _backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g / count, x.shape))

    out._backward = _backward
    return out


def reduce(op: str, x, axis: Optional[int] = None) -> Node:
    if op == "sum":
        return sum(x, axis)
    if op == "mean":
        return mean(x, axis)
    raise ValueError(f"Unknown reduction '{op}', expected one of {REDUCE_OPS}")


def softmax_cross_entropy(logits, labels) -> Node:
    """
    Mean negative log-likelihood of integer labels under softmax(logits).
    Uses max-subtraction, so logits of any magnitude are safe.
    """
    logits = as_node(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.value.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError("softmax_cross_entropy", logits.shape, labels.shape)
    batch, classes = logits.shape
    if batch == 0:
        raise DimensionError("softmax_cross_entropy (empty batch)", logits.shape)
    if labels.min() < 0 or labels.max() >= classes:
        raise DomainError(f"softmax_cross_entropy: labels must lie in [0, {classes}), "
                          f"got range [{labels.min()}, {labels.max()}]")

    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    nll = log_norm - shifted[rows, labels]
    out = _make(np.asarray(nll.mean()), (logits,), "softmax_cross_entropy")

    def _backward(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, labels] -= 1.0
        logits._accumulate(g * probs / batch)

    out._backward = _backward
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
