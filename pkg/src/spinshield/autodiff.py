"""Minimal reverse-mode differentiation over rank <= 2 numpy arrays.

Values are plain float64 arrays (scalars are 0-d), the graph is built by the
op functions below, and :func:`backward` walks it in reverse topological order
exactly once.  Gradients accumulate additively across fan-out and across
repeated backward calls, so callers reset leaves with :func:`zero_grad` when
reusing nodes.  There is no automatic broadcasting; the handful of explicit
row/column ops below cover everything the models and objectives need.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]


class Node:
    """One value in the computation graph plus its gradient accumulator."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(
        self,
        value: npt.ArrayLike,
        parents: tuple["Node", ...] = (),
        backward: Callable[[], None] | None = None,
    ) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim > 2:
            raise ValueError(f"engine supports rank <= 2 tensors, got rank {arr.ndim}")
        self.value = arr
        self.grad = np.zeros_like(arr)
        self._parents = parents
        self._backward = backward

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape})"


def as_node(x: "Node | npt.ArrayLike") -> Node:
    return x if isinstance(x, Node) else Node(x)


def zero_grad(nodes: Iterable[Node]) -> None:
    for node in nodes:
        node.grad = np.zeros_like(node.value)


def _same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(a: Node, b: Node) -> Node:
    _same_shape(a, b, "add")
    out = Node(a.value + b.value, (a, b))

    def _backward() -> None:
        a.grad += out.grad
        b.grad += out.grad

    out._backward = _backward
    return out


def sub(a: Node, b: Node) -> Node:
    _same_shape(a, b, "sub")
    out = Node(a.value - b.value, (a, b))

    def _backward() -> None:
        a.grad += out.grad
        b.grad -= out.grad

    out._backward = _backward
    return out


def mul(a: Node, b: Node) -> Node:
    _same_shape(a, b, "mul")
    out = Node(a.value * b.value, (a, b))

    def _backward() -> None:
        a.grad += out.grad * b.value
        b.grad += out.grad * a.value

    out._backward = _backward
    return out


def neg(a: Node) -> Node:
    out = Node(-a.value, (a,))

    def _backward() -> None:
        a.grad -= out.grad

    out._backward = _backward
    return out


def scale(a: Node, c: float) -> Node:
    """Multiply by a python scalar (the only broadcast the engine allows)."""
    out = Node(a.value * c, (a,))

    def _backward() -> None:
        a.grad += out.grad * c

    out._backward = _backward
    return out


def add_scalar(a: Node, c: float) -> Node:
    out = Node(a.value + c, (a,))

    def _backward() -> None:
        a.grad += out.grad

    out._backward = _backward
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.value.shape} @ {b.value.shape}")
    out = Node(a.value @ b.value, (a, b))

    def _backward() -> None:
        a.grad += out.grad @ b.value.T
        b.grad += a.value.T @ out.grad

    out._backward = _backward
    return out


def transpose(a: Node) -> Node:
    out = Node(a.value.T, (a,))

    def _backward() -> None:
        a.grad += out.grad.T

    out._backward = _backward
    return out


def reshape(a: Node, shape: Sequence[int]) -> Node:
    out = Node(a.value.reshape(shape), (a,))

    def _backward() -> None:
        a.grad += out.grad.reshape(a.value.shape)

    out._backward = _backward
    return out


def tanh(a: Node) -> Node:
    val = np.tanh(a.value)
    out = Node(val, (a,))

    def _backward() -> None:
        a.grad += out.grad * (1.0 - val * val)

    out._backward = _backward
    return out


def exp(a: Node) -> Node:
    val = np.exp(a.value)
    out = Node(val, (a,))

    def _backward() -> None:
        a.grad += out.grad * val

    out._backward = _backward
    return out


def log(a: Node) -> Node:
    if np.any(a.value <= 0.0):
        raise ValueError("log of non-positive value; pre-stabilize with an epsilon")
    out = Node(np.log(a.value), (a,))

    def _backward() -> None:
        a.grad += out.grad / a.value

    out._backward = _backward
    return out


def powc(a: Node, c: float) -> Node:
    """Elementwise power with a constant exponent."""
    out = Node(a.value**c, (a,))

    def _backward() -> None:
        a.grad += out.grad * c * a.value ** (c - 1.0)

    out._backward = _backward
    return out


def clip_min(a: Node, c: float) -> Node:
    """Elementwise max with a constant; gradient passes only where unclamped."""
    out = Node(np.maximum(a.value, c), (a,))

    def _backward() -> None:
        a.grad += out.grad * (a.value > c)

    out._backward = _backward
    return out


def softmax(a: Node) -> Node:
    """Row-wise softmax of a 2-d logits matrix."""
    if a.value.ndim != 2:
        raise ValueError("softmax expects a 2-d logits matrix")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Node(p, (a,))

    def _backward() -> None:
        dot = np.sum(out.grad * p, axis=1, keepdims=True)
        a.grad += p * (out.grad - dot)

    out._backward = _backward
    return out


def sum_all(a: Node) -> Node:
    out = Node(a.value.sum(), (a,))

    def _backward() -> None:
        a.grad += out.grad

    out._backward = _backward
    return out


def mean_all(a: Node) -> Node:
    n = a.value.size
    out = Node(a.value.mean(), (a,))

    def _backward() -> None:
        a.grad += out.grad / n

    out._backward = _backward
    return out


def row_sum(a: Node) -> Node:
    if a.value.ndim != 2:
        raise ValueError("row_sum expects a 2-d matrix")
    out = Node(a.value.sum(axis=1, keepdims=True), (a,))

    def _backward() -> None:
        a.grad += out.grad

    out._backward = _backward
    return out


def row_mean(a: Node) -> Node:
    if a.value.ndim != 2:
        raise ValueError("row_mean expects a 2-d matrix")
    n = a.value.shape[1]
    out = Node(a.value.mean(axis=1, keepdims=True), (a,))

    def _backward() -> None:
        a.grad += out.grad / n

    out._backward = _backward
    return out


def add_rowvec(m: Node, v: Node) -> Node:
    """Add a length-N vector to every row of a B x N matrix."""
    if m.value.ndim != 2 or v.value.ndim != 1 or m.value.shape[1] != v.value.shape[0]:
        raise ValueError(f"add_rowvec: shapes {m.value.shape} and {v.value.shape}")
    out = Node(m.value + v.value[None, :], (m, v))

    def _backward() -> None:
        m.grad += out.grad
        v.grad += out.grad.sum(axis=0)

    out._backward = _backward
    return out


def add_colvec(m: Node, v: Node) -> Node:
    """Add a B x 1 column to every column of a B x N matrix."""
    if m.value.ndim != 2 or v.value.shape != (m.value.shape[0], 1):
        raise ValueError(f"add_colvec: shapes {m.value.shape} and {v.value.shape}")
    out = Node(m.value + v.value, (m, v))

    def _backward() -> None:
        m.grad += out.grad
        v.grad += out.grad.sum(axis=1, keepdims=True)

    out._backward = _backward
    return out


def mul_colvec(m: Node, v: Node) -> Node:
    """Scale every row of a B x N matrix by the matching B x 1 entry."""
    if m.value.ndim != 2 or v.value.shape != (m.value.shape[0], 1):
        raise ValueError(f"mul_colvec: shapes {m.value.shape} and {v.value.shape}")
    out = Node(m.value * v.value, (m, v))

    def _backward() -> None:
        m.grad += out.grad * v.value
        v.grad += (out.grad * m.value).sum(axis=1, keepdims=True)

    out._backward = _backward
    return out


def cross_entropy_with_logits(logits: Node, labels: npt.ArrayLike) -> Node:
    """Per-sample cross entropy in fused log-sum-exp form; returns a length-B vector."""
    y = np.asarray(labels, dtype=np.intp)
    z = logits.value
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ValueError(f"cross_entropy_with_logits: shapes {z.shape} and {y.shape}")
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise ValueError("labels out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(z.shape[0]), y]
    out = Node(losses, (logits,))

    def _backward() -> None:
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(z.shape[0]), y] -= 1.0
        logits.grad += p * out.grad[:, None]

    out._backward = _backward
    return out


def grl(a: Node) -> Node:
    """Gradient reversal: identity forward, sign-flipped gradient backward."""
    out = Node(a.value, (a,))

    def _backward() -> None:
        a.grad -= out.grad

    out._backward = _backward
    return out


def custom(value: npt.ArrayLike, parents: tuple[Node, ...], backward: Callable[[Node], None]) -> Node:
    """Escape hatch for ops with hand-written vector-Jacobian products."""
    out = Node(value, parents)
    out._backward = lambda: backward(out)
    return out


def backward(loss: Node) -> None:
    """Populate gradients of every node reachable from the scalar loss."""
    if loss.value.ndim != 0:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.value.shape}")

    topo: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    # interior gradients are per-pass scratch space; only leaves accumulate
    # across calls (hence the explicit zero_grad contract for parameters)
    for node in topo:
        if node._parents:
            node.grad = np.zeros_like(node.value)
    loss.grad = loss.grad + 1.0
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()
