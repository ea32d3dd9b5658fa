"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every backward rule is written in terms of the same recordable primitives as
the forward pass, so a gradient produced with ``create_graph=True`` is itself
a graph node and can be differentiated again (double backprop). This is what
gradient-norm penalties need: the penalty depends on ``d f / d x`` and must be
differentiated with respect to the parameters of ``f``.

Tensors are plain ``numpy.ndarray`` objects of dtype float64; a :class:`Node`
wraps one together with the information needed to propagate gradients.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Node",
    "ShapeError",
    "backward",
    "constant",
    "grad_norm",
    "no_grad",
    "record",
    "variable",
]

# Regularizes the norm's derivative at zero vectors (added under the sqrt).
NORM_EPS = 1e-12

_recording: contextvars.ContextVar[bool] = contextvars.ContextVar("lipgan_recording", default=True)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: nonconforming shapes {joined}")


@contextlib.contextmanager
def no_grad():
    """Evaluate operations without recording them."""
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    token = _recording.set(enabled)
    try:
        yield
    finally:
        _recording.reset(token)


BackwardFn = Callable[["Node", "Node"], Sequence["Node | None"]]


class Node:
    """A value in a computation graph.

    ``parents`` and ``backward_fn`` are only populated when the node was
    produced while recording and at least one input requires a gradient.
    ``backward_fn(g, out)`` maps the upstream gradient ``g`` to one gradient
    node (or ``None``) per parent.
    """

    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "op")
    __array_priority__ = 100.0

    def __init__(
        self,
        value,
        parents: tuple[Node, ...] = (),
        backward_fn: BackwardFn | None = None,
        op: str = "leaf",
        requires_grad: bool = False,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def detach(self) -> Node:
        return Node(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Node(op={self.op}, shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self) -> Node:
        return transpose(self)


def constant(value) -> Node:
    return Node(value)


def variable(value) -> Node:
    """A leaf that gradients are taken with respect to."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _make(value: np.ndarray, parents: tuple[Node, ...], backward_fn: BackwardFn, op: str) -> Node:
    if _recording.get() and any(p.requires_grad for p in parents):
        return Node(value, parents, backward_fn, op, requires_grad=True)
    return Node(value, op=op)


# -- broadcasting helpers ------------------------------------------------------


def _check_broadcast(op: str, a: Node, b: Node) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def sum_to(x, shape: tuple[int, ...]) -> Node:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    x = _as_node(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = len(x.shape) - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    value = x.value.sum(axis=axes, keepdims=True).reshape(shape)
    src = x.shape
    return _make(value, (x,), lambda g, out: (broadcast_to(g, src),), "sum_to")


def broadcast_to(x, shape: tuple[int, ...]) -> Node:
    x = _as_node(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        value = np.broadcast_to(x.value, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", x.shape, shape) from None
    src = x.shape
    return _make(value, (x,), lambda g, out: (sum_to(g, src),), "broadcast_to")


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(
        a.value + b.value, (a, b), lambda g, out: (sum_to(g, sa), sum_to(g, sb)), "add"
    )


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(
        a.value - b.value, (a, b), lambda g, out: (sum_to(g, sa), sum_to(neg(g), sb)), "sub"
    )


def neg(a) -> Node:
    a = _as_node(a)
    return _make(-a.value, (a,), lambda g, out: (neg(g),), "neg")


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast("mul", a, b)
    sa, sb = a.shape, b.shape

    def bw(g, out):
        ga = sum_to(mul(g, b), sa) if a.requires_grad else None
        gb = sum_to(mul(g, a), sb) if b.requires_grad else None
        return ga, gb

    return _make(a.value * b.value, (a, b), bw, "mul")


def scalar_mul(a, c: float) -> Node:
    a = _as_node(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g, out: (scalar_mul(g, c),), "scalar_mul")


def div(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast("div", a, b)
    sa, sb = a.shape, b.shape

    def bw(g, out):
        ga = sum_to(div(g, b), sa) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, out), b)), sb) if b.requires_grad else None
        return ga, gb

    return _make(a.value / b.value, (a, b), bw, "div")


def square(a) -> Node:
    a = _as_node(a)
    return _make(a.value * a.value, (a,), lambda g, out: (mul(g, scalar_mul(a, 2.0)),), "square")


def sqrt(a) -> Node:
    a = _as_node(a)
    if np.any(a.value < 0):
        raise ValueError("sqrt: negative input")
    return _make(
        np.sqrt(a.value), (a,), lambda g, out: (div(g, scalar_mul(out, 2.0)),), "sqrt"
    )


# -- activations ---------------------------------------------------------------


def relu(a) -> Node:
    a = _as_node(a)
    # subgradient at 0 is 0
    mask = (a.value > 0).astype(np.float64)
    return _make(a.value * mask, (a,), lambda g, out: (mul(g, Node(mask)),), "relu")


def leaky_relu(a, slope: float = 0.2) -> Node:
    a = _as_node(a)
    scale = np.where(a.value > 0, 1.0, slope)
    return _make(a.value * scale, (a,), lambda g, out: (mul(g, Node(scale)),), "leaky_relu")


def tanh(a) -> Node:
    a = _as_node(a)
    return _make(
        np.tanh(a.value), (a,), lambda g, out: (mul(g, sub(1.0, square(out))),), "tanh"
    )


def sigmoid(a) -> Node:
    a = _as_node(a)
    value = np.empty_like(a.value)
    pos = a.value >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-a.value[pos]))
    e = np.exp(a.value[~pos])
    value[~pos] = e / (1.0 + e)
    return _make(value, (a,), lambda g, out: (mul(g, mul(out, sub(1.0, out))),), "sigmoid")


def softplus(a) -> Node:
    """``log(1 + exp(a))`` evaluated without overflow."""
    a = _as_node(a)
    value = np.logaddexp(0.0, a.value)
    return _make(value, (a,), lambda g, out: (mul(g, sigmoid(a)),), "softplus")


def identity(a) -> Node:
    return _as_node(a)


# -- shape and linear algebra -------------------------------------------------


def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g, out):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _make(a.value @ b.value, (a, b), bw, "matmul")


def transpose(a) -> Node:
    a = _as_node(a)
    if a.value.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return _make(a.value.T.copy(), (a,), lambda g, out: (transpose(g),), "transpose")


def reshape(a, shape: tuple[int, ...]) -> Node:
    a = _as_node(a)
    src = a.shape
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    return _make(value, (a,), lambda g, out: (reshape(g, src),), "reshape")


# -- reductions ----------------------------------------------------------------


def _kept_shape(shape: tuple[int, ...], axis: int | None) -> tuple[int, ...]:
    if axis is None:
        return (1,) * len(shape)
    axis = axis % len(shape)
    return tuple(1 if i == axis else s for i, s in enumerate(shape))


def _check_axis(op: str, a: Node, axis: int | None) -> None:
    if axis is not None and not -a.value.ndim <= axis < a.value.ndim:
        raise ShapeError(op, a.shape)


def sum(a, axis: int | None = None) -> Node:  # noqa: A001 - mirrors numpy
    a = _as_node(a)
    _check_axis("sum", a, axis)
    src = a.shape
    kept = _kept_shape(src, axis)

    def bw(g, out):
        return (broadcast_to(reshape(g, kept), src),)

    return _make(np.asarray(a.value.sum(axis=axis)), (a,), bw, "sum")


def mean(a, axis: int | None = None) -> Node:
    a = _as_node(a)
    _check_axis("mean", a, axis)
    count = a.size if axis is None else a.shape[axis]
    return scalar_mul(sum(a, axis), 1.0 / count)


def max_reduce(a, axis: int | None = None) -> Node:
    """Maximum along ``axis``; the gradient flows to the first maximizer only."""
    a = _as_node(a)
    _check_axis("max", a, axis)
    if a.size == 0:
        raise ShapeError("max", a.shape)
    src = a.shape
    kept = _kept_shape(src, axis)
    if axis is None:
        onehot = np.zeros(a.size)
        onehot[int(np.argmax(a.value))] = 1.0
        onehot = onehot.reshape(src)
    else:
        idx = np.expand_dims(np.argmax(a.value, axis=axis), axis)
        onehot = np.zeros(src)
        np.put_along_axis(onehot, idx, 1.0, axis=axis)
    value = np.asarray(a.value.max(axis=axis))

    def bw(g, out):
        return (mul(broadcast_to(reshape(g, kept), src), Node(onehot)),)

    return _make(value, (a,), bw, "max")


def norm(a, axis: int | None = None) -> Node:
    """Euclidean norm along ``axis``.

    The forward value is exact; the derivative uses ``sqrt(s + NORM_EPS)`` in
    its denominator so it stays finite at the zero vector.
    """
    a = _as_node(a)
    _check_axis("norm", a, axis)
    src = a.shape
    kept = _kept_shape(src, axis)
    value = np.sqrt(np.asarray((a.value * a.value).sum(axis=axis)))

    def bw(g, out):
        denom = sqrt(add(sum(square(a), axis), NORM_EPS))
        scale = reshape(div(g, denom), kept)
        return (mul(a, scale),)

    return _make(value, (a,), bw, "norm")


_OPS: dict[str, Callable[..., Node]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "scalar-mul": scalar_mul,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "relu": relu,
    "leaky-relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "square": square,
    "sqrt": sqrt,
    "sum": sum,
    "mean": mean,
    "max-reduce": max_reduce,
    "norm": norm,
}


def record(op_kind: str, inputs: Sequence, **attrs) -> Node:
    """Apply the primitive named ``op_kind`` to ``inputs``.

    >>> record("add", [2.0, 3.0]).item()
    5.0
    """
    try:
        fn = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    return fn(*inputs, **attrs)


# -- gradient computation ------------------------------------------------------


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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


def backward(root: Node, wrt: Iterable[Node], create_graph: bool = False) -> list[Node]:
    """Gradients of the scalar ``root`` with respect to each node in ``wrt``.

    With ``create_graph`` the returned gradients are recorded and can be
    differentiated again. Nodes that ``root`` does not depend on get zeros.
    """
    wrt = list(wrt)
    if root.size != 1:
        raise ShapeError("backward (root must be scalar)", root.shape)
    grads: dict[int, Node] = {}
    if root.requires_grad:
        grads[id(root)] = Node(np.ones_like(root.value))
        with _grad_mode(create_graph):
            for node in reversed(_topological(root)):
                g = grads.get(id(node))
                if g is None or node.backward_fn is None:
                    continue
                for parent, pg in zip(node.parents, node.backward_fn(g, node)):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)
    out = []
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            out.append(Node(np.zeros_like(w.value)))
        elif create_graph:
            out.append(g)
        else:
            out.append(Node(g.value))
    return out


def grad_norm(f_out: Node, x: Node) -> Node:
    """Per-sample Euclidean norm of ``d f_out / d x``, kept differentiable.

    ``f_out`` holds one scalar per row of ``x``; because rows are processed
    independently the gradient of ``sum(f_out)`` gives each row's own input
    gradient.
    """
    if not x.requires_grad:
        raise ValueError("grad_norm: input must require gradients")
    if f_out.size != x.shape[0]:
        raise ShapeError("grad_norm", f_out.shape, x.shape)
    (g,) = backward(sum(f_out), [x], create_graph=True)
    return norm(g, axis=1)
