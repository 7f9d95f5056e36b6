"""Tape-based reverse-mode automatic differentiation on dense numpy arrays.

A :class:`Graph` owns every :class:`Tensor` created through it and records
operations in execution order, so a single reversed sweep over the tape is a
valid topological order for backpropagation.  Precision is chosen per graph
(float32 for training and inference, float64 for gradient checks).

Broadcasting is deliberately narrow: an operand may be a scalar, a row vector
matching the last axis of a matrix, or a column vector matching its first
axis.  Anything else is a :class:`ShapeError`.

Example::

    g = Graph(np.float64)
    x = g.leaf(np.array([1.0, 2.0, 3.0]))
    loss = (x * x).sum()
    g.backward(loss)
    x.grad  # array([2., 4., 6.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

ELU_ALPHA = 1.0
LN_EPS = 1e-5


class Tensor:
    __slots__ = ("data", "graph", "requires_grad", "grad", "parents", "backward_fn", "name")

    def __init__(self, data: np.ndarray, graph: "Graph", requires_grad: bool = False,
                 parents: tuple = (), backward_fn: BackwardFn | None = None, name: str | None = None):
        self.data = data
        self.graph = graph
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(self.graph.as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


class Graph:
    """Append-only operation tape.

    ``record=False`` builds an inference graph: ops compute values but keep no
    parents or closures, so activations are freed as soon as they go out of
    scope.
    """

    def __init__(self, dtype=np.float32, record: bool = True, check_finite: bool = False):
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ContractError(f"graph dtype must be float32 or float64, got {self.dtype}")
        self.record = record
        self.check_finite = check_finite
        self.nodes: list[Tensor] = []

    def leaf(self, data, requires_grad: bool = True, name: str | None = None) -> Tensor:
        arr = np.array(data, dtype=self.dtype, copy=True)
        t = Tensor(arr, self, requires_grad=requires_grad and self.record, name=name)
        self.nodes.append(t)
        return t

    def constant(self, data, name: str | None = None) -> Tensor:
        return Tensor(np.asarray(data, dtype=self.dtype), self, name=name)

    def as_tensor(self, value) -> Tensor:
        if isinstance(value, Tensor):
            if value.graph is not self:
                raise ContractError("tensors from different graphs cannot be combined")
            return value
        return self.constant(value)

    def node(self, data: np.ndarray, parents: tuple, backward_fn: BackwardFn) -> Tensor:
        data = np.asarray(data, dtype=self.dtype)
        if self.check_finite and not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values produced by {backward_fn.__qualname__.split('.')[0]}")
        needs = self.record and any(p.requires_grad for p in parents)
        if not needs:
            return Tensor(data, self)
        t = Tensor(data, self, requires_grad=True, parents=parents, backward_fn=backward_fn)
        self.nodes.append(t)
        return t

    def backward(self, loss: Tensor) -> None:
        if loss.graph is not self:
            raise ContractError("loss belongs to a different graph")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any requires_grad leaf")
        loss.grad = np.ones_like(loss.data)
        for t in reversed(self.nodes):
            if t.grad is None or t.backward_fn is None:
                continue
            grads = t.backward_fn(t.grad)
            for parent, g in zip(t.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=self.dtype)
                else:
                    parent.grad = parent.grad + g


# ---------------------------------------------------------------- broadcasting

def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    big, small = (a, b) if a.ndim >= b.ndim and a.size >= b.size else (b, a)
    if big.ndim == 2:
        r, c = big.shape
        if small.shape in ((c,), (1, c), (r, 1)):
            return
    raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return grad.sum().reshape(shape)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_operands(a, b):
    if isinstance(a, Tensor):
        g = a.graph
    elif isinstance(b, Tensor):
        g = b.graph
    else:
        raise ContractError("at least one operand must be a Tensor")
    return g, g.as_tensor(a), g.as_tensor(b)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    g, a, b = _binary_operands(a, b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return g.node(a.data + b.data, (a, b), lambda gr: (_unbroadcast(gr, sa), _unbroadcast(gr, sb)))


def sub(a, b) -> Tensor:
    g, a, b = _binary_operands(a, b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return g.node(a.data - b.data, (a, b), lambda gr: (_unbroadcast(gr, sa), _unbroadcast(-gr, sb)))


def mul(a, b) -> Tensor:
    g, a, b = _binary_operands(a, b)
    _check_broadcast(a.data, b.data, "mul")
    x, y = a.data, b.data

    def backward(gr):
        return _unbroadcast(gr * y, x.shape), _unbroadcast(gr * x, y.shape)

    return g.node(x * y, (a, b), backward)


def div(a, b) -> Tensor:
    g, a, b = _binary_operands(a, b)
    _check_broadcast(a.data, b.data, "div")
    x, y = a.data, b.data
    out = x / y

    def backward(gr):
        return _unbroadcast(gr / y, x.shape), _unbroadcast(-gr * out / y, y.shape)

    return g.node(out, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return a.graph.node(np.where(mask, a.data, 0), (a,), lambda gr: (gr * mask,))


def elu(a: Tensor, alpha: float = ELU_ALPHA) -> Tensor:
    x = a.data
    pos = x > 0
    expm = np.exp(np.minimum(x, 0))
    out = np.where(pos, x, alpha * (expm - 1))
    return a.graph.node(out, (a,), lambda gr: (gr * np.where(pos, 1, alpha * expm),))


def phi(a: Tensor) -> Tensor:
    """Positive feature map ``elu(x) + 1`` used by kernel attention."""
    x = a.data
    pos = x > 0
    expm = np.exp(np.minimum(x, 0))
    out = np.where(pos, x + 1, expm)
    return a.graph.node(out, (a,), lambda gr: (gr * np.where(pos, 1, expm),))


def activation(a: Tensor, kind: str, alpha: float = ELU_ALPHA) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "elu":
        if alpha <= 0:
            raise ContractError(f"elu alpha must be positive, got {alpha}")
        return elu(a, alpha)
    raise ContractError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    g, a, b = _binary_operands(a, b)
    x, y = a.data, b.data
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {x.shape} and {y.shape}")
    return g.node(x @ y, (a, b), lambda gr: (gr @ y.T, x.T @ gr))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return a.graph.node(a.data.T, (a,), lambda gr: (gr.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {src} -> {shape}: {exc}") from None
    return a.graph.node(out, (a,), lambda gr: (gr.reshape(src),))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def backward(gr):
        full = np.zeros(shape, dtype=gr.dtype)
        full[:, start:stop] = gr
        return (full,)

    return a.graph.node(a.data[:, start:stop], (a,), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_cols needs at least one tensor")
    g = parts[0].graph
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def backward(gr):
        return tuple(gr[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return g.node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward)


# ---------------------------------------------------------------- reductions

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return a.graph.node(a.data.sum(), (a,), lambda gr: (np.broadcast_to(gr, shape),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return a.graph.node(a.data.mean(), (a,), lambda gr: (np.broadcast_to(gr / n, shape),))


def sum_rows(a: Tensor) -> Tensor:
    """Column sums of a matrix, as a ``1 x c`` row."""
    shape = a.shape
    return a.graph.node(a.data.sum(axis=0, keepdims=True), (a,), lambda gr: (np.broadcast_to(gr, shape),))


# ---------------------------------------------------------------- fused ops

def softmax_rows(m: Tensor, scale: float = 1.0) -> Tensor:
    """Row-wise softmax of ``scale * m`` with max subtraction."""
    if scale <= 0:
        raise ContractError(f"softmax scale must be positive, got {scale}")
    x = m.data
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax_rows received non-finite input")
    z = scale * x
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(gr):
        return (scale * y * (gr - (gr * y).sum(axis=1, keepdims=True)),)

    return m.graph.node(y, (m,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    A zero-variance row normalizes to zeros, so the output is exactly ``bias``.
    """
    d = x.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm over a length-1 axis is undefined")
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def backward(gr):
        dxhat = gr * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(gr.ndim - 1))
        return dx, (gr * xhat).sum(axis=red), gr.sum(axis=red)

    return x.graph.node(out, (x, gain, bias), backward)
