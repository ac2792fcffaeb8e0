"""Dense reverse-mode autodiff on top of numpy.

Every backward rule is written with the same differentiable ops used in the
forward pass, so differentiating a gradient (``create_graph=True``) gives exact
Hessian-vector products by reverse-over-reverse.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class NumericalError(FloatingPointError):
    """Raised when an evaluation produces a non-finite or degenerate value."""


class ShapeError(ValueError):
    pass


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def enable_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = True
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


# ---------------------------------------------------------------- shape ops


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast result back to ``shape`` (inverse of broadcasting)."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    data = data.reshape(shape)
    src_shape = x.shape
    return _make(data, (x,), lambda g: (broadcast_to(g, src_shape),))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src_shape = x.shape
    data = np.broadcast_to(x.data, shape).copy()
    return _make(data, (x,), lambda g: (sum_to(g, src_shape),))


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    src_shape = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (reshape(g, src_shape),))


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.T.copy(), (x,), lambda g: (transpose(g),))


# ------------------------------------------------------------ arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(neg(g), sb)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(
        a.data * b.data, (a, b), lambda g: (sum_to(mul(g, b), sa), sum_to(mul(g, a), sb))
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = div(g, b)
        gb = neg(div(mul(ga, a), b))
        return sum_to(ga, sa), sum_to(gb, sb)

    return _make(a.data / b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    return _make(
        a.data @ b.data, (a, b), lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g))
    )


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    src_shape = x.shape
    data = x.data.sum(axis=axis, keepdims=True)
    kept_shape = data.shape
    if not keepdims:
        data = data.sum(axis=axis, keepdims=False) if axis is not None else data.reshape(())

    def backward(g):
        return (broadcast_to(reshape(g, kept_shape), src_shape),)

    return _make(data, (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise ShapeError("mean over an empty axis")
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ------------------------------------------------------------ elementwise


def exp(x) -> Tensor:
    x = as_tensor(x)
    out_box: list[Tensor] = []
    out = _make(np.exp(x.data), (x,), lambda g: (mul(g, out_box[0]),))
    out_box.append(out)
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (div(g, x),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out_box: list[Tensor] = []
    out = _make(np.sqrt(x.data), (x,), lambda g: (div(mul(g, 0.5), out_box[0]),))
    out_box.append(out)
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out_box: list[Tensor] = []

    def backward(g):
        y = out_box[0]
        return (mul(g, sub(1.0, mul(y, y))),)

    out = _make(np.tanh(x.data), (x,), backward)
    out_box.append(out)
    return out


def relu(x) -> Tensor:
    # subgradient 0 at 0; the mask is a constant so second derivatives vanish
    return leaky_relu(x, 0.0)


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    mask = np.where(x.data > 0.0, 1.0, slope)
    return _make(x.data * mask, (x,), lambda g: (mul(g, mask),))


def stop_gradient(x) -> Tensor:
    return Tensor(as_tensor(x).data)


def dot(a, b) -> Tensor:
    return tsum(mul(a, b))


# ------------------------------------------------------------ composites


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 0.0) -> Tensor:
    """Normalize each feature over the batch axis, then apply ``gamma``/``beta``.

    With ``eps == 0`` the result is exactly invariant to rescaling ``x``; a batch
    with zero variance in some feature raises :class:`NumericalError`.
    """
    mu = mean(x, axis=0, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=0, keepdims=True)
    if eps == 0.0 and np.any(var.data <= 0.0):
        raise NumericalError("batchnorm: zero batch variance in at least one feature")
    xhat = div(xc, sqrt(add(var, eps)) if eps else sqrt(var))
    return add(mul(xhat, gamma), beta)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    shift = stop_gradient(Tensor(logits.data.max(axis=1, keepdims=True)))
    s = sub(logits, shift)
    lse = log(tsum(exp(s), axis=1, keepdims=True))
    logp = sub(s, lse)
    return neg(mean(tsum(mul(logp, onehot), axis=1)))


def mse_onehot(outputs: Tensor, labels: np.ndarray) -> Tensor:
    """Half squared error against one-hot targets, averaged over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = outputs.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    r = sub(outputs, onehot)
    return mul(mean(tsum(mul(r, r), axis=1)), 0.5)


# ------------------------------------------------------------ reverse sweep


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    grad_output: Tensor | None = None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of ``output`` w.r.t. ``inputs``.

    With ``create_graph`` the returned tensors are themselves on the tape and can
    be differentiated again.
    """
    if grad_output is None:
        if output.data.size != 1:
            raise ShapeError("grad of a non-scalar output needs grad_output")
        grad_output = Tensor(np.ones_like(output.data))
    grads: dict[int, Tensor] = {id(output): grad_output}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(_toposort(output)):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    out = []
    for x in inputs:
        g = grads.get(id(x))
        out.append(g if g is not None else Tensor(np.zeros_like(x.data)))
    return out


# ------------------------------------------------------------ parameter graphs


@dataclass(frozen=True)
class ParamLayout:
    """Named parameter tensors packed into one flat float64 vector."""

    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(int(np.prod(s)) if s else 1 for s in self.shapes)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    @property
    def size(self) -> int:
        return int(sum(self.sizes))

    def slice(self, name: str) -> slice:
        i = self.names.index(name)
        off = self.offsets[i]
        return slice(off, off + self.sizes[i])

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.size,):
            raise ShapeError(f"parameter vector has shape {theta.shape}, expected ({self.size},)")
        return {
            n: theta[o : o + s].reshape(shape)
            for n, o, s, shape in zip(self.names, self.offsets, self.sizes, self.shapes)
        }

    def pack(self, arrays: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(arrays[n], dtype=np.float64).ravel() for n in self.names])

    def index(self, name: str, flat_index) -> np.ndarray:
        """Flat positions of entries ``flat_index`` (row-major) within ``name``."""
        sl = self.slice(name)
        return sl.start + np.asarray(flat_index, dtype=np.int64)


class Graph:
    """A scalar loss built from named parameters and a batch.

    ``fn(params, batch)`` receives a dict of leaf tensors and must return a scalar
    tensor. Graphs hold no mutable state and may be shared between threads.
    """

    def __init__(self, layout: ParamLayout, fn: Callable[[dict[str, Tensor], object], Tensor]):
        self.layout = layout
        self.fn = fn

    def _leaves(self, theta) -> dict[str, Tensor]:
        return {
            n: Tensor(a.copy(), requires_grad=True, name=n)
            for n, a in self.layout.unpack(theta).items()
        }

    def _loss(self, leaves, batch) -> Tensor:
        loss = self.fn(leaves, batch)
        if loss.data.size != 1:
            raise ShapeError("graph output must be a scalar loss")
        if not np.isfinite(loss.data).all():
            raise NumericalError("non-finite loss")
        return loss

    def loss(self, theta, batch) -> float:
        with no_grad():
            return self._loss(self._leaves(theta), batch).item()

    def loss_and_grad(self, theta, batch) -> tuple[float, np.ndarray]:
        leaves = self._leaves(theta)
        with enable_grad():
            loss = self._loss(leaves, batch)
        gs = grad(loss, [leaves[n] for n in self.layout.names])
        return loss.item(), np.concatenate([g.data.ravel() for g in gs])

    def hessian_operator(self, theta, batch) -> "HessianOperator":
        return HessianOperator(self, theta, batch)


class HessianOperator:
    """Loss, gradient and a reusable exact H·v at a fixed point."""

    def __init__(self, graph: Graph, theta, batch):
        self.layout = graph.layout
        self._leaves = graph._leaves(theta)
        names = self.layout.names
        with enable_grad():
            loss = graph._loss(self._leaves, batch)
            self._grads = grad(loss, [self._leaves[n] for n in names], create_graph=True)
        self.loss = loss.item()
        self.grad = np.concatenate([g.data.ravel() for g in self._grads])

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        parts = self.layout.unpack(v)
        names = self.layout.names
        with enable_grad():
            inner = None
            for n, g in zip(names, self._grads):
                term = dot(g, parts[n])
                inner = term if inner is None else add(inner, term)
        if not inner.requires_grad:
            return np.zeros(self.layout.size)
        hs = grad(inner, [self._leaves[n] for n in names])
        out = np.concatenate([h.data.ravel() for h in hs])
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite Hessian-vector product")
        return out


def forward(graph: Graph, theta, batch) -> float:
    return graph.loss(theta, batch)


def backward(graph: Graph, theta, batch) -> np.ndarray:
    return graph.loss_and_grad(theta, batch)[1]


def hvp(graph: Graph, theta, batch, v) -> np.ndarray:
    return graph.hessian_operator(theta, batch)(v)


def linear_graph(c: Iterable[float]) -> Graph:
    """L(θ) = <c, θ>."""
    c = np.asarray(list(c), dtype=np.float64)
    layout = ParamLayout(("theta",), (c.shape,))
    return Graph(layout, lambda p, batch: dot(p["theta"], c))


def quadratic_graph(A) -> Graph:
    """L(θ) = ½ θᵀAθ for symmetric A."""
    A = np.asarray(A, dtype=np.float64)
    layout = ParamLayout(("theta",), ((A.shape[0],),))

    def fn(p, batch):
        th = reshape(p["theta"], (1, A.shape[0]))
        return mul(tsum(mul(matmul(th, A), th)), 0.5)

    return Graph(layout, fn)
