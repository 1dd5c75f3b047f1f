"""Dense float64 tensors with reverse-mode differentiation.

The tape is implicit: every operation records its parents and a closure that
maps the output gradient to one gradient per parent.  ``backward`` orders the recorded
nodes topologically by a depth-first walk from the loss, so a fresh graph is
built on every forward pass and nothing is shared between graphs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

BCE_EPS = 1e-7
NORM_FLOOR = 1e-12
DEFAULT_SLOPE = 0.2


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class DegenerateVectorError(ValueError):
    """A vector with (near) zero norm reached a normalising operation."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=False, _parents=tuple(parents) if needs else (), op=op)
    if needs:
        out.requires_grad = True
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out_data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), "mul", backward)


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _node(a.data @ b.data, (a, b), "matmul", backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def backward(g):
        return (g.reshape(src),)

    return _node(a.data.reshape(shape), (a,), "reshape", backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(data, ts, "concat", backward)


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum", backward)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# --------------------------------------------------------------- elementwise

def leaky_relu(x: Tensor, slope: float = DEFAULT_SLOPE) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)

    def backward(g):
        return (g * scale,)

    return _node(x.data * scale, (x,), "leaky_relu", backward)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _node(s, (x,), "sigmoid", backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - t * t),)

    return _node(t, (x,), "tanh", backward)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g / x.data,)

    return _node(np.log(x.data), (x,), "log", backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = as_tensor(x)
    if x.shape[axis] < 1:
        raise ContractError("softmax over an empty axis")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (x,), "softmax", backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), "log_softmax", backward)


# ------------------------------------------------------------------- losses

def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Row-wise cosine similarity.

    Accepts two vectors of shape ``(d,)`` (returns a scalar tensor) or two
    batches of shape ``(B, d)`` (returns shape ``(B,)``).  Raises
    :class:`DegenerateVectorError` carrying the offending row index when a
    norm falls below ``NORM_FLOOR``.
    """
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape or u.ndim not in (1, 2):
        raise DimensionError(f"cosine_similarity: shapes {u.shape} and {v.shape}")
    single = u.ndim == 1
    U = u.data[None, :] if single else u.data
    V = v.data[None, :] if single else v.data
    nu = np.sqrt((U * U).sum(axis=1))
    nv = np.sqrt((V * V).sum(axis=1))
    bad = np.flatnonzero((nu < NORM_FLOOR) | (nv < NORM_FLOOR))
    if bad.size:
        i = int(bad[0])
        raise DegenerateVectorError(f"degenerate vector at index {i}", index=i)
    dot = (U * V).sum(axis=1)
    c = dot / (nu * nv)

    def backward(g):
        g = np.atleast_1d(g)[:, None]
        du = g * (V / (nu * nv)[:, None] - c[:, None] * U / (nu * nu)[:, None])
        dv = g * (U / (nu * nv)[:, None] - c[:, None] * V / (nv * nv)[:, None])
        return (du[0], dv[0]) if single else (du, dv)

    return _node(c[0] if single else c, (u, v), "cosine", backward)


def bce(p: Tensor, y, eps: float = BCE_EPS) -> Tensor:
    """Elementwise binary cross-entropy with ``p`` clamped to ``[eps, 1-eps]``."""
    p = as_tensor(p)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), p.shape)
    pc = np.clip(p.data, eps, 1.0 - eps)
    inside = (p.data >= eps) & (p.data <= 1.0 - eps)
    out = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))

    def backward(g):
        return (g * inside * (-(y / pc) + (1.0 - y) / (1.0 - pc)),)

    return _node(out, (p,), "bce", backward)


# ----------------------------------------------------------------- backward

def _topological(loss: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = np.array(g) if node.grad is None else node.grad + g
            continue
        for parent, contrib in zip(node._parents, node._backward(g)):
            if contrib is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + contrib if key in grads else contrib


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` with respect to the array ``x`` (mutated in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad
