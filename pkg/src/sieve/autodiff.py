"""Dense tensors with reverse-mode automatic differentiation.

Values are stored as float32 by default; reductions, matrix products and
convolutions accumulate in float64 and cast back. The :func:`precision`
context switches storage to float64, which gradient checks rely on.

Only scalar-tensor broadcasting is supported. Batch broadcasting of a
per-feature tensor is explicit through :func:`tile_batch`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_state = {"dtype": np.dtype(np.float32)}


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def precision(dtype=np.float64):
    """Temporarily change the storage dtype of newly created tensors."""
    previous = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = previous


def storage_dtype() -> np.dtype:
    return _state["dtype"]


class Node:
    """One recorded operation: the parents it consumed and its vector-Jacobian product."""

    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op: str, parents: tuple, vjp: Callable):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tensor:
    """Immutable n-dimensional array, optionally tracked for differentiation."""

    __slots__ = ("data", "tracked", "node", "name")
    __array_priority__ = 100

    def __init__(self, data, tracked: bool = False, name: str | None = None):
        arr = np.array(data, dtype=storage_dtype(), copy=True)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor contains non-finite values")
        arr.flags.writeable = False
        self.data = arr
        self.tracked = bool(tracked)
        self.node = None
        self.name = name

    @classmethod
    def _result(cls, arr: np.ndarray, op: str, parents: tuple, vjp: Callable) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=storage_dtype())
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"{op}: produced non-finite values")
        arr.flags.writeable = False
        out.data = arr
        out.name = None
        out.tracked = any(p.tracked for p in parents)
        out.node = Node(op, parents, vjp) if out.tracked else None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", tracked" if self.tracked else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def tanh(self):
        return tanh(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def relu(self):
        return relu(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return as_tensor(x)


def leaf(x, name: str | None = None) -> Tensor:
    """A tracked input whose gradient :func:`backward` can report."""
    return Tensor(x, tracked=True, name=name)


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # scalar operand broadcast over the other
    return np.asarray(grad.sum(dtype=np.float64)).reshape(shape)


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._result(a.data + b.data, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._result(a.data - b.data, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("mul", a, b)

    def vjp(g):
        ga = _reduce_to(g * b.data, a.shape) if a.tracked else None
        gb = _reduce_to(g * a.data, b.shape) if b.tracked else None
        return ga, gb

    return Tensor._result(a.data * b.data, "mul", (a, b), vjp)


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out.astype(np.float64) ** 2),)

    return Tensor._result(out, "tanh", (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    z = a.data.astype(np.float64)
    # both branches are overflow-free
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor._result(out, "sigmoid", (a,), vjp)


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return Tensor._result(out, "exp", (a,), vjp)


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: argument contains non-positive values")

    def vjp(g):
        return (g / a.data.astype(np.float64),)

    return Tensor._result(np.log(a.data), "log", (a,), vjp)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, a.data, 0), "relu", (a,), vjp)


# -- shape ------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None

    def vjp(g):
        return (g.reshape(a.shape),)

    return Tensor._result(out, "reshape", (a,), vjp)


def tile_batch(a: Tensor, n: int) -> Tensor:
    """Repeat a per-example tensor ``n`` times along a new leading axis."""
    a = as_tensor(a)
    if n < 1:
        raise ShapeError(f"tile_batch: batch size must be positive, got {n}")
    out = np.broadcast_to(a.data, (n,) + a.shape)

    def vjp(g):
        return (g.sum(axis=0, dtype=np.float64),)

    return Tensor._result(np.ascontiguousarray(out), "tile_batch", (a,), vjp)


# -- reductions -------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, dtype=np.float64)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def vjp(g):
        return (np.broadcast_to(np.reshape(g, kept), a.shape),)

    return Tensor._result(out, "sum", (a,), vjp)


def mean(a: Tensor, axis=None) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.sum(axis=axes, dtype=np.float64) / count
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def vjp(g):
        return (np.broadcast_to(np.reshape(g, kept) / count, a.shape),)

    return Tensor._result(out, "mean", (a,), vjp)


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)

    def vjp(g):
        ga = g @ b64.T if a.tracked else None
        gb = a64.T @ g if b.tracked else None
        return ga, gb

    return Tensor._result(a64 @ b64, "matmul", (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with the bias row added to every example."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: shape mismatch {x.shape} vs {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} vs weight {w.shape}")
    x64 = x.data.astype(np.float64)
    w64 = w.data.astype(np.float64)

    def vjp(g):
        gx = g @ w64.T if x.tracked else None
        gw = x64.T @ g if w.tracked else None
        gb = g.sum(axis=0) if b.tracked else None
        return gx, gw, gb

    return Tensor._result(x64 @ w64 + b.data, "linear", (x, w, b), vjp)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x`` is [B, C, H, W], ``w`` is [F, C, kh, kw]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: shape mismatch {x.shape} vs {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} padding={padding}")
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = x.data.astype(np.float64)
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    w64 = w.data.astype(np.float64)
    out = np.tensordot(windows, w64, axes=([1, 4, 5], [1, 2, 3]))  # [B, oh, ow, F]
    out = out.transpose(0, 3, 1, 2)
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (f,):
            raise ShapeError(f"conv2d: bias shape {b.shape} vs {f} filters")
        out = out + b.data.astype(np.float64)[None, :, None, None]
        parents = (x, w, b)

    def vjp(g):
        gx = gw = gb = None
        if w.tracked:
            gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        if x.tracked:
            gxp = np.zeros((n, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    # [B, oh, ow, C]
                    contrib = np.tensordot(g, w64[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += contrib.transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + wd]
        if b is not None and b.tracked:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    return Tensor._result(out, "conv2d", parents, vjp)


def max_pool2d(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling; ties resolve to the first element."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"max_pool2d: need [B, C, even H, even W], got {x.shape}")
    n, c, h, w = x.shape
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gb = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor._result(out, "max_pool2d", (x,), vjp)


# -- probabilities ----------------------------------------------------------


def _log_softmax64(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"softmax: expected [batch, classes], got {logits.shape}")
    p = np.exp(_log_softmax64(logits.data))

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._result(p, "softmax", (logits,), vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean categorical cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: shape mismatch {logits.shape} vs labels {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"softmax_cross_entropy: labels outside [0, {k})")
    logp = _log_softmax64(logits.data)
    rows = np.arange(labels.shape[0])
    loss = -logp[rows, labels].sum() / labels.shape[0]

    def vjp(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g / labels.shape[0]),)

    return Tensor._result(loss, "softmax_cross_entropy", (logits,), vjp)


# -- reverse pass -----------------------------------------------------------


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.tracked and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor]) -> list:
    """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

    Gradients are float64 arrays shaped like their tensors. A tensor the loss
    does not depend on receives zeros. Shared subexpressions accumulate.
    """
    wrt = list(wrt)
    if loss.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.tracked:
        grads[id(loss)] = np.ones(loss.shape)
        for t in reversed(_topological(loss)):
            g = grads.get(id(t))
            if g is None or t.node is None:
                continue
            parent_grads = t.node.vjp(g)
            for p, pg in zip(t.node.parents, parent_grads):
                if pg is None or not p.tracked:
                    continue
                pg = np.asarray(pg, dtype=np.float64)
                if pg.shape != p.shape:
                    raise ShapeError(f"{t.node.op}: gradient shape {pg.shape} vs value {p.shape}")
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
    return [np.array(grads[id(t)]) if id(t) in grads else np.zeros(t.shape) for t in wrt]


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-3) -> np.ndarray:
    """Central-difference estimate of the gradient of ``f`` at ``x``, element by element.

    ``f`` receives a float64 array shaped like ``x`` and returns a float.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(x.copy()))
        flat[i] = orig - h
        down = float(f(x.copy()))
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad
