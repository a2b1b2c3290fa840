"""Dense float tensor kernel with reverse-mode automatic differentiation.

Just enough surface for a small Vision Transformer: matmul (stacked),
add/sub/mul with the broadcasting the model needs, transpose/permute,
reshape, row gather (scatter-add on backward), softmax, layer norm, GELU,
sum/mean reductions, and MSE.

Ops never mutate their inputs. Outputs are fresh contiguous arrays. Every
op whose result requires grad is recorded on a module-level tape; calling
``backward(loss)`` walks the tape once in reverse, populates ``.grad`` on
every participating tensor that requires grad, and clears the tape.

Training runs in float32. Gradient-check tests switch the whole kernel to
float64 through ``dtype_mode("float64")``; tensors always carry the active
default dtype.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(name: str | np.dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(name)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported default dtype {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt


@contextmanager
def dtype_mode(name: str | np.dtype) -> Iterator[None]:
    """Temporarily switch the kernel's float width (used by gradient checks)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(name)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording; results inside report requires_grad=False."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """N-dimensional float array, contiguous row-major, optionally on tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        # ascontiguousarray would promote 0-d scalars to 1-d; guard on the flag
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars stay python floats so float32 is preserved
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)

    def transpose(self):
        return transpose(self)

    def permute(self, axes):
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "parents", "grad_fn")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], grad_fn: Callable):
        self.out = out
        self.parents = parents
        self.grad_fn = grad_fn


class Tape:
    """Ordered record of executed ops; inputs always precede their outputs."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def append(self, node: _Node) -> None:
        self._nodes.append(node)

    def clear(self) -> None:
        self._nodes.clear()


_TAPE = Tape()


def active_tape() -> Tape:
    return _TAPE


def _result(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    data = np.asarray(data)
    out = Tensor.__new__(Tensor)
    out.data = data if data.flags.c_contiguous else np.ascontiguousarray(data)
    out.requires_grad = req
    out.grad = None
    if req:
        _TAPE.append(_Node(out, parents, grad_fn))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        data = a.data + float(b)
        return _result(data, (a,), lambda g: (g,))
    b = _as_tensor(b)
    data = a.data + b.data
    ash, bsh = a.shape, b.shape
    return _result(data, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))


def sub(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        data = a.data - float(b)
        return _result(data, (a,), lambda g: (g,))
    b = _as_tensor(b)
    data = a.data - b.data
    ash, bsh = a.shape, b.shape
    return _result(data, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        s = float(b)
        data = a.data * s
        return _result(data, (a,), lambda g: (g * s,))
    b = _as_tensor(b)
    data = a.data * b.data
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape
    return _result(
        data, (a, b), lambda g: (_unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh))
    )


def scale(a: Tensor, s: float) -> Tensor:
    return mul(a, float(s))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# matmul and movement


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    if a.ndim > 2 and b.ndim == 2:
        # stacked @ weight: fold leading dims into one gemm instead of
        # letting numpy loop a small gemm per batch row
        a2 = ad.reshape(-1, ash[-1])
        data = (a2 @ bd).reshape(*ash[:-1], bsh[-1])

        def grad_fn(g):
            g2 = g.reshape(-1, bsh[-1])
            return (g2 @ bd.T).reshape(ash), a2.T @ g2

        return _result(data, (a, b), grad_fn)

    data = ad @ bd

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ash)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bsh)
        return ga, gb

    return _result(data, (a, b), grad_fn)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ValueError(f"transpose needs ndim >= 2, got shape {a.shape}")
    return _result(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"permute axes {axes} invalid for shape {a.shape}")
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows (axis 0) by index list; backward scatter-adds into place."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"gather_rows index must be 1-D, got shape {idx.shape}")
    n = a.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows index out of range for {n} rows")
    ash = a.shape

    def grad_fn(g):
        ga = np.zeros(ash, dtype=g.dtype)
        np.add.at(ga, idx, g)
        return (ga,)

    return _result(a.data[idx], (a,), grad_fn)


def gather_rows_batch(a: Tensor, idx) -> Tensor:
    """Per-sample row gather: a [b, n, d], idx [b, k] -> [b, k, d].

    Same scatter-add backward as gather_rows, one index list per batch row.
    """
    idx = np.asarray(idx, dtype=np.intp)
    if a.ndim != 3 or idx.ndim != 2 or idx.shape[0] != a.shape[0]:
        raise ValueError(f"gather_rows_batch expects [b,n,d] with [b,k] indices, got {a.shape} / {idx.shape}")
    n = a.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows_batch index out of range for {n} rows")
    ash = a.shape
    rows = np.arange(ash[0])[:, None]

    def grad_fn(g):
        ga = np.zeros(ash, dtype=g.dtype)
        np.add.at(ga, (rows, idx), g)
        return (ga,)

    return _result(np.take_along_axis(a.data, idx[:, :, None], axis=1), (a,), grad_fn)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, bounds, axis=axis))

    return _result(data, tuple(parts), grad_fn)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"softmax axis {axis} out of bounds for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _result(y, (a,), grad_fn)


def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis, then scale and shift."""
    if eps <= 0:
        raise ValueError("layernorm eps must be positive")
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(
            f"layernorm gamma/beta must have shape ({d},), got {gamma.shape} and {beta.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data
    gdata = gamma.data
    lead = tuple(range(a.ndim - 1))

    def grad_fn(g):
        dxhat = g * gdata
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgamma = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbeta = g.sum(axis=lead) if lead else g
        return dx, dgamma, dbeta

    return _result(y, (a, gamma, beta), grad_fn)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    u = _GELU_C * x * (1.0 + _GELU_A * x2)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)

    def grad_fn(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _result(y, (a,), grad_fn)


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    ash = a.shape
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.full(ash, g, dtype=g.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, ash).copy(),)

    return _result(data, (a,), grad_fn)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return tmean(mul(diff, diff))


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor) -> None:
    """Reverse-propagate from a scalar loss; populates .grad, clears the tape."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    nodes = _TAPE._nodes
    if not any(node.out is loss for node in nodes):
        raise ValueError("loss is not on the active tape")

    needed = {id(loss)}
    for node in reversed(nodes):
        if id(node.out) in needed:
            for p in node.parents:
                needed.add(id(p))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(nodes):
        oid = id(node.out)
        if oid not in needed:
            continue
        g = grads.pop(oid, None)
        if g is None:
            continue
        if node.out.requires_grad:
            _accumulate(node.out, g)
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
                holders[pid] = parent

    # whatever is left has no producing node: the leaves
    for pid, g in grads.items():
        t = holders[pid]
        if t.requires_grad:
            _accumulate(t, g)
    _TAPE.clear()


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    contrib = np.broadcast_to(g, t.shape) if g.shape != t.shape else g
    if t.grad is None:
        t.grad = np.array(contrib, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + contrib


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
