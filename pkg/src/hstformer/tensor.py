"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays.  Every operation records its inputs and a
backward closure on the output tensor (define-by-run), so calling
``backward()`` on a scalar replays the graph in reverse topological order and
accumulates gradients into every reachable leaf with ``requires_grad``.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense float64 array with an optional gradient.

    Attributes:
        data: the value, a numpy float64 array (row-major).
        requires_grad: whether gradients should flow into this tensor.
        grad: populated by ``backward()`` for leaves with requires_grad.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...],
                backward: Callable[[np.ndarray], tuple[np.ndarray, ...]]) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar output, got shape {self.shape}")
        # Topological order by iterative DFS; each node visited once.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # Leaf: accumulate into .grad.
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # Any leaf that was the output itself.
        if self._backward is None and self.requires_grad and self.grad is None:
            self.grad = np.ones_like(self.data)


# -- primitives --------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    data = a.data + b.data
    return Tensor._result(data, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    data = a.data * b.data
    return Tensor._result(data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    if a.data.ndim < 2 and b.data.ndim < 2:
        raise ShapeError(f"matmul needs at least one 2-d operand, got {a.shape} and {b.shape}")
    ka = a.data.shape[-1]
    kb = b.data.shape[-2] if b.data.ndim >= 2 else b.data.shape[-1]
    if ka != kb:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} vs {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor._result(data, (a, b), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)
    return Tensor._result(data, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        if len(t.data.shape) != len(ref):
            raise ShapeError(f"concat rank mismatch: {t.shape} vs {ref}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor._result(data, tuple(tensors),
                          lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = a.data[idx]

    def backward(g: np.ndarray):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return Tensor._result(data, (a,), backward)


def index_select(a: Tensor, axis: int, indices: Sequence[int]) -> Tensor:
    """Gather the given indices along `axis` (indices may repeat)."""
    idx = np.asarray(indices, dtype=np.intp)
    data = np.take(a.data, idx, axis=axis)

    def backward(g: np.ndarray):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor._result(data, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance), then affine."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine width mismatch: x has {d}, "
            f"gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def backward(g: np.ndarray):
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        gh = g * gamma.data
        dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return Tensor._result(data, (x, gamma, beta), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU via the Gauss error function."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    data = x.data * cdf

    def backward(g: np.ndarray):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return Tensor._result(data, (x,), backward)


def l2norm_last(x: Tensor) -> Tensor:
    """Euclidean norm over the last axis; subgradient 0 at the origin."""
    sq = (x.data * x.data).sum(axis=-1)
    n = np.sqrt(sq)

    def backward(g: np.ndarray):
        safe = np.where(n > 0.0, n, 1.0)
        return (g[..., None] * x.data / safe[..., None] * (n > 0.0)[..., None],)

    return Tensor._result(n, (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements (scalar)."""
    return Tensor._result(np.asarray(x.data.sum()), (x,),
                          lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


# -- verification harness ----------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-6) -> float:
    """Compare the analytic gradient of a scalar function against central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    out = f(t)
    if out.data.size != 1:
        raise ShapeError(f"grad_check requires a scalar-valued f, got shape {out.shape}")
    out.backward()
    analytic = t.grad if t.grad is not None else np.zeros_like(t.data)

    flat = t.data.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(t.data.copy())).item()
        flat[i] = orig - h
        fm = f(Tensor(t.data.copy())).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)

    a = analytic.reshape(-1)
    denom = np.maximum(1.0, np.abs(a))
    return float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
