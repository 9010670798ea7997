"""Reverse-mode differentiable arrays on top of numpy (float64 only).

Graphs are built eagerly while ops run and released once ``backward`` has
propagated gradients, so every forward pass owns a fresh graph.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when op inputs have non-conforming shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        desc = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class DiffArray:
    __slots__ = ("value", "grad", "requires_grad", "node_id", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self._parents: tuple[DiffArray, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"DiffArray{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def backward(self):
        backward(self)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, p: power(self, p)


def as_array(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def constant(x) -> DiffArray:
    return DiffArray(x)


def parameter(x, name: str | None = None) -> DiffArray:
    return DiffArray(np.array(x, dtype=np.float64), requires_grad=True, name=name)


def _node(value, parents: Sequence[DiffArray], backward_fn) -> DiffArray:
    out = DiffArray(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(op: str, a: DiffArray, b: DiffArray):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_check("add", a, b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_check("sub", a, b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_check("mul", a, b)
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
    )


def div(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_check("div", a, b)
    av, bv = a.value, b.value
    out = av / bv
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)),
    )


def neg(a) -> DiffArray:
    a = as_array(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a, p: float) -> DiffArray:
    a = as_array(a)
    av = a.value
    return _node(av**p, (a,), lambda g: (g * p * av ** (p - 1),))


def square(a) -> DiffArray:
    a = as_array(a)
    av = a.value
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def exp(a) -> DiffArray:
    a = as_array(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> DiffArray:
    a = as_array(a)
    av = a.value
    return _node(np.log(av), (a,), lambda g: (g / av,))


def clip(a, lo: float, hi: float) -> DiffArray:
    """Clamp to [lo, hi]; gradient is zero where clamping is active."""
    a = as_array(a)
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return _node(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# activations


def sigmoid(a) -> DiffArray:
    a = as_array(a)
    av = a.value
    # split by sign to stay finite for large |x|
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> DiffArray:
    a = as_array(a)
    av = a.value
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    e = np.exp(-np.abs(av))
    slope = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (a,), lambda g: (g * slope,))


def relu(a) -> DiffArray:
    a = as_array(a)
    active = a.value > 0
    return _node(a.value * active, (a,), lambda g: (g * active,))


def softmax(a, axis: int = -1) -> DiffArray:
    a = as_array(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), back)


def layer_norm(a, axis: int = 1, eps: float = 1e-5) -> DiffArray:
    """Normalize to zero mean / unit variance along ``axis`` (no affine)."""
    a = as_array(a)
    av = a.value
    mu = av.mean(axis=axis, keepdims=True)
    xc = av - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _node(xhat, (a,), back)


# ---------------------------------------------------------------------------
# reductions and norms


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> DiffArray:  # noqa: A001
    a = as_array(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.value.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_array(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def l2norm(a, axis: int = 1, keepdims: bool = False) -> DiffArray:
    """Euclidean norm along ``axis``; the subgradient at 0 is taken as 0."""
    a = as_array(a)
    av = a.value
    out = np.sqrt((av * av).sum(axis=axis, keepdims=True))
    safe = np.where(out > 0, out, 1.0)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.where(out > 0, g * av / safe, 0.0),)

    return _node(out if keepdims else np.squeeze(out, axis=axis), (a,), back)


def squared_error(pred, target) -> DiffArray:
    """Elementwise (pred - target)**2."""
    pred, target = as_array(pred), as_array(target)
    if pred.shape != target.shape:
        raise ShapeError("squared_error", pred.shape, target.shape)
    return square(sub(pred, target))


def binary_cross_entropy(pred, target, eps: float = 1e-7) -> DiffArray:
    """Elementwise -(y log p + (1-y) log(1-p)) with p clamped to [eps, 1-eps]."""
    pred, target = as_array(pred), as_array(target)
    if pred.shape != target.shape:
        raise ShapeError("binary_cross_entropy", pred.shape, target.shape)
    p = clip(pred, eps, 1.0 - eps)
    y = target.value
    pv = p.value
    out = -(y * np.log(pv) + (1.0 - y) * np.log(1.0 - pv))
    return _node(out, (p,), lambda g: (g * (pv - y) / (pv * (1.0 - pv)),))


# ---------------------------------------------------------------------------
# structural ops


def matmul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    av, bv = a.value, b.value

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(av @ bv, (a, b), back)


def transpose(a, axes: Sequence[int]) -> DiffArray:
    a = as_array(a)
    axes = tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    inverse = tuple(np.argsort([ax % a.ndim for ax in axes]))
    return _node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, ax1: int, ax2: int) -> DiffArray:
    a = as_array(a)
    perm = list(range(a.ndim))
    perm[ax1], perm[ax2] = perm[ax2], perm[ax1]
    return transpose(a, perm)


def reshape(a, shape: Sequence[int]) -> DiffArray:
    a = as_array(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def expand_dims(a, axis: int) -> DiffArray:
    a = as_array(a)
    return reshape(a, np.expand_dims(a.value, axis).shape)


def concat(arrays: Sequence, axis: int = 0) -> DiffArray:
    arrays = [as_array(x) for x in arrays]
    try:
        out = np.concatenate([x.value for x in arrays], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[x.shape for x in arrays]) from None
    ax = axis % out.ndim
    bounds = np.cumsum([x.shape[ax] for x in arrays])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(out, arrays, back)


def conv1d(x, weight, bias=None, padding: int | None = None, dilation: int = 1) -> DiffArray:
    """1D cross-correlation over the last axis.

    x: (..., C_in, T); weight: (C_out, C_in, K); bias: (C_out,).
    ``padding=None`` gives "same" padding for odd K.
    """
    x, weight = as_array(x), as_array(weight)
    if weight.ndim != 3 or x.ndim < 2 or x.shape[-2] != weight.shape[1]:
        raise ShapeError("conv1d", x.shape, weight.shape)
    c_out, c_in, k = weight.shape
    if padding is None:
        padding = dilation * (k - 1) // 2
    xv = x.value
    t_in = xv.shape[-1]
    pad_width = [(0, 0)] * (xv.ndim - 1) + [(padding, padding)]
    xp = np.pad(xv, pad_width)
    t_out = xp.shape[-1] - dilation * (k - 1)
    if t_out <= 0:
        raise ShapeError("conv1d", x.shape, weight.shape)
    # cols[..., t, c, j] = xp[..., c, t + j*dilation]
    cols = np.stack([xp[..., j * dilation : j * dilation + t_out] for j in range(k)], axis=-1)
    cols = np.swapaxes(cols, -3, -2).reshape(*xv.shape[:-2], t_out, c_in * k)
    wmat = weight.value.reshape(c_out, c_in * k)
    out = np.swapaxes(cols @ wmat.T, -1, -2)
    parents = [x, weight]
    if bias is not None:
        bias = as_array(bias)
        if bias.shape != (c_out,):
            raise ShapeError("conv1d", x.shape, weight.shape, bias.shape)
        out = out + bias.value[:, None]
        parents.append(bias)

    def back(g):
        gt = np.swapaxes(g, -1, -2)  # (..., t_out, c_out)
        gw = (gt.reshape(-1, c_out).T @ cols.reshape(-1, c_in * k)).reshape(weight.shape)
        gcols = (gt @ wmat).reshape(*xv.shape[:-2], t_out, c_in, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., j * dilation : j * dilation + t_out] += np.swapaxes(gcols[..., j], -1, -2)
        gx = gxp[..., padding : padding + t_in]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(-1, c_out, g.shape[-1]).sum(axis=(0, 2)))
        return tuple(grads)

    return _node(out, parents, back)


# ---------------------------------------------------------------------------
# backward


def _toposort(root: DiffArray) -> list[DiffArray]:
    order: list[DiffArray] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))
    return order


def backward(root: DiffArray):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate nodes receive their gradient too, then drop their links to
    parents so the graph can be collected.
    """
    if root.value.size != 1:
        raise ShapeError("backward (root must be scalar)", root.shape)
    if not root.requires_grad:
        return
    order = _toposort(root)
    grads: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            if pg.shape != parent.shape:
                pg = _unbroadcast(pg, parent.shape)
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
        node._parents = ()
        node._backward = None
