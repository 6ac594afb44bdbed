"""Dense float64 tensors with reverse-mode differentiation.

Each operation computes its forward value eagerly and records a backward
closure plus its parents on the result. ``Tensor.backward`` orders the
recorded nodes topologically (the tape) and replays the closures in reverse.
There is no global tape: graphs hang off their results, so independent
threads never share state. ``no_grad`` is thread-local.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

_grad_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not conform."""


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- basic properties
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def numpy(self):
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    # -- autodiff
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        order = _topological_order(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg

    # -- operator sugar
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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


DiffTensor = Tensor


def _topological_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
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
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents, backward, op: str) -> Tensor:
    """Wrap a forward result; ``backward(g)`` must return one grad (or None) per parent."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- binary

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return (
            unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_op(ad * bd, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (
            unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return make_op(out, (a, b), backward, "div")


def neg(a):
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b):
    """``a @ b`` for operands of rank >= 2 with numpy batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_op(ad @ bd, (a, b), backward, "matmul")


def linear(x, W, b=None):
    """Affine map ``W x + b`` applied along the last axis of ``x``.

    x: (..., in), W: (out, in), b: (out,) or None.
    """
    x = as_tensor(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or (b is not None and b.shape != (W.shape[0],)):
        bshape = None if b is None else b.shape
        raise ShapeError(f"linear: x {x.shape}, W {W.shape}, b {bshape} do not conform")
    xd, Wd = x.data, W.data
    out = xd @ Wd.T
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ Wd if x.requires_grad else None
        gW = g2.T @ xd.reshape(-1, xd.shape[-1]) if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return make_op(out, parents, backward, "linear")


# ---------------------------------------------------------------- unary

def exp(a):
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    return make_op(np.log(ad), (a,), lambda g: (g / ad,), "log")


def tanh(a):
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    out = np.exp(-np.logaddexp(0.0, -a.data))
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def logsigmoid(a):
    ad = a.data
    out = -np.logaddexp(0.0, -ad)
    return make_op(out, (a,), lambda g: (g * np.exp(-np.logaddexp(0.0, ad)),), "logsigmoid")


def sin(a):
    ad = a.data
    return make_op(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def cos(a):
    ad = a.data
    return make_op(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def square(a):
    ad = a.data
    return make_op(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def sqrt(a):
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def absolute(a):
    ad = a.data
    return make_op(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def leaky_relu(a, negative_slope: float = 0.1):
    ad = a.data
    slope = float(negative_slope)
    scale = np.where(ad > 0.0, 1.0, slope)
    return make_op(ad * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def maximum_const(a, floor):
    """Elementwise ``max(a, floor)`` where ``floor`` is a constant array."""
    ad = a.data
    floor = np.asarray(floor, dtype=np.float64)
    pick = ad >= floor
    out = np.where(pick, ad, floor)
    return make_op(out, (a,), lambda g: (unbroadcast(np.where(pick, g, 0.0), ad.shape),), "maximum")


def smooth_clamp(a, bound):
    """``bound * tanh(a / bound)``; never leaves [-bound, bound]."""
    bound = np.asarray(bound, dtype=np.float64)
    t = np.tanh(a.data / bound)
    out = np.clip(bound * t, -bound, bound)
    return make_op(out, (a,), lambda g: (unbroadcast(g * (1.0 - t * t), a.shape),), "smooth_clamp")


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None, keepdims=False):
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.asarray(out, dtype=np.float64), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    old = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx):
    shape = a.shape
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_op(np.array(a.data[idx], dtype=np.float64), (a,), backward, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_op(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_op(out, tensors, backward, "stack")


def masked_softmax(a, mask=None, axis=-1):
    """Softmax along ``axis`` restricted to ``mask`` (True = kept).

    Masked entries get weight exactly 0 and receive zero gradient. A slice
    with no kept entry yields all zeros.
    """
    x = a.data
    if mask is None:
        keep = np.ones(x.shape, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    shifted = np.where(keep, x, -np.inf)
    mx = np.max(shifted, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    ex = np.where(keep, np.exp(np.where(keep, x - mx, 0.0)), 0.0)
    den = ex.sum(axis=axis, keepdims=True)
    out = ex / np.where(den > 0.0, den, 1.0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (a,), backward, "softmax")
