"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every operation on tensors that
require gradients records a node holding references to its inputs and a
closure that maps the output gradient to input gradients. Calling
:meth:`Tensor.backward` on a scalar walks the recorded nodes in reverse
creation order, which is a valid topological order because a node can
only be created after its inputs.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation.

    Parameters
    ----------
    data : array_like
        Values. Integer and boolean input is promoted to float64; float32
        input is kept as float32.
    requires_grad : bool
        Whether gradients should be accumulated into ``.grad`` for this
        tensor when it is a leaf.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None, _op=""):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        self._id = next(_ids)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self, grad=None):
        backward(self, grad)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data, parents, backward_fn, op):
    """Wrap an op result; record a graph node only when needed."""
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, _op=op)
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _operands(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# -- elementwise arithmetic ------------------------------------------------
def add(a, b):
    a, b = _operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _operands(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _operands(a, b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), bw, "div")


def power(a, exponent):
    if isinstance(exponent, Tensor):
        raise TypeError("only constant exponents are supported")
    a = as_tensor(a)
    p = float(exponent)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(a.data**p, (a,), bw, "pow")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def log10(a):
    a = as_tensor(a)
    scale = 1.0 / np.log(10.0)
    return _make(np.log10(a.data), (a,), lambda g: (g * scale / a.data,), "log10")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def clip(a, lo=None, hi=None):
    """Clamp values; the gradient is zero wherever the clamp is active."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return _make(out, (a,), lambda g: (g * inside,), "clip")


# -- activations -----------------------------------------------------------
def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.logaddexp(0.0, x).astype(x.dtype, copy=False)


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s
    return _make(out, (a,), lambda g: (g * (s + out * (1.0 - s)),), "silu")


def softplus(a):
    a = as_tensor(a)
    out = _softplus(a.data)
    return _make(out, (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


def prelu(x, slope):
    """Parametric ReLU with a single learnable slope: ``x`` if ``x >= 0`` else ``slope * x``."""
    x, slope = _operands(x, slope)
    pos = x.data >= 0
    out = np.where(pos, x.data, slope.data * x.data)

    def bw(g):
        gx = np.where(pos, g, g * slope.data)
        gs = _unbroadcast(np.where(pos, 0.0, g * x.data), slope.shape)
        return gx, gs

    return _make(out, (x, slope), bw, "prelu")


# -- linear algebra --------------------------------------------------------
def matmul(a, b):
    """Matrix product with numpy broadcasting over leading dimensions."""
    a, b = _operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# -- reductions ------------------------------------------------------------
def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else axis
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)

    def bw(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)

    return _make(out, (a,), bw, "mean")


# -- shape manipulation ----------------------------------------------------
def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def getitem(a, index):
    a = as_tensor(a)

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw, "getitem")


def take(a, indices, axis=-1):
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, indices, np.moveaxis(g, ax, 0))
        return (full,)

    return _make(np.take(a.data, indices, axis=ax), (a,), bw, "take")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def pad_last(a, left, right):
    """Zero-pad (or crop, for negative widths) the last axis."""
    a = as_tensor(a)
    n = a.shape[-1]
    lo_src, hi_src = max(-left, 0), n - max(-right, 0)
    if hi_src < lo_src:
        raise ValueError("cropping removes more samples than exist")
    lo_dst = max(left, 0)
    out_len = n + left + right
    out = np.zeros(a.shape[:-1] + (out_len,), dtype=a.dtype)
    out[..., lo_dst:lo_dst + hi_src - lo_src] = a.data[..., lo_src:hi_src]

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[..., lo_src:hi_src] = g[..., lo_dst:lo_dst + hi_src - lo_src]
        return (full,)

    return _make(out, (a,), bw, "pad")


def fit_length(a, length):
    """Crop or right-pad the last axis to exactly ``length`` samples."""
    return pad_last(a, 0, length - a.shape[-1])


# -- backpropagation ---------------------------------------------------------
def _collect(root):
    seen = {}
    stack_ = [root]
    while stack_:
        node = stack_.pop()
        if node._id in seen or not node.requires_grad:
            continue
        seen[node._id] = node
        stack_.extend(node._parents)
    return [seen[k] for k in sorted(seen, reverse=True)]


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Without an explicit ``grad`` the loss must be a scalar. Each node is
    visited once, in reverse creation order, and contributions from fan-out
    are summed in that fixed order.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if grad is None:
        if loss.data.size != 1:
            raise ValueError(f"backward on a non-scalar tensor of shape {loss.shape} needs an explicit gradient")
        grad = np.ones(loss.shape, dtype=loss.dtype)
    else:
        grad = np.asarray(grad, dtype=loss.dtype)
        if grad.shape != loss.shape:
            raise ValueError("gradient shape does not match tensor shape")
    if not loss.requires_grad:
        return
    grads = {loss._id: grad}
    for node in _collect(loss):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg
