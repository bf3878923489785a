"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor` that remembers its inputs and a
closure which pushes the output gradient back to them. Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order, visiting every node exactly once.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class GraphError(RuntimeError):
    """Raised on misuse of the computation graph (e.g. double backward)."""


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad", "name", "_released")

    def __init__(self, data, parents=(), backward=None, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name
        self._released = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def topological_order(self):
        """Nodes reachable from ``self`` with every input before its consumers."""
        order, seen = [], set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self, retain_graph=False):
        if self._released:
            raise GraphError("graph already released by a previous backward pass")
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar output, got shape {self.shape}")
        order = self.topological_order()
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                if node.requires_grad and not node._released:
                    node._accumulate(g)
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        if not retain_graph:
            for node in order:
                if node.parents:
                    node._released = True
                    node.parents = ()
                    node._backward = None
        self._released = not retain_graph

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise ------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    return Tensor(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return Tensor(out, (a, b), backward)


def power(a, exponent):
    exponent = float(exponent)
    return Tensor(a.data ** exponent, (a,),
                  lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def log(a):
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a):
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def absolute(a):
    return Tensor(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a, delta):
    """Symmetric clamp to ``[-delta, delta]``; gradient passes only inside the band."""
    inside = np.abs(a.data) < delta
    return Tensor(np.clip(a.data, -delta, delta), (a,), lambda g: (g * inside,))


def leaky_relu(a, slope=0.1):
    pos = a.data > 0
    return Tensor(np.where(pos, a.data, slope * a.data), (a,),
                  lambda g: (np.where(pos, g, slope * g),))


def sigmoid(a):
    out = _sigmoid(a.data)
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    out = np.logaddexp(0.0, a.data)
    return Tensor(out, (a,), lambda g: (g * _sigmoid(a.data),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# reductions -------------------------------------------------------------


def tsum(a, axis=None):
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, (a,), backward)


def tmean(a, axis=None):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis) * (1.0 / n)


# array layout -------------------------------------------------------------


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                  lambda g: tuple(np.split(g, splits, axis=axis)))


def index(a, key):
    """Basic slicing ``a[key]`` with a scatter backward."""
    def backward(g):
        out = np.zeros_like(a.data)
        out[key] = g
        return (out,)

    return Tensor(a.data[key], (a,), backward)


def flip_last(a):
    return Tensor(a.data[..., ::-1], (a,), lambda g: (g[..., ::-1],))


# spatial ----------------------------------------------------------------


def conv2d(x, weight, bias=None, stride=1):
    """3x3 (or 1x1) cross-correlation with zero padding on NCHW input.

    ``stride=2`` gives the downsampling convolution: output is ``H/2 x W/2``.
    """
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input has {cin} channels, kernel expects {cin_w}")
    pad = kh // 2
    # channel-major layout (C, N, H, W) keeps every GEMM operand contiguous
    xt = x.data.transpose(1, 0, 2, 3)
    xp = np.pad(xt, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xt
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((kh * kw, cin, n, ho, wo), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            cols[i * kw + j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(kh * kw * cin, n * ho * wo)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, kh * kw * cin)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        gw = (gm @ cols.T).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        gcols = (wmat.T @ gm).reshape(kh * kw, cin, n, ho, wo)
        gxp = np.zeros(xp.shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[i * kw + j]
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        gx = np.ascontiguousarray(gx.transpose(1, 0, 2, 3))
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor(out, parents, backward)


def upsample2x(x):
    """Nearest-neighbour upsampling of the two trailing axes."""
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        *lead, h2, w2 = g.shape
        return (g.reshape(*lead, h2 // 2, 2, w2 // 2, 2).sum(axis=(-3, -1)),)

    return Tensor(out, (x,), backward)


def column_mean(x):
    """Collapse the vertical axis: NCHW -> NCW by averaging over rows."""
    h = x.shape[2]
    return Tensor(x.data.mean(axis=2), (x,),
                  lambda g: (np.broadcast_to(g[:, :, None, :] / h, x.shape).copy(),))


def column_affine(x, weight, bias):
    """Per-column channel mixing: (N, C, W) x (K, C) -> (N, K, W)."""
    out = np.einsum("ncw,kc->nkw", x.data, weight.data) + bias.data[None, :, None]

    def backward(g):
        gx = np.einsum("nkw,kc->ncw", g, weight.data)
        gw = np.einsum("nkw,ncw->kc", g, x.data)
        return gx, gw, g.sum(axis=(0, 2))

    return Tensor(out, (x, weight, bias), backward)
