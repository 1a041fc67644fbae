"""Reverse-mode automatic differentiation on numpy arrays.

Small tape-based engine sized for this project: dense/convolutional layers,
recurrent unrolls, and the masked depth losses.  Every operation records a
backward closure; ``Tensor.backward()`` walks the graph once in reverse
topological order and accumulates gradients into leaf tensors.

Conventions:
  * image tensors are NCHW (batch, channels, height, width)
  * gradients accumulate in ``Tensor.grad`` only on leaves created with
    ``requires_grad=True``
  * dtype follows the inputs; training code decides float32 vs float64
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class Tensor:
    """An n-d array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- array-ish accessors -------------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __float__(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph walk ----------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in visited:
                continue
            if expanded:
                visited.add(id(node))
                topo.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grad_map = {id(self): grad}
        for node in reversed(topo):
            g = grad_map.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grad_map:
                    grad_map[key] = grad_map[key] + pg
                else:
                    grad_map[key] = pg

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    """Create an op-result tensor; drop the tape when no parent needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, k):
    """Elementwise a**k for a real constant exponent k."""
    a = as_tensor(a)
    kf = float(k)
    return _node(a.data ** kf, (a,), lambda g: (g * kf * a.data ** (kf - 1.0),))


def matmul(a, b):
    """Matrix product for 2-D operands (and 2-D @ 1-D)."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def backward(g):
        if b.ndim == 1:
            ga = np.outer(g, b.data) if a.ndim == 2 else None
            gb = a.data.T @ g
            return ga, gb
        ga = g @ b.data.T
        gb = a.data.T @ g
        return ga, gb

    return _node(out, (a, b), backward)


# -- elementwise nonlinearities -------------------------------------------------

def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g / (2.0 * out),))


def abs_(a):
    """|a| with subgradient sign(a); sign(0) = 0."""
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def elu(a, alpha=1.0):
    """ELU; C1 at 0 for alpha=1, which keeps finite differences clean."""
    a = as_tensor(a)
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, neg_part)
    grad_factor = np.where(a.data > 0, 1.0, neg_part + alpha)
    return _node(out, (a,), lambda g: (g * grad_factor,))


def softplus(a):
    """log(1 + exp(a)), computed stably."""
    a = as_tensor(a)
    return _node(np.logaddexp(0.0, a.data), (a,), lambda g: (g * expit(a.data),))


def spike_surrogate(v, threshold, slope=4.0):
    """Heaviside spike with a fast-sigmoid surrogate gradient.

    Forward emits 1.0 where v >= threshold; backward uses
    slope / (1 + slope*|v - threshold|)^2.
    """
    v = as_tensor(v)
    centered = v.data - threshold
    out = (centered >= 0).astype(v.dtype)
    surrogate = slope / (1.0 + slope * np.abs(centered)) ** 2

    return _node(out, (v,), lambda g: (g * surrogate,))


# -- reductions and shape ops ---------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        if not keepdims:
            for ax in sorted(ax % a.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,),
                 lambda g: (g.transpose(inverse),))


def getitem(a, key):
    """Basic (non-fancy) indexing with scatter-add backward."""
    a = as_tensor(a)

    def backward(g):
        da = np.zeros_like(a.data)
        da[key] = g
        return (da,)

    return _node(a.data[key], (a,), backward)


def take_flat(a, indices):
    """Gather from the flattened tensor; duplicate indices accumulate on backward."""
    a = as_tensor(a)
    idx = np.asarray(indices)

    def backward(g):
        flat = np.zeros(a.size, dtype=a.dtype)
        np.add.at(flat, idx, g)
        return (flat.reshape(a.shape),)

    return _node(a.data.reshape(-1)[idx], (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


# -- image ops (NCHW) -----------------------------------------------------------

def _im2col(x, kh, kw, sh, sw):
    """Lower padded NCHW input to (N, C*kh*kw, Ho, Wo) patch columns."""
    n, c, hp, wp = x.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    cols = np.empty((n, c, kh * kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i * kw + j] = x[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
    return cols.reshape(n, c * kh * kw, ho, wo), ho, wo


def _col2im(dcols, padded_shape, kh, kw, sh, sw):
    n, c, hp, wp = padded_shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    dcols = dcols.reshape(n, c, kh * kw, ho, wo)
    dx = np.zeros(padded_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcols[:, :, i * kw + j]
    return dx


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation: x (N,Ci,H,W), w (Co,Ci,kh,kw), b (Co,) or None."""
    x, w = as_tensor(x), as_tensor(w)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        parents.append(b)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    co, ci, kh, kw = w.shape

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols, ho, wo = _im2col(xp, kh, kw, sh, sw)
    w_mat = w.data.reshape(co, ci * kh * kw)
    out = np.tensordot(cols, w_mat, axes=([1], [1]))  # (N, Ho, Wo, Co)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        out += b.data[None, :, None, None]
    padded_shape = xp.shape

    def backward(g):
        dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])).reshape(w.shape)
        dcols = np.tensordot(g.transpose(0, 2, 3, 1), w_mat, axes=([3], [0]))
        dcols = np.ascontiguousarray(dcols.transpose(0, 3, 1, 2))
        dxp = _col2im(dcols, padded_shape, kh, kw, sh, sw)
        dx = dxp[:, :, ph:dxp.shape[2] - ph or None, pw:dxp.shape[3] - pw or None] \
            if (ph or pw) else dxp
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node(out, tuple(parents), backward)


def depthwise_conv2d(x, w, b=None, padding=0):
    """Per-channel 2-D cross-correlation: x (N,C,H,W), w (C,kh,kw), b (C,)."""
    x, w = as_tensor(x), as_tensor(w)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        parents.append(b)
    c, kh, kw = w.shape
    ph, pw = (padding, padding) if isinstance(padding, int) else padding

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    n = xp.shape[0]
    cols, ho, wo = _im2col(xp, kh, kw, 1, 1)
    cols = cols.reshape(n, c, kh * kw, ho, wo)
    out = np.einsum("nckhw,ck->nchw", cols, w.data.reshape(c, kh * kw))
    if b is not None:
        out += b.data[None, :, None, None]
    padded_shape = xp.shape

    def backward(g):
        dw = np.einsum("nckhw,nchw->ck", cols, g).reshape(w.shape)
        dcols = np.einsum("ck,nchw->nckhw", w.data.reshape(c, kh * kw), g)
        dxp = _col2im(dcols.reshape(n, c * kh * kw, ho, wo), padded_shape, kh, kw, 1, 1)
        dx = dxp[:, :, ph:dxp.shape[2] - ph or None, pw:dxp.shape[3] - pw or None] \
            if (ph or pw) else dxp
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node(out, tuple(parents), backward)


def upsample2x(x):
    """Nearest-neighbour 2x upsampling on NCHW."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _node(out, (x,), backward)
