"""Reverse-mode autodiff over numpy arrays.

Small tape-style engine sized for desk-scale models: each op returns a new
Tensor whose closure accumulates gradients into its parents. Ops never
mutate gradient arrays in place, so a gradient array may be shared between
consumers safely. Tensors with requires_grad=False are treated as constants
and excluded from the graph entirely (this is what makes frozen extractors
gradient-free by construction rather than by masking).
"""

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root):
    order, state, stack = [], {}, [root]
    while stack:
        node = stack[-1]
        st = state.get(id(node), 0)
        if st == 0:
            state[id(node)] = 1
            for p in node._parents:
                if state.get(id(p), 0) == 0:
                    stack.append(p)
        elif st == 1:
            state[id(node)] = 2
            order.append(node)
            stack.pop()
        else:
            stack.pop()
    return order


def _acc(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _node(data, parents, backward):
    parents = tuple(p for p in parents if p.requires_grad)
    if not parents:
        return Tensor(data)
    t = Tensor(data, requires_grad=True)
    t._parents = parents
    t._backward = backward
    return t


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def constant(x, dtype=None):
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    data = a.data + b.data

    def backward(g):
        _acc(a, _sum_to(g, a.data.shape))
        _acc(b, _sum_to(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a, b):
    data = a.data - b.data

    def backward(g):
        _acc(a, _sum_to(g, a.data.shape))
        _acc(b, _sum_to(-g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b):
    data = a.data * b.data

    def backward(g):
        _acc(a, _sum_to(g * b.data, a.data.shape))
        _acc(b, _sum_to(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def scale(a, s):
    data = a.data * s

    def backward(g):
        _acc(a, g * s)

    return _node(data, (a,), backward)


def matmul(a, b):
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _acc(a, _sum_to(ga, a.data.shape))
        _acc(b, _sum_to(gb, b.data.shape))

    return _node(data, (a, b), backward)


# ------------------------------------------------------------------- shapes


def reshape(a, shape):
    data = a.data.reshape(shape)

    def backward(g):
        _acc(a, g.reshape(a.data.shape))

    return _node(data, (a,), backward)


def transpose(a, axes):
    data = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _acc(a, g.transpose(inv))

    return _node(data, (a,), backward)


def pad2d(a, top, bottom, left, right):
    """Zero-pad the trailing two axes."""
    width = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    data = np.pad(a.data, width)
    sl = (Ellipsis, slice(top, data.shape[-2] - bottom), slice(left, data.shape[-1] - right))

    def backward(g):
        _acc(a, g[sl])

    return _node(data, (a,), backward)


def index(a, idx):
    """Basic slicing/indexing (no repeated fancy indices)."""
    data = a.data[idx]

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[idx] += g
        _acc(a, buf)

    return _node(data, (a,), backward)


def concat(tensors, axis):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _acc(t, g[tuple(sl)])

    return _node(data, tuple(tensors), backward)


def broadcast_to(a, shape):
    data = np.broadcast_to(a.data, shape)

    def backward(g):
        _acc(a, _sum_to(g, a.data.shape))

    return _node(data, (a,), backward)


# --------------------------------------------------------------- reductions


def sum_(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        denom = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        denom = 1
        for ax in axes:
            denom *= a.data.shape[ax]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / denom)


# ------------------------------------------------------------- nonlinearities


def relu(a):
    mask = a.data > 0
    data = a.data * mask

    def backward(g):
        _acc(a, g * mask)

    return _node(data, (a,), backward)


def leaky_relu(a, alpha):
    slope = np.where(a.data >= 0, a.data.dtype.type(1), a.data.dtype.type(alpha))
    data = a.data * slope

    def backward(g):
        _acc(a, g * slope)

    return _node(data, (a,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a):
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        _acc(a, g * local)

    return _node(data, (a,), backward)


def exp(a):
    data = np.exp(a.data)

    def backward(g):
        _acc(a, g * data)

    return _node(data, (a,), backward)


def log(a):
    data = np.log(a.data)

    def backward(g):
        _acc(a, g / a.data)

    return _node(data, (a,), backward)


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _acc(a, (g - dot) * data)

    return _node(data, (a,), backward)


# ------------------------------------------------------------ normalization


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """BatchNorm over (N,) stats for 2-d input or (N,H,W) stats for 4-d input.

    `running_mean`/`running_var` are plain ndarrays mutated in place when
    training; when not training they provide the normalization statistics
    (this is the locked/eval path used by frozen stages).
    """
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    shape = [1] * x.data.ndim
    shape[1] = x.data.shape[1]
    if training:
        m = x.data.mean(axis=axes)
        v = x.data.var(axis=axes)
        n = x.data.size // x.data.shape[1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * m
        running_var *= 1.0 - momentum
        running_var += momentum * (v * (n / max(n - 1, 1)))
    else:
        m = running_mean
        v = running_var
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m.reshape(shape)) * inv.reshape(shape)
    data = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(g):
        _acc(gamma, (g * xhat).sum(axis=axes))
        _acc(beta, g.sum(axis=axes))
        if x.requires_grad:
            gi = gamma.data.reshape(shape) * inv.reshape(shape)
            if training:
                gm = g.mean(axis=axes, keepdims=True)
                gxm = (g * xhat).mean(axis=axes, keepdims=True)
                _acc(x, gi * (g - gm - xhat * gxm))
            else:
                _acc(x, gi * g)

    return _node(data, (x, gamma, beta), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis."""
    m = x.data.mean(axis=-1, keepdims=True)
    v = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m) * inv
    data = gamma.data * xhat + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        _acc(gamma, (g * xhat).sum(axis=red))
        _acc(beta, g.sum(axis=red))
        if x.requires_grad:
            gh = g * gamma.data
            gm = gh.mean(axis=-1, keepdims=True)
            gxm = (gh * xhat).mean(axis=-1, keepdims=True)
            _acc(x, inv * (gh - gm - xhat * gxm))

    return _node(data, (x, gamma, beta), backward)


# ------------------------------------------------------------------ conv/pool


def conv2d(x, w, bias=None, stride=1, pad=0):
    """x: (N,C,H,W), w: (OC,C,KH,KW), bias: (OC,) or None.

    One GEMM against im2col in (C*KH*KW, N*OH*OW) layout.
    """
    n, c, h, wi = x.data.shape
    oc, _, kh, kw = w.data.shape
    sh = sw = stride
    ph = pw = pad
    oh = kernels.conv_out_size(h, kh, sh, ph)
    ow = kernels.conv_out_size(wi, kw, sw, pw)
    cols = kernels.im2col(x.data, kh, kw, sh, sw, ph, pw)
    wmat = w.data.reshape(oc, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    data = np.ascontiguousarray(out.reshape(oc, n, oh, ow).transpose(1, 0, 2, 3))

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(oc, -1)
        if w.requires_grad:
            _acc(w, np.matmul(gmat, cols.T).reshape(w.data.shape))
        if bias is not None and bias.requires_grad:
            _acc(bias, gmat.sum(axis=1))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gmat)
            _acc(x, kernels.col2im(gcols, x.data.shape, kh, kw, sh, sw, ph, pw))

    parents = (x, w) if bias is None else (x, w, bias)
    return _node(data, parents, backward)


def max_pool2d(x, k, stride, pad):
    out, idx = kernels.maxpool_forward(x.data, k, stride, pad)

    def backward(g):
        _acc(x, kernels.maxpool_backward(g, idx, x.data.shape))

    return _node(out, (x,), backward)


# ---------------------------------------------------------------------- loss


def cross_entropy(logits, labels, label_smoothing=0.0):
    """Mean cross-entropy. logits: (N,K) Tensor, labels: (N,) int ndarray."""
    n, k = logits.data.shape
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    target = np.full((n, k), label_smoothing / k, dtype=logits.data.dtype)
    target[np.arange(n), labels] += 1.0 - label_smoothing
    data = np.asarray(-(target * logp).sum() / n, dtype=logits.data.dtype)

    def backward(g):
        p = np.exp(logp)
        _acc(logits, g * (p - target) / n)

    return _node(data, (logits,), backward)


def cosine_pair_loss(q, z, eps=1e-12):
    """Mean over rows of 2 - 2*cos(q, z) with eps-stabilized norms.

    z is a plain ndarray: the target branch is detached by construction and
    never receives gradients.
    """
    z = np.asarray(z)
    nq = np.sqrt((q.data**2).sum(axis=1, keepdims=True) + eps)
    nz = np.sqrt((z**2).sum(axis=1, keepdims=True) + eps)
    cos = (q.data * z).sum(axis=1, keepdims=True) / (nq * nz)
    n = q.data.shape[0]
    data = np.asarray((2.0 - 2.0 * cos).mean(), dtype=q.data.dtype)

    def backward(g):
        dq = -2.0 * (z / (nq * nz) - cos * q.data / nq**2) / n
        _acc(q, g * dq)

    return _node(data, (q,), backward)
