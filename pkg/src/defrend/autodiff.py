"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: every op returns a Tensor that remembers its parents and a
closure computing parent gradients from the output gradient.  Ops follow
numpy broadcasting; gradients are reduced back to the parent shapes.
Reduction order is fixed, so backward passes are bit-reproducible.
Subgradient conventions: |x|, relu and the L1 loss use 0 at their kinks.
"""

import numpy as np

from .errors import InvalidParameter, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise InvalidParameter("backward() without grad needs a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            for p, g in zip(node._parents, node._backward_fn(node.grad)):
                if g is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad += g

    # a few conveniences; heavy lifting stays in module functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(data):
    return Tensor(np.array(data), requires_grad=True)


def _make(data, parents, backward_fn):
    parents = tuple(as_tensor(p) for p in parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape),
                            _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape),
                            _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.data.shape),
                            _unbroadcast(g * a.data, b.data.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.data.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data),
                                         b.data.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def abs_(a):
    """|a| with subgradient 0 at 0 (sign(0) = 0)."""
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = as_tensor(a)
    y = np.maximum(a.data, 0)
    if not a.requires_grad:
        return Tensor(y)
    return _make(y, (a,), lambda g: (g * (a.data > 0),))


def _sigmoid_np(d):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-d))


def softplus(a):
    a = as_tensor(a)
    d = a.data
    y = np.where(d > 30, d, np.log1p(np.exp(np.minimum(d, 30)))).astype(d.dtype)
    if not a.requires_grad:
        return Tensor(y)
    return _make(y, (a,), lambda g: (g * _sigmoid_np(d),))


def sigmoid(a):
    a = as_tensor(a)
    y = _sigmoid_np(a.data).astype(a.data.dtype)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def sin(a):
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g * 0.5 / y,))


def cast(a, dtype):
    """dtype conversion with identity gradient (cast back on the way down)."""
    a = as_tensor(a)
    return _make(a.data.astype(dtype), (a,),
                 lambda g: (g.astype(a.data.dtype),))


# ---------------------------------------------------------------------------
# reductions, shaping, linear algebra


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(y, (a,), backward)


def mean_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims),
               np.asarray(1.0 / float(n), dtype=a.data.dtype))


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,),
                 lambda g: (g.reshape(a.data.shape),))


def getitem(a, key):
    a = as_tensor(a)

    def backward(g):
        gx = np.zeros_like(a.data)
        gx[key] = g
        return (gx,)

    return _make(a.data[key], (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    y = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.array_split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _make(y, tuple(tensors), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch("matmul expects 2-D operands")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def matvec(w, x):
    """w (m,n) @ x (n,) -> (m,)."""
    w, x = as_tensor(w), as_tensor(x)
    return _make(w.data @ x.data, (w, x),
                 lambda g: (np.outer(g, x.data), w.data.T @ g))


def index_row(table, i):
    """Row lookup into an embedding table; gradient scatters to that row."""
    table = as_tensor(table)

    def backward(g):
        gt = np.zeros_like(table.data)
        gt[i] = g
        return (gt,)

    return _make(table.data[i], (table,), backward)


# ---------------------------------------------------------------------------
# image ops (NHWC)


def conv2d(x, w, b=None):
    """Same-padding convolution over (N,H,W,Cin) with (K,K,Cin,Cout).

    Evaluated as K*K accumulated GEMMs over shifted views of the padded
    input, which avoids materializing an im2col buffer.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    k = w.data.shape[0]
    pad = k // 2
    n, h, wd, ci = x.data.shape
    co = w.data.shape[3]
    xp = np.zeros((n, h + 2 * pad, wd + 2 * pad, ci), dtype=x.data.dtype)
    xp[:, pad:pad + h, pad:pad + wd] = x.data
    y = np.zeros((n, h, wd, co), dtype=x.data.dtype)
    yf = y.reshape(-1, co)
    for ky in range(k):
        for kx in range(k):
            patch = np.ascontiguousarray(
                xp[:, ky:ky + h, kx:kx + wd, :]).reshape(-1, ci)
            yf += patch @ w.data[ky, kx]
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
        parents = (x, w, b)
    else:
        parents = (x, w)

    def backward(g):
        gf = np.ascontiguousarray(g).reshape(-1, co)
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for ky in range(k):
            for kx in range(k):
                patch = np.ascontiguousarray(
                    xp[:, ky:ky + h, kx:kx + wd, :]).reshape(-1, ci)
                gw[ky, kx] = patch.T @ gf
                gxp[:, ky:ky + h, kx:kx + wd, :] += \
                    (gf @ w.data[ky, kx].T).reshape(n, h, wd, ci)
        gx = gxp[:, pad:pad + h, pad:pad + wd, :]
        if b is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=(0, 1, 2)))

    return _make(y, parents, backward)


def avg_pool2(x):
    x = as_tensor(x)
    n, h, w, c = x.data.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    y = x.data.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(g):
        g4 = (g * 0.25)[:, :, None, :, None, :]
        return (np.broadcast_to(
            g4, (n, h // 2, 2, w // 2, 2, c)).reshape(n, h, w, c).copy(),)

    return _make(y, (x,), backward)


_UP_CACHE = {}


def _upsample_matrix(n_out, n_in, dtype):
    key = (n_out, n_in, np.dtype(dtype).str)
    if key not in _UP_CACHE:
        c = np.clip((np.arange(n_out) + 0.5) / 2.0 - 0.5, 0.0, n_in - 1.0)
        i0 = np.floor(c).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        frac = c - i0
        m = np.zeros((n_out, n_in), dtype=dtype)
        m[np.arange(n_out), i0] += 1.0 - frac
        m[np.arange(n_out), i1] += frac
        _UP_CACHE[key] = m
    return _UP_CACHE[key]


def _apply_axis(mat, arr, axis):
    moved = np.moveaxis(arr, axis, 0)
    out = (mat @ moved.reshape(moved.shape[0], -1)).reshape(
        (mat.shape[0],) + moved.shape[1:])
    return np.moveaxis(out, 0, axis)


def upsample_bilinear2(x):
    """Factor-2 bilinear upsampling (half-pixel centers, edges clamped)."""
    x = as_tensor(x)
    n, h, w, c = x.data.shape
    uh = _upsample_matrix(2 * h, h, x.data.dtype)
    uw = _upsample_matrix(2 * w, w, x.data.dtype)
    y = _apply_axis(uw, _apply_axis(uh, x.data, 1), 2)

    def backward(g):
        return (_apply_axis(uh.T, _apply_axis(uw.T, g, 2), 1),)

    return _make(y, (x,), backward)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
