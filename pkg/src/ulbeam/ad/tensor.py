"""Reverse-mode automatic differentiation over real and complex arrays.

Complex values live in ``complex128`` arrays (real/imaginary float64 pairs).
Gradients use the real parameterization: for a real scalar loss ``L`` and a
complex entry ``z = x + iy`` the stored gradient is ``dL/dx + i dL/dy``, so a
finite-difference check that perturbs ``x`` and ``y`` independently matches
the stored value directly. Real tensors get real gradients.

Under that convention the chain rule for a holomorphic elementwise map
``y = f(x)`` is ``gx = gy * conj(f'(x))`` and for ``Y = A @ B`` it is
``gA = gY @ B^H``, ``gB = A^H @ gY``.
"""
from __future__ import annotations

import numpy as np

from ..errors import NotScalar, ShapeMismatch
from . import linalg

__all__ = [
    "Tensor", "tensor", "constant", "backward",
    "add", "sub", "mul", "div", "neg", "scale", "matmul", "conj", "herm",
    "transpose", "real", "imag", "make_complex", "abs2", "sum", "mean",
    "exp", "log", "log2", "sqrt", "tanh", "relu", "softmax", "inv", "norm",
    "reshape", "getitem", "concat", "stack", "diagonal", "where_const",
    "conv1d", "pad_last",
]


def _as_array(x):
    a = np.asarray(x)
    if np.iscomplexobj(a):
        return a.astype(np.complex128, copy=False)
    return a.astype(np.float64, copy=False)


class Tensor:
    """A node in the computation graph.

    ``parents`` and ``backward_fn`` are empty for leaves. ``backward_fn``
    maps the output gradient to a tuple of parent gradients (``None`` for
    parents that need nothing).
    """

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad",
                 "name", "meta", "op")

    def __init__(self, data, requires_grad=False, name=None, parents=(),
                 backward_fn=None, op="leaf"):
        self.data = _as_array(data)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self.parents)
        self.name = name
        self.meta = {}
        self.op = op

    # --- conveniences -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_complex(self):
        return np.iscomplexobj(self.data)

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.data.dtype}{tag})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def H(self):
        return herm(self)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data):
    return data if isinstance(data, Tensor) else Tensor(data)


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _fit(grad, like):
    """Reduce a broadcast gradient back to ``like``'s shape and dtype."""
    shape = like.shape
    g = grad
    if g.shape != shape:
        extra = g.ndim - len(shape)
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    if not np.iscomplexobj(like.data) and np.iscomplexobj(g):
        g = g.real
    return g


def _node(data, parents, fn, op):
    return Tensor(data, parents=parents, backward_fn=fn, op=op)


# --- elementwise arithmetic ------------------------------------------------

def add(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast(a, b)
    return _node(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)), "add")


def sub(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast(a, b)
    return _node(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)), "sub")


def neg(a):
    a = _t(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast(a, b)

    def fn(g):
        return (_fit(g * np.conj(b.data), a) if a.requires_grad else None,
                _fit(g * np.conj(a.data), b) if b.requires_grad else None)
    return _node(a.data * b.data, (a, b), fn, "mul")


def scale(a, s):
    """Multiply by a python/numpy scalar constant."""
    a = _t(a)
    return _node(a.data * s, (a,), lambda g: (_fit(g * np.conj(s), a),), "scale")


def div(a, b):
    a, b = _t(a), _t(b)
    _check_broadcast(a, b)
    out = a.data / b.data

    def fn(g):
        ga = _fit(g / np.conj(b.data), a) if a.requires_grad else None
        gb = _fit(-g * np.conj(out / b.data), b) if b.requires_grad else None
        return ga, gb
    return _node(out, (a, b), fn, "div")


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot combine shapes {a.shape} and {b.shape}") from exc


# --- complex structure -----------------------------------------------------

def conj(a):
    a = _t(a)
    return _node(np.conj(a.data), (a,), lambda g: (np.conj(g),), "conj")


def transpose(a):
    a = _t(a)
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def herm(a):
    """Conjugate transpose of the trailing two axes."""
    a = _t(a)
    return _node(np.conj(np.swapaxes(a.data, -1, -2)), (a,),
                 lambda g: (np.conj(np.swapaxes(g, -1, -2)),), "herm")


def real(a):
    a = _t(a)
    return _node(np.real(a.data).copy(), (a,), lambda g: (g.astype(a.data.dtype),), "real")


def imag(a):
    a = _t(a)
    return _node(np.imag(a.data).copy(), (a,), lambda g: (1j * g,), "imag")


def make_complex(re, im):
    re, im = _t(re), _t(im)
    _check_broadcast(re, im)
    return _node(re.data + 1j * im.data, (re, im),
                 lambda g: (_fit(g.real, re), _fit(g.imag, im)), "complex")


def abs2(a):
    """Squared magnitude, real-valued."""
    a = _t(a)
    out = (a.data.real ** 2 + a.data.imag ** 2) if a.is_complex else a.data ** 2
    return _node(out, (a,), lambda g: (2.0 * g * a.data,), "abs2")


# --- reductions --------------------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = _t(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _node(out, (a,), fn, "sum")


def mean(a, axis=None, keepdims=False):
    a = _t(a)
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def norm(a, axis=None, keepdims=False):
    """Frobenius (or vector 2-) norm over ``axis``."""
    return sqrt(sum(abs2(a), axis=axis, keepdims=keepdims))


# --- real elementwise functions ---------------------------------------------

def _real_only(a, op):
    if a.is_complex:
        raise TypeError(f"{op} requires a real tensor")


def exp(a):
    a = _t(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * np.conj(out),), "exp")


def log(a):
    a = _t(a)
    _real_only(a, "log")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def log2(a):
    return scale(log(a), 1.0 / np.log(2.0))


def sqrt(a):
    a = _t(a)
    _real_only(a, "sqrt")
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a):
    a = _t(a)
    _real_only(a, "tanh")
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out ** 2),), "tanh")


def relu(a):
    a = _t(a)
    _real_only(a, "relu")
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def softmax(a, axis=-1):
    a = _t(a)
    _real_only(a, "softmax")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _node(out, (a,), fn, "softmax")


def where_const(mask, a):
    """Multiply by a fixed 0/1 (or scaled) mask; used for dropout."""
    a = _t(a)
    m = np.asarray(mask)
    return _node(a.data * m, (a,), lambda g: (_fit(g * m, a),), "mask")


# --- matrix operations ------------------------------------------------------

def matmul(a, b):
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul shapes {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _fit(np.matmul(g, np.conj(np.swapaxes(b.data, -1, -2))), a)
        if b.requires_grad:
            gb = _fit(np.matmul(np.conj(np.swapaxes(a.data, -1, -2)), g), b)
        return ga, gb
    return _node(out, (a, b), fn, "matmul")


def inv(a):
    """Batched matrix inverse; the node records a 1-norm condition estimate."""
    a = _t(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeMismatch(f"inverse needs square matrices, got {a.shape}")
    out, cond = linalg.inv(a.data)

    def fn(g):
        oh = np.conj(np.swapaxes(out, -1, -2))
        return (_fit(-np.matmul(np.matmul(oh, g), oh), a),)
    node = _node(out, (a,), fn, "inv")
    node.meta["cond"] = cond
    return node


def diagonal(a):
    """Diagonal of the trailing two axes, shape (..., n)."""
    a = _t(a)
    n = min(a.shape[-2:])
    idx = np.arange(n)

    def fn(g):
        full = np.zeros(a.shape, dtype=np.result_type(g.dtype, a.data.dtype))
        full[..., idx, idx] = g
        return (full,)
    return _node(a.data[..., idx, idx].copy(), (a,), fn, "diagonal")


# --- shape manipulation ----------------------------------------------------

def reshape(a, shape):
    a = _t(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, idx):
    a = _t(a)

    def fn(g):
        full = np.zeros(a.shape, dtype=np.result_type(g.dtype, a.data.dtype))
        np.add.at(full, idx, g)
        return (full,)
    return _node(a.data[idx].copy(), (a,), fn, "getitem")


def concat(tensors, axis=-1):
    ts = [_t(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def fn(g):
        parts = np.split(g, sizes, axis=ax)
        return tuple(_fit(p, t) for p, t in zip(parts, ts))
    return _node(out, ts, fn, "concat")


def stack(tensors, axis=0):
    ts = [_t(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def fn(g):
        return tuple(_fit(np.take(g, i, axis=ax), t) for i, t in enumerate(ts))
    return _node(out, ts, fn, "stack")


def pad_last(a, left, right):
    """Zero-pad the last axis."""
    a = _t(a)
    width = [(0, 0)] * (a.ndim - 1) + [(left, right)]
    out = np.pad(a.data, width)
    n = a.shape[-1]
    return _node(out, (a,), lambda g: (g[..., left:left + n].copy(),), "pad")


def conv1d(x, w, b=None):
    """'Same'-padded 1-D convolution (cross-correlation).

    ``x``: (batch, c_in, length); ``w``: (c_out, c_in, k) with odd ``k``;
    ``b``: (c_out,).
    """
    x, w = _t(x), _t(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1] or w.shape[2] % 2 == 0:
        raise ShapeMismatch(f"conv1d shapes x={x.shape} w={w.shape}")
    bsz, cin, length = x.shape
    cout, _, k = w.shape
    half = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (half, half)))
    # cols[b, l, c, j] = xp[b, c, l + j]
    idx = np.arange(length)[:, None] + np.arange(k)[None, :]
    cols = xp[:, :, idx].transpose(0, 2, 1, 3).reshape(bsz, length, cin * k)
    wmat = w.data.reshape(cout, cin * k)
    out = np.einsum("blf,of->bol", cols, wmat)
    parents = (x, w)
    if b is not None:
        b = _t(b)
        out = out + b.data[None, :, None]
        parents = (x, w, b)

    def fn(g):
        # g: (batch, c_out, length)
        gw = np.einsum("bol,blf->of", g, cols).reshape(w.shape)
        gcols = np.einsum("bol,of->blf", g, wmat).reshape(bsz, length, cin, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + length] += gcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, half:half + length]
        grads = (gx, gw)
        if b is not None:
            grads = grads + (g.sum(axis=(0, 2)),)
        return grads
    return _node(out, parents, fn, "conv1d")


# --- backward pass -----------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen and p.requires_grad:
                stack_.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every leaf that requires gradients.

    The loss must be a real scalar. Leaf gradients are overwritten, not
    accumulated, so repeated calls on the same graph give identical results.
    Returns a dict mapping each leaf to its gradient.
    """
    if loss.data.size != 1 or loss.is_complex:
        raise NotScalar(f"loss must be a real scalar, got shape {loss.shape} dtype {loss.data.dtype}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            leaves[node] = g
            continue
        pgrads = node.backward_fn(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for leaf, g in leaves.items():
        if not leaf.is_complex and np.iscomplexobj(g):
            g = g.real
        leaf.grad = np.array(g, dtype=leaf.data.dtype).reshape(leaf.shape)
    return leaves
