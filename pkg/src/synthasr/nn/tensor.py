"""Dense tensors with tape-based reverse-mode differentiation.

Each differentiable op returns a new :class:`Tensor` holding references to
its inputs and a closure mapping the output gradient to input gradients.
:meth:`Tensor.backward` walks that graph once in reverse topological order.
"""
from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import expit

from .. import kernels

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new parameters and constants."""
    global _DEFAULT_DTYPE
    old, _DEFAULT_DTYPE = _DEFAULT_DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class ShapeError(ValueError):
    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    # arithmetic -----------------------------------------------------------
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
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    # differentiation ------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that
        requires gradients. ``self`` must be a finite scalar unless ``grad``
        is given."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            if not np.all(np.isfinite(self.data)):
                raise FloatingPointError(f"loss is not finite: {self.data}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        owned = set()  # gradient buffers this loop allocated and may update in place
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key not in grads:
                    grads[key] = pg
                elif key in owned:
                    grads[key] += pg
                else:
                    grads[key] = grads[key] + pg
                    owned.add(key)
            node._parents = ()
            node._backward = None


def _topological(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


class Parameter(Tensor):
    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def constant(x, dtype=None) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype or _DEFAULT_DTYPE))


def _make(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# elementwise -------------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g / b.data, a.shape),
                                         _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


def sigmoid(a):
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),))


def relu(a):
    out = np.maximum(a.data, 0)
    return _make(out, (a,), lambda g: (g * (a.data > 0),))


def tabs(a):
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a, lo=None, hi=None):
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return _make(out, (a,), lambda g: (g * inside,))


# reductions and shape ----------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),))


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx):
    out = a.data[idx]
    basic = _is_basic(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True) if basic else out, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *[t.shape for t in tensors]) from None
    n = len(tensors)
    return _make(out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _make(out, (a, b), backward)


# normalisers -------------------------------------------------------------

def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward)


# indexing over sequences -------------------------------------------------

def embedding(weight, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding: id out of range [0, {weight.shape[0]})")
    out = weight.data[ids]

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _make(out, (weight,), backward)


def permute_time(a, perm):
    """Reorder axis 1 of a (B, T, ...) tensor row by row: ``out[b, t] =
    a[b, perm[b, t]]``. Each row of ``perm`` must be a permutation."""
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.argsort(perm, axis=1)
    expand = (slice(None), slice(None)) + (None,) * (a.ndim - 2)
    out = np.take_along_axis(a.data, perm[expand], axis=1)
    return _make(out, (a,), lambda g: (np.take_along_axis(g, inv[expand], axis=1),))


def reverse_within_lengths(lengths, T):
    """Permutation reversing the first ``lengths[b]`` steps of each row and
    leaving padding in place."""
    perm = np.tile(np.arange(T), (len(lengths), 1))
    for b, n in enumerate(lengths):
        perm[b, :n] = np.arange(n - 1, -1, -1)
    return perm


def length_mask(lengths, T, dtype=None):
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(dtype or _DEFAULT_DTYPE)


def maxpool_time(a, factor, lengths=None):
    """Max over non-overlapping windows of ``factor`` steps along axis 1 of a
    (B, T, D) tensor. A trailing partial window is pooled on its own, so the
    output has ceil(T / factor) steps. Steps at or beyond ``lengths`` are
    ignored."""
    B, T, D = a.shape
    T_out = -(-T // factor)
    padded = np.full((B, T_out * factor, D), -np.inf, dtype=a.data.dtype)
    padded[:, :T] = a.data
    if lengths is not None:
        valid = np.arange(T_out * factor)[None, :] < np.asarray(lengths)[:, None]
        padded[~valid] = -np.inf
    win = padded.reshape(B, T_out, factor, D)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
    empty = ~np.isfinite(out)
    out = np.where(empty, 0.0, out).astype(a.data.dtype)

    def backward(g):
        g = np.where(empty, 0.0, g)
        full = np.zeros((B, T_out, factor, D), dtype=a.data.dtype)
        np.put_along_axis(full, arg[:, :, None, :], g[:, :, None, :], axis=2)
        return (full.reshape(B, T_out * factor, D)[:, :T],)

    return _make(out, (a,), backward)


def pooled_lengths(lengths, factor):
    return [-(-int(n) // factor) for n in lengths]


# convolutions ------------------------------------------------------------

def pad_time(a, left, right, left_value=0.0, right_value=0.0):
    """Pad axis 1 of a (B, T, C) tensor with constants."""
    B, _, C = a.shape
    parts = []
    if left:
        parts.append(constant(np.full((B, left, C), left_value), a.data.dtype))
    parts.append(a)
    if right:
        parts.append(constant(np.full((B, right, C), right_value), a.data.dtype))
    return concat(parts, axis=1) if len(parts) > 1 else a


def conv1d(x, weight, bias=None):
    """Valid cross-correlation over time: x (B, T, C), weight (O, C, K)."""
    B, T, C = x.shape
    O, C2, K = weight.shape
    if C != C2 or T < K:
        raise ShapeError("conv1d", x.shape, weight.shape)
    T_out = T - K + 1
    cols = np.lib.stride_tricks.sliding_window_view(x.data, K, axis=1).reshape(B * T_out, C * K)
    w2 = weight.data.reshape(O, C * K)
    out = (cols @ w2.T).reshape(B, T_out, O)
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        g2 = g.reshape(B * T_out, O)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ w2).reshape(B, T_out, C, K)
        gx = np.zeros_like(x.data)
        for k in range(K):
            gx[:, k:k + T_out, :] += gcols[:, :, :, k]
        grads = (gx, gw)
        if bias is not None:
            grads += (g2.sum(axis=0),)
        return grads

    return _make(out, parents, backward)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation: x (B, C, H, W), weight (O, C, kh, kw)."""
    B, C, H, W = x.shape
    O, C2, kh, kw = weight.shape
    if C != C2:
        raise ShapeError("conv2d", x.shape, weight.shape)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Hp, Wp = xp.shape[2:]
    if Hp < kh or Wp < kw:
        raise ShapeError("conv2d", x.shape, weight.shape)
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    w2 = weight.data.reshape(O, -1)
    out = (cols @ w2.T).reshape(B, Ho, Wo, O)
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ w2).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + H, padding:padding + W]
        grads = (gx, gw)
        if bias is not None:
            grads += (g2.sum(axis=0),)
        return grads

    return _make(np.ascontiguousarray(out), parents, backward)


# recurrent ----------------------------------------------------------------

def lstm_sequence(x, W, U, b, h0=None, c0=None):
    """Run an LSTM over a (B, T, D) batch; returns hidden states (B, T, H)."""
    B, T, D = x.shape
    H = U.shape[0]
    if W.shape != (D, 4 * H) or U.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError("lstm", x.shape, W.shape, U.shape, b.shape)
    dt = x.data.dtype
    h_init = np.zeros((B, H), dt) if h0 is None else h0.data.astype(dt)
    c_init = np.zeros((B, H), dt) if c0 is None else c0.data.astype(dt)
    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2))
    hs, cs, acts = kernels.lstm_forward(xt, W.data, U.data, b.data, h_init, c_init)
    out = hs[1:].transpose(1, 0, 2)
    parents = [x, W, U, b]
    if h0 is not None:
        parents += [h0, c0]

    def backward(g):
        dhs = np.ascontiguousarray(g.transpose(1, 0, 2))
        dx, dW, dU, db, dh0, dc0 = kernels.lstm_backward(dhs, xt, W.data, U.data, hs, cs, acts)
        grads = (dx.transpose(1, 0, 2), dW, dU, db)
        if h0 is not None:
            grads += (dh0, dc0)
        return grads

    return _make(np.ascontiguousarray(out), parents, backward)
