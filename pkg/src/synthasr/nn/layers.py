"""Parameterised layers built on :mod:`synthasr.nn.tensor`."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor, get_default_dtype


def glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(get_default_dtype())


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


class Module:
    """Parameter container. Parameters, sub-modules and lists of sub-modules
    assigned as attributes are discovered in assignment order."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        if strict:
            missing = set(own) - set(state)
            unexpected = set(state) - set(own)
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in own.items():
            if name in state:
                value = np.asarray(state[name])
                if value.shape != p.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
                p.data = value.astype(p.data.dtype)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def n_parameters(self):
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, n_in, n_out, bias=True, seed=0):
        rng = _rng(seed)
        self.weight = Parameter(glorot(rng, (n_in, n_out), n_in, n_out))
        self.bias = Parameter(np.zeros(n_out, get_default_dtype())) if bias else None

    def __call__(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, n_symbols, dim, seed=0):
        self.weight = Parameter(_rng(seed).normal(0, 0.3, (n_symbols, dim)).astype(get_default_dtype()))

    def __call__(self, ids):
        return T.embedding(self.weight, ids)


class Conv1d(Module):
    """Time convolution over (B, T, C). ``same`` padding with constants; the
    left and right fill values are independent."""

    def __init__(self, n_in, n_out, width, seed=0):
        rng = _rng(seed)
        self.width = width
        self.weight = Parameter(glorot(rng, (n_out, n_in, width), n_in * width, n_out * width))
        self.bias = Parameter(np.zeros(n_out, get_default_dtype()))

    def __call__(self, x, left_value=0.0, right_value=0.0):
        left = (self.width - 1) // 2
        right = self.width - 1 - left
        return T.conv1d(T.pad_time(x, left, right, left_value, right_value), self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, n_in, n_out, kernel=3, stride=2, padding=1, seed=0):
        rng = _rng(seed)
        self.stride, self.padding = stride, padding
        fan = n_in * kernel * kernel
        self.weight = Parameter(glorot(rng, (n_out, n_in, kernel, kernel), fan, n_out * kernel * kernel))
        self.bias = Parameter(np.zeros(n_out, get_default_dtype()))

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def _lstm_params(rng, n_in, hidden, forget_bias):
    W = glorot(rng, (n_in, 4 * hidden), n_in, 4 * hidden)
    U = glorot(rng, (hidden, 4 * hidden), hidden, 4 * hidden)
    b = np.zeros(4 * hidden, get_default_dtype())
    b[hidden:2 * hidden] = forget_bias
    return Parameter(W), Parameter(U), Parameter(b)


class LSTM(Module):
    """Unidirectional LSTM over a padded (B, T, D) batch."""

    def __init__(self, n_in, hidden, seed=0, forget_bias=1.0):
        self.hidden = hidden
        self.W, self.U, self.b = _lstm_params(_rng(seed), n_in, hidden, forget_bias)

    def __call__(self, x, lengths=None):
        hs = T.lstm_sequence(x, self.W, self.U, self.b)
        if lengths is not None:
            hs = hs * T.length_mask(lengths, x.shape[1], hs.dtype)[:, :, None]
        return hs


class BLSTM(Module):
    """Forward and backward LSTMs, outputs concatenated (B, T, 2H). The
    backward direction reverses each sequence within its own length."""

    def __init__(self, n_in, hidden, seed=0):
        rng = _rng(seed)
        self.fwd = LSTM(n_in, hidden, rng)
        self.bwd = LSTM(n_in, hidden, rng)

    def __call__(self, x, lengths=None):
        B, n_steps = x.shape[:2]
        if lengths is None:
            lengths = [n_steps] * B
        perm = T.reverse_within_lengths(lengths, n_steps)
        f = self.fwd(x, lengths)
        b = T.permute_time(self.bwd(T.permute_time(x, perm), lengths), perm)
        return T.concat([f, b], axis=-1)


class LSTMCell(Module):
    """Single LSTM step, for decoders whose input depends on the previous
    output."""

    def __init__(self, n_in, hidden, seed=0, forget_bias=1.0):
        self.hidden = hidden
        self.W, self.U, self.b = _lstm_params(_rng(seed), n_in, hidden, forget_bias)

    def initial_state(self, batch, dtype=None):
        z = np.zeros((batch, self.hidden), dtype or self.W.dtype)
        return Tensor(z), Tensor(z.copy())

    def __call__(self, x, state, x_proj=None):
        """``x_proj`` may carry a precomputed ``x @ W`` to skip that product."""
        h, c = state
        H = self.hidden
        z = (x_proj if x_proj is not None else x @ self.W) + h @ self.U + self.b
        i = T.sigmoid(z[:, :H])
        f = T.sigmoid(z[:, H:2 * H])
        g = T.tanh(z[:, 2 * H:3 * H])
        o = T.sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * T.tanh(c)
        return h, c
