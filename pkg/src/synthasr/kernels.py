"""Hot numeric inner loops.

Every kernel comes in two flavours: an explicit-loop version that numba
compiles, and a vectorised numpy version. ``HAVE_NUMBA`` picks which one the
public wrappers call; both are importable so tests and the benchmark can
compare them directly.
"""
import math

import numpy as np

from ._accel import HAVE_NUMBA, njit

NEG_INF = -np.inf


# --------------------------------------------------------------------------
# CTC forward-backward in log space
# --------------------------------------------------------------------------

@njit
def _lse2(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit
def _ctc_loops(log_probs, ext, blank):
    T, K = log_probs.shape
    S = ext.shape[0]
    la = np.full((T, S), -np.inf)
    lb = np.full((T, S), -np.inf)
    la[0, 0] = log_probs[0, ext[0]]
    if S > 1:
        la[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            a = la[t - 1, s]
            if s > 0:
                a = _lse2(a, la[t - 1, s - 1])
            if s > 1 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = _lse2(a, la[t - 1, s - 2])
            if a != -np.inf:
                la[t, s] = a + log_probs[t, ext[s]]
    lb[T - 1, S - 1] = log_probs[T - 1, ext[S - 1]]
    if S > 1:
        lb[T - 1, S - 2] = log_probs[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            b = lb[t + 1, s]
            if s + 1 < S:
                b = _lse2(b, lb[t + 1, s + 1])
            if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                b = _lse2(b, lb[t + 1, s + 2])
            if b != -np.inf:
                lb[t, s] = b + log_probs[t, ext[s]]
    log_p = la[T - 1, S - 1]
    if S > 1:
        log_p = _lse2(log_p, la[T - 1, S - 2])
    occ = np.full((T, K), -np.inf)
    for t in range(T):
        for s in range(S):
            v = la[t, s] + lb[t, s]
            if v != -np.inf:
                occ[t, ext[s]] = _lse2(occ[t, ext[s]], v)
    grad = np.zeros((T, K))
    for t in range(T):
        for k in range(K):
            if occ[t, k] != -np.inf:
                grad[t, k] = -math.exp(occ[t, k] - log_probs[t, k] - log_p)
    return -log_p, grad


def _ctc_numpy(log_probs, ext, blank):
    T, K = log_probs.shape
    S = ext.shape[0]
    emit = log_probs[:, ext]  # T x S
    # transitions from s-2 are allowed for non-blank symbols differing from s-2
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    skip_back = np.zeros(S, dtype=bool)
    skip_back[:-2] = skip[2:]
    la = np.full((T, S), -np.inf)
    lb = np.full((T, S), -np.inf)
    la[0, :min(2, S)] = emit[0, :min(2, S)]
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            prev = la[t - 1]
            a = prev.copy()
            a[1:] = np.logaddexp(a[1:], prev[:-1])
            two = np.full(S, -np.inf)
            two[2:] = np.where(skip[2:], prev[:-2], -np.inf)
            a = np.logaddexp(a, two)
            la[t] = a + emit[t]
        lb[T - 1, max(0, S - 2):] = emit[T - 1, max(0, S - 2):]
        for t in range(T - 2, -1, -1):
            nxt = lb[t + 1]
            b = nxt.copy()
            b[:-1] = np.logaddexp(b[:-1], nxt[1:])
            two = np.full(S, -np.inf)
            two[:-2] = np.where(skip_back[:-2], nxt[2:], -np.inf)
            b = np.logaddexp(b, two)
            lb[t] = b + emit[t]
        log_p = np.logaddexp.reduce(la[T - 1, max(0, S - 2):])
        occ = np.full((T, K), -np.inf)
        both = la + lb
        for k in np.unique(ext):
            cols = both[:, ext == k]
            occ[:, k] = np.logaddexp.reduce(cols, axis=1)
        grad = np.where(np.isfinite(occ), -np.exp(occ - log_probs - log_p), 0.0)
    return -log_p, grad


def ctc_min_length(labels):
    """Shortest input length that can emit ``labels`` (repeats need a blank)."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_forward_backward(log_probs, labels, blank):
    """Negative log-likelihood and its gradient w.r.t. ``log_probs`` (T x K)."""
    log_probs = np.ascontiguousarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    if HAVE_NUMBA:
        return _ctc_loops(log_probs, ext, blank)
    return _ctc_numpy(log_probs, ext, blank)


# --------------------------------------------------------------------------
# Fused LSTM over a whole sequence (time-major, gate order i, f, g, o)
# --------------------------------------------------------------------------

@njit
def _sigmoid(z):
    one = np.ones_like(z)
    return one / (one + np.exp(-z))


@njit
def _lstm_forward_impl(x, W, U, b, h0, c0):
    T = x.shape[0]
    B = x.shape[1]
    H = U.shape[0]
    hs = np.empty((T + 1, B, H), dtype=x.dtype)
    cs = np.empty((T + 1, B, H), dtype=x.dtype)
    acts = np.empty((T, B, 4 * H), dtype=x.dtype)
    hs[0] = h0
    cs[0] = c0
    for t in range(T):
        z = np.dot(x[t], W) + np.dot(hs[t], U) + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c = f * cs[t] + i * g
        cs[t + 1] = c
        hs[t + 1] = o * np.tanh(c)
        acts[t, :, :H] = i
        acts[t, :, H:2 * H] = f
        acts[t, :, 2 * H:3 * H] = g
        acts[t, :, 3 * H:] = o
    return hs, cs, acts


@njit
def _lstm_backward_impl(dhs, x, W, U, hs, cs, acts):
    T = x.shape[0]
    B = x.shape[1]
    H = U.shape[0]
    dx = np.empty_like(x)
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * H, dtype=x.dtype)
    dh_next = np.zeros((B, H), dtype=x.dtype)
    dc_next = np.zeros((B, H), dtype=x.dtype)
    dz = np.empty((B, 4 * H), dtype=x.dtype)
    WT = np.ascontiguousarray(W.T)
    UT = np.ascontiguousarray(U.T)
    one = np.ones((B, H), dtype=x.dtype)
    for t in range(T - 1, -1, -1):
        i = acts[t, :, :H]
        f = acts[t, :, H:2 * H]
        g = acts[t, :, 2 * H:3 * H]
        o = acts[t, :, 3 * H:]
        dh = dhs[t] + dh_next
        tc = np.tanh(cs[t + 1])
        dc = dc_next + dh * o * (one - tc * tc)
        dz[:, :H] = dc * g * i * (one - i)
        dz[:, H:2 * H] = dc * cs[t] * f * (one - f)
        dz[:, 2 * H:3 * H] = dc * i * (one - g * g)
        dz[:, 3 * H:] = dh * tc * o * (one - o)
        dc_next = dc * f
        dx[t] = np.dot(dz, WT)
        dW += np.dot(np.ascontiguousarray(x[t].T), dz)
        dU += np.dot(np.ascontiguousarray(hs[t].T), dz)
        db += dz.sum(axis=0)
        dh_next = np.dot(dz, UT)
    return dx, dW, dU, db, dh_next, dc_next


def lstm_forward(x, W, U, b, h0, c0):
    """Run an LSTM over time-major ``x`` (T x B x D).

    Returns ``(hs, cs, acts)`` where ``hs``/``cs`` hold T+1 states including
    the initial one and ``acts`` caches gate activations for the backward pass.
    """
    x = np.ascontiguousarray(x)
    dt = x.dtype
    return _lstm_forward_impl(x, np.ascontiguousarray(W, dt), np.ascontiguousarray(U, dt),
                              np.ascontiguousarray(b, dt), np.ascontiguousarray(h0, dt),
                              np.ascontiguousarray(c0, dt))


def lstm_backward(dhs, x, W, U, hs, cs, acts):
    """Backpropagate output gradients ``dhs`` (T x B x H) through the LSTM."""
    dt = x.dtype
    return _lstm_backward_impl(np.ascontiguousarray(dhs, dt), np.ascontiguousarray(x),
                               np.ascontiguousarray(W, dt), np.ascontiguousarray(U, dt),
                               hs, cs, acts)


# --------------------------------------------------------------------------
# Band-limited (windowed-sinc) resampling
# --------------------------------------------------------------------------

@njit
def _resample_loops(x, step, cutoff, half):
    n_in = x.shape[0]
    n_out = int(round(n_in / step))
    y = np.zeros(n_out)
    reach = half / cutoff
    for k in range(n_out):
        t = k * step
        lo = max(0, int(math.ceil(t - reach)))
        hi = min(n_in - 1, int(math.floor(t + reach)))
        acc = 0.0
        for n in range(lo, hi + 1):
            d = t - n
            u = d / reach
            w = 0.42 + 0.5 * math.cos(math.pi * u) + 0.08 * math.cos(2.0 * math.pi * u)
            arg = cutoff * d
            s = 1.0 if arg == 0.0 else math.sin(math.pi * arg) / (math.pi * arg)
            acc += x[n] * cutoff * s * w
        y[k] = acc
    return y


def _resample_numpy(x, step, cutoff, half, chunk=4096):
    n_in = x.shape[0]
    n_out = int(round(n_in / step))
    reach = half / cutoff
    width = int(math.ceil(2 * reach)) + 2
    y = np.zeros(n_out)
    for start in range(0, n_out, chunk):
        t = np.arange(start, min(n_out, start + chunk)) * step
        first = np.ceil(t - reach).astype(np.int64)
        n = first[:, None] + np.arange(width)[None, :]
        d = t[:, None] - n
        valid = (n >= 0) & (n < n_in) & (np.abs(d) <= reach)
        u = d / reach
        w = 0.42 + 0.5 * np.cos(np.pi * u) + 0.08 * np.cos(2 * np.pi * u)
        h = cutoff * np.sinc(cutoff * d) * w
        y[start:start + len(t)] = np.sum(np.where(valid, h * x[np.clip(n, 0, n_in - 1)], 0.0), axis=1)
    return y


def sinc_resample(x, step, half_width=32):
    """Read ``x`` at positions ``k * step`` through a Blackman-windowed sinc.

    ``half_width`` counts zero crossings on each side of the kernel centre.
    The cutoff drops below Nyquist when ``step > 1`` to prevent aliasing.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    cutoff = min(1.0, 1.0 / step)
    if HAVE_NUMBA:
        return _resample_loops(x, float(step), cutoff, float(half_width))
    return _resample_numpy(x, float(step), cutoff, float(half_width))


# --------------------------------------------------------------------------
# Levenshtein table
# --------------------------------------------------------------------------

@njit
def _edit_table_loops(a, b):
    n = a.shape[0]
    m = b.shape[0]
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(n + 1):
        d[i, 0] = i
    for j in range(m + 1):
        d[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            best = d[i - 1, j - 1] + cost
            if d[i - 1, j] + 1 < best:
                best = d[i - 1, j] + 1
            if d[i, j - 1] + 1 < best:
                best = d[i, j - 1] + 1
            d[i, j] = best
    return d


def _edit_table_numpy(a, b):
    n, m = len(a), len(b)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[0] = np.arange(m + 1)
    ar = np.arange(m + 1)
    for i in range(1, n + 1):
        row = np.empty(m + 1, dtype=np.int64)
        row[0] = i
        row[1:] = np.minimum(d[i - 1, :-1] + (a[i - 1] != b), d[i - 1, 1:] + 1)
        # insertions chain left to right: row[j] = min_k<=j row[k] + (j - k)
        d[i] = np.minimum.accumulate(row - ar) + ar
    return d


def edit_table(a, b):
    """Unit-cost edit-distance table between integer sequences ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if HAVE_NUMBA:
        return _edit_table_loops(a, b)
    return _edit_table_numpy(a, b)


IMPLEMENTATIONS = {
    "ctc": (_ctc_loops, _ctc_numpy),
    "resample": (_resample_loops, _resample_numpy),
    "edit_table": (_edit_table_loops, _edit_table_numpy),
    "lstm_forward": (_lstm_forward_impl, getattr(_lstm_forward_impl, "py_func", _lstm_forward_impl)),
}
