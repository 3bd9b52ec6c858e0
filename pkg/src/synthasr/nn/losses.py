"""Training criteria.

Reductions: L1 and BCE average over elements, CE averages over label
positions, CTC sums over each utterance and averages over the batch. The
optional ``weights`` arrays mask padding out of the averages.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from . import tensor as T
from .tensor import Tensor, as_tensor


class CtcInfeasibleError(ValueError):
    """The input is too short to emit the label sequence."""


def _weighted_mean(values: Tensor, weights):
    if weights is None:
        return values.mean()
    w = np.broadcast_to(np.asarray(weights, dtype=values.dtype), values.shape)
    total = w.sum()
    if total <= 0:
        raise ValueError("loss weights sum to zero")
    return (values * w).sum() * (1.0 / total)


def l1_loss(pred, target, weights=None):
    target = as_tensor(target, pred)
    if pred.shape != target.shape:
        raise T.ShapeError("l1_loss", pred.shape, target.shape)
    return _weighted_mean(T.tabs(pred - target), weights)


def bce_loss(pred, target, weights=None, eps=1e-7):
    """Binary cross-entropy on probabilities; predictions are clamped to
    [eps, 1 - eps]."""
    target = as_tensor(target, pred)
    if pred.shape != target.shape:
        raise T.ShapeError("bce_loss", pred.shape, target.shape)
    p = T.clamp(pred, eps, 1 - eps)
    ll = target * T.log(p) + (1.0 - target) * T.log(1.0 - p)
    return -_weighted_mean(ll, weights)


def ce_loss(logits, labels, weights=None):
    """Mean negative log-softmax of ``labels`` over all positions of
    ``logits`` (..., V)."""
    labels = np.asarray(labels, dtype=np.int64)
    V = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise T.ShapeError("ce_loss", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= V):
        raise IndexError(f"ce_loss: label outside vocabulary of size {V}")
    flat = T.log_softmax(logits, axis=-1).reshape(-1, V)
    picked = flat[np.arange(labels.size), labels.reshape(-1)]
    w = None if weights is None else np.asarray(weights).reshape(-1)
    return -_weighted_mean(picked, w)


def ctc_loss(log_probs, labels, input_lengths=None, blank=None):
    """Connectionist temporal classification loss.

    ``log_probs`` is (T, K) for one utterance or (B, T, K) for a batch, with
    ``labels`` a sequence or a list of sequences. ``blank`` defaults to the
    last index. Per-utterance losses are summed over time and averaged over
    the batch.
    """
    single = log_probs.ndim == 2
    lp = log_probs.reshape(1, *log_probs.shape) if single else log_probs
    if single:
        labels = [labels]
    B, n_steps, K = lp.shape
    if blank is None:
        blank = K - 1
    if input_lengths is None:
        input_lengths = [n_steps] * B
    if len(labels) != B:
        raise T.ShapeError("ctc_loss", lp.shape, (len(labels),))
    total = 0.0
    grad = np.zeros(lp.shape, dtype=np.float64)
    for b in range(B):
        lab = np.asarray(labels[b], dtype=np.int64)
        n = int(input_lengths[b])
        if lab.size and (lab.min() < 0 or lab.max() >= K or np.any(lab == blank)):
            raise IndexError("ctc_loss: label outside vocabulary or equal to blank")
        if n < kernels.ctc_min_length(lab):
            raise CtcInfeasibleError(f"utterance {b}: {n} frames cannot emit {len(lab)} labels")
        nll, g = kernels.ctc_forward_backward(lp.data[b, :n], lab, blank)
        total += nll
        grad[b, :n] = g
    out = np.asarray(total / B, dtype=lp.dtype)

    def backward(gout):
        return ((gout * grad / B).astype(lp.dtype),)

    res = T._make(out, (lp,), backward)
    return res
