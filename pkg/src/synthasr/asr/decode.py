"""Beam search with log-linear language-model fusion.

Each hypothesis carries its summed ASR and LM log-probabilities; the fused
score is ``asr + lm_weight * lm`` without length normalisation. A
hypothesis ends when it emits the end symbol (index 0). Search stops once
the best finished hypothesis scores at least as well as every active one:
with non-negative LM weight, extending a hypothesis can only lower its
score, so nothing left could overtake it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..nn import tensor as T
from .model import EOS, AsrDecoderState, AttentionAsr


@dataclass
class Hypothesis:
    tokens: tuple
    asr_score: float = 0.0
    lm_score: float = 0.0
    state: object = field(default=None, repr=False, compare=False)

    def score(self, lm_weight=0.0) -> float:
        return self.asr_score + lm_weight * self.lm_score


class AsrStepper:
    """Adapts a trained model to the search: encodes once, then scores the
    next token for a list of hypothesis states in one batched call."""

    def __init__(self, model: AttentionAsr, feats):
        self.model = model
        with nn.no_grad():
            data = feats.data if hasattr(feats, "data") and not isinstance(feats, np.ndarray) else feats
            data = np.asarray(data, dtype=model.ctc_head.weight.dtype)
            H, lens = model.encode(data)
            self.H = H.data[0]
            self.keys = model.decoder.attention.preprocess(H).data[0]
        self.n_frames = lens[0]
        self.vocab_size = model.cfg.vocab_size

    def initial(self):
        st = self.model.decoder.initial_state(T.constant(self.H[None], self.H.dtype))
        return tuple(x.data[0] for x in (st.h, st.c, st.context, st.accum))

    def advance(self, states, last_tokens):
        """Log-probabilities (k, V) of the next token and the new states."""
        k = len(states)
        dt = self.H.dtype
        stacked = [T.constant(np.stack([s[i] for s in states]), dt) for i in range(4)]
        H = T.constant(np.broadcast_to(self.H, (k,) + self.H.shape), dt)
        keys = T.constant(np.broadcast_to(self.keys, (k,) + self.keys.shape), dt)
        with nn.no_grad():
            logits, _, new = self.model.decoder.step(AsrDecoderState(*stacked), last_tokens, H, keys)
            logp = T.log_softmax(logits, axis=-1).data.astype(np.float64)
        parts = [new.h.data, new.c.data, new.context.data, new.accum.data]
        return logp, [tuple(p[i] for p in parts) for i in range(k)]


def _stepper(model, feats):
    return model if hasattr(model, "advance") else AsrStepper(model, feats)


def beam_search_all(model, feats=None, beam_size=12, lm=None, lm_weight=0.0, max_len=None):
    """Finished hypotheses, best first. ``model`` is an :class:`AttentionAsr`
    (with ``feats``) or any object with ``initial()``, ``advance()`` and
    ``vocab_size``. Hypotheses still open at ``max_len`` tokens are forced
    to end there."""
    if beam_size < 1:
        raise ValueError(f"beam size must be at least 1, got {beam_size}")
    if lm_weight < 0:
        raise ValueError("negative LM weight")
    step = _stepper(model, feats)
    if max_len is None:
        max_len = getattr(step, "n_frames", 50) + 1
    use_lm = lm is not None and lm_weight != 0.0
    active = [Hypothesis((), 0.0, 0.0, step.initial())]
    finished = []
    for t in range(max_len):
        logp, states = step.advance([h.state for h in active], [h.tokens[-1] if h.tokens else EOS for h in active])
        cands = []
        for i, hyp in enumerate(active):
            lmp = lm.log_probs(hyp.tokens) if use_lm else None
            tokens = [EOS] if t == max_len - 1 else range(step.vocab_size)
            for tok in tokens:
                a = hyp.asr_score + logp[i, tok]
                b = hyp.lm_score + (lmp[tok] if use_lm else 0.0)
                cands.append((-(a + lm_weight * b), hyp.tokens + (tok,), a, b, i))
        cands.sort(key=lambda c: (c[0], c[1]))
        active = []
        for _, toks, a, b, i in cands[:beam_size]:
            if toks[-1] == EOS:
                finished.append(Hypothesis(toks[:-1], a, b))
            else:
                active.append(Hypothesis(toks, a, b, states[i]))
        if not active:
            break
        if finished:
            best_done = max(h.score(lm_weight) for h in finished)
            if best_done >= max(h.score(lm_weight) for h in active):
                break
    finished.sort(key=lambda h: (-h.score(lm_weight), h.tokens))
    return finished


def beam_search(model, feats=None, beam_size=12, lm=None, lm_weight=0.0, max_len=None) -> list[int]:
    """Best token sequence (without the end symbol)."""
    return list(beam_search_all(model, feats, beam_size, lm, lm_weight, max_len)[0].tokens)


def greedy_decode(model, feats=None, lm=None, lm_weight=0.0, max_len=None) -> list[int]:
    """Arg-max token at every step (lowest index on ties)."""
    step = _stepper(model, feats)
    if max_len is None:
        max_len = getattr(step, "n_frames", 50) + 1
    state, tokens = step.initial(), []
    for t in range(max_len - 1):
        logp, states = step.advance([state], [tokens[-1] if tokens else EOS])
        fused = logp[0] + (lm_weight * lm.log_probs(tokens) if lm is not None and lm_weight else 0.0)
        tok = int(np.argmax(fused))
        if tok == EOS:
            break
        tokens.append(tok)
        state = states[0]
    return tokens


def sequence_log_prob(model: AttentionAsr, feats, tokens) -> float:
    """Teacher-forced ASR log-probability of ``tokens`` followed by the end
    symbol."""
    data = np.asarray(feats, dtype=model.ctc_head.weight.dtype)
    with nn.no_grad():
        H, lens = model.encode(data)
        target = np.asarray([list(tokens) + [EOS]])
        logits, _ = model.teacher_forced(H, lens, target)
        logp = T.log_softmax(logits, axis=-1).data[0].astype(np.float64)
    return float(logp[np.arange(target.shape[1]), target[0]].sum())


__all__ = ["AsrStepper", "Hypothesis", "beam_search", "beam_search_all", "greedy_decode",
           "sequence_log_prob"]
