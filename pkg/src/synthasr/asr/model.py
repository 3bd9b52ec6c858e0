"""Attention encoder-decoder recogniser with an auxiliary CTC head.

Encoder: stacked BLSTMs over MFCC frames with time max-pooling (factor 2)
after each of the first three layers, so the output rate is 1/8 of the
input. Decoder: one LSTM fed the previous token embedding and previous
context, MLP attention with feedback from the summed previous weights, and a
softmax over the subword vocabulary (index 0 is end-of-sentence). The CTC
head is a linear softmax layer on the encoder states with the blank at index
``vocab_size``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .. import kernels, nn
from ..nn import tensor as T
from ..nn.tensor import Tensor
from ..tts.model import AttentionModule

log = logging.getLogger(__name__)

EOS = 0


@dataclass
class AsrConfig:
    vocab_size: int = 64
    n_in: int = 40
    enc_layers: int = 6
    enc_hidden: int = 128
    pool_layers: int = 3
    pool_factor: int = 2
    dec_hidden: int = 128
    embed_dim: int = 64
    att_dim: int = 128
    feedback_filters: int = 16
    feedback_width: int = 5
    ctc_weight: float = 0.5
    seed: int = 0

    @classmethod
    def paper_scale(cls, vocab_size=10000, **kw):
        """Widths of the full-size system; far too large to train here."""
        return cls(vocab_size=vocab_size, enc_hidden=1024, dec_hidden=1000, att_dim=1024, embed_dim=621, **kw)

    @property
    def reduction(self):
        return self.pool_factor ** self.pool_layers

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def encoder_lengths(lengths, cfg: AsrConfig):
    """Frames left after each pooling stage (ceil at every stage)."""
    out = [int(n) for n in lengths]
    for _ in range(cfg.pool_layers):
        out = T.pooled_lengths(out, cfg.pool_factor)
    return out


class AsrEncoder(nn.Module):
    def __init__(self, cfg: AsrConfig, rng):
        self.cfg = cfg
        dims = [cfg.n_in] + [2 * cfg.enc_hidden] * cfg.enc_layers
        self.layers = [nn.BLSTM(dims[i], cfg.enc_hidden, rng) for i in range(cfg.enc_layers)]

    def __call__(self, x, lengths=None):
        """(B, T, n_in) -> ((B, ceil(T / 8), 2H), lengths)."""
        x = T.as_tensor(x)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        B, n_frames, D = x.shape
        if n_frames == 0:
            raise ValueError("cannot encode an empty feature matrix")
        if D != self.cfg.n_in:
            raise T.ShapeError("asr_encode", x.shape, (self.cfg.n_in,))
        lengths = [n_frames] * B if lengths is None else [int(n) for n in lengths]
        for i, layer in enumerate(self.layers):
            x = layer(x, lengths)
            if i < self.cfg.pool_layers:
                x = T.maxpool_time(x, self.cfg.pool_factor, lengths)
                lengths = T.pooled_lengths(lengths, self.cfg.pool_factor)
        return x, lengths


@dataclass
class AsrDecoderState:
    h: Tensor
    c: Tensor
    context: Tensor
    accum: Tensor


class AsrDecoder(nn.Module):
    def __init__(self, cfg: AsrConfig, rng):
        self.cfg = cfg
        enc_dim = 2 * cfg.enc_hidden
        self.embed = nn.Embedding(cfg.vocab_size, cfg.embed_dim, rng)
        self.lstm = nn.LSTMCell(cfg.embed_dim + enc_dim, cfg.dec_hidden, rng)
        # summed previous weights feed back through a zero-padded convolution
        self.attention = AttentionModule(cfg.dec_hidden, enc_dim, cfg.att_dim, 0, cfg.feedback_filters,
                                         cfg.feedback_width, rng, pad_before=0.0, use_posenc=False)
        self.out = nn.Linear(cfg.dec_hidden + enc_dim, cfg.vocab_size, seed=rng)

    def initial_state(self, H) -> AsrDecoderState:
        B, J, D = H.shape
        dt = H.dtype
        h, c = self.lstm.initial_state(B, dt)
        return AsrDecoderState(h, c, Tensor(np.zeros((B, D), dt)), Tensor(np.zeros((B, J), dt)))

    def step(self, state: AsrDecoderState, prev_tokens, H, keys, mask=None):
        """Returns ``(logits (B, V), alpha (B, J), new_state)``."""
        emb = self.embed(np.asarray(prev_tokens, dtype=np.int64))
        h, c = self.lstm(T.concat([emb, state.context], axis=-1), (state.h, state.c))
        context, alpha, accum = self.attention(h, H, state.accum, keys, mask)
        logits = self.out(T.concat([h, context], axis=-1))
        return logits, alpha, AsrDecoderState(h, c, context, accum)


class AttentionAsr(nn.Module):
    def __init__(self, cfg: AsrConfig = AsrConfig()):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.encoder = AsrEncoder(cfg, rng)
        self.decoder = AsrDecoder(cfg, rng)
        self.ctc_head = nn.Linear(2 * cfg.enc_hidden, cfg.vocab_size + 1, seed=rng)

    @property
    def blank(self):
        return self.cfg.vocab_size

    def encode(self, feats, lengths=None):
        return self.encoder(feats, lengths)

    def ctc_log_probs(self, H):
        return T.log_softmax(self.ctc_head(H), axis=-1)

    def prepare(self, H, lengths):
        """Per-utterance quantities shared by all decoder steps."""
        keys = self.decoder.attention.preprocess(H)
        mask = T.length_mask(lengths, H.shape[1], H.dtype)
        return keys, mask

    def teacher_forced(self, H, enc_lengths, targets):
        """``targets`` (B, L) each ending in EOS (padding arbitrary). Returns
        logits (B, L, V) and alignments (B, L, J)."""
        targets = np.asarray(targets, dtype=np.int64)
        B, L = targets.shape
        keys, mask = self.prepare(H, enc_lengths)
        prev = np.concatenate([np.full((B, 1), EOS, np.int64), targets[:, :-1]], axis=1)
        state = self.decoder.initial_state(H)
        logits, aligns = [], []
        for i in range(L):
            lg, a, state = self.decoder.step(state, prev[:, i], H, keys, mask)
            logits.append(lg)
            aligns.append(a)
        return T.stack(logits, axis=1), T.stack(aligns, axis=1)


def ctc_feasible(n_frames, labels, cfg: AsrConfig) -> bool:
    return encoder_lengths([n_frames], cfg)[0] >= kernels.ctc_min_length(np.asarray(labels, np.int64))


def make_asr_batch(examples, cfg: AsrConfig, dtype=np.float32):
    """Pad ``(features (T, n_in), tokens)`` pairs into a batch. Tokens exclude
    the end symbol, which is appended here. Utterances whose encoder output
    is too short for CTC are dropped with a warning; returns None if nothing
    is left."""
    kept = []
    for feats, tokens in examples:
        if ctc_feasible(len(feats), tokens, cfg):
            kept.append((feats, tokens))
        else:
            log.warning("skipping utterance: %d frames (%d after pooling) cannot emit %d tokens under CTC",
                        len(feats), encoder_lengths([len(feats)], cfg)[0], len(tokens))
    if not kept:
        return None
    B = len(kept)
    lengths = [len(f) for f, _ in kept]
    feats = np.zeros((B, max(lengths), cfg.n_in), dtype)
    L = max(len(t) for _, t in kept) + 1
    targets = np.full((B, L), EOS, np.int64)
    weights = np.zeros((B, L), dtype)
    for b, (f, t) in enumerate(kept):
        feats[b, :len(f)] = f
        targets[b, :len(t)] = t
        weights[b, :len(t) + 1] = 1
    return dict(feats=feats, lengths=lengths, targets=targets, weights=weights,
                labels=[np.asarray(t, np.int64) for _, t in kept])


def asr_loss(model: AttentionAsr, batch, ctc_weight=None):
    """Teacher-forced cross-entropy plus ``ctc_weight`` times CTC, both on
    the shared encoder."""
    w = model.cfg.ctc_weight if ctc_weight is None else ctc_weight
    H, enc_len = model.encode(batch["feats"].astype(model.ctc_head.weight.dtype), batch["lengths"])
    logits, _ = model.teacher_forced(H, enc_len, batch["targets"])
    loss = nn.ce_loss(logits, batch["targets"], batch["weights"])
    if w:
        ctc = nn.ctc_loss(model.ctc_log_probs(H), batch["labels"], enc_len, blank=model.blank)
        loss = loss + ctc * w
    return loss


__all__ = ["AsrConfig", "AsrDecoder", "AsrDecoderState", "AsrEncoder", "AttentionAsr", "EOS", "asr_loss",
           "ctc_feasible", "encoder_lengths", "make_asr_batch"]
