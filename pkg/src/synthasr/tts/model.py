"""Tacotron-style synthesis network.

Character encoder (3 convolutions + BLSTM), global-style-token speaker
embedding, MLP attention with convolutional feedback over the summed
previous alignments, a two-layer LSTM decoder emitting three mel frames per
step plus a stop probability, and a separate mel-to-linear network.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import nn
from ..nn import tensor as T
from ..nn.layers import _rng, glorot
from ..nn.tensor import Parameter, Tensor, get_default_dtype
from ..text import DEFAULT_VOCAB

NEG_BIG = -1e9


@dataclass
class TtsConfig:
    n_symbols: int = len(DEFAULT_VOCAB)
    char_embed: int = 128
    conv_filters: int = 128
    conv_width: int = 5
    conv_layers: int = 3
    enc_hidden: int = 128
    speaker_dim: int = 128
    n_tokens: int = 100
    ref_filters: tuple = (8, 8, 16, 16, 32, 32)
    ref_hidden: int = 128
    gst_att_dim: int = 128
    att_dim: int = 128
    posenc_dim: int = 64
    feedback_filters: int = 32
    feedback_width: int = 31
    dec_hidden: int = 256
    n_mels: int = 80
    frames_per_step: int = 3
    seed: int = 0

    @property
    def enc_dim(self):
        return 2 * self.enc_hidden + self.speaker_dim

    def to_dict(self):
        d = asdict(self)
        d["ref_filters"] = list(self.ref_filters)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "ref_filters" in d:
            d["ref_filters"] = tuple(d["ref_filters"])
        return cls(**d)


def posenc(j, dim=64) -> np.ndarray:
    """Sinusoidal position code with interleaved sin/cos, base 10000."""
    j = np.asarray(j, dtype=np.float64)
    rates = 1.0 / 10000.0 ** (np.arange(0, dim, 2) / dim)
    angles = j[..., None] * rates
    out = np.empty(j.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def stop_targets(n_steps: int, ramp=(0.2, 0.4, 0.6, 0.8, 1.0)) -> np.ndarray:
    """Zeros followed by the rising ramp ending on the last step; sequences
    shorter than the ramp keep its tail."""
    out = np.zeros(n_steps)
    k = min(n_steps, len(ramp))
    if k:
        out[n_steps - k:] = ramp[len(ramp) - k:]
    return out


class TtsEncoder(nn.Module):
    def __init__(self, cfg: TtsConfig, rng):
        self.embed = nn.Embedding(cfg.n_symbols, cfg.char_embed, rng)
        dims = [cfg.char_embed] + [cfg.conv_filters] * cfg.conv_layers
        self.convs = [nn.Conv1d(dims[i], dims[i + 1], cfg.conv_width, rng) for i in range(cfg.conv_layers)]
        self.blstm = nn.BLSTM(cfg.conv_filters, cfg.enc_hidden, rng)

    def __call__(self, ids, lengths, speaker):
        """``ids`` (B, J) int, ``speaker`` (B, S) -> states (B, J, 2H + S)."""
        B, J = ids.shape
        if J == 0:
            raise ValueError("cannot encode empty text")
        mask = T.length_mask(lengths, J, self.embed.weight.dtype)[:, :, None]
        x = self.embed(ids) * mask
        for conv in self.convs:
            x = T.relu(conv(x)) * mask
        h = self.blstm(x, lengths)
        spk = speaker.reshape(B, 1, speaker.shape[-1]) * np.ones((1, J, 1), h.dtype)
        return T.concat([h, spk], axis=-1)


class StyleTokenBank(nn.Module):
    """Reference encoder (strided 2-D convolutions + LSTM) attending over a
    bank of learned style tokens."""

    MIN_FRAMES = 64

    def __init__(self, cfg: TtsConfig, rng):
        chans = [1] + list(cfg.ref_filters)
        self.convs = [nn.Conv2d(chans[i], chans[i + 1], 3, 2, 1, rng) for i in range(len(cfg.ref_filters))]
        freq = cfg.n_mels
        for _ in cfg.ref_filters:
            freq = -(-freq // 2)
        self.lstm = nn.LSTM(chans[-1] * freq, cfg.ref_hidden, rng)
        self.tokens = Parameter(rng.normal(0, 0.3, (cfg.n_tokens, cfg.speaker_dim)).astype(get_default_dtype()))
        self.query = nn.Linear(cfg.ref_hidden, cfg.gst_att_dim, seed=rng)
        self.key = nn.Linear(cfg.speaker_dim, cfg.gst_att_dim, bias=False, seed=rng)
        self.att_dim = cfg.gst_att_dim

    def weights(self, ref, lengths=None):
        """Attention weights over the token bank, (B, n_tokens)."""
        ref = T.as_tensor(ref)
        if ref.ndim == 2:
            ref = ref.reshape(1, *ref.shape)
        B, n_frames, F = ref.shape
        if n_frames == 0:
            raise ValueError("empty reference utterance")
        if lengths is None:
            lengths = [n_frames] * B
        if n_frames < self.MIN_FRAMES:
            ref = T.pad_time(ref, 0, self.MIN_FRAMES - n_frames)
            n_frames = self.MIN_FRAMES
        x = ref.reshape(B, 1, n_frames, F)
        lens = [max(int(n), 1) for n in lengths]
        for conv in self.convs:
            x = T.relu(conv(x))
            lens = [-(-n // 2) for n in lens]
        _, C, Tr, Fr = x.shape
        seq = x.transpose(0, 2, 1, 3).reshape(B, Tr, C * Fr)
        hs = self.lstm(seq)
        last = hs[np.arange(B), np.minimum(lens, Tr) - 1]
        scores = self.query(last) @ self.key(self.tokens).transpose(1, 0) * (1.0 / np.sqrt(self.att_dim))
        return T.softmax(scores, axis=-1)

    def __call__(self, ref, lengths=None):
        return self.weights(ref, lengths) @ self.tokens


class AttentionModule(nn.Module):
    """Energy ``v . tanh(W_s s + W_h h_j + W_p posenc(j) + W_g gamma_j)`` with
    ``gamma`` the convolution of the summed previous alignments. The feedback
    convolution sees ones before the first encoder position (those positions
    count as already attended) and zeros after the last."""

    def __init__(self, query_dim, enc_dim, att_dim=128, posenc_dim=64, filters=32, width=31,
                 seed=0, pad_before=1.0, use_posenc=True):
        rng = _rng(seed)
        self.W_s = Parameter(glorot(rng, (query_dim, att_dim), query_dim, att_dim))
        self.W_h = Parameter(glorot(rng, (enc_dim, att_dim), enc_dim, att_dim))
        self.W_p = Parameter(glorot(rng, (posenc_dim, att_dim), posenc_dim, att_dim)) if use_posenc else None
        self.W_g = Parameter(glorot(rng, (filters, att_dim), filters, att_dim))
        self.feedback = Parameter(glorot(rng, (filters, 1, width), width, filters * width))
        self.v = Parameter(glorot(rng, (att_dim, 1), att_dim, 1))
        self.posenc_dim = posenc_dim
        self.width = width
        self.pad_before = pad_before

    def preprocess(self, H):
        """Position-dependent part of the energy, shared by all steps."""
        J = H.shape[1]
        keys = H @ self.W_h
        if self.W_p is not None:
            keys = keys + T.as_tensor(posenc(np.arange(J), self.posenc_dim).astype(H.dtype)) @ self.W_p
        return keys

    def feedback_features(self, accum):
        """gamma (B, J, filters) from the alignment sum (B, J)."""
        B, J = accum.shape
        left = (self.width - 1) // 2
        x = T.pad_time(accum.reshape(B, J, 1), left, self.width - 1 - left, self.pad_before, 0.0)
        return T.conv1d(x, self.feedback)

    def energies(self, s, keys, accum):
        B, J = accum.shape
        q = (s @ self.W_s).reshape(B, 1, -1)
        gamma = self.feedback_features(accum)
        z = T.tanh(keys + q + gamma @ self.W_g)
        return (z @ self.v).reshape(B, J)

    def __call__(self, s, H, accum, keys=None, mask=None):
        """Returns ``(context, weights, new_accum)``."""
        if accum.shape != H.shape[:2]:
            raise T.ShapeError("attention", accum.shape, H.shape)
        if keys is None:
            keys = self.preprocess(H)
        e = self.energies(s, keys, accum)
        if mask is not None:
            e = e + (1.0 - mask) * NEG_BIG
        alpha = T.softmax(e, axis=-1)
        B, J = alpha.shape
        context = (alpha.reshape(B, 1, J) @ H).reshape(B, H.shape[-1])
        return context, alpha, accum + alpha


@dataclass
class DecoderState:
    lstm1: tuple
    lstm2: tuple
    context: Tensor
    accum: Tensor
    frame: Tensor


class TtsDecoder(nn.Module):
    def __init__(self, cfg: TtsConfig, rng):
        self.cfg = cfg
        r, m = cfg.frames_per_step, cfg.n_mels
        self.lstm1 = nn.LSTMCell(m + cfg.enc_dim, cfg.dec_hidden, rng)
        self.lstm2 = nn.LSTMCell(cfg.dec_hidden, cfg.dec_hidden, rng)
        self.attention = AttentionModule(cfg.dec_hidden, cfg.enc_dim, cfg.att_dim, cfg.posenc_dim,
                                         cfg.feedback_filters, cfg.feedback_width, rng)
        self.out = nn.Linear(cfg.dec_hidden + cfg.enc_dim, r * m, seed=rng)
        self.stop = nn.Linear(cfg.dec_hidden + cfg.enc_dim, 1, seed=rng)

    def initial_state(self, H):
        B, J, D = H.shape
        dt = H.dtype
        return DecoderState(self.lstm1.initial_state(B, dt), self.lstm2.initial_state(B, dt),
                            Tensor(np.zeros((B, D), dt)), Tensor(np.zeros((B, J), dt)),
                            Tensor(np.zeros((B, self.cfg.n_mels), dt)))

    def input_weights(self):
        """Rows of the first LSTM's input matrix acting on the previous frame
        and on the previous context."""
        m = self.cfg.n_mels
        return self.lstm1.W[:m], self.lstm1.W[m:]

    def step(self, state: DecoderState, H, keys, mask=None, frame_proj=None, weights=None):
        """One decoder step: returns ``(frames (B, r, n_mels), stop (B,),
        alpha (B, J), new_state)``. ``frame_proj`` may hold the previous
        frame already multiplied by the frame rows of the first LSTM;
        ``weights`` caches :meth:`input_weights` across steps."""
        m = self.cfg.n_mels
        W_frame, W_ctx = weights or self.input_weights()
        if frame_proj is None:
            frame_proj = state.frame @ W_frame
        x_proj = frame_proj + state.context @ W_ctx
        h1, c1 = self.lstm1(None, state.lstm1, x_proj=x_proj)
        h2, c2 = self.lstm2(h1, state.lstm2)
        context, alpha, accum = self.attention(h2, H, state.accum, keys, mask)
        feat = T.concat([h2, context], axis=-1)
        B = feat.shape[0]
        frames = self.out(feat).reshape(B, self.cfg.frames_per_step, m)
        stop = T.sigmoid(self.stop(feat)).reshape(B)
        new = DecoderState((h1, c1), (h2, c2), context, accum, frames[:, -1, :])
        return frames, stop, alpha, new


class Tacotron(nn.Module):
    def __init__(self, cfg: TtsConfig = TtsConfig()):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.encoder = TtsEncoder(cfg, rng)
        self.gst = StyleTokenBank(cfg, rng)
        self.decoder = TtsDecoder(cfg, rng)

    def speaker_embedding(self, ref=None, ref_lengths=None, vector=None):
        if vector is not None:
            v = T.as_tensor(np.asarray(vector, dtype=self.gst.tokens.dtype))
            return v.reshape(1, -1) if v.ndim == 1 else v
        return self.gst(ref, ref_lengths)

    def encode(self, ids, lengths, speaker):
        return self.encoder(np.asarray(ids), lengths, speaker)

    def teacher_forced(self, ids, text_lengths, mels, n_steps, speaker):
        """Decode against ground truth. ``mels`` (B, N * r, n_mels) already
        padded to whole steps. Returns predicted frames (B, N * r, n_mels),
        stop probabilities (B, N) and the alignments (B, N, J)."""
        H = self.encode(ids, text_lengths, speaker)
        B, J, _ = H.shape
        r, m = self.cfg.frames_per_step, self.cfg.n_mels
        mask = T.length_mask(text_lengths, J, H.dtype)
        keys = self.decoder.attention.preprocess(H)
        mels = np.asarray(mels, dtype=H.dtype)
        # step i reads the last ground-truth frame of step i-1 (zeros at i=0)
        prev = np.concatenate([np.zeros((B, 1, m), H.dtype), mels[:, r - 1::r, :][:, :n_steps - 1, :]], axis=1)
        weights = self.decoder.input_weights()
        state = self.decoder.initial_state(H)
        frames, stops, aligns = [], [], []
        for i in range(n_steps):
            frame_proj = T.constant(prev[:, i, :], H.dtype) @ weights[0]
            f, s, a, state = self.decoder.step(state, H, keys, mask, frame_proj, weights)
            frames.append(f)
            stops.append(s)
            aligns.append(a)
        return (T.concat(frames, axis=1), T.stack(stops, axis=1), T.stack(aligns, axis=1))


def tts_loss(pred_mels, pred_stops, target_mels, target_stops, frame_mask=None, step_mask=None):
    """L1 on spectral frames plus binary cross-entropy on stop values, unit
    weights."""
    if pred_mels.shape != np.shape(target_mels) or pred_stops.shape != np.shape(target_stops):
        raise T.ShapeError("tts_loss", pred_mels.shape, np.shape(target_mels), pred_stops.shape,
                           np.shape(target_stops))
    fm = None if frame_mask is None else np.asarray(frame_mask)[:, :, None]
    return nn.l1_loss(pred_mels, target_mels, fm) + nn.bce_loss(pred_stops, target_stops, step_mask)


class MelToLinearNet(nn.Module):
    """Input projection, two residual BLSTM blocks, output projection to the
    non-DC linear bins."""

    def __init__(self, n_mels=80, hidden=128, n_linear=512, seed=0):
        rng = _rng(seed)
        width = 2 * hidden
        self.n_mels = n_mels
        self.inp = nn.Linear(n_mels, width, seed=rng)
        self.blocks = [nn.BLSTM(width, hidden, rng) for _ in range(2)]
        self.out = nn.Linear(width, n_linear, seed=rng)

    def __call__(self, mel, lengths=None):
        mel = T.as_tensor(mel)
        if mel.shape[-1] != self.n_mels:
            raise T.ShapeError("mel_to_linear", mel.shape, (self.n_mels,))
        if mel.ndim == 2:
            mel = mel.reshape(1, *mel.shape)
        x = self.inp(mel)
        for block in self.blocks:
            x = x + block(x, lengths)
        return self.out(x)
