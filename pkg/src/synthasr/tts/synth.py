"""Greedy synthesis loop and the mel-to-linear inference path."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..dsp import FeatureMatrix, NormStats, invert_norm
from ..nn import tensor as T
from ..text import DEFAULT_VOCAB, normalize_text
from .model import MelToLinearNet, Tacotron

STOP_THRESHOLD = 0.4
EXTRA_STEPS = 5


class StopController:
    """Ends decoding a fixed number of steps after the stop value first
    exceeds the threshold, or at ``max_steps``."""

    def __init__(self, max_steps, threshold=STOP_THRESHOLD, extra_steps=EXTRA_STEPS):
        self.max_steps = max_steps
        self.threshold = threshold
        self.extra_steps = extra_steps
        self.steps = 0
        self.first_crossing = None
        self.truncated = False

    def update(self, stop_value) -> bool:
        """Record the stop value of the step just taken; True when finished."""
        self.steps += 1
        if self.first_crossing is None and stop_value > self.threshold:
            self.first_crossing = self.steps
        if self.first_crossing is not None and self.steps >= self.first_crossing + self.extra_steps:
            return True
        if self.steps >= self.max_steps:
            self.truncated = True
            return True
        return False


@dataclass
class SynthesisResult:
    mel: FeatureMatrix           # normalised log-mel, T x n_mels
    steps: int
    truncated: bool
    first_crossing: int | None
    stops: np.ndarray
    alignments: np.ndarray = field(repr=False)


def synthesize(model: Tacotron, text: str, speaker_embedding, max_steps=200, frame_rate=80.0,
               vocab=DEFAULT_VOCAB) -> SynthesisResult:
    """Free-running decoding (previous predicted frame fed back)."""
    norm = normalize_text(text, vocab)
    if len(norm) <= 1:
        raise ValueError("nothing to synthesize after text normalisation")
    ids = np.asarray([vocab.encode(norm)])
    with nn.no_grad():
        spk = T.as_tensor(np.asarray(speaker_embedding, dtype=model.gst.tokens.dtype).reshape(1, -1))
        H = model.encode(ids, [ids.shape[1]], spk)
        keys = model.decoder.attention.preprocess(H)
        state = model.decoder.initial_state(H)
        weights = model.decoder.input_weights()
        ctl = StopController(max_steps)
        frames, stops, aligns = [], [], []
        while True:
            f, s, a, state = model.decoder.step(state, H, keys, weights=weights)
            frames.append(f.data[0])
            stops.append(float(s.data[0]))
            aligns.append(a.data[0])
            if ctl.update(stops[-1]):
                break
    mel = np.concatenate(frames, axis=0)
    return SynthesisResult(FeatureMatrix(mel, "log_mel", frame_rate), ctl.steps, ctl.truncated,
                           ctl.first_crossing, np.asarray(stops), np.stack(aligns))


def mel_to_linear(net: MelToLinearNet, mel, linear_stats: NormStats) -> np.ndarray:
    """Normalised log-mel (T x 80) to linear magnitudes (T x 512) with the
    DC bin excluded; output is denormalised and clamped at zero."""
    data = mel.data if isinstance(mel, FeatureMatrix) else np.asarray(mel)
    if data.ndim != 2 or data.shape[1] != net.n_mels:
        raise T.ShapeError("mel_to_linear", data.shape, (net.n_mels,))
    with nn.no_grad():
        pred = net(data.astype(net.inp.weight.dtype)).data[0]
    return np.maximum(invert_norm(pred.astype(np.float64), linear_stats), 0.0)
