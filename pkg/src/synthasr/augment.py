"""Data augmentation: SpecAugment-style masking (no time warp), speed
perturbation and energy-based silence removal."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import FeatureMatrix, Waveform
from .kernels import sinc_resample

SPEED_FACTORS = (0.9, 0.95, 1.05, 1.1)


@dataclass(frozen=True)
class SpecAugmentParams:
    n_freq_masks: tuple = (1, 4)
    freq_mask_width: tuple = (1, 8)
    time_mask_count_max_frac: float = 1 / 50
    time_mask_max_len: int = 20
    mask_value: float = 0.0

    def __post_init__(self):
        for lo, hi in (self.n_freq_masks, self.freq_mask_width):
            if lo > hi or lo < 0:
                raise ValueError("empty range in SpecAugmentParams")
        if self.time_mask_max_len < 1:
            raise ValueError("time_mask_max_len must be >= 1")


@dataclass
class MaskRecord:
    freq_masks: list = field(default_factory=list)  # (start, width)
    time_masks: list = field(default_factory=list)  # (start, length)

    def mask(self, shape) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        for start, width in self.freq_masks:
            m[:, start:start + width] = True
        for start, length in self.time_masks:
            m[start:start + length, :] = True
        return m


def draw_masks(n_frames: int, n_feats: int, p: SpecAugmentParams, rng: np.random.Generator) -> MaskRecord:
    rec = MaskRecord()
    for _ in range(rng.integers(p.n_freq_masks[0], p.n_freq_masks[1] + 1)):
        width = min(int(rng.integers(p.freq_mask_width[0], p.freq_mask_width[1] + 1)), n_feats)
        start = int(rng.integers(0, n_feats - width + 1))
        rec.freq_masks.append((start, width))
    max_count = max(1, int(np.floor(n_frames * p.time_mask_count_max_frac + 1e-9)))
    for _ in range(rng.integers(1, max_count + 1)):
        length = min(int(rng.integers(1, p.time_mask_max_len + 1)), n_frames)
        start = int(rng.integers(0, n_frames - length + 1))
        rec.time_masks.append((start, length))
    return rec


def spec_augment(f: FeatureMatrix, p: SpecAugmentParams = SpecAugmentParams(), seed=0):
    """Mask random frequency bands and time spans. Apply to normalised
    features so the default fill value of 0 equals the feature mean."""
    if f.n_frames == 0 or f.feature_dim == 0:
        raise ValueError("spec_augment needs a non-empty feature matrix")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rec = draw_masks(f.n_frames, f.feature_dim, p, rng)
    data = f.data.copy()
    data[rec.mask(data.shape)] = p.mask_value
    return FeatureMatrix(data, f.kind, f.frame_rate), rec


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """sox-style speed change: duration scales by 1/factor and every
    frequency by factor."""
    if factor <= 0:
        raise ValueError(f"speed factor must be positive, got {factor}")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    return Waveform(sinc_resample(w.samples, factor), w.sample_rate)


def moving_rms(x: np.ndarray, win: int) -> np.ndarray:
    """Centred moving RMS; the window shrinks at the signal edges."""
    n = len(x)
    csum = np.concatenate([[0.0], np.cumsum(x * x)])
    idx = np.arange(n)
    lo = np.clip(idx - win // 2, 0, n)
    hi = np.clip(idx - win // 2 + win, 0, n)
    return np.sqrt(np.maximum((csum[hi] - csum[lo]) / np.maximum(hi - lo, 1), 0.0))


def silent_runs(mask: np.ndarray):
    """(start, stop) index pairs of consecutive True runs."""
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def silence_remove(w: Waveform, threshold_db: float = -40.0, window: float = 0.020,
                   min_silence: float = 0.250) -> Waveform:
    """Cut every stretch whose moving RMS stays below ``threshold_db`` dBFS
    for at least ``min_silence`` seconds. Approximates ffmpeg's
    ``silenceremove`` (RMS detector, remove everywhere); not bit-compatible."""
    if window <= 0:
        raise ValueError("window must be positive")
    x = w.samples
    if len(x) == 0:
        return Waveform(x.copy(), w.sample_rate)
    win = max(1, int(round(window * w.sample_rate)))
    threshold = 10.0 ** (threshold_db / 20.0)
    quiet = moving_rms(x, win) < threshold
    min_len = int(round(min_silence * w.sample_rate))
    keep = np.ones(len(x), dtype=bool)
    for start, stop in silent_runs(quiet):
        if stop - start >= min_len or (start == 0 and stop == len(x)):
            keep[start:stop] = False
    return Waveform(x[keep], w.sample_rate)
