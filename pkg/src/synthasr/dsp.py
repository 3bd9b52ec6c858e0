"""Audio feature extraction: preemphasis, STFT/ISTFT, mel filterbank, log-mel,
MFCC and corpus-level mean/variance normalisation.

All arrays are time-major. Spectra are one-sided (``fft_size // 2 + 1`` bins).
"""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.io import wavfile

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8

FEATURE_KINDS = ("linear_mag", "log_mel", "mfcc")
FEATURE_DIMS = {"linear_mag": 512, "log_mel": 80, "mfcc": 40}


class DspError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise DspError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DspError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_len: float = 0.050
    hop: float = 0.0125
    fft_size: int = 1024
    window_fn: str = "hann"
    preemphasis_alpha: float = 0.97
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.hop > self.window_len:
            raise DspError("hop must not exceed the window length")
        if self.fft_size < self.win_samples:
            raise DspError(f"fft_size {self.fft_size} shorter than window {self.win_samples}")

    @property
    def win_samples(self) -> int:
        return int(round(self.window_len * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.sample_rate))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop_samples

    def window(self) -> np.ndarray:
        return make_window(self.window_fn, self.win_samples)


def make_window(name: str, n: int) -> np.ndarray:
    # endpoints dropped so every sample of a frame carries weight; overlap-add
    # normalisation then never divides by zero
    if name == "hann":
        return np.hanning(n + 2)[1:-1]
    if name == "hamming":
        return np.hamming(n)
    if name in ("rect", "boxcar"):
        return np.ones(n)
    raise DspError(f"unknown window family {name!r}")


@dataclass
class FeatureMatrix:
    data: np.ndarray
    kind: str
    frame_rate: float = SAMPLE_RATE / 200

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise DspError(f"feature matrix must be 2-D, got shape {self.data.shape}")
        if self.kind not in FEATURE_KINDS:
            raise DspError(f"unknown feature kind {self.kind!r}")
        if not np.all(np.isfinite(self.data)):
            raise DspError("feature matrix contains non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.data.shape[1]


@dataclass
class MelFilterbank:
    weights: np.ndarray
    f_min: float
    f_max: float
    centers: np.ndarray
    mel_scale: str = "htk"

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


@dataclass
class NormStats:
    """Pooled per-dimension statistics, stored as exact sums so partial
    estimates from different workers merge without loss."""

    sum: np.ndarray
    sum_sq: np.ndarray
    n_frames: int
    std_floor: float = STD_FLOOR
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def mean(self) -> np.ndarray:
        return self.sum / self.n_frames

    @property
    def std(self) -> np.ndarray:
        var = self.sum_sq / self.n_frames - self.mean ** 2
        return np.maximum(np.sqrt(np.maximum(var, 0.0)), self.std_floor)

    def merge(self, other: "NormStats") -> "NormStats":
        return NormStats(self.sum + other.sum, self.sum_sq + other.sum_sq,
                         self.n_frames + other.n_frames, self.std_floor)

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls(np.zeros(dim), np.full(dim, 2.0), 2)

    def save(self, path):
        np.savez(path, sum=self.sum, sum_sq=self.sum_sq, n_frames=self.n_frames)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(z["sum"], z["sum_sq"], int(z["n_frames"]))


# --------------------------------------------------------------------------

def preemphasize(w: Waveform, alpha: float = 0.97) -> Waveform:
    if not 0.0 <= alpha < 1.0:
        raise DspError(f"preemphasis alpha must lie in [0, 1), got {alpha}")
    x = w.samples
    y = x.copy()
    y[1:] = x[1:] - alpha * x[:-1]
    return Waveform(y, w.sample_rate)


def deemphasize(w: Waveform, alpha: float = 0.97) -> Waveform:
    from scipy.signal import lfilter

    return Waveform(lfilter([1.0], [1.0, -alpha], w.samples), w.sample_rate)


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    if len(x) < win:
        x = np.pad(x, (0, win - len(x)))
    n_frames = (len(x) - win) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]


def stft(w: Waveform, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex spectrogram, T x (fft_size/2 + 1). No centring: frame ``t``
    starts at sample ``t * hop``."""
    if len(w) == 0:
        raise DspError("cannot take the STFT of an empty waveform")
    frames = frame_signal(w.samples, cfg.win_samples, cfg.hop_samples) * cfg.window()
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def istft(spec: np.ndarray, cfg: StftConfig = StftConfig()) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft`."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != cfg.n_bins:
        raise DspError(f"spectrogram shape {spec.shape} does not match {cfg.n_bins} bins")
    win, hop = cfg.win_samples, cfg.hop_samples
    window = cfg.window()
    n_frames = spec.shape[0]
    length = (n_frames - 1) * hop + win if n_frames else 0
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, :win] * window
    out = np.zeros(length)
    norm = np.zeros(length)
    wsq = window ** 2
    for t in range(n_frames):
        out[t * hop:t * hop + win] += frames[t]
        norm[t * hop:t * hop + win] += wsq
    if length and np.any(norm <= 1e-12):
        raise DspError("window/hop combination leaves samples with zero overlap energy")
    if length:
        out /= norm
    return Waveform(out, cfg.sample_rate)


def hz_to_mel(f, scale: str = "htk"):
    f = np.asarray(f, dtype=np.float64)
    if scale == "htk":
        return 2595.0 * np.log10(1.0 + f / 700.0)
    if scale == "slaney":
        f_sp = 200.0 / 3
        min_log_hz, logstep = 1000.0, np.log(6.4) / 27.0
        min_log_mel = min_log_hz / f_sp
        return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep,
                        f / f_sp)
    raise DspError(f"unknown mel scale {scale!r}")


def mel_to_hz(m, scale: str = "htk"):
    m = np.asarray(m, dtype=np.float64)
    if scale == "htk":
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    if scale == "slaney":
        f_sp = 200.0 / 3
        min_log_hz, logstep = 1000.0, np.log(6.4) / 27.0
        min_log_mel = min_log_hz / f_sp
        return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)
    raise DspError(f"unknown mel scale {scale!r}")


def make_mel_filterbank(sample_rate: int = SAMPLE_RATE, fft_size: int = 1024, n_mels: int = 80,
                        f_min: float = 60.0, f_max: float | None = None,
                        mel_scale: str = "htk") -> MelFilterbank:
    """Area-normalised triangular filters spaced uniformly in mel."""
    if f_max is None:
        f_max = sample_rate / 2
    if not (0 <= f_min < f_max <= sample_rate / 2):
        raise DspError(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got {f_min}, {f_max}")
    bin_freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min, mel_scale), hz_to_mel(f_max, mel_scale), n_mels + 2),
                      mel_scale)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (bin_freqs[None, :] - lower) / (center - lower)
    fall = (upper - bin_freqs[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rise, fall))
    weights *= (2.0 / (upper - lower))
    empty = np.flatnonzero(~np.any(weights > 0, axis=1))
    if len(empty):
        raise DspError(f"{n_mels} mel bands too many for fft_size {fft_size}: band {empty[0]} is empty")
    return MelFilterbank(weights, float(f_min), float(f_max), edges[1:-1].copy(), mel_scale)


def power_spectrogram(w: Waveform, cfg: StftConfig) -> np.ndarray:
    return np.abs(stft(w, cfg)) ** 2


def log_mel(w: Waveform, cfg: StftConfig, fb: MelFilterbank, preemphasis: bool = True) -> FeatureMatrix:
    if fb.weights.shape[1] != cfg.n_bins:
        raise DspError(f"filterbank has {fb.weights.shape[1]} bins, STFT has {cfg.n_bins}")
    if preemphasis and cfg.preemphasis_alpha > 0:
        w = preemphasize(w, cfg.preemphasis_alpha)
    mel = power_spectrogram(w, cfg) @ fb.weights.T
    return FeatureMatrix(np.log(np.maximum(mel, LOG_FLOOR)), "log_mel", cfg.frame_rate)


def dct2(x: np.ndarray, n_coeffs: int | None = None) -> np.ndarray:
    """Orthonormal type-II DCT along the last axis."""
    out = scipy.fft.dct(x, type=2, norm="ortho", axis=-1)
    return out if n_coeffs is None else out[..., :n_coeffs]


def mfcc_from_log_mel(lm: FeatureMatrix, n_coeffs: int = 40) -> FeatureMatrix:
    if n_coeffs > lm.feature_dim:
        raise DspError(f"n_coeffs {n_coeffs} exceeds {lm.feature_dim} mel bands")
    return FeatureMatrix(dct2(lm.data, n_coeffs), "mfcc", lm.frame_rate)


def mfcc(w: Waveform, cfg: StftConfig, fb: MelFilterbank, n_coeffs: int = 40) -> FeatureMatrix:
    if n_coeffs > fb.n_mels:
        raise DspError(f"n_coeffs {n_coeffs} exceeds {fb.n_mels} mel bands")
    return mfcc_from_log_mel(log_mel(w, cfg, fb), n_coeffs)


def linear_magnitude(w: Waveform, cfg: StftConfig, drop_dc: bool = True) -> FeatureMatrix:
    """|STFT| with the DC bin removed (512 bins for a 1024-point FFT)."""
    if cfg.preemphasis_alpha > 0:
        w = preemphasize(w, cfg.preemphasis_alpha)
    mag = np.abs(stft(w, cfg))
    if drop_dc:
        mag = mag[:, 1:]
    return FeatureMatrix(mag, "linear_mag", cfg.frame_rate)


def estimate_norm_stats(corpus, std_floor: float = STD_FLOOR) -> NormStats:
    mats = [f.data if isinstance(f, FeatureMatrix) else np.asarray(f) for f in corpus]
    if not mats:
        raise DspError("cannot estimate statistics of an empty corpus")
    dim = mats[0].shape[1]
    total = np.zeros(dim)
    total_sq = np.zeros(dim)
    n = 0
    for m in mats:
        if m.shape[1] != dim:
            raise DspError(f"feature dim mismatch: {m.shape[1]} vs {dim}")
        m = m.astype(np.float64)
        total += m.sum(axis=0)
        total_sq += (m * m).sum(axis=0)
        n += m.shape[0]
    if n < 2:
        raise DspError("need at least two frames to estimate statistics")
    return NormStats(total, total_sq, n, std_floor)


def apply_norm(f: FeatureMatrix, s: NormStats) -> FeatureMatrix:
    if f.feature_dim != len(s.sum):
        raise DspError(f"feature dim {f.feature_dim} does not match stats dim {len(s.sum)}")
    return FeatureMatrix((f.data - s.mean) / s.std, f.kind, f.frame_rate)


def invert_norm(data: np.ndarray, s: NormStats) -> np.ndarray:
    return data * s.std + s.mean


# --------------------------------------------------------------------------
# file formats

_FEA_HEADER = struct.Struct("<4sBIIf")
_FEA_MAGIC = b"FEA1"


def write_features(path, f: FeatureMatrix):
    data = np.ascontiguousarray(f.data, dtype="<f4")
    header = _FEA_HEADER.pack(_FEA_MAGIC, FEATURE_KINDS.index(f.kind), data.shape[0], data.shape[1],
                              f.frame_rate)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    magic, kind, n_frames, dim, rate = _FEA_HEADER.unpack_from(raw)
    if magic != _FEA_MAGIC:
        raise DspError(f"{path}: bad magic {magic!r}")
    data = np.frombuffer(raw, dtype="<f4", count=n_frames * dim, offset=_FEA_HEADER.size)
    return FeatureMatrix(data.reshape(n_frames, dim).astype(np.float32), FEATURE_KINDS[kind], rate)


def read_wav(path) -> Waveform:
    rate, data = wavfile.read(path)
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    return Waveform(data.astype(np.float64), rate)


def write_wav(path, w: Waveform, peak: float | None = None):
    """16-bit PCM mono. With ``peak`` set the signal is scaled to that peak
    first; otherwise samples are clipped to [-1, 1]."""
    x = w.samples
    if peak is not None:
        m = np.max(np.abs(x)) if len(x) else 0.0
        if m > 0:
            x = x * (peak / m)
    pcm = np.round(np.clip(x, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    wavfile.write(path, w.sample_rate, pcm)


def wav_duration(path) -> float:
    """Duration in seconds from the WAV header alone."""
    try:
        with wave.open(str(path), "rb") as fh:
            return fh.getnframes() / fh.getframerate()
    except (wave.Error, EOFError) as e:
        raise DspError(f"{path}: unreadable WAV header ({e})") from None
