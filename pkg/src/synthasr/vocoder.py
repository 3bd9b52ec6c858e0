"""Griffin & Lim phase reconstruction from linear magnitude spectrograms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import DspError, StftConfig, Waveform, deemphasize, istft, stft


@dataclass(frozen=True)
class GriffinLimConfig:
    n_iters: int = 1
    init_phase: str = "zero"  # "zero" or "random"
    seed: int = 0
    power: float = 1.0
    deemphasis: bool = False

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError(f"n_iters must be >= 1, got {self.n_iters}")
        if self.init_phase not in ("zero", "random"):
            raise ValueError(f"unknown init_phase {self.init_phase!r}")


def _check_magnitude(mag):
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2:
        raise DspError(f"magnitude must be 2-D, got shape {mag.shape}")
    if not np.all(np.isfinite(mag)):
        raise DspError("magnitude contains non-finite values")
    if np.any(mag < 0):
        raise DspError("magnitude contains negative entries")
    return mag


def initial_phase(shape, cfg: GriffinLimConfig) -> np.ndarray:
    if cfg.init_phase == "zero":
        return np.ones(shape, dtype=np.complex128)
    rng = np.random.default_rng(cfg.seed)
    return np.exp(2j * np.pi * rng.random(shape))


def griffin_lim(mag, cfg: GriffinLimConfig = GriffinLimConfig(), stft_cfg: StftConfig = StftConfig(),
                trace: list | None = None) -> Waveform:
    """Reconstruct a waveform whose STFT magnitude approximates ``mag``.

    ``x0 = istft(mag * phase0)``; each iteration replaces the magnitude of
    ``stft(x)`` by ``mag`` and resynthesises. If ``trace`` is a list, the
    consistency error after every iteration is appended to it.
    """
    mag = _check_magnitude(mag)
    if cfg.power != 1.0:
        mag = mag ** cfg.power
    x = istft(mag * initial_phase(mag.shape, cfg), stft_cfg)
    for _ in range(cfg.n_iters):
        phase = np.angle(stft(x, stft_cfg))
        x = istft(mag * np.exp(1j * phase), stft_cfg)
        if trace is not None:
            trace.append(consistency_error(mag, x, stft_cfg))
    x = Waveform(x.samples * edge_taper(len(mag), stft_cfg), x.sample_rate)
    if cfg.deemphasis:
        x = deemphasize(x, stft_cfg.preemphasis_alpha)
    return x


def edge_taper(n_frames: int, stft_cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Per-sample gain ``min(1, e / (e_ss / 2))`` where ``e`` is the summed
    squared window covering a sample and ``e_ss`` its steady-state value.

    The first and last few samples are covered by a single window tail, so
    the least-squares inverse divides by almost nothing there and any
    inconsistency in the spectrogram turns into a spike that would dominate
    peak normalisation. Samples with at least half the steady-state overlap
    are left alone.
    """
    win, hop = stft_cfg.win_samples, stft_cfg.hop_samples
    energy = np.zeros((n_frames - 1) * hop + win)
    wsq = stft_cfg.window() ** 2
    for t in range(n_frames):
        energy[t * hop:t * hop + win] += wsq
    return np.minimum(1.0, energy / (0.5 * np.median(energy)))


def consistency_error(mag, w: Waveform, stft_cfg: StftConfig = StftConfig()) -> float:
    """Frobenius distance between ``mag`` and ``|stft(w)|``."""
    mag = np.asarray(mag, dtype=np.float64)
    got = np.abs(stft(w, stft_cfg))
    if got.shape != mag.shape:
        raise DspError(f"shape mismatch: magnitude {mag.shape} vs stft {got.shape}")
    return float(np.linalg.norm(mag - got))


def restore_dc(mag_no_dc: np.ndarray) -> np.ndarray:
    """Prepend a zero DC column to a 512-bin spectrogram."""
    return np.concatenate([np.zeros((mag_no_dc.shape[0], 1)), mag_no_dc], axis=1)
