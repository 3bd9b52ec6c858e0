"""Feature extraction over manifests and the on-disk feature store."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .. import dsp
from ..augment import SpecAugmentParams, spec_augment
from .manifest import CorpusManifest, Record
from .parallel import parallel_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureConfig:
    """Shared front end: 50 ms Hann windows every 12.5 ms, 1024-point FFT,
    80 mel bands, 40 cepstra."""
    stft: dsp.StftConfig = field(default_factory=dsp.StftConfig)
    n_mels: int = 80
    n_mfcc: int = 40
    f_min: float = 60.0
    f_max: float | None = None

    def filterbank(self):
        return dsp.make_mel_filterbank(self.stft.sample_rate, self.stft.fft_size, self.n_mels, self.f_min,
                                       self.f_max)


def extract(w: dsp.Waveform, kind: str, cfg: FeatureConfig, fb=None) -> dsp.FeatureMatrix:
    if w.sample_rate != cfg.stft.sample_rate:
        raise dsp.DspError(f"expected {cfg.stft.sample_rate} Hz audio, got {w.sample_rate} Hz")
    if kind == "linear_mag":
        return dsp.linear_magnitude(w, cfg.stft)
    fb = fb if fb is not None else cfg.filterbank()
    if kind == "log_mel":
        return dsp.log_mel(w, cfg.stft, fb)
    if kind == "mfcc":
        return dsp.mfcc(w, cfg.stft, fb, cfg.n_mfcc)
    raise ValueError(f"unknown feature kind {kind!r}")


def feature_path(root, kind, uid) -> Path:
    return Path(root) / kind / f"{uid}.fea"


def _featurize_one(rec: Record, kinds, cfg: FeatureConfig, root):
    w = dsp.read_wav(rec.audio_path)
    fb = cfg.filterbank()
    for kind in kinds:
        path = feature_path(root, kind, rec.utterance_id)
        dsp.write_features(path, extract(w, kind, cfg, fb))
    return rec.utterance_id


def featurize(manifest: CorpusManifest, root, kinds=("mfcc",), cfg: FeatureConfig = FeatureConfig(),
              workers=None):
    """Write one FEA1 file per utterance and kind under ``root/<kind>/``."""
    for kind in kinds:
        (Path(root) / kind).mkdir(parents=True, exist_ok=True)
    parallel_map(partial(_featurize_one, kinds=tuple(kinds), cfg=cfg, root=str(root)), manifest.records,
                 workers)


def load_features(root, kind, uids):
    return [dsp.read_features(feature_path(root, kind, u)) for u in uids]


def corpus_stats(root, kind, uids) -> dsp.NormStats:
    return dsp.estimate_norm_stats(load_features(root, kind, uids))


def stats_to_dict(s: dsp.NormStats):
    return {"sum": s.sum.tolist(), "sum_sq": s.sum_sq.tolist(), "n_frames": int(s.n_frames),
            "std_floor": float(s.std_floor)}


def stats_from_dict(d) -> dsp.NormStats:
    return dsp.NormStats(np.asarray(d["sum"]), np.asarray(d["sum_sq"]), int(d["n_frames"]), float(d["std_floor"]))


def utterance_seed(seed, uid, *extra) -> np.random.Generator:
    """Generator keyed on the run seed, the utterance id and any extra
    integers (epoch, checkpoint), independent of processing order."""
    key = [int(seed)] + list(uid.encode()) + [int(x) for x in extra]
    return np.random.default_rng(key)


def augment_features(f: dsp.FeatureMatrix, seed, uid, *extra, params=SpecAugmentParams()):
    """SpecAugment with an utterance-keyed generator."""
    return spec_augment(f, params, utterance_seed(seed, uid, *extra))[0]


__all__ = ["FeatureConfig", "augment_features", "corpus_stats", "extract", "feature_path", "featurize",
           "load_features", "stats_from_dict", "stats_to_dict", "utterance_seed"]
