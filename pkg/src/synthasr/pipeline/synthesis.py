"""Text-only lines to synthetic WAV files plus a manifest."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from .. import dsp
from ..text import normalize_text
from ..tts import mel_to_linear, synthesize
from ..vocoder import GriffinLimConfig, griffin_lim, restore_dc
from .features import utterance_seed
from .manifest import CorpusManifest, Record
from .parallel import parallel_map, worker_count

log = logging.getLogger(__name__)

WAV_PEAK = 0.95


@dataclass
class Voice:
    """A trained synthesis chain: feature network, mel-to-linear network and
    the linear-magnitude statistics needed to undo its normalisation."""
    tts: object
    mel2lin: object
    linear_stats: dsp.NormStats
    stft: dsp.StftConfig = dsp.StftConfig()
    max_steps: int = 200


def speaker_embeddings(voice: Voice, donors):
    """GST embedding of each ``(speaker_id, normalised log-mel)`` donor."""
    out = []
    for spk, mel in donors:
        emb = voice.tts.speaker_embedding(np.asarray(mel, dtype=np.float32)[None], [len(mel)])
        out.append((spk, emb.data[0].copy()))
    return out


def synthesize_line(voice: Voice, text, embedding, gl: GriffinLimConfig = GriffinLimConfig()):
    """normalise -> feature network -> mel-to-linear -> Griffin & Lim.
    Returns ``(waveform, truncated)``."""
    res = synthesize(voice.tts, text, embedding, voice.max_steps, voice.stft.frame_rate)
    lin = mel_to_linear(voice.mel2lin, res.mel, voice.linear_stats)
    w = griffin_lim(restore_dc(lin), gl, voice.stft)
    return w, res.truncated


def _synth_task(job, voice, gl_cfg, out_dir, seed):
    idx, text, (spk, emb) = job
    uid = f"syn-{idx:06d}"
    try:
        norm = normalize_text(text, append_eos=False)
        if not norm.strip():
            raise ValueError("empty after normalisation")
        gl = gl_cfg
        if gl_cfg.init_phase == "random":
            gl = GriffinLimConfig(gl_cfg.n_iters, "random", int(utterance_seed(seed, uid).integers(2**31)),
                                  gl_cfg.power, gl_cfg.deemphasis)
        w, truncated = synthesize_line(voice, norm, emb, gl)
    except (ValueError, FloatingPointError, dsp.DspError) as e:
        return None, (idx, str(e))
    path = Path(out_dir) / f"{uid}.wav"
    dsp.write_wav(path, w, peak=WAV_PEAK)
    rec = Record(uid, str(path.resolve()), norm, spk, dsp.wav_duration(path), "synthetic", truncated)
    return rec, None


def generate_synthetic(lines, voice: Voice, speakers, out_dir, seed=0,
                       gl_cfg: GriffinLimConfig = GriffinLimConfig(n_iters=1, deemphasis=True),
                       workers=None) -> CorpusManifest:
    """One WAV per input line. Speakers (``(speaker_id, embedding)``) are
    assigned round-robin. Lines that fail are logged and left out;
    utterances that hit the step limit are kept with ``truncated`` set."""
    if not speakers:
        raise ValueError("no speaker embeddings for synthesis")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(i, line, speakers[i % len(speakers)]) for i, line in enumerate(lines)]
    n_workers = worker_count() if workers is None else workers
    chunk = max(1, math.ceil(len(jobs) / max(1, n_workers)))
    results = parallel_map(partial(_synth_task, voice=voice, gl_cfg=gl_cfg, out_dir=str(out_dir), seed=seed),
                           jobs, n_workers, chunksize=chunk)
    records, rejected = [], []
    for rec, err in results:
        if rec is None:
            log.warning("synthesis of line %d failed: %s", err[0], err[1])
            rejected.append((f"line {err[0]}", err[1]))
            continue
        if rec.truncated:
            log.warning("%s hit the step limit; kept and flagged", rec.utterance_id)
        records.append(rec)
    if not records:
        raise ValueError("synthesis produced no utterances")
    return CorpusManifest(records, rejected)


__all__ = ["Voice", "generate_synthetic", "speaker_embeddings", "synthesize_line"]
