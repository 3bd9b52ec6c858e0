"""Synthetic micro-corpus for exercising the whole pipeline.

Sentences are drawn from a small template grammar. Each character becomes a
fixed-length voiced segment (harmonics of the speaker's pitch shaped by two
character-specific formants); spaces become short pauses. Speakers differ in
pitch, speaking rate and brightness, so duration is proportional to
character count and the audio is learnable by small models.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..dsp import SAMPLE_RATE, Waveform, write_wav

SUBJECTS = ["the cat", "a dog", "my friend", "the man", "a bird"]
VERBS = ["sees", "likes", "finds", "keeps", "wants"]
OBJECTS = ["a red ball", "the green hat", "one small box", "the big tree"]
PLACES = ["at home", "in the park", "by the door"]

_ALPHABET = "abcdefghijklmnopqrstuvwxyz'"


@dataclass(frozen=True)
class ToySpeaker:
    speaker_id: str
    f0: float
    char_dur: float   # seconds per character
    tilt: float       # spectral slope, dB per kHz


SPEAKERS = (
    ToySpeaker("spk1", 110.0, 0.070, -3.0),
    ToySpeaker("spk2", 150.0, 0.065, -2.0),
    ToySpeaker("spk3", 195.0, 0.075, -4.0),
    ToySpeaker("spk4", 240.0, 0.068, -1.5),
)


def vocabulary():
    words = set()
    for part in SUBJECTS + VERBS + OBJECTS + PLACES:
        words.update(part.split())
    return sorted(words)


def make_sentence(rng: np.random.Generator) -> str:
    words = [SUBJECTS[rng.integers(len(SUBJECTS))], VERBS[rng.integers(len(VERBS))],
             OBJECTS[rng.integers(len(OBJECTS))]]
    if rng.random() < 0.5:
        words.append(PLACES[rng.integers(len(PLACES))])
    return " ".join(words)


def _formants(ch):
    """Two formant frequencies per character, spread over the alphabet."""
    k = _ALPHABET.index(ch)
    f1 = 250.0 + 650.0 * ((k * 7) % 27) / 26
    f2 = 900.0 + 2100.0 * ((k * 11 + 5) % 27) / 26
    return f1, f2


def render(text: str, speaker: ToySpeaker, seed=0, sample_rate=SAMPLE_RATE) -> Waveform:
    """Deterministic waveform for ``text`` spoken by ``speaker``."""
    rng = np.random.default_rng(seed)
    n_char = int(round(speaker.char_dur * sample_rate))
    edge = int(0.08 * sample_rate)
    t = np.arange(n_char) / sample_rate
    ramp = np.minimum(1.0, np.minimum(np.arange(n_char), np.arange(n_char)[::-1]) / (0.01 * sample_rate))
    harmonics = np.arange(1, int(4000 / speaker.f0) + 1) * speaker.f0
    pieces = [np.zeros(edge)]
    phase = 0.0
    for ch in text:
        if ch not in _ALPHABET:
            pieces.append(np.zeros(n_char))
            continue
        f1, f2 = _formants(ch)
        gain = (np.exp(-0.5 * ((harmonics - f1) / 120.0) ** 2)
                + 0.7 * np.exp(-0.5 * ((harmonics - f2) / 180.0) ** 2)
                + 0.02) * 10 ** (speaker.tilt * harmonics / 1000.0 / 20.0)
        seg = (gain[:, None] * np.sin(2 * np.pi * harmonics[:, None] * t + phase * harmonics[:, None]
                                      / speaker.f0)).sum(axis=0)
        phase += 2 * np.pi * speaker.f0 * n_char / sample_rate
        pieces.append(seg / max(1e-9, gain.sum()) * ramp)
    pieces.append(np.zeros(edge))
    x = 0.5 * np.concatenate(pieces)
    x += 1e-3 * rng.standard_normal(len(x))
    return Waveform(x.astype(np.float64), sample_rate)


SPLITS = {"train": 48, "dev-clean": 6, "dev-other": 6, "test-clean": 6, "test-other": 6}


def write_toy_corpus(out_dir, seed=0, splits=None, n_text_only=120):
    """Write WAVs and one manifest per split under ``out_dir`` plus a
    text-only file. "other" splits use a held-out speaker. Returns the
    paths of the manifests keyed by split name."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    splits = dict(SPLITS if splits is None else splits)
    rng = np.random.default_rng(seed)
    paths = {}
    for split, count in splits.items():
        speakers = SPEAKERS[3:] if split.endswith("other") else SPEAKERS[:3]
        records = []
        for i in range(count):
            text = make_sentence(rng)
            spk = speakers[i % len(speakers)]
            uid = f"{split}-{i:04d}"
            w = render(text, spk, seed=int(rng.integers(2**31)))
            wav = out / "wav" / f"{uid}.wav"
            write_wav(wav, w)
            records.append({"utterance_id": uid, "audio_path": str(wav.resolve()), "transcript": text,
                            "speaker_id": spk.speaker_id, "duration_s": w.duration, "origin": "real"})
        paths[split] = out / f"{split}.jsonl"
        paths[split].write_text("".join(json.dumps(r) + "\n" for r in records))
    text_path = out / "text_only.txt"
    text_path.write_text("".join(make_sentence(rng) + "\n" for _ in range(n_text_only)))
    paths["text_only"] = text_path
    return paths


__all__ = ["SPEAKERS", "SPLITS", "ToySpeaker", "make_sentence", "render", "vocabulary", "write_toy_corpus"]
