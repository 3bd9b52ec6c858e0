"""Corpus manifests: one JSON object per line describing an utterance."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from ..dsp import wav_duration

log = logging.getLogger(__name__)

ORIGINS = ("real", "synthetic")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    utterance_id: str
    audio_path: str
    transcript: str
    speaker_id: str
    duration_s: float
    origin: str = "real"
    truncated: bool = False

    def to_json(self):
        d = asdict(self)
        if not self.truncated:
            del d["truncated"]
        return json.dumps(d, sort_keys=True)


@dataclass
class CorpusManifest:
    records: list
    rejected: list  # (line or path, reason)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.utterance_id in seen:
                raise ManifestError(f"duplicate utterance id {r.utterance_id!r}")
            seen.add(r.utterance_id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def hours(self):
        return sum(r.duration_s for r in self.records) / 3600.0

    def by_id(self):
        return {r.utterance_id: r for r in self.records}

    def save(self, path):
        Path(path).write_text("".join(r.to_json() + "\n" for r in self.records))


def _validate(d, base: Path):
    missing = [k for k in ("utterance_id", "audio_path", "transcript") if k not in d]
    if missing:
        raise ManifestError(f"missing field(s) {', '.join(missing)}")
    audio = Path(d["audio_path"])
    if not audio.is_absolute():
        audio = base / audio
    if not audio.is_file():
        raise ManifestError(f"audio file not found: {audio}")
    origin = d.get("origin", "real")
    if origin not in ORIGINS:
        raise ManifestError(f"unknown origin {origin!r}")
    dur = float(d["duration_s"]) if d.get("duration_s") is not None else wav_duration(audio)
    if not dur > 0:
        raise ManifestError(f"non-positive duration {dur}")
    return Record(str(d["utterance_id"]), str(audio), str(d["transcript"]), str(d.get("speaker_id", "unknown")),
                  dur, origin, bool(d.get("truncated", False)))


def load_manifest(path, strict=False) -> CorpusManifest:
    """Read a JSONL manifest. Invalid lines are rejected and logged (or
    raise with ``strict``); a manifest with no valid record is an error."""
    path = Path(path)
    records, rejected = [], []
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(_validate(json.loads(line), path.parent))
        except (ManifestError, json.JSONDecodeError, ValueError, TypeError) as e:
            if strict:
                raise ManifestError(f"{path}:{n}: {e}") from None
            log.warning("%s:%d rejected: %s", path, n, e)
            rejected.append((f"{path}:{n}", str(e)))
    if not records:
        raise ManifestError(f"{path}: no valid records")
    return CorpusManifest(records, rejected)


def ingest(source, speaker_from_name=True) -> CorpusManifest:
    """Build a manifest from a JSONL listing file or from a directory of WAV
    files with ``<stem>.txt`` transcripts next to them. Durations come from
    the WAV headers."""
    source = Path(source)
    if source.is_file():
        return load_manifest(source)
    if not source.is_dir():
        raise ManifestError(f"{source}: no such file or directory")
    records, rejected = [], []
    for wav in sorted(source.rglob("*.wav")):
        txt = wav.with_suffix(".txt")
        if not txt.is_file():
            log.warning("%s rejected: no transcript", wav)
            rejected.append((str(wav), "no transcript"))
            continue
        try:
            dur = wav_duration(wav)
        except ValueError as e:
            log.warning("%s rejected: %s", wav, e)
            rejected.append((str(wav), str(e)))
            continue
        spk = wav.stem.split("-")[0] if speaker_from_name else "unknown"
        records.append(Record(wav.stem, str(wav.resolve()), txt.read_text().strip(), spk, dur))
    if not records:
        raise ManifestError(f"{source}: no valid records")
    return CorpusManifest(records, rejected)


__all__ = ["CorpusManifest", "ManifestError", "ORIGINS", "Record", "ingest", "load_manifest"]
