"""Per-checkpoint sampling plans over real and synthetic utterances.

Every checkpoint presents a fixed amount of audio (the hour budget), split
between real and synthetic data by the policy ratio. Each origin is drawn
from its own seeded stream of shuffled passes over the corpus; when a pass
runs out a fresh shuffle starts and the reuse is counted. Targets are
cumulative, so rounding to whole utterances never drifts across
checkpoints.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .manifest import CorpusManifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixPolicy:
    real: float = 3.0
    synthetic: float = 2.0
    hours_per_checkpoint: float = 1.0

    def __post_init__(self):
        if self.real < 0 or self.synthetic < 0 or self.real + self.synthetic <= 0:
            raise ValueError(f"invalid mix ratio {self.real}:{self.synthetic}")
        if self.hours_per_checkpoint <= 0:
            raise ValueError("hour budget must be positive")

    @classmethod
    def parse_ratio(cls, text, hours_per_checkpoint=1.0):
        try:
            a, b = (float(x) for x in str(text).split(":"))
        except ValueError:
            raise ValueError(f"ratio must look like '3:2', got {text!r}") from None
        return cls(a, b, hours_per_checkpoint)

    def share(self, origin):
        part = self.real if origin == "real" else self.synthetic
        return part / (self.real + self.synthetic)


@dataclass
class MixPlan:
    checkpoints: list                   # per checkpoint: list of utterance ids
    hours: list                         # per checkpoint: {"real": h, "synthetic": h}
    repeats: dict = field(default_factory=dict)  # origin -> draws beyond one pass

    @property
    def total_hours(self):
        return sum(sum(h.values()) for h in self.hours)

    def origin_hours(self, origin):
        return sum(h.get(origin, 0.0) for h in self.hours)

    def to_dict(self):
        return {"checkpoints": self.checkpoints, "hours": self.hours, "repeats": self.repeats}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(d["checkpoints"], d["hours"], d.get("repeats", {}))


class _Stream:
    """Endless sequence of records: shuffled passes over a corpus."""

    def __init__(self, records, rng):
        self.records = list(records)
        self.rng = rng
        self.order = []
        self.draws = 0

    def peek(self):
        if not self.order:
            self.order = [int(i) for i in self.rng.permutation(len(self.records))][::-1]
        return self.records[self.order[-1]]

    def take(self):
        rec = self.peek()
        self.order.pop()
        self.draws += 1
        return rec


def build_training_mix(real: CorpusManifest, synth: CorpusManifest | None, policy: MixPolicy,
                       n_checkpoints: int, seed=0) -> MixPlan:
    if n_checkpoints < 1:
        raise ValueError("need at least one checkpoint")
    sources = {}
    for origin, manifest in (("real", real), ("synthetic", synth)):
        if policy.share(origin) == 0:
            continue
        if manifest is None or len(manifest) == 0:
            raise ValueError(f"mix ratio asks for {origin} data but none was given")
        wrong = [r.utterance_id for r in manifest if r.origin != origin]
        if wrong:
            raise ValueError(f"{origin} manifest contains {len(wrong)} record(s) of another origin")
        rng = np.random.default_rng([int(seed), 0 if origin == "real" else 1])
        sources[origin] = _Stream(manifest.records, rng)
    done = {o: 0.0 for o in sources}
    checkpoints, hours = [], []
    for k in range(1, n_checkpoints + 1):
        ids, got = [], {o: 0.0 for o in sources}
        for origin, stream in sources.items():
            target = k * policy.hours_per_checkpoint * policy.share(origin)
            # take the next utterance while that lands closer to the target than stopping
            while abs(done[origin] + stream.peek().duration_s / 3600.0 - target) < abs(done[origin] - target):
                rec = stream.take()
                h = rec.duration_s / 3600.0
                ids.append(rec.utterance_id)
                done[origin] += h
                got[origin] += h
        checkpoints.append(ids)
        hours.append(got)
    repeats = {o: max(0, s.draws - len(s.records)) for o, s in sources.items()}
    for origin, n in repeats.items():
        if n:
            log.info("mix: %d %s utterance draw(s) are repeats", n, origin)
    return MixPlan(checkpoints, hours, repeats)


__all__ = ["MixPlan", "MixPolicy", "build_training_mix"]
