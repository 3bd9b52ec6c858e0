"""Language-model scorers for shallow fusion.

A scorer maps a token prefix to log-probabilities of the next token over the
whole vocabulary (end-of-sentence included). Scorers must be safe to call
from several decoding threads at once; the n-gram table here is read-only
after construction and memoizes with a thread-safe cache.
"""
from __future__ import annotations

import functools
import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .model import EOS

HEADER = "#synthasr-ngram"


class LmScorer(Protocol):
    vocab_size: int

    def log_probs(self, prefix: Sequence[int]) -> np.ndarray:
        ...


class UniformLM:
    """Constant scorer; shifting every hypothesis by the same amount per
    token, it never changes which hypothesis wins among equal lengths."""

    def __init__(self, vocab_size):
        self.vocab_size = vocab_size
        self._row = np.full(vocab_size, -math.log(vocab_size))

    def log_probs(self, prefix):
        return self._row


class NgramLM:
    """Witten-Bell interpolated n-gram over token ids.

    Sentences are padded on the left with ``order - 1`` end symbols and
    terminated by one. The unigram level is add-one smoothed so every token
    has non-zero probability.
    """

    def __init__(self, order, vocab_size, counts):
        if order < 1:
            raise ValueError("n-gram order must be at least 1")
        self.order = order
        self.vocab_size = vocab_size
        self.counts = counts  # {context tuple: Counter(token -> count)}
        self._cache = functools.lru_cache(maxsize=65536)(self._dist)

    @classmethod
    def train(cls, sentences, order=3, vocab_size=None):
        sentences = [list(map(int, s)) for s in sentences]
        if vocab_size is None:
            vocab_size = 1 + max((max(s) for s in sentences if s), default=0)
        counts = defaultdict(Counter)
        for sent in sentences:
            seq = [EOS] * (order - 1) + sent + [EOS]
            for pos in range(order - 1, len(seq)):
                for n in range(order):
                    counts[tuple(seq[pos - n:pos])][seq[pos]] += 1
        return cls(order, vocab_size, dict(counts))

    def _dist(self, context):
        if not context:
            uni = np.ones(self.vocab_size)
            for tok, c in self.counts.get((), {}).items():
                uni[tok] += c
            return uni / uni.sum()
        lower = self._cache(context[1:])
        seen = self.counts.get(context)
        if not seen:
            return lower
        total = sum(seen.values())
        types = len(seen)
        p = lower * types
        for tok, c in seen.items():
            p[tok] += c
        return p / (total + types)

    def log_probs(self, prefix):
        seq = [EOS] * (self.order - 1) + [int(t) for t in prefix]
        context = tuple(seq[len(seq) - (self.order - 1):]) if self.order > 1 else ()
        return np.log(self._cache(context))

    def sentence_log_prob(self, tokens):
        tokens = list(tokens)
        total = 0.0
        for i, tok in enumerate(tokens + [EOS]):
            total += self.log_probs(tokens[:i])[tok]
        return total

    def save(self, path):
        """Tab-separated table: header, then ``context<TAB>token<TAB>count``
        with the context as space-separated ids (empty for unigrams)."""
        lines = [f"{HEADER}\t{self.order}\t{self.vocab_size}"]
        for ctx in sorted(self.counts, key=lambda c: (len(c), c)):
            for tok, c in sorted(self.counts[ctx].items()):
                lines.append(f"{' '.join(map(str, ctx))}\t{tok}\t{c}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith(HEADER):
            raise ValueError(f"{path}: not an n-gram table")
        _, order, vocab_size = lines[0].split("\t")
        counts = defaultdict(Counter)
        for n, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            try:
                ctx, tok, c = line.split("\t")
                counts[tuple(int(t) for t in ctx.split())][int(tok)] = int(c)
            except ValueError:
                raise ValueError(f"{path}:{n}: malformed n-gram line {line!r}") from None
        return cls(int(order), int(vocab_size), dict(counts))


__all__ = ["LmScorer", "NgramLM", "UniformLM"]
