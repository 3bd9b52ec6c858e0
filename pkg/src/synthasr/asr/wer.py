"""Word error rate with a substitution/insertion/deletion breakdown."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels


@dataclass(frozen=True)
class WerResult:
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int
    empty_ref: bool = False

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self):
        """Errors over reference length; an empty reference counts as one
        word (and sets ``empty_ref``)."""
        return self.errors / max(1, self.ref_len)

    def __add__(self, other: "WerResult"):
        return WerResult(self.substitutions + other.substitutions, self.insertions + other.insertions,
                         self.deletions + other.deletions, self.ref_len + other.ref_len,
                         self.empty_ref or other.empty_ref)


def _words(x):
    return x.split() if isinstance(x, str) else list(x)


def wer(hyp, ref) -> WerResult:
    """Unit-cost word alignment. Among minimum-cost alignments the one with
    the most substitutions is reported, which fixes the split between error
    kinds and makes ``wer(a, b)`` the mirror of ``wer(b, a)``."""
    hyp, ref = _words(hyp), _words(ref)
    ids = {}
    h = np.asarray([ids.setdefault(w, len(ids)) for w in hyp], dtype=np.int64)
    r = np.asarray([ids.setdefault(w, len(ids)) for w in ref], dtype=np.int64)
    d = kernels.edit_table(r, h)
    n, m = len(r), len(h)
    # most substitutions over the optimal paths, filled in table order
    subs = np.full((n + 1, m + 1), -1, dtype=np.int64)
    subs[0, :] = 0
    subs[:, 0] = 0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = -1
            cost = int(r[i - 1] != h[j - 1])
            if d[i - 1, j - 1] + cost == d[i, j]:
                best = subs[i - 1, j - 1] + cost
            if d[i - 1, j] + 1 == d[i, j]:
                best = max(best, subs[i - 1, j])
            if d[i, j - 1] + 1 == d[i, j]:
                best = max(best, subs[i, j - 1])
            subs[i, j] = best
    dist, s = int(d[n, m]), int(subs[n, m])
    ins = (dist - s + (m - n)) // 2
    dels = dist - s - ins
    return WerResult(s, ins, dels, n, empty_ref=(n == 0))


def corpus_wer(pairs) -> WerResult:
    """Pooled counts over ``(hyp, ref)`` pairs."""
    total = WerResult(0, 0, 0, 0)
    for hyp, ref in pairs:
        total = total + wer(hyp, ref)
    return total


__all__ = ["WerResult", "corpus_wer", "wer"]
