"""Character vocabulary for synthesis input and byte-pair-encoding subwords
for recognition output."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

EOS_CHAR = "~"
CONT = "@@"


class CharVocab:
    """Lowercase letters, space, apostrophe and the end token ``~``."""

    def __init__(self, symbols: str = "abcdefghijklmnopqrstuvwxyz '" + EOS_CHAR):
        if symbols.count(EOS_CHAR) != 1:
            raise ValueError("vocabulary must contain the end token exactly once")
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate symbols in vocabulary")
        self.symbols = symbols
        self.index = {c: i for i, c in enumerate(symbols)}

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, c):
        return c in self.index

    def encode(self, text: str) -> list[int]:
        return [self.index[c] for c in text]

    def decode(self, ids) -> str:
        return "".join(self.symbols[i] for i in ids)


DEFAULT_VOCAB = CharVocab()


def normalize_text(s: str, vocab: CharVocab = DEFAULT_VOCAB, append_eos: bool = True) -> str:
    """Lowercase, drop out-of-vocabulary characters, squeeze whitespace and
    terminate with exactly one end token."""
    s = " ".join(s.lower().split())
    dropped = sorted({c for c in s if c not in vocab})
    if dropped:
        log.warning("dropping characters outside the vocabulary: %r", "".join(dropped))
    s = "".join(c for c in s if c in vocab and c != EOS_CHAR).strip()
    return s + EOS_CHAR if append_eos else s


# --------------------------------------------------------------------------
# byte-pair encoding

def _merge_word(symbols: tuple, pair: tuple) -> tuple:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


@dataclass
class BpeModel:
    merges: list = field(default_factory=list)

    @property
    def ranks(self):
        return {p: i for i, p in enumerate(self.merges)}

    def save(self, path):
        Path(path).write_text("".join(f"{a} {b}\n" for a, b in self.merges), encoding="utf-8")

    @classmethod
    def load(cls, path):
        merges = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                a, b = line.split(" ")
                merges.append((a, b))
        return cls(merges)

    def symbols(self, alphabet) -> list[str]:
        """Every subword the model can emit, without continuation markers."""
        out = sorted(set(alphabet))
        out += [a + b for a, b in self.merges if a + b not in out]
        return out


def bpe_learn(word_freqs: dict, n_merges: int) -> BpeModel:
    """Greedily merge the most frequent adjacent pair. Overlapping
    occurrences are counted, ties go to the lexicographically smallest pair."""
    if not word_freqs:
        raise ValueError("cannot learn BPE from an empty corpus")
    words = {tuple(w): f for w, f in word_freqs.items() if w}
    model = BpeModel()
    for _ in range(n_merges):
        counts = Counter()
        for syms, freq in words.items():
            for pair in zip(syms, syms[1:]):
                counts[pair] += freq
        if not counts:
            break
        best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        model.merges.append(best)
        merged = Counter()
        for syms, freq in words.items():
            merged[_merge_word(syms, best)] += freq
        words = dict(merged)
    return model


def bpe_segment(model: BpeModel, word: str) -> list[str]:
    """Subword pieces of ``word`` without continuation markers."""
    syms = tuple(word)
    for pair in model.merges:
        if len(syms) < 2:
            break
        syms = _merge_word(syms, pair)
    return list(syms)


def bpe_apply(model: BpeModel, word: str) -> list[str]:
    pieces = bpe_segment(model, word)
    return [p + CONT for p in pieces[:-1]] + pieces[-1:]


def bpe_encode_sentence(model: BpeModel, sentence: str) -> list[str]:
    out = []
    for word in sentence.split():
        out.extend(bpe_apply(model, word))
    return out


def bpe_decode(tokens) -> str:
    words = []
    current = ""
    for tok in tokens:
        if tok.endswith(CONT):
            current += tok[:-len(CONT)]
        else:
            words.append(current + tok)
            current = ""
    if current:
        words.append(current)
    return " ".join(words)


def word_frequencies(lines) -> dict:
    return dict(Counter(w for line in lines for w in line.split()))


class TokenVocab:
    """Index map over BPE tokens plus the sentence-end symbol (index 0)."""

    EOS = "</s>"

    def __init__(self, tokens):
        self.tokens = [self.EOS] + sorted(set(tokens) - {self.EOS})
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def from_model(cls, model: BpeModel, alphabet):
        syms = model.symbols(alphabet)
        return cls(syms + [s + CONT for s in syms])

    def __len__(self):
        return len(self.tokens)

    @property
    def eos(self) -> int:
        return 0

    def encode(self, tokens) -> list[int]:
        return [self.index[t] for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids if i != self.eos]

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        toks = Path(path).read_text(encoding="utf-8").splitlines()
        v = cls([])
        v.tokens = toks
        v.index = {t: i for i, t in enumerate(toks)}
        return v
