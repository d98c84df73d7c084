"""Tokenization, BPE, vocabularies, corpus cleaning and target bags of words."""

from __future__ import annotations

import collections
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIAL_IDS = (PAD, UNK, BOS, EOS)
SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")
EOW = "</w>"
MERGES_HEADER = "#shortlex-bpe v1"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split off each punctuation mark."""
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------- BPE


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise CorpusError("duplicate merge pair in BPE model")

    def __len__(self):
        return len(self.merges)

    def save(self, path) -> None:
        lines = [MERGES_HEADER] + [f"{a} {b}" for a, b in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip() != MERGES_HEADER:
            raise CorpusError(f"{path}: missing '{MERGES_HEADER}' header")
        merges = []
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise CorpusError(f"{path}:{n}: expected 'left right'")
            merges.append((parts[0], parts[1]))
        return cls(tuple(merges))


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word) + (EOW,)


def _tie_key(pair: tuple[str, str]) -> tuple[str, str]:
    # the end-of-word marker sorts after every character on ties
    return tuple(s.replace(EOW, "\U0010ffff") for s in pair)


def _merge_symbols(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    a, b = pair
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_learn(corpus: Iterable[Sequence[str]], merges: int) -> BpeModel:
    """Learn up to ``merges`` merge operations from tokenized sentences.

    The most frequent adjacent pair is merged first; equal counts go to the
    lexicographically smallest pair. Stops early when no pair is left.
    """
    if merges < 0:
        raise CorpusError("merges must be >= 0")
    word_counts = collections.Counter(w for sent in corpus for w in sent)
    if not word_counts:
        raise CorpusError("cannot learn BPE from an empty corpus")
    words = {_word_symbols(w): c for w, c in word_counts.items()}
    learned: list[tuple[str, str]] = []
    for _ in range(merges):
        pairs: collections.Counter = collections.Counter()
        for symbols, count in words.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += count
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], _tie_key(kv[0])))[0]
        learned.append(best)
        merged: dict[tuple[str, ...], int] = {}
        for symbols, count in words.items():
            new = _merge_symbols(symbols, best)
            merged[new] = merged.get(new, 0) + count
        words = merged
    return BpeModel(tuple(learned))


def bpe_apply(model: BpeModel, token: str) -> list[str]:
    """Segment one token; the last subword carries the end-of-word marker."""
    if not token:
        raise CorpusError("cannot segment an empty token")
    symbols = _word_symbols(token)
    for pair in model.merges:
        if len(symbols) == 1:
            break
        symbols = _merge_symbols(symbols, pair)
    out = list(symbols)
    if out[-1] == EOW:
        out.pop()
        out[-1] = out[-1] + EOW
    return out


class BpeSegmenter:
    """Caching wrapper used when segmenting whole corpora."""

    def __init__(self, model: BpeModel):
        self.model = model
        self._cache: dict[str, list[str]] = {}

    def word(self, token: str) -> list[str]:
        seg = self._cache.get(token)
        if seg is None:
            seg = self._cache[token] = bpe_apply(self.model, token)
        return seg

    def sentence(self, tokens: Sequence[str]) -> list[str]:
        return [s for t in tokens for s in self.word(t)]


def strip_markers(subwords: Sequence[str]) -> str:
    """Join subwords back into space-separated words."""
    words, cur = [], ""
    for s in subwords:
        if s.endswith(EOW):
            words.append(cur + s[: -len(EOW)])
            cur = ""
        else:
            cur += s
    if cur:
        words.append(cur)
    return " ".join(words)


def word_spans(subwords: Sequence[str]) -> list[tuple[int, int]]:
    """Half-open subword index ranges, one per word."""
    spans, start = [], 0
    for i, s in enumerate(subwords):
        if s.endswith(EOW):
            spans.append((start, i + 1))
            start = i + 1
    if start < len(subwords):
        spans.append((start, len(subwords)))
    return spans


# ---------------------------------------------------------------- vocabulary


class Vocabulary:
    """Token <-> id bijection; ids 0..3 are always pad/unk/bos/eos."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._tokens: list[str] = list(SPECIAL_TOKENS)
        self._ids: dict[str, int] = {t: i for i, t in enumerate(self._tokens)}
        for t in tokens:
            if t not in self._ids:
                self._ids[t] = len(self._tokens)
                self._tokens.append(t)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], max_size: int | None = None):
        """Most frequent tokens first, ties in lexicographic order."""
        counts = collections.Counter(t for s in sentences for t in s)
        for t in SPECIAL_TOKENS:
            counts.pop(t, None)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(SPECIAL_TOKENS))]
        return cls(t for t, _ in ranked)

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def lookup(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Sequence[str], add_eos: bool = False) -> list[int]:
        ids = [self._ids.get(t, UNK) for t in tokens]
        if add_eos:
            ids.append(EOS)
        return ids

    def decode(self, ids: Iterable[int], strip_specials: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip_specials and i in (PAD, BOS, EOS):
                continue
            out.append(self._tokens[i])
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != SPECIAL_TOKENS:
            raise CorpusError(f"{path}: first four lines must be {' '.join(SPECIAL_TOKENS)}")
        if len(set(lines)) != len(lines):
            raise CorpusError(f"{path}: duplicate tokens")
        return cls(lines[4:])


# ---------------------------------------------------------------- pairs


@dataclass(frozen=True)
class SentencePair:
    src: tuple[int, ...]
    tgt: tuple[int, ...]

    def __post_init__(self):
        if not self.src or not self.tgt:
            raise CorpusError("sentence pair sides must be non-empty")
        if self.tgt[-1] != EOS:
            object.__setattr__(self, "tgt", tuple(self.tgt) + (EOS,))


def make_pairs(vocab: Vocabulary, src_sents, tgt_sents) -> list[SentencePair]:
    return [
        SentencePair(tuple(vocab.encode(s)), tuple(vocab.encode(t, add_eos=True)))
        for s, t in zip(src_sents, tgt_sents)
    ]


@dataclass
class CleanResult:
    kept: list[int] = field(default_factory=list)
    rejected: list[tuple[int, str]] = field(default_factory=list)


def token_overlap(src: Sequence[str], tgt: Sequence[str]) -> float:
    a, b = set(src), set(tgt)
    if not a or not b:
        return 0.0
    return len(a & b) / min(len(a), len(b))


def rejection_rule(
    src: Sequence[str],
    tgt: Sequence[str],
    max_ratio: float = 1.5,
    max_overlap: float = 0.70,
    max_len: int = 100,
) -> str | None:
    """Name of the first cleaning rule the pair violates, or None."""
    ls, lt = len(src), len(tgt)
    if ls == 0 or lt == 0:
        return "empty"
    if ls > max_len or lt > max_len:
        return "length"
    if max(ls, lt) / min(ls, lt) > max_ratio:
        return "ratio"
    if token_overlap(src, tgt) > max_overlap:
        return "overlap"
    return None


def clean_pairs(
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    max_ratio: float = 1.5,
    max_overlap: float = 0.70,
    max_len: int = 100,
) -> CleanResult:
    """Filter BPE-segmented pairs by length, length ratio and token overlap."""
    result = CleanResult()
    for i, (src, tgt) in enumerate(pairs):
        rule = rejection_rule(src, tgt, max_ratio, max_overlap, max_len)
        if rule is None:
            result.kept.append(i)
        else:
            result.rejected.append((i, rule))
    return result


# ---------------------------------------------------------------- bag of words


@dataclass(frozen=True)
class BowTarget:
    y: np.ndarray
    n_p: int

    @property
    def ids(self) -> np.ndarray:
        return np.flatnonzero(self.y)


def extract_bow(pair: SentencePair | Sequence[int], vocab_size: int) -> BowTarget:
    tgt = pair.tgt if isinstance(pair, SentencePair) else pair
    y = np.zeros(vocab_size, dtype=np.float64)
    ids = [i for i in set(tgt) if i not in (PAD, BOS)]
    y[ids] = 1.0
    return BowTarget(y, len(ids))


def read_lines(path) -> Iterator[str]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            yield line.rstrip("\n")
