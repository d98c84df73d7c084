"""Per-sentence target vocabulary selection and the reduced output projection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .aligner import TranslationLexicon
from .corpus import SPECIAL_IDS, Vocabulary

log = logging.getLogger(__name__)


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class BagOfWords:
    """Sorted selected target ids; PAD/UNK/BOS/EOS are always members."""

    ids: np.ndarray
    scores: Optional[np.ndarray] = None
    tag: str = "none"

    def __post_init__(self):
        ids = np.union1d(np.asarray(self.ids, np.int64), SPECIAL_IDS)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def full(cls, vocab_size: int) -> "BagOfWords":
        return cls(np.arange(vocab_size), tag="none")

    def __len__(self):
        return len(self.ids)

    def __contains__(self, token_id) -> bool:
        i = np.searchsorted(self.ids, token_id)
        return bool(i < len(self.ids) and self.ids[i] == token_id)

    def as_set(self) -> set[int]:
        return set(self.ids.tolist())

    def issubset(self, other: "BagOfWords") -> bool:
        return bool(np.isin(self.ids, other.ids).all())

    def dump_line(self, vocab: Vocabulary) -> str:
        return "\t".join(sorted(vocab.token(i) for i in self.ids))


def select_align(lexicon: TranslationLexicon, source_ids: Sequence[int], k: int) -> BagOfWords:
    """Union of each source token's top-k lexicon targets."""
    if k < 1 or k > lexicon.k_max:
        raise SelectionError(f"k={k} outside 1..{lexicon.k_max} (lexicon K_max)")
    parts = []
    for s in source_ids:
        if s not in lexicon:
            log.debug("source id %d has no lexicon entry", s)
            continue
        parts.append(lexicon.top(s, k))
    ids = np.unique(np.concatenate(parts)) if parts else np.empty(0, np.int64)
    return BagOfWords(ids, tag=f"align({k})")


def select_nvs(z: np.ndarray, lam: float) -> BagOfWords:
    """``{i : z_i > lam}`` plus specials.

    ``lam = 0`` is accepted and keeps every id (``z`` is strictly positive).
    """
    if not 0.0 <= lam < 1.0:
        raise SelectionError(f"threshold must be in [0, 1), got {lam}")
    z = np.asarray(z)
    return BagOfWords(np.flatnonzero(z > lam), scores=z, tag=f"nvs({lam:g})")


@dataclass(frozen=True)
class VocabMapping:
    forward: dict
    inverse: np.ndarray

    def to_reduced(self, full_ids) -> np.ndarray:
        return np.array([self.forward[int(i)] for i in np.atleast_1d(full_ids)], np.int64)

    def to_full(self, reduced) -> np.ndarray:
        return self.inverse[np.asarray(reduced)]


def build_mapping(bow: BagOfWords) -> VocabMapping:
    inverse = np.asarray(bow.ids, np.int64)
    if len(inverse) == 0:
        raise SelectionError("empty bag of words")
    return VocabMapping({int(f): r for r, f in enumerate(inverse)}, inverse)


def restrict_projection(params: dict, mapping: VocabMapping) -> tuple[np.ndarray, np.ndarray]:
    """Gather the selected rows of the output projection (done once per sentence)."""
    W, b = params["out.w"], params["out.b"]
    if mapping.inverse[-1] >= W.shape[0]:
        raise SelectionError("bag of words references ids beyond the output vocabulary")
    return W[mapping.inverse], b[mapping.inverse]


# ---------------------------------------------------------------- selector objects


class NoSelector:
    tag = "none"

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def select(self, source_ids, scorer=None, enc=None) -> BagOfWords:
        return BagOfWords.full(self.vocab_size)


class AlignSelector:
    def __init__(self, lexicon: TranslationLexicon, k: int):
        if k < 1 or k > lexicon.k_max:
            raise SelectionError(f"k={k} outside 1..{lexicon.k_max} (lexicon K_max)")
        self.lexicon, self.k = lexicon, k
        self.tag = f"align({k})"

    def select(self, source_ids, scorer=None, enc=None) -> BagOfWords:
        return select_align(self.lexicon, source_ids, self.k)


class NvsSelector:
    """Thresholds the NVS head of ``scorer`` on an already computed encoding."""

    def __init__(self, lam: float):
        if not 0.0 <= lam < 1.0:
            raise SelectionError(f"threshold must be in [0, 1), got {lam}")
        self.lam = lam
        self.tag = f"nvs({lam:g})"

    def select(self, source_ids, scorer=None, enc=None) -> BagOfWords:
        if scorer is None or enc is None:
            raise SelectionError("NVS selection needs the model and the sentence encoding")
        return select_nvs(scorer.nvs_probs(enc), self.lam)


class FixedSelector:
    """Replays precomputed bags (one per sentence, in order)."""

    def __init__(self, bows: Sequence[BagOfWords]):
        self.bows = list(bows)
        self._next = 0
        self.tag = "fixed"

    def select(self, source_ids, scorer=None, enc=None) -> BagOfWords:
        bow = self.bows[self._next % len(self.bows)]
        self._next += 1
        return bow
