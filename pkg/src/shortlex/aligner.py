"""EM word alignment (IBM Model 1 with a fixed diagonal prior) and top-k lexicons.

Links are modelled source -> target: every target token is generated by one
source position ``i`` with prior weight ``exp(-tension * |i/I - j/J|)``
(normalized over ``i``) times the translation probability ``t(f|e)``.
With ``tension = 0`` this is plain IBM Model 1 without a NULL word.

All co-occurring (source, target) pairs are enumerated once, so each EM
iteration is a handful of vectorized numpy passes over the link list.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import EOS, SentencePair, Vocabulary

log = logging.getLogger(__name__)

ALIGN_HEADER = "#shortlex-align v1"
DEFAULT_TENSION = 4.0
PRUNE_BELOW = 1e-9


class AlignError(ValueError):
    pass


@dataclass
class AlignModel:
    """Sparse translation table t(target | source)."""

    src: np.ndarray
    tgt: np.ndarray
    prob: np.ndarray
    diagonal_tension: float = DEFAULT_TENSION
    log_likelihood: list[float] = field(default_factory=list)

    def distribution(self, source_id: int) -> dict[int, float]:
        sel = (self.src == source_id) & (self.prob > 0)
        return {int(f): float(p) for f, p in zip(self.tgt[sel], self.prob[sel])}

    def prob_of(self, source_id: int, target_id: int) -> float:
        sel = (self.src == source_id) & (self.tgt == target_id)
        return float(self.prob[sel].sum())

    def source_ids(self) -> np.ndarray:
        return np.unique(self.src[self.prob > 0])

    def save(self, path, vocab: Vocabulary) -> None:
        keep = self.prob > 0
        order = np.lexsort((self.tgt[keep], -self.prob[keep], self.src[keep]))
        s, t, p = self.src[keep][order], self.tgt[keep][order], self.prob[keep][order]
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{ALIGN_HEADER}\ndiagonal_tension={float(self.diagonal_tension)!r}\n")
            for a, b, c in zip(s, t, p):
                f.write(f"{vocab.token(a)}\t{vocab.token(b)}\t{float(c)!r}\n")

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "AlignModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 2 or lines[0] != ALIGN_HEADER or not lines[1].startswith(
            "diagonal_tension="
        ):
            raise AlignError(f"{path}: not a shortlex alignment model")
        tension = float(lines[1].split("=", 1)[1])
        src, tgt, prob = [], [], []
        for n, line in enumerate(lines[2:], start=3):
            parts = line.split("\t")
            if len(parts) != 3:
                raise AlignError(f"{path}:{n}: expected 3 tab-separated fields")
            src.append(vocab.lookup(parts[0]))
            tgt.append(vocab.lookup(parts[1]))
            prob.append(float(parts[2]))
        return cls(
            np.array(src, np.int64), np.array(tgt, np.int64), np.array(prob), tension
        )


def _strip_eos(seq: Sequence[int]) -> Sequence[int]:
    return seq[:-1] if len(seq) > 1 and seq[-1] == EOS else seq


def _as_id_pairs(pairs) -> list[tuple[Sequence[int], Sequence[int]]]:
    out = []
    for p in pairs:
        if isinstance(p, SentencePair):
            out.append((p.src, _strip_eos(p.tgt)))
        else:
            out.append((p[0], _strip_eos(p[1])))
    return out


def _diagonal_prior(I: int, J: int, tension: float) -> np.ndarray:
    """(I, J) matrix whose columns are distributions over source positions."""
    i = (np.arange(I) + 1.0) / I
    j = (np.arange(J) + 1.0) / J
    w = np.exp(-tension * np.abs(i[:, None] - j[None, :]))
    return w / w.sum(axis=0, keepdims=True)


def em_train(
    pairs: Iterable,
    iterations: int = 5,
    diagonal_tension: float = DEFAULT_TENSION,
    prune: float = PRUNE_BELOW,
) -> AlignModel:
    """Train t(target|source) by EM; ``model.log_likelihood[n]`` is the corpus
    log-likelihood under the table entering iteration ``n + 1``."""
    if iterations < 1:
        raise AlignError("iterations must be >= 1")
    if diagonal_tension < 0:
        raise AlignError("diagonal tension must be >= 0")
    id_pairs = [(s, t) for s, t in _as_id_pairs(pairs) if len(s) and len(t)]
    if not id_pairs:
        raise AlignError("cannot train an alignment model on an empty corpus")

    link_e, link_f, link_prior, link_group = [], [], [], []
    group = 0
    for s, t in id_pairs:
        s = np.asarray(s, np.int64)
        t = np.asarray(t, np.int64)
        I, J = len(s), len(t)
        prior = _diagonal_prior(I, J, diagonal_tension)
        link_e.append(np.repeat(s, J))
        link_f.append(np.tile(t, I))
        link_prior.append(prior.reshape(-1))
        link_group.append(group + np.tile(np.arange(J), I))
        group += J
    e = np.concatenate(link_e)
    f = np.concatenate(link_f)
    prior = np.concatenate(link_prior)
    grp = np.concatenate(link_group)

    base = int(f.max()) + 1
    uniq, link_pair = np.unique(e * base + f, return_inverse=True)
    pair_src, pair_tgt = uniq // base, uniq % base
    _, pair_src_idx = np.unique(pair_src, return_inverse=True)

    # uniform start over co-occurring targets
    n_per_src = np.bincount(pair_src_idx)
    prob = 1.0 / n_per_src[pair_src_idx]

    lls = []
    for it in range(iterations):
        num = prob[link_pair] * prior
        denom = np.bincount(grp, weights=num, minlength=group)
        lls.append(float(np.log(denom).sum()))
        post = num / denom[grp]
        counts = np.bincount(link_pair, weights=post, minlength=len(uniq))
        totals = np.bincount(pair_src_idx, weights=counts)
        prob = counts / totals[pair_src_idx]
        if prune > 0:
            prob = np.where(prob < prune, 0.0, prob)
            totals = np.bincount(pair_src_idx, weights=prob)
            prob = prob / totals[pair_src_idx]
        log.debug("em iteration %d: log-likelihood %.6f", it + 1, lls[-1])
    return AlignModel(pair_src, pair_tgt, prob, diagonal_tension, lls)


def corpus_log_likelihood(model: AlignModel, pairs) -> float:
    """Log-likelihood of ``pairs`` under ``model`` (independent of em_train's bookkeeping)."""
    table: dict[tuple[int, int], float] = {
        (int(a), int(b)): float(p) for a, b, p in zip(model.src, model.tgt, model.prob)
    }
    total = 0.0
    for s, t in _as_id_pairs(pairs):
        prior = _diagonal_prior(len(s), len(t), model.diagonal_tension)
        for j, fj in enumerate(t):
            total += np.log(
                sum(prior[i, j] * table.get((int(ei), int(fj)), 0.0) for i, ei in enumerate(s))
            )
    return float(total)


def adapt_lexicon(
    base_pairs: Sequence,
    adapt_pairs: Sequence,
    upsample: int = 10,
    iterations: int = 5,
    diagonal_tension: float = DEFAULT_TENSION,
) -> AlignModel:
    """Retrain on the base corpus plus ``upsample`` copies of the adaptation set."""
    if not base_pairs:
        raise AlignError("base corpus is empty")
    if upsample < 0:
        raise AlignError("upsample must be >= 0")
    return em_train(
        list(base_pairs) + list(adapt_pairs) * upsample, iterations, diagonal_tension
    )


# ---------------------------------------------------------------- lexicon


class TranslationLexicon:
    """Per-source ranked target lists, stored densely as ``(n_sources, k_max)``.

    Rows are padded with -1. Within a row entries are sorted by probability
    descending, ties by target id ascending, so ``top(e, k)`` for smaller k is
    always a prefix of the list for larger k.
    """

    def __init__(
        self,
        sources: np.ndarray,
        targets: np.ndarray,
        probs: np.ndarray,
        k_max: int | None = None,
    ):
        self.sources = np.asarray(sources, np.int64)
        self.targets = np.asarray(targets, np.int64)
        self.probs = np.asarray(probs, np.float64)
        if self.targets.ndim != 2 or self.targets.shape != self.probs.shape or len(self.targets) != len(self.sources):
            raise AlignError("lexicon arrays disagree in shape")
        self._k_max = self.targets.shape[1] if k_max is None else int(k_max)
        self._row = {int(s): r for r, s in enumerate(self.sources)}

    @property
    def k_max(self) -> int:
        """Largest k this lexicon was extracted for (rows may hold fewer entries)."""
        return self._k_max

    def __contains__(self, source_id) -> bool:
        return int(source_id) in self._row

    def entries(self, source_id: int) -> list[tuple[int, float]]:
        r = self._row.get(int(source_id))
        if r is None:
            return []
        keep = self.targets[r] >= 0
        return list(zip(self.targets[r][keep].tolist(), self.probs[r][keep].tolist()))

    def top(self, source_id: int, k: int) -> np.ndarray:
        r = self._row.get(int(source_id))
        if r is None:
            return np.empty(0, np.int64)
        row = self.targets[r, :k]
        return row[row >= 0]

    def stored_numbers(self) -> int:
        """Number of stored target-id entries (probabilities are not needed at lookup)."""
        return int((self.targets >= 0).sum())

    def truncate(self, k: int) -> "TranslationLexicon":
        return TranslationLexicon(
            self.sources, self.targets[:, :k], self.probs[:, :k], min(k, self.k_max)
        )

    def save(self, path, vocab: Vocabulary) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for s in self.sources:
                for t, p in self.entries(s):
                    f.write(f"{vocab.token(s)}\t{vocab.token(t)}\t{p:.6f}\n")

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "TranslationLexicon":
        rows: dict[int, list[tuple[int, float]]] = {}
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise AlignError(f"{path}:{n}: expected source<TAB>target<TAB>prob")
            rows.setdefault(vocab.lookup(parts[0]), []).append(
                (vocab.lookup(parts[1]), float(parts[2]))
            )
        return cls.from_rows(rows)

    @classmethod
    def from_rows(cls, rows: dict[int, list[tuple[int, float]]], k_max: int | None = None) -> "TranslationLexicon":
        """Build from ``{source: [(target, prob), ...]}``; rows are re-ranked."""
        rows = {int(s): sorted(v, key=lambda e: (-e[1], e[0])) for s, v in rows.items()}
        sources = np.array(sorted(rows), np.int64)
        k = max((len(v) for v in rows.values()), default=0)
        targets = np.full((len(sources), k), -1, np.int64)
        probs = np.zeros((len(sources), k))
        for r, s in enumerate(sources):
            for c, (t, p) in enumerate(rows[int(s)]):
                targets[r, c] = t
                probs[r, c] = p
        return cls(sources, targets, probs, k_max)


def extract_lexicon(model: AlignModel, k_max: int) -> TranslationLexicon:
    """Keep the ``k_max`` most probable targets per source id."""
    if k_max < 1:
        raise AlignError("k_max must be >= 1")
    keep = model.prob > 0
    s, t, p = model.src[keep], model.tgt[keep], model.prob[keep]
    order = np.lexsort((t, -p, s))
    s, t, p = s[order], t[order], p[order]
    sources, starts = np.unique(s, return_index=True)
    rank = np.arange(len(s)) - np.repeat(starts, np.diff(np.append(starts, len(s))))
    sel = rank < k_max
    k = int(min(k_max, rank.max() + 1)) if len(rank) else 0
    row = np.searchsorted(sources, s[sel])
    targets = np.full((len(sources), k), -1, np.int64)
    probs = np.zeros((len(sources), k))
    targets[row, rank[sel]] = t[sel]
    probs[row, rank[sel]] = p[sel]
    return TranslationLexicon(sources, targets, probs, k_max)


def lexicon_float_count(k: int, vocab_size: int) -> int:
    """Stored entries of a full top-k lexicon over ``vocab_size`` source tokens."""
    return k * vocab_size
