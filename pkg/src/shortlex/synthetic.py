"""Generated reversal-with-substitution translation task.

Source sentences are sequences of plain words ``s0 .. s{n-1}``. Each plain
word translates to its own target word (``s7 -> t7``) and the target order is
reversed. Some ordered word pairs are idioms: when ``sa sb`` appear adjacent,
they translate jointly to a single dedicated token instead of ``ta tb``.
Two idiom families exist:

* ``known`` idioms (target ``i{k}``) are common in the base corpus;
* ``new`` idioms (target ``j{k}``) are rare in the base corpus and make up the
  adaptation and adaptation-test sets.

The context-test set draws its idiom from both families.

Idiom component words also occur on their own, so the idiom token is only
predictable from context.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bench import EvalItem, save_eval_set
from .corpus import BpeModel, BpeSegmenter, SentencePair, Vocabulary, bpe_learn


@dataclass(frozen=True)
class TaskSpec:
    plain_words: int = 50
    known_idioms: int = 8
    new_idioms: int = 8
    min_len: int = 1
    max_len: int = 10
    known_rate: float = 0.35
    new_rate: float = 0.01

    def __post_init__(self):
        if 2 * (self.known_idioms + self.new_idioms) > self.plain_words:
            raise ValueError("not enough plain words for disjoint idiom pairs")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")


@dataclass
class Sample:
    """One raw pair; ``src_span``/``ref_span`` mark the idiom (word indices)."""

    src: list[str]
    tgt: list[str]
    src_span: Optional[tuple[int, int]] = None
    ref_span: Optional[tuple[int, int]] = None


class Task:
    def __init__(self, spec: TaskSpec = TaskSpec(), seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng([seed, 0x5EED])
        words = rng.permutation(spec.plain_words)
        n_k, n_n = spec.known_idioms, spec.new_idioms
        self.known = [(int(words[2 * i]), int(words[2 * i + 1])) for i in range(n_k)]
        off = 2 * n_k
        self.new = [(int(words[off + 2 * i]), int(words[off + 2 * i + 1])) for i in range(n_n)]
        self._pairs = {p: f"i{k}" for k, p in enumerate(self.known)}
        self._pairs.update({p: f"j{k}" for k, p in enumerate(self.new)})

    def _plain(self, rng, n: int) -> list[int]:
        """n plain words with no accidental idiom adjacency."""
        while True:
            ws = rng.integers(0, self.spec.plain_words, n).tolist()
            if not any((a, b) in self._pairs for a, b in zip(ws, ws[1:])):
                return ws

    def sample(self, rng, idiom: Optional[str] = None) -> Sample:
        """``idiom`` is None (base mix), "known", "new", "any" (either family) or "none"."""
        spec = self.spec
        if idiom is None:
            u = rng.random()
            idiom = "known" if u < spec.known_rate else "new" if u < spec.known_rate + spec.new_rate else "none"
        if idiom == "none":
            return self.render(self._plain(rng, int(rng.integers(spec.min_len, spec.max_len + 1))))
        pool = {"known": self.known, "new": self.new, "any": self.known + self.new}[idiom]
        pair = pool[int(rng.integers(len(pool)))]
        while True:
            n = int(rng.integers(max(0, spec.min_len - 2), spec.max_len - 1))
            ws = self._plain(rng, n)
            pos = int(rng.integers(0, n + 1))
            ws = ws[:pos] + list(pair) + ws[pos:]
            if not any((a, b) in self._pairs for i, (a, b) in enumerate(zip(ws, ws[1:])) if i != pos):
                return self.render(ws, idiom_at=pos)

    def render(self, ws: list[int], idiom_at: Optional[int] = None) -> Sample:
        units, i = [], 0
        spans = None
        while i < len(ws):
            if i + 1 < len(ws) and (ws[i], ws[i + 1]) in self._pairs:
                units.append((self._pairs[(ws[i], ws[i + 1])], i))
                i += 2
            else:
                units.append((f"t{ws[i]}", i))
                i += 1
        tgt = [u for u, _ in reversed(units)]
        if idiom_at is not None:
            j = [start for _, start in reversed(units)].index(idiom_at)
            spans = ((idiom_at, idiom_at + 2), (j, j + 1))
        src = [f"s{w}" for w in ws]
        return Sample(src, tgt, *(spans or (None, None)))

    def corpus(self, n: int, seed: int, idiom: Optional[str] = None) -> list[Sample]:
        rng = np.random.default_rng([seed, 0xDA7A])
        return [self.sample(rng, idiom) for _ in range(n)]


@dataclass
class Prepared:
    """BPE-segmented, id-encoded splits sharing one joint vocabulary."""

    task: Task
    bpe: BpeModel
    vocab: Vocabulary
    splits: dict = field(default_factory=dict)  # name -> list[Sample]

    def segment(self, words: list[str]) -> list[str]:
        return BpeSegmenter(self.bpe).sentence(words)

    def pairs(self, name: str) -> list[SentencePair]:
        seg = BpeSegmenter(self.bpe)
        return [
            SentencePair(tuple(self.vocab.encode(seg.sentence(s.src))), tuple(self.vocab.encode(seg.sentence(s.tgt), add_eos=True)))
            for s in self.splits[name]
        ]

    def items(self, name: str) -> list[EvalItem]:
        """Eval items; spans are mapped from word to subword indices."""
        seg = BpeSegmenter(self.bpe)
        out = []
        for s in self.splits[name]:
            src = [seg.word(w) for w in s.src]
            tgt = [seg.word(w) for w in s.tgt]
            spans = (None, None)
            if s.src_span is not None:
                spans = (_subword_span(src, s.src_span), _subword_span(tgt, s.ref_span))
            out.append(
                EvalItem(
                    tuple(self.vocab.encode([p for w in src for p in w])),
                    tuple(self.vocab.encode([p for w in tgt for p in w])),
                    *spans,
                )
            )
        return out


def _subword_span(words: list[list[str]], span: tuple[int, int]) -> tuple[int, int]:
    start = sum(len(w) for w in words[: span[0]])
    return start, start + sum(len(w) for w in words[span[0] : span[1]])


DEFAULT_SIZES = {"train": 20000, "valid": 500, "test": 500, "adapt": 300, "adapt_test": 300, "context_test": 300}


def prepare(seed: int = 0, spec: TaskSpec = TaskSpec(), sizes: Optional[dict] = None, merges: int = 10000) -> Prepared:
    """Generate every split, learn joint BPE on the training data, build the vocabulary.

    Split kinds: train/valid/test follow the base mix; adapt and adapt_test
    contain one new idiom each; context_test contains one idiom of either family.
    """
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    task = Task(spec, seed)
    kinds = {"train": None, "valid": None, "test": None, "adapt": "new", "adapt_test": "new", "context_test": "any"}
    splits = {name: task.corpus(n, seed * 1000 + i + 1, kinds[name]) for i, (name, n) in enumerate(sizes.items())}
    # every word occurs in the generator's inventory; learning on the inventory
    # plus training text keeps rare idiom tokens segmentable
    inventory = [[f"s{i}" for i in range(spec.plain_words)], [f"t{i}" for i in range(spec.plain_words)],
                 [f"i{k}" for k in range(spec.known_idioms)] + [f"j{k}" for k in range(spec.new_idioms)]]
    text = [s.src for s in splits["train"]] + [s.tgt for s in splits["train"]] + inventory
    bpe = bpe_learn(text, merges)
    seg = BpeSegmenter(bpe)
    vocab = Vocabulary.build(seg.sentence(s) for s in text)
    return Prepared(task, bpe, vocab, splits)


def write_files(prep: Prepared, out_dir) -> dict:
    """Plain-text split files (word level), BPE merges, vocabulary and eval TSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, samples in prep.splits.items():
        for side in ("src", "tgt"):
            p = out / f"{name}.{side}"
            p.write_text("".join(" ".join(getattr(s, side)) + "\n" for s in samples), encoding="utf-8")
            paths[f"{name}.{side}"] = p
        p = out / f"{name}.eval.tsv"
        save_eval_set(prep.items(name), p, prep.vocab)
        paths[f"{name}.eval"] = p
    prep.bpe.save(out / "merges.txt")
    prep.vocab.save(out / "vocab.txt")
    paths["merges"] = out / "merges.txt"
    paths["vocab"] = out / "vocab.txt"
    return paths
