"""Recall, vocabulary size, sweeps, BLEU and the context/no-context comparison."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .aligner import TranslationLexicon
from .corpus import SPECIAL_IDS, Vocabulary, word_spans
from .selection import BagOfWords, select_align, select_nvs

log = logging.getLogger(__name__)

NVS_GRID = (0.99, 0.9, 0.5, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6)
ALIGN_GRID = tuple(range(100, 1001, 100)) + tuple(range(2000, 10001, 1000))
CSV_COLUMNS = ("selector", "param", "avg_vocab_size", "recall_sentence", "recall_span")


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class EvalItem:
    source: tuple[int, ...]
    reference: tuple[int, ...]
    src_span: Optional[tuple[int, int]] = None
    ref_span: Optional[tuple[int, int]] = None

    def __post_init__(self):
        for span, seq in ((self.src_span, self.source), (self.ref_span, self.reference)):
            if span is not None and not (0 <= span[0] < span[1] <= len(seq)):
                raise BenchError(f"span {span} outside sentence of length {len(seq)}")

    @property
    def has_span(self) -> bool:
        return self.ref_span is not None

    def span_reference(self) -> tuple[int, ...]:
        if self.ref_span is None:
            raise BenchError("span scope requested for an item without an annotated span")
        return self.reference[self.ref_span[0] : self.ref_span[1]]


def _parse_span(text: str) -> tuple[int, int]:
    a, _, b = text.partition(":")
    return int(a), int(b)


def load_eval_set(path, vocab: Vocabulary) -> list[EvalItem]:
    """Read ``source<TAB>reference[<TAB>s:e<TAB>s:e]`` lines of BPE tokens."""
    items = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 4):
            raise BenchError(f"{path}:{n}: expected 2 or 4 tab-separated fields")
        try:
            spans = (_parse_span(parts[2]), _parse_span(parts[3])) if len(parts) == 4 else (None, None)
            items.append(
                EvalItem(tuple(vocab.encode(parts[0].split())), tuple(vocab.encode(parts[1].split())), *spans)
            )
        except ValueError as e:
            raise BenchError(f"{path}:{n}: {e}") from None
    return items


def save_eval_set(items: Sequence[EvalItem], path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for it in items:
            fields = [" ".join(vocab.decode(it.source)), " ".join(vocab.decode(it.reference))]
            if it.has_span:
                fields += [f"{it.src_span[0]}:{it.src_span[1]}", f"{it.ref_span[0]}:{it.ref_span[1]}"]
            f.write("\t".join(fields) + "\n")


# ---------------------------------------------------------------- recall


def _content_ids(ids: Iterable[int]) -> np.ndarray:
    return np.setdiff1d(np.unique(np.asarray(list(ids), np.int64)), SPECIAL_IDS)


def _bow_ids(bow) -> np.ndarray:
    return bow.ids if isinstance(bow, BagOfWords) else np.unique(np.asarray(list(bow), np.int64))


def recall_counts(bow, item: EvalItem, scope: str = "sentence") -> tuple[int, int]:
    """(hits, unique reference tokens) over non-special ids in the given scope."""
    if scope == "sentence":
        ref = item.reference
    elif scope == "span":
        ref = item.span_reference()
    else:
        raise BenchError(f"unknown recall scope {scope!r}")
    uniq = _content_ids(ref)
    if len(uniq) == 0:
        raise BenchError("reference has no content tokens in this scope")
    return int(np.isin(uniq, _bow_ids(bow)).sum()), len(uniq)


def recall(bow, item: EvalItem, scope: str = "sentence") -> float:
    hits, total = recall_counts(bow, item, scope)
    return 100.0 * hits / total


def corpus_recall(bows: Sequence, items: Sequence[EvalItem], scope: str = "sentence", micro: bool = False) -> float:
    """Macro-average of per-sentence recall (or pooled counts with ``micro``)."""
    if len(bows) != len(items):
        raise BenchError("one bag of words per eval item is required")
    if not items:
        raise BenchError("empty eval set")
    counts = [recall_counts(b, it, scope) for b, it in zip(bows, items)]
    if micro:
        return 100.0 * sum(h for h, _ in counts) / sum(t for _, t in counts)
    return float(np.mean([100.0 * h / t for h, t in counts]))


def avg_vocab_size(bows: Sequence) -> float:
    if not bows:
        raise BenchError("need at least one sentence")
    return float(np.mean([len(_bow_ids(b)) for b in bows]))


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class BenchRecord:
    selector: str
    param: float
    avg_vocab_size: float
    recall_sentence: float
    recall_span: Optional[float] = None
    bleu: Optional[float] = None

    def csv_row(self) -> list:
        span = "" if self.recall_span is None else f"{self.recall_span:.4f}"
        param = f"{int(self.param)}" if self.selector == "align" else f"{self.param:g}"
        return [self.selector, param, f"{self.avg_vocab_size:.4f}", f"{self.recall_sentence:.4f}", span]


def capped_align_grid(grid: Sequence[int], k_max: int, vocab_size: int) -> list[int]:
    """Grid values capped at the lexicon depth and vocabulary size, duplicates dropped."""
    cap = min(k_max, vocab_size)
    out = []
    for k in grid:
        k = min(int(k), cap)
        if k >= 1 and k not in out:
            out.append(k)
    return out


def _record(tag, param, bows, items) -> BenchRecord:
    spans = [it for it in items if it.has_span]
    span_bows = [b for b, it in zip(bows, items) if it.has_span]
    return BenchRecord(
        tag,
        param,
        avg_vocab_size(bows),
        corpus_recall(bows, items, "sentence"),
        corpus_recall(span_bows, spans, "span") if spans else None,
    )


def nvs_probabilities(scorer, items: Sequence[EvalItem]) -> list[np.ndarray]:
    return [scorer.nvs_probs(scorer.encode(it.source)) for it in items]


def sweep_nvs(scorer, items: Sequence[EvalItem], grid: Sequence[float] = NVS_GRID, probs=None) -> list[BenchRecord]:
    """One record per threshold; the encoder runs once per sentence."""
    if not grid:
        raise BenchError("empty parameter grid")
    probs = nvs_probabilities(scorer, items) if probs is None else probs
    return [_record("nvs", lam, [select_nvs(z, lam) for z in probs], items) for lam in grid]


def sweep_align(
    lexicon: TranslationLexicon, items: Sequence[EvalItem], vocab_size: int, grid: Sequence[int] = ALIGN_GRID
) -> list[BenchRecord]:
    if not grid:
        raise BenchError("empty parameter grid")
    ks = capped_align_grid(grid, lexicon.k_max, vocab_size)
    return [_record("align", k, [select_align(lexicon, it.source, k) for it in items], items) for k in ks]


def write_sweep_csv(records: Sequence[BenchRecord], out) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="", encoding="utf-8") as f:
            write_sweep_csv(records, f)
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.csv_row())


def is_monotone(records: Sequence[BenchRecord], key: str = "param", descending: bool = False) -> bool:
    """Size and recalls are non-decreasing along the grid order given by ``key``."""
    rows = sorted(records, key=lambda r: getattr(r, key), reverse=descending)
    for a, b in zip(rows, rows[1:]):
        if b.avg_vocab_size < a.avg_vocab_size or b.recall_sentence < a.recall_sentence:
            return False
        if a.recall_span is not None and b.recall_span < a.recall_span:
            return False
    return True


# ---------------------------------------------------------------- BLEU


def bleu(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Corpus BLEU-4, exp smoothing, 13a tokenization.

    Orders with no n-grams in the whole corpus are skipped (effective order),
    so a corpus of very short lines scored against itself is still 100.
    """
    from sacrebleu.metrics import BLEU

    if len(hypotheses) != len(references):
        raise BenchError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise BenchError("empty corpus")
    metric = BLEU(smooth_method="exp", tokenize="13a", effective_order=True)
    score = metric.corpus_score(list(hypotheses), [list(references)]).score
    # float noise can land a hair above 100
    return float(min(100.0, max(0.0, score)))


# ---------------------------------------------------------------- context comparison


@dataclass(frozen=True)
class ContextFlags:
    all_ctx: bool
    all_nctx: bool

    @property
    def excl_ctx(self) -> bool:
        return self.all_ctx and not self.all_nctx

    @property
    def excl_nctx(self) -> bool:
        return self.all_nctx and not self.all_ctx


def _covers(bow: BagOfWords, ids) -> bool:
    return bool(np.isin(_content_ids(ids), bow.ids).all())


def noncontextual_bow(scorer, source: Sequence[int], words: Sequence[tuple[int, int]], lam: float) -> BagOfWords:
    """Union of bags predicted for each source word encoded on its own."""
    parts = [select_nvs(scorer.nvs_probs(scorer.encode(source[a:b])), lam).ids for a, b in words]
    return BagOfWords(np.unique(np.concatenate(parts)), tag=f"nvs-nctx({lam:g})")


def context_compare(
    scorer, items: Sequence[EvalItem], lam: float, vocab: Vocabulary
) -> list[ContextFlags]:
    """Per-sentence coverage of the reference span by contextual and
    word-by-word (non-contextual) NVS bags."""
    out = []
    for it in items:
        if not it.has_span:
            raise BenchError("context comparison needs annotated spans on every item")
        words = word_spans([vocab.token(i) for i in it.source])
        ctx_bow = select_nvs(scorer.nvs_probs(scorer.encode(it.source)), lam)
        nctx_bow = noncontextual_bow(scorer, it.source, words, lam)
        span = it.span_reference()
        out.append(ContextFlags(_covers(ctx_bow, span), _covers(nctx_bow, span)))
    return out


def context_summary(flags_by_lambda: dict) -> list[dict]:
    """Percentages of sentences per threshold: All (both columns) and All excl."""
    rows = []
    for lam, flags in flags_by_lambda.items():
        n = len(flags)
        pct = lambda attr: 100.0 * sum(getattr(f, attr) for f in flags) / n
        rows.append({"lambda": lam, "row": "All", "ctx": pct("all_ctx"), "nctx": pct("all_nctx")})
        rows.append({"lambda": lam, "row": "All excl", "ctx": pct("excl_ctx"), "nctx": pct("excl_nctx")})
    return rows


def format_context_report(flags_by_lambda: dict) -> str:
    buf = io.StringIO()
    buf.write("lambda\tsentence\tall_ctx\tall_nctx\texcl_ctx\texcl_nctx\n")
    for lam, flags in flags_by_lambda.items():
        for i, f in enumerate(flags):
            buf.write(f"{lam:g}\t{i}\t{int(f.all_ctx)}\t{int(f.all_nctx)}\t{int(f.excl_ctx)}\t{int(f.excl_nctx)}\n")
    buf.write("\n# summary (percent of sentences)\nlambda\trow\tctx\tnctx\n")
    for r in context_summary(flags_by_lambda):
        buf.write(f"{r['lambda']:g}\t{r['row']}\t{r['ctx']:.2f}\t{r['nctx']:.2f}\n")
    return buf.getvalue()
