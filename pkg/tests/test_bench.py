import io
import math

import numpy as np
import pytest

from shortlex import bench as Bn
from shortlex.aligner import TranslationLexicon
from shortlex.corpus import EOS, Vocabulary
from shortlex.selection import BagOfWords


def test_recall_examples():
    x, y, z = 4, 5, 6
    item = Bn.EvalItem((4,), (x, y, z, EOS))
    assert Bn.recall(BagOfWords([x, y]), item) == pytest.approx(200 / 3)
    assert Bn.recall(BagOfWords.full(10), item) == 100.0
    with pytest.raises(Bn.BenchError):
        Bn.recall(BagOfWords([x]), item, "span")
    with pytest.raises(Bn.BenchError):
        Bn.recall(BagOfWords([x]), Bn.EvalItem((4,), (EOS,)))


def test_span_recall_can_exceed_sentence_recall():
    # span covers only the selected token; the rest of the sentence is missed
    item = Bn.EvalItem((4, 5), (4, 5, 6, 7), (0, 1), (0, 1))
    bow = BagOfWords([4])
    assert Bn.recall(bow, item, "span") == 100.0
    assert Bn.recall(bow, item, "sentence") == 25.0
    # and the other way round
    item2 = Bn.EvalItem((4, 5), (4, 5, 6, 7), (0, 1), (3, 4))
    assert Bn.recall(bow, item2, "span") == 0.0 < Bn.recall(bow, item2, "sentence")


def test_recall_monotone_under_superset():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ref = tuple(rng.integers(4, 30, rng.integers(1, 8)).tolist())
        item = Bn.EvalItem((4,), ref, (0, 1), (0, max(1, len(ref) // 2)))
        small = rng.choice(30, 5)
        big = np.concatenate([small, rng.choice(30, 5)])
        for scope in ("sentence", "span"):
            assert Bn.recall(BagOfWords(small), item, scope) <= Bn.recall(BagOfWords(big), item, scope)


def test_macro_and_micro_average():
    items = [Bn.EvalItem((4,), (4,)), Bn.EvalItem((4,), (5, 6, 7))]
    bows = [BagOfWords([4]), BagOfWords([])]
    assert Bn.corpus_recall(bows, items) == 50.0
    assert Bn.corpus_recall(bows, items, micro=True) == 25.0


def test_avg_vocab_size():
    assert Bn.avg_vocab_size([np.arange(100), np.arange(300)]) == 200
    assert Bn.avg_vocab_size([BagOfWords.full(37)]) == 37
    assert Bn.avg_vocab_size([BagOfWords([9])]) == 5
    with pytest.raises(Bn.BenchError):
        Bn.avg_vocab_size([])


def test_eval_item_span_validation_and_file(tmp_path):
    with pytest.raises(Bn.BenchError):
        Bn.EvalItem((4,), (4, 5), (0, 2), (0, 1))
    vocab = Vocabulary(["a</w>", "b</w>", "c</w>"])
    items = [Bn.EvalItem((4, 5), (6,), (0, 1), (0, 1)), Bn.EvalItem((4,), (5, 6))]
    Bn.save_eval_set(items, tmp_path / "e.tsv", vocab)
    assert (tmp_path / "e.tsv").read_text().splitlines()[0] == "a</w> b</w>\tc</w>\t0:1\t0:1"
    assert Bn.load_eval_set(tmp_path / "e.tsv", vocab) == items
    (tmp_path / "bad.tsv").write_text("a</w>\tb</w>\t0:5\t0:1\n")
    with pytest.raises(Bn.BenchError):
        Bn.load_eval_set(tmp_path / "bad.tsv", vocab)


def _toy_setup(seed=0, V=40, n=30):
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n):
        src = tuple(rng.integers(4, V, rng.integers(2, 6)).tolist())
        ref = tuple(rng.integers(4, V, rng.integers(2, 6)).tolist()) + (EOS,)
        items.append(Bn.EvalItem(src, ref, (0, 1), (0, 1)))

    class RandomNvs:
        def encode(self, src):
            return src

        def nvs_probs(self, src):
            r = np.random.default_rng(list(src))
            return r.random(V) ** 4

    rows = {s: [(int(t), float(p)) for t, p in zip(rng.permutation(V)[:20], np.sort(rng.random(20))[::-1])] for s in range(4, V)}
    return items, RandomNvs(), TranslationLexicon.from_rows(rows)


def test_sweeps_are_monotone_and_csv_shape():
    items, scorer, lex = _toy_setup()
    nvs = Bn.sweep_nvs(scorer, items)
    assert [r.param for r in nvs] == list(Bn.NVS_GRID)
    assert Bn.is_monotone(nvs, descending=True)
    align = Bn.sweep_align(lex, items, 40)
    assert [r.param for r in align] == [20]  # paper grid capped at K_max
    assert Bn.is_monotone(Bn.sweep_align(lex, items, 40, grid=range(1, 21)))
    buf = io.StringIO()
    Bn.write_sweep_csv(nvs + align, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "selector,param,avg_vocab_size,recall_sentence,recall_span"
    assert lines[1].startswith("nvs,0.99,") and lines[-1].startswith("align,20,")
    with pytest.raises(Bn.BenchError):
        Bn.sweep_nvs(scorer, items, grid=())


def test_default_grids():
    assert Bn.NVS_GRID == (0.99, 0.9, 0.5, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6)
    assert Bn.ALIGN_GRID[:3] == (100, 200, 300) and Bn.ALIGN_GRID[9:12] == (1000, 2000, 3000)
    assert Bn.ALIGN_GRID[-1] == 10000 and len(Bn.ALIGN_GRID) == 19
    assert Bn.capped_align_grid(Bn.ALIGN_GRID, 1000, 32953)[-1] == 1000
    assert Bn.capped_align_grid([100, 200], 1000, 150) == [100, 150]


def _hand_bleu(hyp, ref):
    """Single-sentence BLEU-4 with the exp smoothing for zero n-gram counts."""
    h, r = hyp.split(), ref.split()
    logs, k = [], 1
    for n in range(1, 5):
        hg = [tuple(h[i : i + n]) for i in range(len(h) - n + 1)]
        rg = [tuple(r[i : i + n]) for i in range(len(r) - n + 1)]
        match = sum(min(hg.count(g), rg.count(g)) for g in set(hg))
        if match == 0:
            k *= 2
            logs.append(math.log(1 / (k * len(hg))))
        else:
            logs.append(math.log(match / len(hg)))
    bp = 1.0 if len(h) >= len(r) else math.exp(1 - len(r) / len(h))
    return 100 * bp * math.exp(sum(logs) / 4)


def test_bleu_matches_hand_evaluation():
    # precisions 4/5, 3/4, 2/3, 1/2, no brevity penalty: 100 * (1/5) ** (1/4)
    assert _hand_bleu("a b c d e", "a b c d f") == pytest.approx(100 * 0.2**0.25)
    assert Bn.bleu(["a b c d e"], ["a b c d f"]) == pytest.approx(66.87403049764218, abs=1e-9)
    assert Bn.bleu(["a b c d e"], ["a b c d f"]) == pytest.approx(_hand_bleu("a b c d e", "a b c d f"), abs=1e-9)
    assert Bn.bleu(["x y z w"], ["x y q w v"]) == pytest.approx(_hand_bleu("x y z w", "x y q w v"), abs=1e-9)


def test_bleu_bounds_and_errors():
    assert Bn.bleu(["the cat sat", "a dog"], ["the cat sat", "a dog"]) == 100.0
    assert Bn.bleu(["p q r s"], ["a b c d"]) == 0.0
    assert Bn.bleu(["a"], ["a"]) == 100.0
    with pytest.raises(Bn.BenchError):
        Bn.bleu(["a"], ["a", "b"])


def test_context_flags():
    same = Bn.ContextFlags(True, True)
    assert not same.excl_ctx and not same.excl_nctx
    assert Bn.ContextFlags(True, False).excl_ctx


class PairScorer:
    """NVS stub: the token 9 is predicted only when 4 and 5 are seen together."""

    def encode(self, src):
        return tuple(src)

    def nvs_probs(self, src):
        z = np.full(12, 0.01)
        z[[s + 2 for s in src]] = 0.95
        if 4 in src and 5 in src:
            z[9] = 0.95
        return z


def test_context_compare_and_summary():
    vocab = Vocabulary(["a</w>", "b</w>", "c</w>", "d</w>", "e</w>", "f</w>", "g</w>", "h</w>"])
    items = [
        Bn.EvalItem((4, 5), (9, EOS), (0, 2), (0, 1)),  # needs context
        Bn.EvalItem((4, 6), (6, 8), (0, 2), (0, 2)),  # word by word is enough
    ]
    flags = Bn.context_compare(PairScorer(), items, 0.9, vocab)
    assert flags[0] == Bn.ContextFlags(True, False)
    assert flags[1] == Bn.ContextFlags(True, True)
    rows = Bn.context_summary({0.9: flags, 0.99: flags})
    assert [(r["lambda"], r["row"]) for r in rows] == [(0.9, "All"), (0.9, "All excl"), (0.99, "All"), (0.99, "All excl")]
    assert rows[0]["ctx"] == 100.0 and rows[0]["nctx"] == 50.0
    assert rows[1]["ctx"] == 50.0 and rows[1]["nctx"] == 0.0
    report = Bn.format_context_report({0.9: flags})
    assert "0.9\tAll excl\t50.00\t0.00" in report
    with pytest.raises(Bn.BenchError):
        Bn.context_compare(PairScorer(), [Bn.EvalItem((4,), (5,))], 0.9, vocab)


def test_noncontextual_groups_subwords_of_one_word():
    seen = []

    class Recorder(PairScorer):
        def encode(self, src):
            seen.append(tuple(src))
            return tuple(src)

    Bn.noncontextual_bow(Recorder(), (4, 5, 6), [(0, 2), (2, 3)], 0.9)
    assert seen == [(4, 5), (6,)]
