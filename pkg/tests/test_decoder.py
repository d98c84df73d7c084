import itertools

import numpy as np
import pytest

from shortlex import decoder as D
from shortlex import nmt
from shortlex.corpus import EOS, SentencePair
from shortlex.numerics import log_softmax
from shortlex.selection import BagOfWords, NvsSelector, SelectionError


def random_model(V=12, seed=0, **kw):
    cfg = nmt.ModelConfig(V, V, d=8, enc_layers=1, dec_layers=2, heads=2, ffn=16, **kw)
    rng = np.random.default_rng(seed)
    params = {k: v + 0.3 * rng.standard_normal(v.shape) for k, v in nmt.init_params(cfg, seed).items()}
    return params, cfg


def exhaustive_best(table, alpha=1.0):
    """Best length-normalized sequence of length <= steps, EOS terminating."""
    steps, _, V = table.shape
    lp = log_softmax(table, axis=-1)
    best = None
    for n in range(1, steps + 1):
        for seq in itertools.product(range(V), repeat=n):
            if EOS in seq[:-1] or (n < steps and seq[-1] != EOS):
                continue
            prev, total = 2, 0.0
            for t, tok in enumerate(seq):
                total += lp[t, prev % table.shape[1], tok]
                prev = tok
            score = total / n**alpha
            if best is None or score > best[0]:
                best = (score, list(seq))
    return best


def test_hand_set_three_token_model():
    # specials other than EOS are effectively unreachable: 3 live tokens (EOS, 4, 5)
    V = 6
    table = np.full((2, V, V), -30.0)
    table[0, 2, [EOS, 4, 5]] = [0.0, 1.0, 0.8]
    table[1, :, [EOS, 4, 5]] = [[0.5] * V, [0.1] * V, [2.0] * V]
    table[1, 4, [EOS, 4, 5]] = [0.0, 0.0, 0.0]
    score, seq = exhaustive_best(table)
    res = D.beam_search(D.TableScorer(table), [4], config=D.BeamConfig(beam=2, max_len=2))
    assert res.tokens == seq
    assert res.score == pytest.approx(score, abs=1e-12)


def test_full_width_beam_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    for _ in range(30):
        V = 6
        table = rng.normal(0, 2, (2, V, V))
        score, seq = exhaustive_best(table)
        res = D.beam_search(D.TableScorer(table), [4], config=D.BeamConfig(beam=V, max_len=2))
        assert res.tokens == seq and res.score == pytest.approx(score, abs=1e-12)


def greedy(scorer, src, max_len):
    ctx = scorer.encode(src)
    state = scorer.init_state(ctx)
    W, b = scorer.projection()
    tok, out = np.array([2]), []
    for _ in range(max_len):
        hidden, state = scorer.step(ctx, state, tok)
        nxt = int(np.argmax(hidden @ W.T + b, axis=-1)[0])
        out.append(nxt)
        if nxt == EOS:
            break
        tok = np.array([nxt])
    return out


def test_beam_one_is_greedy():
    params, cfg = random_model()
    scorer = D.TransformerScorer(params, cfg, np.float64)
    rng = np.random.default_rng(1)
    for _ in range(10):
        src = rng.integers(4, cfg.src_vocab, rng.integers(1, 6)).tolist()
        res = D.beam_search(scorer, src, config=D.BeamConfig(beam=1))
        assert res.tokens == greedy(scorer, src, 2 * len(src) + 10)


def test_incremental_scorer_matches_teacher_forcing():
    params, cfg = random_model()
    scorer = D.TransformerScorer(params, cfg, np.float64)
    pair = SentencePair((4, 5, 6), (7, 8, 9, 10))
    ref = nmt.mt_loss(params, cfg, SentencePair(pair.src, pair.tgt))
    # without smoothing the per-token loss is the mean negative log-probability
    cfg0 = nmt.ModelConfig(**{**cfg.__dict__, "label_smoothing": 0.0})
    ref = nmt.mt_loss(params, cfg0, pair)
    got = -D.sequence_log_prob(scorer, pair.src, pair.tgt) / len(pair.tgt)
    assert got == pytest.approx(ref, rel=1e-10)


def test_full_bow_is_bitwise_identical():
    params, cfg = random_model(V=20, seed=3)
    scorer = D.TransformerScorer(params, cfg)
    rng = np.random.default_rng(2)
    for _ in range(10):
        src = rng.integers(4, 20, rng.integers(1, 8)).tolist()
        a = D.beam_search(scorer, src)
        b = D.beam_search(scorer, src, BagOfWords.full(20))
        assert a.tokens == b.tokens and a.score == b.score and b.vocab_size == 20


def test_restricted_output_stays_in_bag_and_scores_do_not_drop():
    params, cfg = random_model(V=20, seed=4)
    scorer = D.TransformerScorer(params, cfg, np.float64)
    rng = np.random.default_rng(5)
    for _ in range(10):
        src = rng.integers(4, 20, rng.integers(1, 6)).tolist()
        full = D.beam_search(scorer, src)
        extra = rng.choice(20, 3).tolist()
        bow = BagOfWords(full.tokens + extra)
        res = D.beam_search(scorer, src, bow)
        assert all(t in bow for t in res.tokens)
        assert res.vocab_size == len(bow)
        # the unconstrained output is reachable; renormalizing can only raise its probability
        assert D.sequence_log_prob(scorer, src, full.tokens, bow) >= full.log_prob - 1e-9


def test_bow_without_eos_is_rejected():
    params, cfg = random_model()

    class NoEos(BagOfWords):
        def __post_init__(self):
            object.__setattr__(self, "ids", np.asarray(self.ids, np.int64))

    with pytest.raises(SelectionError):
        D.beam_search(D.TransformerScorer(params, cfg), [4], NoEos(np.array([0, 1, 2, 4])))


def test_selector_path_and_timings():
    params, cfg = random_model()
    scorer = D.TransformerScorer(params, cfg)
    res = D.beam_search(scorer, [4, 5], selector=NvsSelector(0.0))
    assert res.vocab_size == cfg.tgt_vocab
    assert res.tokens == D.beam_search(scorer, [4, 5]).tokens
    assert set(res.timings) == {"encode", "select", "loop", "total"}
    assert res.finished or len(res.tokens) == 14


def test_length_limit_and_config():
    assert D.BeamConfig().length_limit(7) == 24
    assert D.BeamConfig().beam == 5
    with pytest.raises(ValueError):
        D.BeamConfig(beam=0)


class FakeClock:
    def __init__(self, tick=0.001):
        self.t, self.tick = 0.0, tick

    def __call__(self):
        self.t += self.tick
        return self.t


def test_constant_clock_gives_zero_ci():
    table = np.zeros((3, 6, 6))
    summary = D.time_decode(D.TableScorer(table), [[4], [5, 6]], repetitions=30, clock=FakeClock())
    assert summary.repetitions == 30
    for stage in summary.stages.values():
        assert stage.mean_ci == pytest.approx(0.0, abs=1e-15)
        assert stage.p90_ci == pytest.approx(0.0, abs=1e-15)
    assert summary.stages["encode"].mean == pytest.approx(0.001)
    assert [r["stage"] for r in summary.rows()] == ["encode", "select", "loop", "total"]
    with pytest.raises(ValueError):
        D.time_decode(D.TableScorer(table), [[4]], repetitions=0)


def test_ci_formula():
    vals = np.array([1.0, 2.0, 3.0, 4.0])
    assert D._ci95(vals) == pytest.approx(1.96 * np.std(vals, ddof=1) / 2)
