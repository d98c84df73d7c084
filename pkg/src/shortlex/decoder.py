"""Beam search over full or reduced output projections, with stage timings.

A *scorer* supplies everything model-specific:

``encode(source_ids) -> ctx``, ``projection() -> (W, b)``,
``init_state(ctx) -> state``, ``step(ctx, state, tokens) -> (hidden, state)``,
``reorder(state, index) -> state`` and optionally ``nvs_probs(ctx)``.

The search itself owns the output layer: each step computes
``hidden @ W.T + b`` with either the full ``(W, b)`` or the rows gathered for
the sentence's bag of words, which is the only difference between
unconstrained and constrained decoding.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import nmt
from .corpus import BOS, EOS
from .numerics import layer_norm, log_softmax
from .selection import BagOfWords, SelectionError, build_mapping, restrict_projection

Clock = Callable[[], float]


@dataclass(frozen=True)
class BeamConfig:
    beam: int = 5
    alpha: float = 1.0
    max_len: Optional[int] = None  # default 2 * source length + 10

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.max_len is not None and self.max_len < 1:
            raise ValueError("max_len must be >= 1")

    def length_limit(self, source_len: int) -> int:
        return self.max_len if self.max_len is not None else 2 * source_len + 10


@dataclass
class DecodeResult:
    tokens: list[int]
    score: float  # length-normalized log-probability
    log_prob: float
    vocab_size: int
    timings: dict = field(default_factory=dict)

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS


# ---------------------------------------------------------------- scorers


@dataclass
class _Context:
    enc: nmt.EncoderStates
    cross: list  # per decoder layer: (K, V), each (1, heads, S, dh)


class TransformerScorer:
    """Incremental decoder over :mod:`shortlex.nmt` parameters.

    Self-attention keys and values are cached per hypothesis; cross-attention
    keys and values are computed once per sentence.
    """

    def __init__(self, params: dict, cfg: nmt.ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.P = nmt.cast_params(params, dtype)
        self._pe = nmt.positional_encoding(64, cfg.d).astype(dtype)

    @property
    def vocab_size(self) -> int:
        return self.cfg.tgt_vocab

    def _split(self, x):
        n, t, _ = x.shape
        h = self.cfg.heads
        return x.reshape(n, t, h, -1).transpose(0, 2, 1, 3)

    def encode(self, source_ids) -> _Context:
        enc = nmt.encode(self.P, self.cfg, source_ids)
        H = enc.H[None]
        cross = []
        for l in range(self.cfg.dec_layers):
            p = f"dec.{l}.cross"
            cross.append((self._split(H @ self.P[p + ".wk"]), self._split(H @ self.P[p + ".wv"])))
        return _Context(enc, cross)

    def nvs_probs(self, ctx: _Context) -> np.ndarray:
        return nmt.nvs_forward(self.P, ctx.enc)

    def projection(self):
        return self.P["out.w"], self.P["out.b"]

    def init_state(self, ctx: _Context) -> dict:
        h, dh = self.cfg.heads, self.cfg.d // self.cfg.heads
        empty = np.zeros((1, h, 0, dh), self.dtype)
        return {"t": 0, "k": [empty] * self.cfg.dec_layers, "v": [empty] * self.cfg.dec_layers}

    def reorder(self, state: dict, index: np.ndarray) -> dict:
        return {"t": state["t"], "k": [k[index] for k in state["k"]], "v": [v[index] for v in state["v"]]}

    @staticmethod
    def _attend(q, k, v):
        s = q @ k.transpose(0, 1, 3, 2) * (1.0 / math.sqrt(q.shape[-1]))
        s = s - s.max(axis=-1, keepdims=True)
        w = np.exp(s)
        w /= w.sum(axis=-1, keepdims=True)
        return w @ v

    def _merge(self, x):
        n = x.shape[0]
        return x.transpose(0, 2, 1, 3).reshape(n, 1, self.cfg.d)

    def step(self, ctx: _Context, state: dict, tokens: np.ndarray):
        P, cfg = self.P, self.cfg
        t = state["t"]
        if t >= len(self._pe):
            self._pe = nmt.positional_encoding(2 * t + 1, cfg.d).astype(self.dtype)
        x = (P["tgt_emb"][tokens] * math.sqrt(cfg.d) + self._pe[t])[:, None, :]
        ks, vs = [], []
        for l in range(cfg.dec_layers):
            p = f"dec.{l}"
            h = layer_norm(x, P[p + ".ln1.g"], P[p + ".ln1.b"])
            k = np.concatenate([state["k"][l], self._split(h @ P[p + ".self.wk"])], axis=2)
            v = np.concatenate([state["v"][l], self._split(h @ P[p + ".self.wv"])], axis=2)
            ks.append(k)
            vs.append(v)
            a = self._attend(self._split(h @ P[p + ".self.wq"]), k, v)
            x = x + self._merge(a) @ P[p + ".self.wo"]
            h = layer_norm(x, P[p + ".ln2.g"], P[p + ".ln2.b"])
            ck, cv = ctx.cross[l]
            a = self._attend(self._split(h @ P[p + ".cross.wq"]), ck, cv)
            x = x + self._merge(a) @ P[p + ".cross.wo"]
            h = layer_norm(x, P[p + ".ln3.g"], P[p + ".ln3.b"])
            f = nmt.gelu(h @ P[p + ".ffn.w1"] + P[p + ".ffn.b1"])
            x = x + f @ P[p + ".ffn.w2"] + P[p + ".ffn.b2"]
        x = layer_norm(x, P["dec.ln.g"], P["dec.ln.b"])
        return x[:, 0, :], {"t": t + 1, "k": ks, "v": vs}


class TableScorer:
    """Hand-set Markov model: logits depend on (step, previous token) only.

    ``table[t, prev]`` holds the logits at step ``t`` after token ``prev``
    (BOS before the first step). The hidden state is a one-hot over
    ``(t, prev)`` and the table is exposed as the output projection.
    """

    def __init__(self, table: np.ndarray, nvs: Optional[np.ndarray] = None):
        self.table = np.asarray(table, np.float64)
        self.steps, self.n_prev, self.V = self.table.shape
        self.W = self.table.reshape(-1, self.V).T.copy()
        self.b = np.zeros(self.V)
        self.nvs = nvs

    @property
    def vocab_size(self) -> int:
        return self.V

    def encode(self, source_ids):
        return list(source_ids)

    def nvs_probs(self, ctx):
        return np.ones(self.V) if self.nvs is None else self.nvs

    def projection(self):
        return self.W, self.b

    def init_state(self, ctx):
        return 0

    def reorder(self, state, index):
        return state

    def step(self, ctx, state, tokens):
        t = min(state, self.steps - 1)
        hidden = np.zeros((len(tokens), self.steps * self.n_prev))
        hidden[np.arange(len(tokens)), t * self.n_prev + np.asarray(tokens) % self.n_prev] = 1.0
        return hidden, state + 1


# ---------------------------------------------------------------- search


def _top_candidates(cand: np.ndarray, full_ids: np.ndarray, k: int):
    """Best ``k`` (hyp, reduced id) cells ordered by score, then token id, then hyp."""
    flat = cand.ravel()
    if flat.size > k:
        kth = np.partition(flat, flat.size - k)[flat.size - k]
        idx = np.flatnonzero(flat >= kth)
    else:
        idx = np.arange(flat.size)
    hyp, col = np.divmod(idx, cand.shape[1])
    order = np.lexsort((hyp, full_ids[col], -flat[idx]))[:k]
    return hyp[order], col[order], flat[idx[order]]


def beam_search(
    scorer,
    source_ids: Sequence[int],
    bow: Optional[BagOfWords] = None,
    config: BeamConfig = BeamConfig(),
    *,
    selector=None,
    clock: Clock = time.perf_counter,
) -> DecodeResult:
    """Length-normalized beam search; ``bow=None`` and no selector means the full vocabulary."""
    t0 = clock()
    ctx = scorer.encode(source_ids)
    t1 = clock()
    if selector is not None:
        bow = selector.select(source_ids, scorer, ctx)
    W, b = scorer.projection()
    if bow is None:
        full_ids = np.arange(W.shape[0])
    else:
        if EOS not in bow:
            raise SelectionError("bag of words lacks EOS; decoding could never stop")
        mapping = build_mapping(bow)
        W, b = restrict_projection({"out.w": W, "out.b": b}, mapping)
        full_ids = mapping.inverse
    t2 = clock()

    K = config.beam
    limit = config.length_limit(len(source_ids))
    state = scorer.init_state(ctx)
    tokens = np.array([BOS])
    history = np.zeros((1, 0), np.int64)
    scores = np.zeros(1)
    finished: list[tuple[float, float, list[int]]] = []
    for step in range(limit):
        hidden, state = scorer.step(ctx, state, tokens)
        logp = log_softmax(hidden @ W.T + b, axis=-1)
        hyp, col, total = _top_candidates(scores[:, None] + logp, full_ids, K)
        new_tok = full_ids[col]
        history = np.concatenate([history[hyp], new_tok[:, None]], axis=1)
        done = new_tok == EOS
        if step == limit - 1:
            done[:] = True
        length = step + 1
        for h in np.flatnonzero(done):
            finished.append((total[h] / length**config.alpha, float(total[h]), history[h].tolist()))
        keep = np.flatnonzero(~done)
        if len(finished) >= K or len(keep) == 0:
            break
        state = scorer.reorder(state, hyp[keep])
        tokens = new_tok[keep]
        scores = total[keep]
        history = history[keep]
    t3 = clock()
    # stable sort keeps the earlier-found hypothesis on exact score ties
    best = sorted(finished, key=lambda f: -f[0])[0]
    return DecodeResult(
        tokens=best[2],
        score=float(best[0]),
        log_prob=best[1],
        vocab_size=len(full_ids),
        timings={"encode": t1 - t0, "select": t2 - t1, "loop": t3 - t2, "total": t3 - t0},
    )


def sequence_log_prob(scorer, source_ids, tokens: Sequence[int], bow: Optional[BagOfWords] = None) -> float:
    """Teacher-forced log-probability of ``tokens`` under the (optionally reduced) softmax."""
    ctx = scorer.encode(source_ids)
    W, b = scorer.projection()
    full_ids = np.arange(W.shape[0])
    if bow is not None:
        mapping = build_mapping(bow)
        W, b = restrict_projection({"out.w": W, "out.b": b}, mapping)
        full_ids = mapping.inverse
    col = {int(f): i for i, f in enumerate(full_ids)}
    state = scorer.init_state(ctx)
    prev = np.array([BOS])
    total = 0.0
    for tok in tokens:
        hidden, state = scorer.step(ctx, state, prev)
        if int(tok) not in col:
            return -math.inf
        total += float(log_softmax(hidden @ W.T + b, axis=-1)[0, col[int(tok)]])
        prev = np.array([tok])
    return total


# ---------------------------------------------------------------- timing


@dataclass
class StageStats:
    mean: float
    mean_ci: float
    p90: float
    p90_ci: float


@dataclass
class LatencySummary:
    repetitions: int
    sentences: int
    avg_vocab_size: float
    stages: dict

    def rows(self) -> list[dict]:
        return [
            {"stage": s, "mean_ms": 1e3 * v.mean, "mean_ci_ms": 1e3 * v.mean_ci,
             "p90_ms": 1e3 * v.p90, "p90_ci_ms": 1e3 * v.p90_ci}
            for s, v in self.stages.items()
        ]


def _ci95(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / math.sqrt(len(values)))


def time_decode(
    scorer,
    sentences: Sequence[Sequence[int]],
    selector=None,
    repetitions: int = 30,
    config: BeamConfig = BeamConfig(),
    clock: Clock = time.perf_counter,
    warmup: bool = True,
) -> LatencySummary:
    """Batch-1 latency: per repetition, the mean and p90 of per-sentence wall
    clock; reported as the average over repetitions with a normal 95% CI."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not sentences:
        raise ValueError("no sentences to time")
    if warmup:
        for s in sentences:
            beam_search(scorer, s, config=config, selector=selector, clock=clock)
    stages = ("encode", "select", "loop", "total")
    means = {s: np.zeros(repetitions) for s in stages}
    p90s = {s: np.zeros(repetitions) for s in stages}
    sizes = []
    for r in range(repetitions):
        per = {s: [] for s in stages}
        for src in sentences:
            res = beam_search(scorer, src, config=config, selector=selector, clock=clock)
            for s in stages:
                per[s].append(res.timings[s])
            if r == 0:
                sizes.append(res.vocab_size)
        for s in stages:
            arr = np.array(per[s])
            means[s][r] = arr.mean()
            p90s[s][r] = np.percentile(arr, 90)
    return LatencySummary(
        repetitions,
        len(sentences),
        float(np.mean(sizes)),
        {
            s: StageStats(float(means[s].mean()), _ci95(means[s]), float(p90s[s].mean()), _ci95(p90s[s]))
            for s in stages
        },
    )
