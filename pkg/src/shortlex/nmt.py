"""Toy pre-norm transformer with an output projection and an NVS head.

Parameters live in a flat ``dict[str, np.ndarray]``. The forward functions are
written against :mod:`shortlex.numerics`, so they run on bare arrays for
inference and on a :class:`~shortlex.numerics.Tape` for training.

Shapes: batches are ``(B, T)`` id arrays; hidden states are ``(B, T, d)``.
The output projection ``out.w`` and NVS weight ``nvs.w`` are ``(V, d)``.
"""

from __future__ import annotations

import io
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import numerics as nx
from .corpus import BOS, EOS, PAD, SentencePair, extract_bow

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "SHORTLEX-MODEL"
CHECKPOINT_VERSION = 1
NEG_INF = -1e9


class TrainingError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class CheckpointError(ValueError):
    pass


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    """Independent generator for one named stage of a seeded run."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(stage.encode())])


@dataclass
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    d: int = 64
    enc_layers: int = 4
    dec_layers: int = 2
    heads: int = 4
    ffn: int = 256
    label_smoothing: float = 0.1
    pos_weight: float = 1000.0
    # when set, the positive weight is x * (V - n_p) / n_p per sentence
    pos_weight_auto: Optional[float] = None
    dropout: float = 0.1

    def __post_init__(self):
        for name in ("src_vocab", "tgt_vocab", "d", "heads", "ffn"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.enc_layers < 0 or self.dec_layers < 0:
            raise ValueError("layer counts must be >= 0")
        if self.d % self.heads:
            raise ValueError("d must be divisible by heads")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label smoothing must be in [0, 1)")
        if self.pos_weight < 1.0:
            raise ValueError("pos_weight must be >= 1")
        if self.pos_weight_auto is not None and self.pos_weight_auto <= 0:
            raise ValueError("auto positive-weight factor must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_lines(self) -> list[str]:
        return [f"{k}={'' if v is None else v}" for k, v in asdict(self).items()]

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in lines:
            key, _, raw = line.partition("=")
            if key not in types:
                raise CheckpointError(f"unknown config key {key!r}")
            if raw == "":
                kw[key] = None
            elif key in ("label_smoothing", "pos_weight", "pos_weight_auto", "dropout"):
                kw[key] = float(raw)
            else:
                kw[key] = int(raw)
        try:
            return cls(**kw)
        except (TypeError, ValueError) as e:
            raise CheckpointError(f"bad config block: {e}") from None


# ---------------------------------------------------------------- parameters


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d, cfg.ffn
    shapes: dict[str, tuple[int, ...]] = {
        "src_emb": (cfg.src_vocab, d),
        "tgt_emb": (cfg.tgt_vocab, d),
    }

    def ln(prefix):
        shapes[prefix + ".g"] = (d,)
        shapes[prefix + ".b"] = (d,)

    def att(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (d, d)

    def ff(prefix):
        shapes[prefix + ".w1"] = (d, f)
        shapes[prefix + ".b1"] = (f,)
        shapes[prefix + ".w2"] = (f, d)
        shapes[prefix + ".b2"] = (d,)

    for l in range(cfg.enc_layers):
        ln(f"enc.{l}.ln1")
        att(f"enc.{l}.att")
        ln(f"enc.{l}.ln2")
        ff(f"enc.{l}.ffn")
    ln("enc.ln")
    for l in range(cfg.dec_layers):
        ln(f"dec.{l}.ln1")
        att(f"dec.{l}.self")
        ln(f"dec.{l}.ln2")
        att(f"dec.{l}.cross")
        ln(f"dec.{l}.ln3")
        ff(f"dec.{l}.ffn")
    ln("dec.ln")
    shapes["out.w"] = (cfg.tgt_vocab, d)
    shapes["out.b"] = (cfg.tgt_vocab,)
    shapes["nvs.w"] = (cfg.tgt_vocab, d)
    shapes["nvs.b"] = (cfg.tgt_vocab,)
    return shapes


def param_group(name: str) -> str:
    if name == "src_emb" or name.startswith("enc."):
        return "encoder"
    if name == "tgt_emb" or name.startswith("dec."):
        return "decoder"
    if name.startswith("out."):
        return "output"
    if name.startswith("nvs."):
        return "nvs"
    raise KeyError(name)


def parameter_counts(shapes: dict[str, tuple[int, ...]]) -> dict[str, int]:
    counts = {"encoder": 0, "decoder": 0, "output": 0, "nvs": 0}
    for name, shape in shapes.items():
        counts[param_group(name)] += int(np.prod(shape))
    counts["total"] = sum(counts.values())
    return counts


def nvs_parameter_count(vocab_size: int, d: int) -> int:
    return vocab_size * d + vocab_size


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> dict[str, np.ndarray]:
    rng = stage_rng(seed, "init")
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape, dtype)
        elif len(shape) == 1:
            params[name] = np.zeros(shape, dtype)
        elif name.endswith("_emb"):
            params[name] = rng.normal(0.0, cfg.d**-0.5, shape).astype(dtype)
        else:
            # (V, d) projections and (in, out) matrices are both scaled by fan-in d or ffn
            fan_in = shape[1] if name in ("out.w", "nvs.w") else shape[0]
            params[name] = rng.normal(0.0, fan_in**-0.5, shape).astype(dtype)
    return params


def cast_params(params: dict[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    return {k: v.astype(dtype) for k, v in params.items()}


# ---------------------------------------------------------------- building blocks


def positional_encoding(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def gelu(x):
    """tanh-approximated GELU, built from tape primitives so it stays smooth."""
    xv = nx.value(x)
    c = math.sqrt(2.0 / math.pi)
    x2 = xv * xv
    t = np.tanh(c * xv * (1.0 + 0.044715 * x2))
    out_v = 0.5 * xv * (1.0 + t)
    tape = nx._tape_of(x)
    if tape is None:
        return out_v
    dinner = c * (1.0 + 3 * 0.044715 * x2)
    deriv = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * dinner
    return tape.record(nx.Var(out_v, tape), (x,), lambda g: (g * deriv,))


class _Dropout:
    def __init__(self, rate: float, rng: Optional[np.random.Generator]):
        self.rate = rate if rng is not None else 0.0
        self.rng = rng

    def __call__(self, x):
        if self.rate == 0.0:
            return x
        shape = nx.value(x).shape
        keep = (self.rng.random(shape) >= self.rate) / (1.0 - self.rate)
        return nx.mul(x, keep)


def _ln(P, prefix, x):
    return nx.layer_norm(x, P[prefix + ".g"], P[prefix + ".b"])


def _attention(P, prefix, xq, xkv, bias, heads):
    B, Tq, d = nx.value(xq).shape
    Tk = nx.value(xkv).shape[1]
    dh = d // heads
    q = nx.transpose(nx.reshape(nx.matmul(xq, P[prefix + ".wq"]), (B, Tq, heads, dh)), (0, 2, 1, 3))
    k = nx.transpose(nx.reshape(nx.matmul(xkv, P[prefix + ".wk"]), (B, Tk, heads, dh)), (0, 2, 3, 1))
    v = nx.transpose(nx.reshape(nx.matmul(xkv, P[prefix + ".wv"]), (B, Tk, heads, dh)), (0, 2, 1, 3))
    scores = nx.add(nx.mul(nx.matmul(q, k), 1.0 / math.sqrt(dh)), bias)
    ctx = nx.matmul(nx.softmax(scores, axis=-1), v)
    ctx = nx.reshape(nx.transpose(ctx, (0, 2, 1, 3)), (B, Tq, d))
    return nx.matmul(ctx, P[prefix + ".wo"])


def _ffn(P, prefix, x):
    h = gelu(nx.add(nx.matmul(x, P[prefix + ".w1"]), P[prefix + ".b1"]))
    return nx.add(nx.matmul(h, P[prefix + ".w2"]), P[prefix + ".b2"])


def _embed(table, ids, d):
    x = nx.mul(nx.take_rows(table, ids), math.sqrt(d))
    return nx.add(x, positional_encoding(ids.shape[1], d).astype(nx.value(table).dtype))


# ---------------------------------------------------------------- batches


@dataclass
class Batch:
    src: np.ndarray  # (B, S) with EOS appended, PAD-filled
    src_mask: np.ndarray  # (B, S) True on real positions
    tgt_in: np.ndarray  # (B, T) BOS + target[:-1]
    tgt_out: np.ndarray  # (B, T) target ending in EOS
    tgt_mask: np.ndarray
    bow: np.ndarray  # (B, V_tgt) 0/1
    n_pos: np.ndarray  # (B,)

    def __len__(self):
        return self.src.shape[0]

    @property
    def n_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def source_with_eos(src: Sequence[int]) -> list[int]:
    src = list(src)
    if not src or src[-1] != EOS:
        src.append(EOS)
    return src


def make_batch(pairs: Sequence[SentencePair], tgt_vocab: int) -> Batch:
    srcs = [source_with_eos(p.src) for p in pairs]
    S = max(len(s) for s in srcs)
    T = max(len(p.tgt) for p in pairs)
    B = len(pairs)
    src = np.full((B, S), PAD, np.int64)
    tin = np.full((B, T), PAD, np.int64)
    tout = np.full((B, T), PAD, np.int64)
    bow = np.zeros((B, tgt_vocab))
    n_pos = np.zeros(B)
    for b, (s, p) in enumerate(zip(srcs, pairs)):
        src[b, : len(s)] = s
        tout[b, : len(p.tgt)] = p.tgt
        tin[b, 0] = BOS
        tin[b, 1 : len(p.tgt)] = p.tgt[:-1]
        target = extract_bow(p, tgt_vocab)
        bow[b] = target.y
        n_pos[b] = target.n_p
    return Batch(src, src != PAD, tin, tout, tout != PAD, bow, n_pos)


# ---------------------------------------------------------------- forward passes


def encode_batch(P, cfg: ModelConfig, src: np.ndarray, src_mask: np.ndarray, dropout=None):
    drop = dropout or _Dropout(0.0, None)
    dtype = nx.value(P["src_emb"]).dtype
    bias = np.where(src_mask, 0.0, NEG_INF).astype(dtype)[:, None, None, :]
    x = drop(_embed(P["src_emb"], src, cfg.d))
    for l in range(cfg.enc_layers):
        p = f"enc.{l}"
        h = _ln(P, p + ".ln1", x)
        x = nx.add(x, drop(_attention(P, p + ".att", h, h, bias, cfg.heads)))
        x = nx.add(x, drop(_ffn(P, p + ".ffn", _ln(P, p + ".ln2", x))))
    return _ln(P, "enc.ln", x)


def decode_batch(P, cfg: ModelConfig, H, src_mask, tgt_in: np.ndarray, dropout=None):
    """Teacher-forced decoder; returns output logits ``(B, T, V)``."""
    drop = dropout or _Dropout(0.0, None)
    T = tgt_in.shape[1]
    dtype = nx.value(P["tgt_emb"]).dtype
    causal = np.triu(np.full((T, T), NEG_INF, dtype), k=1)[None, None]
    cross_bias = np.where(src_mask, 0.0, NEG_INF).astype(dtype)[:, None, None, :]
    x = drop(_embed(P["tgt_emb"], tgt_in, cfg.d))
    for l in range(cfg.dec_layers):
        p = f"dec.{l}"
        h = _ln(P, p + ".ln1", x)
        x = nx.add(x, drop(_attention(P, p + ".self", h, h, causal, cfg.heads)))
        x = nx.add(x, drop(_attention(P, p + ".cross", _ln(P, p + ".ln2", x), H, cross_bias, cfg.heads)))
        x = nx.add(x, drop(_ffn(P, p + ".ffn", _ln(P, p + ".ln3", x))))
    x = _ln(P, "dec.ln", x)
    return nx.add(nx.matmul(x, nx.transpose(P["out.w"], (1, 0))), P["out.b"])


def nvs_pooled_logits(P, H, src_mask):
    """maxpool over source positions of ``W_nvs H + b_nvs``; shape ``(B, V)``."""
    a = nx.add(nx.matmul(H, nx.transpose(P["nvs.w"], (1, 0))), P["nvs.b"])
    return nx.masked_max(a, src_mask[:, :, None], axis=1)


# ---------------------------------------------------------------- losses


def auto_pos_weight(vocab_size: int, n_pos: int, factor: float) -> float:
    """``factor * (V - n_p) / n_p``, clipped below at 1."""
    if n_pos < 1 or n_pos > vocab_size:
        raise ValueError(f"need 1 <= n_p <= V, got n_p={n_pos}, V={vocab_size}")
    if factor <= 0:
        raise ValueError("factor must be > 0")
    return max(1.0, factor * (vocab_size - n_pos) / n_pos)


def nvs_normalizer(vocab_size: int, pos_weight, n_pos):
    return vocab_size + (np.asarray(pos_weight) - 1.0) * np.asarray(n_pos)


def nvs_loss(pooled_logits, y: np.ndarray, pos_weight):
    """Weighted binary cross-entropy of the NVS head, averaged over the batch.

    ``pooled_logits`` are pre-sigmoid scores ``(B, V)`` (or ``(V,)``), so
    ``log z`` and ``log(1 - z)`` come from log-sigmoid and are finite for any
    input. Per sentence the sum is divided by ``Z = V + (pos_weight - 1) n_p``.
    """
    y = np.atleast_2d(y)
    if nx.value(pooled_logits).ndim == 1:
        pooled_logits = nx.reshape(pooled_logits, (1, -1))
    B, V = y.shape
    n_pos = y.sum(axis=1, keepdims=True)
    w = np.broadcast_to(np.asarray(pos_weight, np.float64).reshape(-1, 1), (B, 1))
    Z = nvs_normalizer(V, w, n_pos)
    pos = nx.log_sigmoid(pooled_logits)
    neg = nx.log_sigmoid(nx.mul(pooled_logits, -1.0))
    total = nx.add(
        nx.sum_all(nx.mul(pos, y * w / Z / B)),
        nx.sum_all(nx.mul(neg, (1.0 - y) / Z / B)),
    )
    return nx.mul(total, -1.0)


def nvs_loss_from_probs(z: np.ndarray, y: np.ndarray, pos_weight: float) -> float:
    """Reference form on probabilities (for checks; ``z`` must avoid 0 and 1)."""
    z, y = np.asarray(z, np.float64), np.asarray(y, np.float64)
    V = len(y)
    Z = V + (pos_weight - 1.0) * y.sum()
    return float(-(y * pos_weight * np.log(z) + (1 - y) * np.log(1 - z)).sum() / Z)


def smoothed_targets(tgt_out: np.ndarray, tgt_mask: np.ndarray, V: int, eps: float) -> np.ndarray:
    q = np.full(tgt_out.shape + (V,), eps / V)
    np.put_along_axis(q, tgt_out[..., None], 1.0 - eps + eps / V, axis=-1)
    return q * tgt_mask[..., None]


def mt_loss_from_logits(logits, tgt_out, tgt_mask, eps: float):
    """Label-smoothed cross-entropy, averaged over real target tokens."""
    V = nx.value(logits).shape[-1]
    q = smoothed_targets(tgt_out, tgt_mask, V, eps)
    lp = nx.log_softmax(logits, axis=-1)
    return nx.mul(nx.sum_all(nx.mul(lp, q)), -1.0 / max(1, int(tgt_mask.sum())))


def smoothing_floor(V: int, eps: float) -> float:
    """Smallest achievable per-token loss: the entropy of the smoothed target."""
    hi = 1.0 - eps + eps / V
    lo = eps / V
    out = -hi * math.log(hi)
    if lo > 0:
        out -= (V - 1) * lo * math.log(lo)
    return out


def sentence_pos_weights(cfg: ModelConfig, n_pos: np.ndarray) -> np.ndarray:
    if cfg.pos_weight_auto is None:
        return np.full(len(n_pos), cfg.pos_weight)
    return np.array([auto_pos_weight(cfg.tgt_vocab, int(n), cfg.pos_weight_auto) for n in n_pos])


@dataclass
class LossParts:
    total: float
    mt: float
    nvs: float


def forward_losses(
    P,
    cfg: ModelConfig,
    batch: Batch,
    *,
    mt_weight: float = 1.0,
    nvs_weight: float = 1.0,
    block_nvs: bool = True,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """Build ``mt_weight * L_MT + nvs_weight * L_NVS``; returns (total, mt, nvs).

    With ``block_nvs`` the NVS head reads the encoder output through a named
    tape boundary ``"encoder_output"``, so L_NVS never reaches encoder weights.
    """
    drop = _Dropout(cfg.dropout, dropout_rng)
    H = encode_batch(P, cfg, batch.src, batch.src_mask, drop)
    mt = nvs = None
    total = None
    if mt_weight != 0.0:
        logits = decode_batch(P, cfg, H, batch.src_mask, batch.tgt_in, drop)
        mt = mt_loss_from_logits(logits, batch.tgt_out, batch.tgt_mask, cfg.label_smoothing)
        total = nx.mul(mt, mt_weight)
    if nvs_weight != 0.0:
        Hn = H
        if block_nvs and isinstance(H, nx.Var):
            Hn = H.tape.block(H, "encoder_output")
        pooled = nvs_pooled_logits(P, Hn, batch.src_mask)
        nvs = nvs_loss(pooled, batch.bow, sentence_pos_weights(cfg, batch.n_pos))
        term = nx.mul(nvs, nvs_weight)
        total = term if total is None else nx.add(total, term)
    if total is None:
        raise ValueError("both loss weights are zero")
    return total, mt, nvs


def loss_and_grads(params, cfg: ModelConfig, batch: Batch, **kw):
    """Forward on a fresh tape and backpropagate; returns (LossParts, grads, tape)."""
    tape = nx.Tape()
    P = {k: tape.param(v, k) for k, v in params.items()}
    total, mt, nvs = forward_losses(P, cfg, batch, **kw)
    grads = tape.backward(total)
    parts = LossParts(
        float(nx.value(total)),
        float(nx.value(mt)) if mt is not None else 0.0,
        float(nx.value(nvs)) if nvs is not None else 0.0,
    )
    return parts, grads, tape


def evaluate_losses(params, cfg: ModelConfig, pairs: Sequence[SentencePair], batch_size: int = 64) -> LossParts:
    """Token-weighted MT loss and sentence-weighted NVS loss, no dropout."""
    mt_sum = nvs_sum = 0.0
    n_tok = n_sent = 0
    for i in range(0, len(pairs), batch_size):
        batch = make_batch(pairs[i : i + batch_size], cfg.tgt_vocab)
        _, mt, nvs = forward_losses(params, cfg, batch)
        mt_sum += float(mt) * batch.n_tokens
        nvs_sum += float(nvs) * len(batch)
        n_tok += batch.n_tokens
        n_sent += len(batch)
    mt_avg, nvs_avg = mt_sum / max(n_tok, 1), nvs_sum / max(n_sent, 1)
    return LossParts(mt_avg + nvs_avg, mt_avg, nvs_avg)


# ---------------------------------------------------------------- single-sentence API


@dataclass
class EncoderStates:
    """Encoder output for one sentence: ``H`` is ``(t, d)`` (one row per position,
    the last being the appended EOS); ``mask`` marks real positions."""

    H: np.ndarray
    mask: np.ndarray

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def encode(params, cfg: ModelConfig, source_ids: Sequence[int]) -> EncoderStates:
    if len(source_ids) == 0:
        raise ValueError("empty source sentence")
    ids = np.asarray(source_with_eos(source_ids), np.int64)
    if ids.min() < 0 or ids.max() >= cfg.src_vocab:
        raise ValueError("source id out of range")
    mask = np.ones((1, len(ids)), bool)
    H = encode_batch(params, cfg, ids[None, :], mask)
    return EncoderStates(H[0], mask[0])


def nvs_logits(params, enc: EncoderStates) -> np.ndarray:
    a = enc.H @ params["nvs.w"].T + params["nvs.b"]
    return nx.masked_max(a, enc.mask[:, None], axis=0)


def nvs_forward(params, enc: EncoderStates) -> np.ndarray:
    """Per-target-token presence probabilities ``z`` for one sentence."""
    return nx.sigmoid(nvs_logits(params, enc))


def mt_loss(params, cfg: ModelConfig, pair: SentencePair) -> float:
    batch = make_batch([pair], cfg.tgt_vocab)
    _, mt, _ = forward_losses(params, cfg, batch, nvs_weight=0.0)
    return float(mt)


# ---------------------------------------------------------------- optimization


class Adam:
    def __init__(self, params, lr=3e-4, betas=(0.9, 0.98), eps=1e-9, warmup=0):
        self.lr, self.b1, self.b2, self.eps, self.warmup = lr, betas[0], betas[1], eps, warmup
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def rate(self) -> float:
        if self.warmup <= 0:
            return self.lr
        return self.lr * min(1.0, self.t / self.warmup)

    def step(self, params, grads, only: Optional[set] = None) -> None:
        self.t += 1
        lr = self.rate()
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            if only is not None and k not in only:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: dict
    log: list = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[i : i + batch_size]


def train(
    cfg: ModelConfig,
    pairs: Sequence[SentencePair],
    steps: int,
    seed: int = 17,
    *,
    batch_size: int = 64,
    lr: float = 3e-4,
    warmup: int = 400,
    valid_pairs: Optional[Sequence[SentencePair]] = None,
    valid_every: int = 500,
    params: Optional[dict] = None,
    block_nvs: bool = True,
    callback=None,
) -> TrainResult:
    """Jointly optimize ``L_NVS + L_MT`` with Adam; deterministic given ``seed``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not pairs:
        raise ValueError("no training pairs")
    params = init_params(cfg, seed) if params is None else {k: v.copy() for k, v in params.items()}
    opt = Adam(params, lr=lr, warmup=warmup)
    order = _batches(len(pairs), batch_size, stage_rng(seed, "batches"))
    drop_rng = stage_rng(seed, "dropout")
    history = []
    if valid_pairs:
        history.append({"step": 0, "valid": asdict(evaluate_losses(params, cfg, valid_pairs))})
    for step in range(1, steps + 1):
        batch = make_batch([pairs[i] for i in next(order)], cfg.tgt_vocab)
        parts, grads, _ = loss_and_grads(params, cfg, batch, block_nvs=block_nvs, dropout_rng=drop_rng)
        if not math.isfinite(parts.total):
            raise TrainingError(step, f"loss is {parts.total}")
        opt.step(params, grads)
        entry = {"step": step, "loss": parts.total, "mt": parts.mt, "nvs": parts.nvs, "lr": opt.rate()}
        if valid_pairs and (step % valid_every == 0 or step == steps):
            entry["valid"] = asdict(evaluate_losses(params, cfg, valid_pairs))
            log.info("step %d valid mt %.4f nvs %.4f", step, entry["valid"]["mt"], entry["valid"]["nvs"])
        history.append(entry)
        if callback is not None:
            callback(entry)
    return TrainResult(params, history)


def token_batches(pairs: Sequence[SentencePair], batch_tokens: int, rng: np.random.Generator):
    """One epoch of shuffled batches holding at most ``batch_tokens`` target tokens
    (a single longer sentence still forms its own batch)."""
    batch, n = [], 0
    for i in rng.permutation(len(pairs)):
        size = len(pairs[i].tgt)
        if batch and n + size > batch_tokens:
            yield batch
            batch, n = [], 0
        batch.append(pairs[i])
        n += size
    if batch:
        yield batch


def finetune_nvs(
    params: dict,
    cfg: ModelConfig,
    adapt_pairs: Sequence[SentencePair],
    epochs: int = 10,
    lr: float = 1e-4,
    batch_tokens: int = 2048,
    *,
    full_model: bool = False,
    seed: int = 0,
) -> dict:
    """Fine-tune on adaptation pairs; by default only ``nvs.w``/``nvs.b`` change."""
    params = {k: v.copy() for k, v in params.items()}
    if epochs <= 0:
        return params
    if not adapt_pairs:
        raise ValueError("empty adaptation set")
    rng = stage_rng(seed, "finetune")
    head = {"nvs.w", "nvs.b"}
    opt = Adam(params if full_model else {k: params[k] for k in head}, lr=lr)
    for _ in range(epochs):
        for chunk in token_batches(adapt_pairs, batch_tokens, rng):
            batch = make_batch(chunk, cfg.tgt_vocab)
            if full_model:
                _, grads, _ = loss_and_grads(params, cfg, batch, dropout_rng=rng)
                opt.step(params, grads)
                continue
            H = encode_batch(params, cfg, batch.src, batch.src_mask)
            tape = nx.Tape()
            P = {k: tape.param(params[k], k) for k in head}
            pooled = nvs_pooled_logits(P, H, batch.src_mask)
            loss = nvs_loss(pooled, batch.bow, sentence_pos_weights(cfg, batch.n_pos))
            opt.step(params, tape.backward(loss))
    return params


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(params: dict, cfg: ModelConfig, path) -> None:
    """Write the versioned ``.slxm`` format (arrays as little-endian float32)."""
    shapes = param_shapes(cfg)
    with open(path, "wb") as f:
        f.write(f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n".encode("ascii"))
        f.write(("\n".join(cfg.to_lines()) + "\n\n").encode("ascii"))
        for name, shape in shapes.items():
            arr = np.asarray(params[name])
            if arr.shape != shape:
                raise CheckpointError(f"{name}: shape {arr.shape}, config expects {shape}")
            rows, cols = (shape[0], 1) if len(shape) == 1 else shape
            f.write(f"{name} {rows} {cols}\n".encode("ascii"))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_header(f) -> ModelConfig:
    first = f.readline().decode("ascii", "replace").rstrip("\n")
    magic, _, version = first.partition(" ")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("not a shortlex checkpoint (bad header)")
    if version != f"v{CHECKPOINT_VERSION}":
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    lines = []
    while True:
        raw = f.readline()
        if not raw:
            raise CheckpointError("truncated checkpoint: config block not terminated")
        line = raw.decode("ascii", "replace").rstrip("\n")
        if line == "":
            break
        lines.append(line)
    return ModelConfig.from_lines(lines)


def _read_array_header(f, path) -> tuple[str, int, int]:
    raw = f.readline()
    parts = raw.decode("ascii", "replace").split()
    if len(parts) != 3 or not raw.endswith(b"\n"):
        raise CheckpointError(f"{path}: truncated or malformed array header")
    try:
        return parts[0], int(parts[1]), int(parts[2])
    except ValueError:
        raise CheckpointError(f"{path}: malformed array header {raw!r}") from None


def load_checkpoint(path) -> tuple[dict, ModelConfig]:
    """Read a checkpoint back; arrays come back as float32."""
    with open(path, "rb") as f:
        cfg = _read_header(f)
        params = {}
        for name, shape in param_shapes(cfg).items():
            got, rows, cols = _read_array_header(f, path)
            expect = (shape[0], 1) if len(shape) == 1 else shape
            if got != name or (rows, cols) != expect:
                raise CheckpointError(f"{path}: expected {name} {expect}, found {got} ({rows}, {cols})")
            n = rows * cols
            data = f.read(4 * n)
            if len(data) != 4 * n:
                raise CheckpointError(f"{path}: truncated data for {name}")
            params[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last array")
    return params, cfg


def inspect_checkpoint(path) -> dict:
    """Array shapes and float counts per group, read from headers only."""
    arrays = {}
    with open(path, "rb") as f:
        cfg = _read_header(f)
        for _ in param_shapes(cfg):
            name, rows, cols = _read_array_header(f, path)
            arrays[name] = (rows, cols)
            f.seek(4 * rows * cols, io.SEEK_CUR)
    counts = parameter_counts(arrays)
    return {"config": asdict(cfg), "arrays": arrays, "counts": counts}
