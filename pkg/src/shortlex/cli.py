"""``shortlex`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 input error (bad flag, missing or malformed file),
2 internal error. Diagnostics go to stderr; data goes to stdout or files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import aligner, bench, corpus, decoder, nmt, selection, synthetic

log = logging.getLogger("shortlex")

FORMATS = """\
file formats:
  vocabulary   one token per line, id = line number; first lines <pad> <unk> <bos> <eos>
  merges       '#shortlex-bpe v1' then one 'left right' pair per line
  corpus       plain text, one sentence per line; source/target files line-aligned
  align model  '#shortlex-align v1', 'diagonal_tension=X', then 'src<TAB>tgt<TAB>prob'
  lexicon      'source<TAB>target<TAB>prob' grouped by source, prob descending, 6 decimals
  checkpoint   .slxm: 'SHORTLEX-MODEL v1', key=value config, blank line, then per
               array a 'name rows cols' line followed by little-endian float32 data
  eval set     'source<TAB>reference[<TAB>s:e<TAB>s:e]' over BPE tokens, half-open spans
  bow dump     one line per sentence, tab-separated selected tokens, sorted
  sweep csv    selector,param,avg_vocab_size,recall_sentence,recall_span
"""


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _formatter(prog):
    return argparse.RawDescriptionHelpFormatter(prog, max_help_position=32)


# ---------------------------------------------------------------- helpers


def _read(path) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {path}")
    return list(corpus.read_lines(p))


def _write_lines(path, lines) -> None:
    text = "".join(l + "\n" for l in lines)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _split(lines) -> list[list[str]]:
    return [l.split() for l in lines]


def _segment(lines, merges_path) -> list[list[str]]:
    """BPE-apply raw text when a merges file is given, else take tokens as-is."""
    if merges_path is None:
        return _split(lines)
    seg = corpus.BpeSegmenter(corpus.BpeModel.load(merges_path))
    return [seg.sentence(corpus.tokenize(l)) for l in lines]


def _vocab(path) -> corpus.Vocabulary:
    if not Path(path).is_file():
        raise InputError(f"no such file: {path}")
    return corpus.Vocabulary.load(path)


def _pairs(args, vocab, src_path, tgt_path) -> list[corpus.SentencePair]:
    src, tgt = _segment(_read(src_path), args.merges), _segment(_read(tgt_path), args.merges)
    if len(src) != len(tgt):
        raise InputError(f"{src_path} and {tgt_path} differ in line count")
    keep = [(s, t) for s, t in zip(src, tgt) if s and t]
    return corpus.make_pairs(vocab, [s for s, _ in keep], [t for _, t in keep])


def _load_model(path):
    if not Path(path).is_file():
        raise InputError(f"no such file: {path}")
    return nmt.load_checkpoint(path)


def _selector(args, vocab_size):
    if args.selector == "none":
        return selection.NoSelector(vocab_size)
    if args.selector == "nvs":
        return selection.NvsSelector(args.lam)
    if args.lexicon is None:
        raise InputError("--selector align needs --lexicon")
    lex = aligner.TranslationLexicon.load(args.lexicon, _vocab(args.vocab))
    return selection.AlignSelector(lex, args.k if args.k is not None else lex.k_max)


def _parse_grid(text: str, kind: str):
    if text == "paper":
        return bench.NVS_GRID if kind == "nvs" else bench.ALIGN_GRID
    try:
        return tuple(float(x) if kind == "nvs" else int(x) for x in text.split(","))
    except ValueError:
        raise InputError(f"--grid must be 'paper' or a comma-separated list, got {text!r}") from None


# ---------------------------------------------------------------- commands


def cmd_bpe_learn(args):
    sents = [corpus.tokenize(l) for path in args.input for l in _read(path)]
    corpus.bpe_learn(sents, args.num_merges).save(args.out)


def cmd_bpe_apply(args):
    seg = corpus.BpeSegmenter(corpus.BpeModel.load(args.merges))
    _write_lines(args.output, (" ".join(seg.sentence(corpus.tokenize(l))) for l in _read(args.input)))


def cmd_vocab_build(args):
    sents = [s for path in args.input for s in _split(_read(path))]
    corpus.Vocabulary.build(sents, args.max_size).save(args.out)


def cmd_clean(args):
    src, tgt = _split(_read(args.src)), _split(_read(args.tgt))
    if len(src) != len(tgt):
        raise InputError(f"{args.src} and {args.tgt} differ in line count")
    res = corpus.clean_pairs(list(zip(src, tgt)), args.max_ratio, args.max_overlap, args.max_len)
    _write_lines(args.out_src, (" ".join(src[i]) for i in res.kept))
    _write_lines(args.out_tgt, (" ".join(tgt[i]) for i in res.kept))
    if args.log:
        _write_lines(args.log, (f"{i + 1}\t{rule}" for i, rule in res.rejected))
    log.info("kept %d of %d pairs", len(res.kept), len(src))


def cmd_align_train(args):
    vocab = _vocab(args.vocab)
    model = aligner.em_train(_pairs(args, vocab, args.src, args.tgt), args.iters, args.diagonal_tension)
    if args.adapt_src:
        if not args.adapt_tgt:
            raise InputError("--adapt-src needs --adapt-tgt")
        model = aligner.adapt_lexicon(
            _pairs(args, vocab, args.src, args.tgt),
            _pairs(args, vocab, args.adapt_src, args.adapt_tgt),
            args.upsample, args.iters, args.diagonal_tension,
        )
    for i, ll in enumerate(model.log_likelihood, 1):
        log.info("iteration %d log-likelihood %.4f", i, ll)
    model.save(args.out, vocab)


def cmd_lexicon_extract(args):
    vocab = _vocab(args.vocab)
    if not Path(args.model).is_file():
        raise InputError(f"no such file: {args.model}")
    lex = aligner.extract_lexicon(aligner.AlignModel.load(args.model, vocab), args.k_max)
    lex.save(args.out, vocab)


def _model_config(args, vocab_size) -> nmt.ModelConfig:
    return nmt.ModelConfig(
        src_vocab=vocab_size, tgt_vocab=vocab_size, d=args.d, enc_layers=args.enc_layers,
        dec_layers=args.dec_layers, heads=args.heads, ffn=args.ffn, label_smoothing=args.label_smoothing,
        pos_weight=args.pos_weight, pos_weight_auto=args.pos_weight_auto, dropout=args.dropout,
    )


def cmd_train(args):
    vocab = _vocab(args.vocab)
    cfg = _model_config(args, len(vocab))
    pairs = _pairs(args, vocab, args.src, args.tgt)
    valid = _pairs(args, vocab, args.valid_src, args.valid_tgt) if args.valid_src else None

    def report(entry):
        if "valid" in entry:
            log.info("step %d valid %s", entry["step"], json.dumps(entry["valid"]))
        elif entry["step"] % args.log_every == 0:
            log.info("step %d loss %.4f mt %.4f nvs %.4f", entry["step"], entry["loss"], entry["mt"], entry["nvs"])

    res = nmt.train(cfg, pairs, args.steps, args.seed, batch_size=args.batch_size, lr=args.lr,
                    warmup=args.warmup, valid_pairs=valid, valid_every=args.valid_every, callback=report)
    nmt.save_checkpoint(res.params, cfg, args.out)
    if args.log:
        Path(args.log).write_text("".join(json.dumps(e) + "\n" for e in res.log), encoding="utf-8")


def cmd_finetune(args):
    params, cfg = _load_model(args.model)
    vocab = _vocab(args.vocab)
    pairs = _pairs(args, vocab, args.src, args.tgt)
    params = nmt.cast_params(params, np.float64)
    out = nmt.finetune_nvs(params, cfg, pairs, args.epochs, args.lr, args.batch_tokens,
                           full_model=args.full_model, seed=args.seed)
    nmt.save_checkpoint(out, cfg, args.out)


def _sources(args, vocab) -> list[list[int]]:
    sents = _segment(_read(args.input), args.merges)
    out = []
    for n, s in enumerate(sents, 1):
        if not s:
            raise InputError(f"{args.input}:{n}: empty source sentence")
        out.append(vocab.encode(s))
    return out


def cmd_translate(args):
    params, cfg = _load_model(args.model)
    vocab = _vocab(args.vocab)
    scorer = decoder.TransformerScorer(params, cfg, np.float32 if args.precision == "32" else np.float64)
    sel = _selector(args, cfg.tgt_vocab)
    config = decoder.BeamConfig(beam=args.beam, alpha=args.alpha)
    hyps, side = [], []
    for src in _sources(args, vocab):
        res = decoder.beam_search(scorer, src, config=config, selector=sel)
        hyps.append(corpus.strip_markers(vocab.decode(res.tokens)))
        t = res.timings
        side.append(f"{res.vocab_size}\t{res.score:.6f}\t{t['encode']:.6f}\t{t['select']:.6f}\t{t['loop']:.6f}")
    _write_lines(args.output, hyps)
    if args.metrics:
        _write_lines(args.metrics, ["vocab_size\tscore\tencode_s\tselect_s\tloop_s"] + side)


def cmd_bow(args):
    vocab = _vocab(args.vocab)
    if args.selector == "align":
        scorer, vsize = None, len(vocab)
    else:
        params, cfg = _load_model(args.model) if args.model else (None, None)
        if params is None:
            raise InputError("--selector nvs/none needs --model")
        scorer, vsize = decoder.TransformerScorer(params, cfg), cfg.tgt_vocab
    sel = _selector(args, vsize)
    lines = []
    for src in _sources(args, vocab):
        enc = scorer.encode(src) if scorer is not None else None
        lines.append(sel.select(src, scorer, enc).dump_line(vocab))
    _write_lines(args.output, lines)


def _eval_items(args, vocab):
    if not Path(args.eval).is_file():
        raise InputError(f"no such file: {args.eval}")
    return bench.load_eval_set(args.eval, vocab)


def cmd_bench_recall(args):
    vocab = _vocab(args.vocab)
    items = _eval_items(args, vocab)
    scorer = None
    if args.selector != "align":
        params, cfg = _load_model(args.model)
        scorer = decoder.TransformerScorer(params, cfg)
    sel = _selector(args, len(vocab))
    bows = [sel.select(it.source, scorer, scorer.encode(it.source) if scorer else None) for it in items]
    row = {"selector": sel.tag, "avg_vocab_size": bench.avg_vocab_size(bows),
           "recall_sentence": bench.corpus_recall(bows, items, "sentence", args.micro)}
    spans = [(b, it) for b, it in zip(bows, items) if it.has_span]
    if spans:
        row["recall_span"] = bench.corpus_recall([b for b, _ in spans], [it for _, it in spans], "span", args.micro)
    print(json.dumps(row))


def cmd_bench_sweep(args):
    vocab = _vocab(args.vocab)
    items = _eval_items(args, vocab)
    grid = _parse_grid(args.grid, args.selector)
    if args.selector == "nvs":
        params, cfg = _load_model(args.model)
        records = bench.sweep_nvs(decoder.TransformerScorer(params, cfg), items, grid)
    elif args.selector == "align":
        if args.lexicon is None:
            raise InputError("--selector align needs --lexicon")
        lex = aligner.TranslationLexicon.load(args.lexicon, vocab)
        records = bench.sweep_align(lex, items, len(vocab), grid)
    else:
        raise InputError("sweep needs --selector nvs or align")
    if args.out in (None, "-"):
        bench.write_sweep_csv(records, sys.stdout)
    else:
        bench.write_sweep_csv(records, args.out)


def cmd_bench_latency(args):
    params, cfg = _load_model(args.model)
    vocab = _vocab(args.vocab)
    scorer = decoder.TransformerScorer(params, cfg, np.float32)
    summary = decoder.time_decode(scorer, _sources(args, vocab), _selector(args, cfg.tgt_vocab),
                                  args.repetitions, decoder.BeamConfig(beam=args.beam))
    print(f"# repetitions={summary.repetitions} sentences={summary.sentences} "
          f"avg_vocab_size={summary.avg_vocab_size:.1f}")
    print("stage\tmean_ms\tmean_ci_ms\tp90_ms\tp90_ci_ms")
    for r in summary.rows():
        print(f"{r['stage']}\t{r['mean_ms']:.3f}\t{r['mean_ci_ms']:.3f}\t{r['p90_ms']:.3f}\t{r['p90_ci_ms']:.3f}")


def cmd_bench_context(args):
    params, cfg = _load_model(args.model)
    vocab = _vocab(args.vocab)
    items = _eval_items(args, vocab)
    scorer = decoder.TransformerScorer(params, cfg)
    flags = {lam: bench.context_compare(scorer, items, lam, vocab) for lam in args.lambdas}
    report = bench.format_context_report(flags)
    if args.out in (None, "-"):
        sys.stdout.write(report)
    else:
        Path(args.out).write_text(report, encoding="utf-8")


def cmd_eval_bleu(args):
    print(f"{bench.bleu(_read(args.hyp), _read(args.ref)):.2f}")


def cmd_inspect_checkpoint(args):
    if not Path(args.path).is_file():
        raise InputError(f"no such file: {args.path}")
    info = nmt.inspect_checkpoint(args.path)
    for name, (r, c) in info["arrays"].items():
        print(f"{name}\t{r}\t{c}")
    for group, n in info["counts"].items():
        print(f"# {group}\t{n}")


def cmd_synth(args):
    sizes = {"train": args.train_size} if args.train_size else None
    prep = synthetic.prepare(args.seed, sizes=sizes)
    for key, path in synthetic.write_files(prep, args.out_dir).items():
        log.info("wrote %s", path)


# ---------------------------------------------------------------- parser


def _add_model_flags(p):
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--enc-layers", type=int, default=4)
    p.add_argument("--dec-layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn", type=int, default=256)
    p.add_argument("--label-smoothing", type=float, default=0.1)
    p.add_argument("--pos-weight", type=float, default=1000.0, help="fixed positive-class weight")
    p.add_argument("--pos-weight-auto", type=float, default=None, metavar="X",
                   help="use X * (V - n_p) / n_p per sentence instead of --pos-weight")
    p.add_argument("--dropout", type=float, default=0.1)


def _add_selector_flags(p, with_model=True):
    p.add_argument("--selector", choices=("none", "align", "nvs"), default="none")
    p.add_argument("--lambda", dest="lam", type=float, default=0.9, help="NVS threshold (z > lambda)")
    p.add_argument("--k", type=int, default=None, help="align top-k (default: lexicon K_max)")
    p.add_argument("--lexicon", help="lexicon TSV for --selector align")
    if with_model:
        p.add_argument("--model", required=True, help=".slxm checkpoint")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="shortlex", description=__doc__, epilog=FORMATS, formatter_class=_formatter)
    top.add_argument("--config", help="key=value file; keys are flag names, flags given explicitly win")
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(parent, name, func, help_):
        p = parent.add_parser(name, help=help_, description=help_, epilog=FORMATS, formatter_class=_formatter)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=17)
        return p

    bpe = sub.add_parser("bpe", help="learn or apply BPE").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = cmd(bpe, "learn", cmd_bpe_learn, "learn merges from raw text files (tokenized on the fly)")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--merges", dest="num_merges", type=int, required=True, help="number of merge operations")
    p.add_argument("--out", required=True)
    p = cmd(bpe, "apply", cmd_bpe_apply, "tokenize and BPE-segment raw text")
    p.add_argument("--merges", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")

    vocab = sub.add_parser("vocab", help="vocabulary tools").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = cmd(vocab, "build", cmd_vocab_build, "build a joint vocabulary from BPE-segmented files")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--max-size", type=int)
    p.add_argument("--out", required=True)

    p = cmd(sub, "clean", cmd_clean, "filter BPE-segmented pairs by length, ratio and overlap")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.add_argument("--log", help="TSV of rejected line numbers and the rule that fired")
    p.add_argument("--max-ratio", type=float, default=1.5)
    p.add_argument("--max-overlap", type=float, default=0.70)
    p.add_argument("--max-len", type=int, default=100)

    def corpus_flags(p):
        p.add_argument("--src", required=True)
        p.add_argument("--tgt", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--merges", help="BPE merges; when given, inputs are raw text")

    align = sub.add_parser("align", help="word alignment").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = cmd(align, "train", cmd_align_train, "EM-train t(target|source) with a diagonal prior")
    corpus_flags(p)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--diagonal-tension", type=float, default=aligner.DEFAULT_TENSION)
    p.add_argument("--adapt-src", help="adaptation corpus, upsampled and appended to the base corpus")
    p.add_argument("--adapt-tgt")
    p.add_argument("--upsample", type=int, default=10)
    p.add_argument("--out", required=True)

    lexicon = sub.add_parser("lexicon", help="lexicon tools").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = cmd(lexicon, "extract", cmd_lexicon_extract, "top-k translation lexicon from an alignment model")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--k-max", type=int, default=1000)
    p.add_argument("--out", required=True)

    p = cmd(sub, "train", cmd_train, "jointly train translation model and NVS head")
    corpus_flags(p)
    _add_model_flags(p)
    p.add_argument("--valid-src")
    p.add_argument("--valid-tgt")
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--warmup", type=int, default=400)
    p.add_argument("--valid-every", type=int, default=500)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--log", help="write the training log as JSON lines")
    p.add_argument("--out", required=True)

    p = cmd(sub, "finetune", cmd_finetune, "fine-tune the NVS head (or the full model) on adaptation pairs")
    corpus_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-tokens", type=int, default=2048)
    p.add_argument("--full-model", action="store_true")
    p.add_argument("--out", required=True)

    def decode_input(p):
        p.add_argument("--vocab", required=True)
        p.add_argument("--merges", help="BPE merges; when given, input is raw text")
        p.add_argument("--input", required=True)

    p = cmd(sub, "translate", cmd_translate, "beam-search translation with optional vocabulary selection")
    _add_selector_flags(p)
    decode_input(p)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--alpha", type=float, default=1.0, help="length normalization exponent")
    p.add_argument("--precision", choices=("32", "64"), default="32")
    p.add_argument("--output", default="-")
    p.add_argument("--metrics", help="side file: vocab size, score and stage timings per line")

    p = cmd(sub, "bow", cmd_bow, "dump the selected bag of words per sentence")
    _add_selector_flags(p, with_model=False)
    p.add_argument("--model")
    decode_input(p)
    p.add_argument("--output", default="-")

    bench_p = sub.add_parser("bench", help="measurements").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = cmd(bench_p, "recall", cmd_bench_recall, "recall and average vocabulary size of one selector")
    _add_selector_flags(p, with_model=False)
    p.add_argument("--model")
    p.add_argument("--vocab", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--micro", action="store_true", help="pool counts over sentences")
    p = cmd(bench_p, "sweep", cmd_bench_sweep, "vocabulary size vs recall over a parameter grid")
    p.add_argument("--selector", choices=("align", "nvs"), required=True)
    p.add_argument("--model")
    p.add_argument("--lexicon")
    p.add_argument("--vocab", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--grid", default="paper", help="'paper' or comma-separated values")
    p.add_argument("--out", default="-")
    p = cmd(bench_p, "latency", cmd_bench_latency, "batch-1 decode latency: mean and p90 with 95%% CI")
    _add_selector_flags(p)
    decode_input(p)
    p.add_argument("--repetitions", type=int, default=30)
    p.add_argument("--beam", type=int, default=5)
    p = cmd(bench_p, "context", cmd_bench_context, "contextual vs word-by-word NVS bags on idiom spans")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--lambdas", type=lambda s: [float(x) for x in s.split(",")], default=[0.9, 0.99])
    p.add_argument("--out", default="-")

    ev = sub.add_parser("eval", help="evaluation").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = cmd(ev, "bleu", cmd_eval_bleu, "corpus BLEU (exp smoothing, 13a tokenization)")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)

    ins = sub.add_parser("inspect", help="inspection").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = cmd(ins, "checkpoint", cmd_inspect_checkpoint, "array shapes and float counts per parameter group")
    p.add_argument("path")

    p = cmd(sub, "synth", cmd_synth, "write the synthetic reversal-with-substitution task")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train-size", type=int)
    return top


def _load_config(path) -> dict:
    if not Path(path).is_file():
        raise InputError(f"no such file: {path}")
    out = {}
    for n, line in enumerate(_read(path), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _resolve(argv: Sequence[str]) -> argparse.Namespace:
    """Parse argv; config-file values fill flags that were not given explicitly."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    conf_path = pre.parse_known_args(argv)[0].config
    conf = _load_config(conf_path) if conf_path else {}
    parser = build_parser()
    actions = {a.dest: a for a in _all_actions(parser)}
    for key in conf:
        # a required flag may come from the config file instead
        if key in actions:
            actions[key].required = False
    args = parser.parse_args(argv)
    if not conf:
        return args
    sentinel = object()
    probe = build_parser()
    for action in _all_actions(probe):
        action.default = sentinel
        if action.option_strings:
            action.required = False
    given = {k for k, v in vars(probe.parse_args(argv)).items() if v is not sentinel}
    for key, raw in conf.items():
        if key not in vars(args):
            raise InputError(f"config key {key!r} is not a flag of this command")
        if key in given:
            continue
        act = actions.get(key)
        if isinstance(act, argparse._StoreTrueAction):
            setattr(args, key, raw.lower() in ("1", "true", "yes"))
        elif act is not None and act.type is not None:
            setattr(args, key, act.type(raw))
        else:
            setattr(args, key, raw)
    return args


def _all_actions(parser):
    for a in parser._actions:
        yield a
        if isinstance(a, argparse._SubParsersAction):
            for sp in a.choices.values():
                yield from _all_actions(sp)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = _resolve(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        resolved = {k: v for k, v in vars(args).items() if k != "func"}
        log.info("resolved config: %s", json.dumps(resolved, default=str, sort_keys=True))
        args.func(args)
        return 0
    except (InputError, FileNotFoundError, corpus.CorpusError, aligner.AlignError, nmt.CheckpointError,
            selection.SelectionError, bench.BenchError) as e:
        print(f"shortlex: error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"shortlex: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
