import json
import subprocess
import sys

import numpy as np
import pytest

from shortlex import nmt
from shortlex.cli import main

SMALL = ["--d", "8", "--enc-layers", "1", "--dec-layers", "1", "--heads", "2", "--ffn", "16"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out-dir", str(d), "--train-size", "300"]) == 0
    base = ["--vocab", str(d / "vocab.txt"), "--merges", str(d / "merges.txt")]
    assert main(["train", "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"), *base, *SMALL,
                 "--steps", "20", "--batch-size", "16", "--out", str(d / "m.slxm"), "--log", str(d / "log.jsonl")]) == 0
    assert main(["align", "train", "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"), *base,
                 "--iters", "3", "--out", str(d / "align.txt")]) == 0
    assert main(["lexicon", "extract", "--model", str(d / "align.txt"), "--vocab", str(d / "vocab.txt"),
                 "--k-max", "20", "--out", str(d / "lex.tsv")]) == 0
    return d, base


def _translate(d, base, out, *extra):
    args = ["translate", "--model", str(d / "m.slxm"), *base, "--input", str(d / "test.src"), "--output", str(out), *extra]
    assert main(args) == 0
    return out.read_text().splitlines()


def test_pipeline_files(work):
    d, _ = work
    for name in ("vocab.txt", "merges.txt", "train.src", "test.eval.tsv", "m.slxm", "lex.tsv"):
        assert (d / name).is_file()
    lines = (d / "log.jsonl").read_text().splitlines()
    assert json.loads(lines[-1])["step"] == 20
    first = (d / "lex.tsv").read_text().splitlines()[0].split("\t")
    assert len(first) == 3 and len(first[2].split(".")[1]) == 6


def test_translate_none_equals_nvs_lambda_zero(work, tmp_path):
    d, base = work
    a = _translate(d, base, tmp_path / "a.txt", "--selector", "none", "--metrics", str(tmp_path / "m.tsv"))
    b = _translate(d, base, tmp_path / "b.txt", "--selector", "nvs", "--lambda", "0")
    assert a == b and len(a) == 500
    side = (tmp_path / "m.tsv").read_text().splitlines()
    assert side[0].startswith("vocab_size") and len(side) == 501


def test_translate_with_lexicon(work, tmp_path):
    d, base = work
    out = _translate(d, base, tmp_path / "c.txt", "--selector", "align", "--lexicon", str(d / "lex.tsv"), "--k", "3")
    assert len(out) == 500


def test_seeded_commands_are_deterministic(work, tmp_path):
    d, base = work
    outs = []
    for i in range(2):
        p = tmp_path / f"m{i}.slxm"
        assert main(["train", "--src", str(d / "train.src"), "--tgt", str(d / "train.tgt"), *base, *SMALL,
                     "--steps", "3", "--batch-size", "8", "--seed", "5", "--out", str(p)]) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_bow_and_bench_commands(work, tmp_path, capsys):
    d, base = work
    assert main(["bow", "--model", str(d / "m.slxm"), *base, "--input", str(d / "test.src"),
                 "--selector", "nvs", "--lambda", "0.5", "--output", str(tmp_path / "bow.txt")]) == 0
    first = (tmp_path / "bow.txt").read_text().splitlines()[0].split("\t")
    assert "<eos>" in first and first == sorted(first)
    capsys.readouterr()
    assert main(["bench", "recall", "--selector", "nvs", "--model", str(d / "m.slxm"), "--vocab", str(d / "vocab.txt"),
                 "--eval", str(d / "adapt_test.eval.tsv")]) == 0
    row = json.loads(capsys.readouterr().out)
    assert 0 <= row["recall_span"] <= 100
    assert main(["bench", "sweep", "--selector", "align", "--lexicon", str(d / "lex.tsv"), "--vocab", str(d / "vocab.txt"),
                 "--eval", str(d / "test.eval.tsv"), "--grid", "paper", "--out", str(tmp_path / "s.csv")]) == 0
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "selector,param,avg_vocab_size,recall_sentence,recall_span" and rows[1].startswith("align,20,")
    assert main(["bench", "context", "--model", str(d / "m.slxm"), "--vocab", str(d / "vocab.txt"),
                 "--eval", str(d / "context_test.eval.tsv"), "--out", str(tmp_path / "ctx.tsv")]) == 0
    assert "0.99\tAll excl" in (tmp_path / "ctx.tsv").read_text()
    capsys.readouterr()
    assert main(["bench", "latency", "--model", str(d / "m.slxm"), *base, "--input", str(d / "test.src"),
                 "--repetitions", "2", "--selector", "nvs"]) == 0
    assert "p90_ms" in capsys.readouterr().out


def test_finetune_changes_only_head(work, tmp_path):
    d, base = work
    out = tmp_path / "ft.slxm"
    assert main(["finetune", "--model", str(d / "m.slxm"), "--src", str(d / "adapt.src"), "--tgt", str(d / "adapt.tgt"),
                 *base, "--epochs", "1", "--out", str(out)]) == 0
    p0, _ = nmt.load_checkpoint(d / "m.slxm")
    p1, _ = nmt.load_checkpoint(out)
    assert {k for k in p0 if not np.array_equal(p0[k], p1[k])} == {"nvs.w", "nvs.b"}


def test_inspect_and_bleu(work, tmp_path, capsys):
    d, _ = work
    capsys.readouterr()
    assert main(["inspect", "checkpoint", str(d / "m.slxm")]) == 0
    out = capsys.readouterr().out
    V = len((d / "vocab.txt").read_text().splitlines())
    assert f"# nvs\t{V * 8 + V}" in out
    (tmp_path / "h").write_text("a b c d e\n")
    (tmp_path / "r").write_text("a b c d f\n")
    assert main(["eval", "bleu", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r")]) == 0
    assert capsys.readouterr().out.strip() == "66.87"


def test_config_file_and_flag_precedence(work, tmp_path, capsys):
    d, _ = work
    (tmp_path / "h").write_text("a b c d e\n")
    (tmp_path / "r").write_text("a b c d e\n")
    (tmp_path / "other").write_text("x y z\n")
    conf = tmp_path / "run.conf"
    conf.write_text(f"# eval settings\nhyp = {tmp_path / 'other'}\nref={tmp_path / 'r'}\n")
    capsys.readouterr()
    assert main(["--config", str(conf), "eval", "bleu", "--hyp", str(tmp_path / "h")]) == 0
    assert capsys.readouterr().out.strip() == "100.00"
    (tmp_path / "bad.conf").write_text("nonsense = 1\n")
    assert main(["--config", str(tmp_path / "bad.conf"), "eval", "bleu", "--hyp", "a", "--ref", "b"]) == 1


def test_exit_codes(tmp_path, capsys):
    assert main(["eval", "bleu", "--hyp", str(tmp_path / "missing"), "--ref", "x"]) == 1
    assert "missing" in capsys.readouterr().err
    assert main(["eval", "bleu", "--hyp", "a", "--ref", "b", "--bogus"]) == 1
    assert "--bogus" in capsys.readouterr().err
    (tmp_path / "bad.slxm").write_bytes(b"garbage\n")
    assert main(["inspect", "checkpoint", str(tmp_path / "bad.slxm")]) == 1
    assert main(["--help"]) == 0


def test_help_documents_formats():
    out = subprocess.run([sys.executable, "-m", "shortlex.cli", "translate", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "SHORTLEX-MODEL v1" in out.stdout and "--lambda" in out.stdout
