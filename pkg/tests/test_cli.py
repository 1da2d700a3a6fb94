import json
import subprocess
import sys

import pytest

from wordbound.cli import ExperimentConfig, UsageError, main
from wordbound.toydata import toy_corpus, toy_gold, toy_sequence_task

SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[WB]"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("WORDBOUND_OUTPUT_DIR", str(tmp_path / "out"))
    (tmp_path / "corpus.txt").write_text("\n".join(toy_corpus(200, 0)) + "\n", encoding="utf-8")
    for name, seed in (("gold_a.tsv", 0), ("gold_b.tsv", 1)):
        rows = [f"{g.word}\t{' '.join(g.morphs)}" for g in toy_gold(20, seed)]
        (tmp_path / name).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return tmp_path


def tsv(text):
    lines = [line.split("\t") for line in text.strip().splitlines()]
    return [dict(zip(lines[0], row)) for row in lines[1:]]


def test_train_tokenizer_reports_redundancy(workdir, capsys):
    assert main(["train-tokenizer", "--mode", "boundless", "--vocab-size", "200", "corpus.txt", "-o", "b.txt"]) == 0
    row = tsv(capsys.readouterr().out)[0]
    assert row["mode"] == "boundless" and float(row["redundancy"]) == 0.0
    assert int(row["specials"]) + int(row["alphabet"]) + int(row["merges"]) == int(row["vocab_size"]) == 200
    assert (workdir / "b.report.tsv").exists()
    assert (workdir / "b.txt").read_text(encoding="utf-8").splitlines()[:6] == SPECIALS

    assert main(["train-tokenizer", "--mode", "marked", "--vocab-size", "200", "corpus.txt", "-o", "m.txt"]) == 0
    assert float(tsv(capsys.readouterr().out)[0]["redundancy"]) > 0


def test_train_tokenizer_default_output_dir(workdir, capsys):
    assert main(["train-tokenizer", "--vocab-size", "200", "corpus.txt"]) == 0
    assert (workdir / "out" / "vocab-boundless.txt").exists()


def test_missing_corpus_fails_on_stderr(workdir, capsys):
    assert main(["train-tokenizer", "nope.txt"]) != 0
    captured = capsys.readouterr()
    assert captured.out == "" and "nope.txt" in captured.err


def make_vocabs(workdir):
    (workdir / "m.txt").write_text("\n".join(SPECIALS + ["this", "game", "is", "un", "##beat", "##able"]) + "\n")
    (workdir / "b.txt").write_text("\n".join(SPECIALS + ["this", "game", "is", "un", "beat", "able"]) + "\n")


def test_encode_side_by_side(workdir, capsys):
    make_vocabs(workdir)
    assert main(["encode", "--vocab", "m.txt", "--vocab", "b.txt", "this game is unbeatable"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["m(marked)\tthis game is un ##beat ##able", "b(boundless)\tthis game is un beat able"]


def test_encode_wb_tokens_and_annotation(workdir, capsys):
    make_vocabs(workdir)
    assert main(["encode", "--vocab", "b.txt", "--wb-tokens", "this game is unbeatable"]) == 0
    assert capsys.readouterr().out.split("\t")[1].split() == ["this", "[WB]", "game", "[WB]", "is", "[WB]", "un", "beat", "able"]
    assert main(["encode", "--vocab", "b.txt", "--annotate", "this game is unbeatable"]) == 0
    rows = tsv(capsys.readouterr().out)
    assert [r["token"] for r in rows] == ["this", "game", "is", "un", "beat", "able"]
    assert [r["binary"] for r in rows] == ["1", "1", "1", "1", "2", "2"]
    assert [r["word_index"] for r in rows] == ["1", "2", "3", "4", "4", "4"]
    assert [r["subword_index"] for r in rows] == ["1", "1", "1", "1", "2", "3"]


def test_eval_morph_rows_and_mean(workdir, capsys):
    make_vocabs(workdir)
    assert main(["eval-morph", "--vocab", "m.txt", "gold_a.tsv", "gold_b.tsv", "--figure", "f.png", "-o", "r.tsv"]) == 0
    rows = tsv(capsys.readouterr().out)
    assert [r["dataset"] for r in rows] == ["gold_a", "gold_b", "MEAN"]
    assert float(rows[2]["f1"]) == pytest.approx((float(rows[0]["f1"]) + float(rows[1]["f1"])) / 2, abs=2e-6)
    assert (workdir / "f.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert (workdir / "r.tsv").exists()


def test_eval_morph_empty_gold(workdir, capsys):
    make_vocabs(workdir)
    (workdir / "empty.tsv").write_text("")
    assert main(["eval-morph", "--vocab", "m.txt", "empty.tsv"]) != 0
    assert "EmptyGold" in capsys.readouterr().err


def test_compare_morph_two_rows(workdir, capsys):
    assert main(["compare", "--tasks", "morph", "--corpus", "corpus.txt", "--vocab-size", "200",
                 "--gold", "gold_a.tsv", "gold_b.tsv", "--output-dir", "cmp"]) == 0
    rows = tsv(capsys.readouterr().out)
    assert [r["mode"] for r in rows] == ["marked", "boundless"]
    assert set(rows[0]) >= {"avg_len", "precision", "recall", "f1"}
    assert float(rows[1]["redundancy"]) == 0.0
    for name in ("morph_comparison.tsv", "morph_per_dataset.tsv", "morph_comparison.png", "vocab-marked.txt"):
        assert (workdir / "cmp" / name).exists()


def test_grad_check_exit_codes(capsys):
    assert main(["grad-check", "--schema", "subword", "--coords", "40"]) == 0
    row = tsv(capsys.readouterr().out)[0]
    assert float(row["max_rel_error"]) < 1e-3 and row["status"] == "ok"
    # an absurd step size wrecks the finite differences
    assert main(["grad-check", "--schema", "binary", "--coords", "40", "--eps", "10"]) == 1


def write_config(workdir, **extra):
    cfg = {
        "corpus": "corpus.txt",
        "tokenizer": {"vocab_size": 200, "marker_mode": "boundless"},
        "model": {"n_layers": 1, "n_heads": 2, "d_model": 16, "max_seq_len": 64},
        "train": {"batch_size": 8, "total_steps": 10, "peak_lr": 0.003, "eval_every": 5, "checkpoint_every": 5,
                  "seq_len": 64, "grad_clip": 1.0},
        "seed": 0,
        **extra,
    }
    path = workdir / "exp.json"
    path.write_text(json.dumps(cfg))
    return path


def test_pretrain_writes_provenance_and_resumes(workdir, capsys):
    write_config(workdir, schema="binary")
    assert main(["pretrain", "exp.json", "--output-dir", "run", "--implicit-head"]) == 0
    run = workdir / "run"
    for name in ("resolved_config.json", "metrics.jsonl", "step_5.ckpt", "step_10.ckpt", "vocab.txt", "training_curves.png"):
        assert (run / name).exists(), name
    resolved = json.loads((run / "resolved_config.json").read_text())
    assert resolved["schema"] == "binary" and resolved["implicit_head"] is True
    assert resolved["model"]["vocab_size"] == 200 and resolved["train"]["total_steps"] == 10

    full_log = (run / "metrics.jsonl").read_bytes()
    full_ckpt = (run / "step_10.ckpt").read_bytes()
    (run / "step_10.ckpt").unlink()
    assert main(["pretrain", "exp.json", "--output-dir", "run", "--implicit-head", "--resume", "run/step_5.ckpt"]) == 0
    assert (run / "metrics.jsonl").read_bytes() == full_log
    assert (run / "step_10.ckpt").read_bytes() == full_ckpt


def test_pretrain_overrides(workdir, capsys):
    write_config(workdir)
    assert main(["pretrain", "exp.json", "--output-dir", "r", "--steps", "4", "--seed", "3", "--schema", "wb_tokens"]) == 0
    resolved = json.loads((workdir / "r" / "resolved_config.json").read_text())
    assert resolved["seed"] == 3 and resolved["schema"] == "wb_tokens" and resolved["train"]["total_steps"] == 4


def test_config_validation(workdir):
    path = write_config(workdir, corpus="missing.txt")
    with pytest.raises(UsageError):
        ExperimentConfig.load(path).validate()
    (workdir / "bad.yaml").write_text("corpus: corpus.txt\nbogus: 1\n")
    with pytest.raises(UsageError):
        ExperimentConfig.load(workdir / "bad.yaml")
    yaml_cfg = workdir / "ok.yaml"
    yaml_cfg.write_text("corpus: corpus.txt\nschema: word\nseed: 4\n")
    cfg = ExperimentConfig.load(yaml_cfg, {"seed": 7})
    assert cfg.schema == "word" and cfg.seed == 7


def test_wb_tokens_schema_needs_wb_in_vocab(workdir, capsys):
    (workdir / "nowb.txt").write_text("\n".join(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + list("abcdefghijklmnopqrstuvwxyz,")) + "\n")
    write_config(workdir, vocab="nowb.txt", schema="wb_tokens")
    assert main(["pretrain", "exp.json", "--output-dir", "r"]) != 0
    assert "[WB]" in capsys.readouterr().err


def test_finetune_command(workdir, capsys):
    write_config(workdir)
    assert main(["pretrain", "exp.json", "--output-dir", "r"]) == 0
    data = toy_sequence_task(80, seed=2)
    (workdir / "tr.tsv").write_text("".join(f"{label}\t{text}\n" for label, text in data[:60]))
    (workdir / "dv.tsv").write_text("".join(f"{label}\t{text}\n" for label, text in data[60:]))
    capsys.readouterr()
    args = ["finetune", "--checkpoint", "r/step_10.ckpt", "--train", "tr.tsv", "--dev", "dv.tsv", "--epochs", "1",
            "--seeds", "0", "1", "--wb-injection", "ft_binary", "--output-dir", "ft"]
    assert main(args) == 0
    row = tsv(capsys.readouterr().out)[0]
    assert row["wb_injection"] == "ft_binary" and row["metric"] == "accuracy" and row["seeds"] == "0,1"
    for name in ("epochs.tsv", "summary.tsv", "epochs.png"):
        assert (workdir / "ft" / name).exists()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "wordbound", "--help"], capture_output=True, text=True, check=True)
    assert "grad-check" in out.stdout
