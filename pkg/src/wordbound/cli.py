"""Command-line entry point: ``wordbound <subcommand> ...``.

Reports go to stdout as TSV (plus files in the output directory); diagnostics
go to stderr.  Exit status is 0 only when the requested work finished and
every internal validation passed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import yaml

from .errors import WordBoundError

logger = logging.getLogger("wordbound")

OUTPUT_ENV = "WORDBOUND_OUTPUT_DIR"
GRAD_TOLERANCE = 1e-3


class UsageError(Exception):
    pass


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


# --------------------------------------------------------------------------
# experiment configuration


@dataclass
class ExperimentConfig:
    """One experiment: corpus, tokenizer, model, training and output location."""

    corpus: list[str]
    vocab: str | None = None
    tokenizer: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    schema: str = "none"
    implicit_head: bool = False
    output_dir: str | None = None
    seed: int = 0

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise UsageError(f"{path}: expected a mapping at top level")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise UsageError(f"{path}: unknown keys {unknown}")
        for k, v in (overrides or {}).items():
            if v is not None:
                raw[k] = v
        if "corpus" not in raw:
            raise UsageError(f"{path}: 'corpus' is required")
        if isinstance(raw["corpus"], str):
            raw["corpus"] = [raw["corpus"]]
        base = Path(path).parent
        raw["corpus"] = [str(_resolve(base, c)) for c in raw["corpus"]]
        if raw.get("vocab"):
            raw["vocab"] = str(_resolve(base, raw["vocab"]))
        return cls(**raw)

    def validate(self) -> None:
        for p in self.corpus:
            if not Path(p).is_file():
                raise UsageError(f"corpus file not found: {p}")
        if self.vocab is not None and not Path(self.vocab).is_file():
            raise UsageError(f"vocabulary file not found: {self.vocab}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() or q.exists() else base / q


# --------------------------------------------------------------------------
# helpers


def _read_docs(paths: Sequence[str]) -> list[str]:
    from .tokenizer_core import read_corpus

    docs: list[str] = []
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"corpus file not found: {p}")
        docs.extend(read_corpus(p))
    return docs


def _write_tsv(path: Path | None, header: Sequence[str], rows: Sequence[Sequence], stream=None) -> None:
    lines = ["\t".join(header)] + ["\t".join(_fmt(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    if stream is not None:
        stream.write(text)


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _set_determinism(enabled: bool) -> None:
    if enabled:
        import torch

        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


# --------------------------------------------------------------------------
# subcommands


def cmd_train_tokenizer(args: argparse.Namespace) -> int:
    from .morpho_eval import vocab_redundancy
    from .tokenizer_core import TokenizerConfig, train_wordpiece

    docs = _read_docs(args.corpus)
    cfg = TokenizerConfig(
        vocab_size=args.vocab_size,
        min_pair_frequency=args.min_pair_frequency,
        lowercase=not args.no_lowercase,
        marker_mode=args.mode,
        split_punctuation=not args.no_split_punctuation,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        vocab = train_wordpiece(docs, cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = Path(args.output) if args.output else default_output_dir() / f"vocab-{cfg.marker_mode.value}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    n_specials = len(vocab.specials)
    # merges never create single characters, so the rest of the vocabulary came from merges
    alphabet = sum(1 for t in vocab.tokens if t not in vocab.specials and len(t.removeprefix(vocab.continuation_prefix)) == 1)
    redundancy = vocab_redundancy(vocab)
    report = out.with_suffix(".report.tsv")
    _write_tsv(
        report,
        ["mode", "vocab_size", "requested_size", "specials", "alphabet", "merges", "redundancy"],
        [[cfg.marker_mode.value, len(vocab), cfg.vocab_size, n_specials, alphabet, len(vocab) - n_specials - alphabet, redundancy]],
        sys.stdout,
    )
    print(f"wrote {out} and {report}", file=sys.stderr)
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    from .boundary import annotate, insert_wb_tokens
    from .tokenizer_core import Vocabulary, encode

    if args.file:
        texts = Path(args.file).read_text(encoding="utf-8").splitlines()
    elif args.text:
        texts = [" ".join(args.text)]
    else:
        raise UsageError("give TEXT or --file")
    vocabs = [(p, Vocabulary.load(p)) for p in args.vocab]
    out = sys.stdout
    for text in texts:
        if not text.strip():
            continue
        for path, vocab in vocabs:
            enc = encode(text, vocab, add_special_tokens=args.special_tokens, lowercase=not args.no_lowercase)
            if args.wb_tokens:
                enc = insert_wb_tokens(enc, vocab, args.wb_placement)
            label = f"{Path(path).stem}({vocab.marker_mode.value})"
            if args.annotate:
                ann = annotate(enc)
                if len(vocabs) > 1:
                    out.write(f"# {label}\n")
                out.write("token\tbinary\tword_index\tsubword_index\n")
                for row in zip(enc.tokens, ann.binary, ann.word_index, ann.subword_index):
                    out.write("\t".join(map(str, row)) + "\n")
                out.write("\n")
            else:
                out.write(f"{label}\t{' '.join(enc.tokens)}\n")
    return 0


def _eval_rows(results) -> list[list]:
    return [[r.name, r.avg_len, r.precision, r.recall, r.f1, r.n_words, r.n_skipped] for r in results]


EVAL_HEADER = ["dataset", "avg_len", "precision", "recall", "f1", "n_words", "n_skipped"]


def cmd_eval_morph(args: argparse.Namespace) -> int:
    from .morpho_eval import evaluate_vocab, macro_average, read_gold
    from .plotting import plot_morph_comparison
    from .tokenizer_core import Vocabulary

    vocab = Vocabulary.load(args.vocab)
    results = []
    for g in args.gold:
        if not Path(g).is_file():
            raise UsageError(f"gold file not found: {g}")
        results.append(evaluate_vocab(vocab, read_gold(g), lowercase=not args.no_lowercase, name=Path(g).stem))
    rows = results + ([macro_average(results)] if len(results) > 1 else [])
    out = Path(args.output) if args.output else None
    _write_tsv(out, EVAL_HEADER, _eval_rows(rows), sys.stdout)
    if args.figure:
        plot_morph_comparison({r.name: r for r in results}, args.figure)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    from .morpho_eval import evaluate_vocab, macro_average, read_gold, vocab_redundancy
    from .plotting import plot_morph_comparison
    from .tokenizer_core import MarkerMode, TokenizerConfig, Vocabulary, train_wordpiece

    if "morph" not in args.tasks:
        raise UsageError("only --tasks morph is supported")
    out_dir = Path(args.output_dir) if args.output_dir else default_output_dir() / "compare"
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.vocabs:
        vocabs = {Path(p).stem: Vocabulary.load(p) for p in args.vocabs}
    elif args.corpus:
        docs = _read_docs(args.corpus)
        vocabs = {}
        for mode in (MarkerMode.MARKED, MarkerMode.BOUNDLESS):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                v = train_wordpiece(docs, TokenizerConfig(vocab_size=args.vocab_size, marker_mode=mode))
            v.save(out_dir / f"vocab-{mode.value}.txt")
            vocabs["WordPiece" if mode is MarkerMode.MARKED else "WordPiece'"] = v
    else:
        raise UsageError("give --vocabs or --corpus")
    golds = []
    for g in args.gold:
        if not Path(g).is_file():
            raise UsageError(f"gold file not found: {g}")
        golds.append((Path(g).stem, read_gold(g)))

    summary = {}
    rows = []
    per_dataset = []
    for name, vocab in vocabs.items():
        res = [evaluate_vocab(vocab, gold, name=gname) for gname, gold in golds]
        mean = macro_average(res, name=name)
        summary[name] = mean
        rows.append([name, vocab.marker_mode.value, mean.avg_len, mean.precision, mean.recall, mean.f1, vocab_redundancy(vocab)])
        per_dataset.extend([name] + r for r in _eval_rows(res))
    _write_tsv(
        out_dir / "morph_comparison.tsv",
        ["tokenizer", "mode", "avg_len", "precision", "recall", "f1", "redundancy"],
        rows,
        sys.stdout,
    )
    _write_tsv(out_dir / "morph_per_dataset.tsv", ["tokenizer"] + EVAL_HEADER, per_dataset)
    plot_morph_comparison(summary, out_dir / "morph_comparison.png")
    print(f"wrote reports to {out_dir}", file=sys.stderr)
    return 0


def _experiment_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {"seed": args.seed, "output_dir": args.output_dir, "schema": args.schema}
    if args.implicit_head:
        overrides["implicit_head"] = True
    cfg = ExperimentConfig.load(args.config, overrides)
    cfg.validate()
    return cfg


def cmd_pretrain(args: argparse.Namespace) -> int:
    from .boundary import BoundarySchema
    from .encoder import ModelConfig
    from .plotting import plot_training_curves
    from .pretrainer import TrainConfig, pretrain
    from .tokenizer_core import WB, TokenizerConfig, Vocabulary, train_wordpiece

    _set_determinism(not args.no_determinism)
    exp = _experiment_from_args(args)
    out_dir = Path(exp.output_dir) if exp.output_dir else default_output_dir() / "pretrain"
    out_dir.mkdir(parents=True, exist_ok=True)
    docs = _read_docs(exp.corpus)

    if exp.vocab:
        vocab = Vocabulary.load(exp.vocab)
    else:
        tok_cfg = TokenizerConfig(**exp.tokenizer)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vocab = train_wordpiece(docs, tok_cfg)
    vocab.save(out_dir / "vocab.txt")
    schema = BoundarySchema(exp.schema)
    if schema is BoundarySchema.WB_TOKENS and WB not in vocab:
        raise UsageError("schema wb_tokens needs [WB] in the vocabulary")

    model_cfg = ModelConfig(**{**exp.model, "vocab_size": len(vocab), "wb_schema": schema, "implicit_head": exp.implicit_head})
    train_kwargs = dict(exp.train)
    train_kwargs["seed"] = exp.seed
    if args.steps is not None:
        train_kwargs["total_steps"] = args.steps
    train_cfg = TrainConfig(**train_kwargs)

    resolved = exp.to_dict()
    resolved.update(output_dir=str(out_dir), model=model_cfg.to_dict(), train=train_cfg.to_dict(), vocab_size=len(vocab))
    (out_dir / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    result = pretrain(docs, vocab, model_cfg, train_cfg, out_dir=out_dir, resume=args.resume)
    plot_training_curves(result.metrics, out_dir / "training_curves.png", title=f"schema={schema.value}")
    last = result.metrics[-1]
    _write_tsv(
        None,
        ["step", "train_loss", "eval_loss", "eval_token_acc", "eval_boundary_acc", "checkpoint"],
        [[last["step"], last["train_loss"], last["eval_loss"], last["eval_token_acc"], last["eval_boundary_acc"], result.checkpoint]],
        sys.stdout,
    )
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    from .finetune import FinetuneConfig, Task, finetune, read_sequence_tsv, read_token_tsv
    from .plotting import plot_finetune_epochs

    _set_determinism(not args.no_determinism)
    for p in (args.checkpoint, args.train, args.dev):
        if not Path(p).is_file():
            raise UsageError(f"file not found: {p}")
    cfg = FinetuneConfig(
        task=args.task,
        wb_injection=args.wb_injection,
        batch_size=args.batch_size,
        seq_len=args.seq_len,
        lr=args.lr,
        warmup_fraction=args.warmup_fraction,
        epochs=args.epochs,
        seeds=tuple(args.seeds),
        pooling=args.pooling,
        remove_outliers=args.remove_outliers,
    )
    reader = read_sequence_tsv if cfg.task is Task.SEQUENCE else read_token_tsv
    result = finetune(args.checkpoint, None, reader(args.train), reader(args.dev), cfg)
    out_dir = Path(args.output_dir) if args.output_dir else default_output_dir() / "finetune"
    rows = [[s, e + 1, v] for s, scores in result.per_seed_epochs.items() for e, v in enumerate(scores)]
    _write_tsv(out_dir / "epochs.tsv", ["seed", "epoch", result.metric_name], rows)
    _write_tsv(
        out_dir / "summary.tsv",
        ["task", "wb_injection", "metric", "mean", "std", "seeds"],
        [[cfg.task.value, cfg.wb_injection.value, result.metric_name, result.mean, result.std, ",".join(map(str, result.kept_seeds))]],
        sys.stdout,
    )
    plot_finetune_epochs(result.per_seed_epochs, out_dir / "epochs.png", result.metric_name)
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    from .encoder import gradient_check, toy_grad_check_setup

    model, batch = toy_grad_check_setup(args.schema, args.implicit_head, args.seed)
    res = gradient_check(model, batch, n_coords=args.coords, eps=args.eps, seed=args.seed)
    ok = res.max_rel_error < GRAD_TOLERANCE
    _write_tsv(
        None,
        ["schema", "implicit_head", "coords", "max_rel_error", "worst", "status"],
        [[args.schema, args.implicit_head, res.n_coords, f"{res.max_rel_error:.3e}", f"{res.worst[0]}[{res.worst[1]}]" if res.worst else "-", "ok" if ok else "FAIL"]],
        sys.stdout,
    )
    return 0 if ok else 1


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wordbound", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-tokenizer", help="train a WordPiece vocabulary")
    t.add_argument("corpus", nargs="+")
    t.add_argument("--mode", choices=["marked", "boundless"], default="boundless")
    t.add_argument("--vocab-size", type=int, default=16384)
    t.add_argument("--min-pair-frequency", type=int, default=2)
    t.add_argument("--no-lowercase", action="store_true")
    t.add_argument("--no-split-punctuation", action="store_true")
    t.add_argument("-o", "--output")
    t.set_defaults(func=cmd_train_tokenizer)

    e = sub.add_parser("encode", help="tokenise text, optionally with boundary annotation")
    e.add_argument("text", nargs="*")
    e.add_argument("--vocab", action="append", required=True, help="repeat for side-by-side output")
    e.add_argument("--file")
    e.add_argument("--annotate", action="store_true", help="token/binary/word_index/subword_index TSV")
    e.add_argument("--wb-tokens", action="store_true")
    e.add_argument("--wb-placement", choices=["between", "before"], default="between")
    e.add_argument("--special-tokens", action="store_true", help="wrap in [CLS] ... [SEP]")
    e.add_argument("--no-lowercase", action="store_true")
    e.set_defaults(func=cmd_encode)

    m = sub.add_parser("eval-morph", help="boundary precision/recall/F1 against gold segmentations")
    m.add_argument("--vocab", required=True)
    m.add_argument("gold", nargs="+")
    m.add_argument("-o", "--output")
    m.add_argument("--figure")
    m.add_argument("--no-lowercase", action="store_true")
    m.set_defaults(func=cmd_eval_morph)

    c = sub.add_parser("compare", help="side-by-side morphological comparison of tokenisers")
    c.add_argument("--tasks", nargs="+", default=["morph"])
    c.add_argument("--vocabs", nargs="+")
    c.add_argument("--corpus", nargs="+")
    c.add_argument("--vocab-size", type=int, default=16384)
    c.add_argument("--gold", nargs="+", required=True)
    c.add_argument("--output-dir")
    c.set_defaults(func=cmd_compare)

    pt = sub.add_parser("pretrain", help="MLM pretraining from an experiment config")
    pt.add_argument("config")
    pt.add_argument("--resume")
    pt.add_argument("--seed", type=int)
    pt.add_argument("--steps", type=int)
    pt.add_argument("--schema", choices=["none", "binary", "word", "subword", "wb_tokens"])
    pt.add_argument("--implicit-head", action="store_true")
    pt.add_argument("--output-dir")
    pt.add_argument("--no-determinism", action="store_true")
    pt.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="finetune a pretrained checkpoint")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--train", required=True)
    f.add_argument("--dev", required=True)
    f.add_argument("--task", choices=["sequence", "token"], default="sequence")
    f.add_argument("--wb-injection", choices=["none", "ft_binary", "ft_wb_tokens"], default="none")
    f.add_argument("--batch-size", type=int, default=32)
    f.add_argument("--seq-len", type=int, default=128)
    f.add_argument("--lr", type=float, default=2e-5)
    f.add_argument("--warmup-fraction", type=float, default=0.05)
    f.add_argument("--epochs", type=int, default=5)
    f.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    f.add_argument("--pooling", choices=["mean", "cls"], default="mean")
    f.add_argument("--remove-outliers", action="store_true")
    f.add_argument("--output-dir")
    f.add_argument("--no-determinism", action="store_true")
    f.set_defaults(func=cmd_finetune)

    g = sub.add_parser("grad-check", help="finite-difference gradient check on a tiny model")
    g.add_argument("--schema", choices=["none", "binary", "word", "subword", "wb_tokens"], default="none")
    g.add_argument("--implicit-head", action="store_true")
    g.add_argument("--coords", type=int, default=200)
    g.add_argument("--eps", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_grad_check)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, WordBoundError, FileNotFoundError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
