"""Full-parameter finetuning for sequence and token classification.

Boundary information can be injected at this stage only, on a model that was
pretrained without it: either a freshly initialised binary boundary
embedding table (``FT_BINARY``) or [WB] tokens in the input
(``FT_WB_TOKENS``).
"""

from __future__ import annotations

import copy
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean, pstdev
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .boundary import BoundarySchema, annotate, insert_wb_tokens
from .checkpoint import load_checkpoint
from .encoder import IGNORE, BoundaryEncoder
from .errors import InvalidConfig, LabelMismatch, SchemaConflict
from .pretrainer import LinearSchedule, half_up, lr_at, make_optimizer
from .tokenizer_core import CLS, NO_WORD, PAD, SEP, Encoding, Vocabulary, encode, encode_word

logger = logging.getLogger(__name__)


class Task(str, enum.Enum):
    SEQUENCE = "sequence"
    TOKEN = "token"


class WBInjection(str, enum.Enum):
    NONE = "none"
    FT_BINARY = "ft_binary"
    FT_WB_TOKENS = "ft_wb_tokens"


@dataclass
class FinetuneConfig:
    task: Task = Task.SEQUENCE
    wb_injection: WBInjection = WBInjection.NONE
    batch_size: int = 32
    seq_len: int = 128
    lr: float = 2e-5
    warmup_fraction: float = 0.05
    epochs: int = 5
    seeds: tuple[int, ...] = (0, 1, 2)
    pooling: str = "mean"
    weight_decay: float = 0.01
    remove_outliers: bool = False
    lowercase: bool = True

    def __post_init__(self) -> None:
        self.task = Task(self.task)
        self.wb_injection = WBInjection(self.wb_injection)
        self.seeds = tuple(self.seeds)
        if self.pooling not in ("mean", "cls"):
            raise InvalidConfig("pooling must be 'mean' or 'cls'")
        if not self.seeds:
            raise InvalidConfig("at least one seed is required")


@dataclass
class SequenceExample:
    text: str
    label: str


@dataclass
class TokenExample:
    words: list[str]
    tags: list[str]


# --------------------------------------------------------------------------
# dataset files


def read_sequence_tsv(path: str | Path) -> list[SequenceExample]:
    """``label<TAB>text`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'label<TAB>text'")
            label, text = line.split("\t", 1)
            out.append(SequenceExample(text, label))
    return out


def read_token_tsv(path: str | Path) -> list[TokenExample]:
    """CoNLL-style ``token<TAB>tag`` lines, blank line between sentences."""
    out: list[TokenExample] = []
    words: list[str] = []
    tags: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if words:
                    out.append(TokenExample(words, tags))
                    words, tags = [], []
                continue
            cols = line.split("\t")
            if len(cols) < 2:
                raise LabelMismatch(f"{path}:{lineno}: token without a tag")
            words.append(cols[0])
            tags.append(cols[-1])
    if words:
        out.append(TokenExample(words, tags))
    return out


# --------------------------------------------------------------------------
# metrics


def bio_spans(tags: Sequence[str]) -> set[tuple[int, int, str]]:
    """Entity spans ``(start, end, type)`` from BIO tags; a stray I- opens a span."""
    spans = set()
    start, kind = None, None
    for i, tag in enumerate(list(tags) + ["O"]):
        prefix, _, label = tag.partition("-")
        if start is not None and (prefix != "I" or label != kind):
            spans.add((start, i, kind))
            start, kind = None, None
        if prefix == "B" or (prefix == "I" and start is None):
            start, kind = i, label
    return spans


def span_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> float:
    """Micro-averaged exact-span F1, 0 when nothing matches (including no spans at all)."""
    tp = n_pred = n_gold = 0
    for g, p in zip(gold, pred):
        gs, ps = bio_spans(g), bio_spans(p)
        tp += len(gs & ps)
        n_pred += len(ps)
        n_gold += len(gs)
    if tp == 0:
        return 0.0
    precision, recall = tp / n_pred, tp / n_gold
    return 2 * precision * recall / (precision + recall)


def drop_outliers(scores: Sequence[float], n_sd: float = 2.0) -> list[float]:
    if len(scores) < 3:
        return list(scores)
    mu, sd = fmean(scores), pstdev(scores)
    return [s for s in scores if abs(s - mu) <= n_sd * sd] or list(scores)


# --------------------------------------------------------------------------
# model


class Classifier(nn.Module):
    def __init__(self, encoder: BoundaryEncoder, n_labels: int, task: Task, pooling: str = "mean") -> None:
        super().__init__()
        self.encoder = encoder
        self.task = task
        self.pooling = pooling
        self.head = nn.Linear(encoder.config.d_model, n_labels)

    def forward(self, input_ids, attention_mask, wb_indices=None) -> torch.Tensor:
        hidden = self.encoder(input_ids, attention_mask, wb_indices).hidden_states
        if self.task is Task.TOKEN:
            return self.head(hidden)
        if self.pooling == "cls":
            pooled = hidden[:, 0]
        else:
            m = attention_mask.to(hidden.dtype)[..., None]
            pooled = (hidden * m).sum(1) / m.sum(1).clamp_min(1.0)
        return self.head(pooled)


@dataclass
class _Encoded:
    encoding: Encoding
    label: int | list[int]


def _encode_sequence(ex: SequenceExample, vocab: Vocabulary, seq_len: int, cfg: FinetuneConfig) -> Encoding:
    enc = encode(ex.text, vocab, add_special_tokens=True, max_length=seq_len, lowercase=cfg.lowercase)
    return _maybe_wb(enc, vocab, seq_len, cfg)


def _encode_words(words: Sequence[str], vocab: Vocabulary, seq_len: int, cfg: FinetuneConfig) -> Encoding:
    """Encode pre-split words so that word ids line up with the tag sequence."""
    ids, toks, wids = [vocab.token_to_id(CLS)], [CLS], [NO_WORD]
    for wi, w in enumerate(words):
        for piece in encode_word(w.lower() if cfg.lowercase else w, vocab):
            ids.append(vocab.token_to_id(piece))
            toks.append(piece)
            wids.append(wi)
    ids, toks, wids = ids[:seq_len - 1], toks[:seq_len - 1], wids[:seq_len - 1]
    ids.append(vocab.token_to_id(SEP))
    toks.append(SEP)
    wids.append(NO_WORD)
    return _maybe_wb(Encoding(tuple(ids), tuple(toks), tuple(wids)), vocab, seq_len, cfg)


def _maybe_wb(enc: Encoding, vocab: Vocabulary, seq_len: int, cfg: FinetuneConfig) -> Encoding:
    if cfg.wb_injection is not WBInjection.FT_WB_TOKENS:
        return enc
    enc = insert_wb_tokens(enc, vocab)
    if len(enc) > seq_len:
        sep = vocab.token_to_id(SEP)
        k = seq_len - 1
        enc = Encoding(enc.token_ids[:k] + (sep,), enc.tokens[:k] + (SEP,), enc.word_ids[:k] + (NO_WORD,))
    return enc


def _token_labels(enc: Encoding, tag_ids: Sequence[int]) -> list[int]:
    """Tag on the first piece of each word, ignored elsewhere."""
    out, prev = [], None
    for wid in enc.word_ids:
        if wid == NO_WORD or wid == prev:
            out.append(IGNORE)
        else:
            out.append(tag_ids[wid])
        if wid != NO_WORD:
            prev = wid
    return out


def _collate(items: Sequence[_Encoded], vocab: Vocabulary, schema: BoundarySchema, task: Task):
    width = max(len(it.encoding) for it in items)
    pad = vocab.token_to_id(PAD)
    ids = np.full((len(items), width), pad, dtype=np.int64)
    attn = np.zeros(ids.shape, dtype=bool)
    wb = np.zeros_like(ids)
    labels = np.full(ids.shape, IGNORE, dtype=np.int64) if task is Task.TOKEN else np.zeros(len(items), dtype=np.int64)
    for r, it in enumerate(items):
        n = len(it.encoding)
        ids[r, :n] = it.encoding.token_ids
        attn[r, :n] = True
        idx = annotate(it.encoding).indices(schema)
        if idx is not None:
            wb[r, :n] = idx
        if task is Task.TOKEN:
            labels[r, :n] = it.label
        else:
            labels[r] = it.label
    t = torch.from_numpy
    return t(ids), t(attn), (t(wb) if schema.table_rows else None), t(labels)


@dataclass
class FinetuneResult:
    metric_name: str
    per_seed_epochs: dict[int, list[float]]
    best: dict[int, float]
    mean: float
    std: float
    kept_seeds: list[int] = field(default_factory=list)


def _prepare_encoder(encoder: BoundaryEncoder, cfg: FinetuneConfig, seed: int) -> BoundaryEncoder:
    model = copy.deepcopy(encoder)
    model.config = copy.deepcopy(encoder.config)
    if cfg.wb_injection is WBInjection.FT_BINARY:
        model.attach_wb_table(BoundarySchema.BINARY, torch.Generator().manual_seed(seed))
    return model


def finetune(
    encoder: BoundaryEncoder | str | Path,
    vocab: Vocabulary | None,
    train: Sequence[SequenceExample] | Sequence[TokenExample],
    dev: Sequence[SequenceExample] | Sequence[TokenExample],
    cfg: FinetuneConfig,
) -> FinetuneResult:
    """Finetune one copy of ``encoder`` per seed; report the best dev epoch of each.

    ``encoder`` may be a checkpoint path, in which case ``vocab`` defaults to
    the vocabulary stored in the checkpoint.
    """
    if not isinstance(encoder, BoundaryEncoder):
        ckpt = load_checkpoint(encoder)
        encoder = ckpt.model
        if vocab is None:
            if ckpt.vocab_tokens is None:
                raise InvalidConfig("checkpoint carries no vocabulary; pass one explicitly")
            vocab = Vocabulary(tuple(ckpt.vocab_tokens))
    if cfg.wb_injection is not WBInjection.NONE and encoder.config.wb_schema is not BoundarySchema.NONE:
        raise SchemaConflict(
            f"{cfg.wb_injection.value} needs a model pretrained without boundary information, "
            f"got {encoder.config.wb_schema.value}"
        )
    seq_len = min(cfg.seq_len, encoder.config.max_seq_len)

    if cfg.task is Task.SEQUENCE:
        labels = sorted({ex.label for ex in train})
        unseen = sorted({ex.label for ex in dev} - set(labels))
        if unseen:
            raise LabelMismatch(f"dev labels not present in train: {unseen}")
        lab = {l: i for i, l in enumerate(labels)}
        tr = [_Encoded(_encode_sequence(ex, vocab, seq_len, cfg), lab[ex.label]) for ex in train]
        dv = [_Encoded(_encode_sequence(ex, vocab, seq_len, cfg), lab[ex.label]) for ex in dev]
        metric_name = "accuracy"
    else:
        for ex in list(train) + list(dev):
            if len(ex.words) != len(ex.tags):
                raise LabelMismatch(f"{len(ex.words)} words but {len(ex.tags)} tags")
        labels = sorted({t for ex in train for t in ex.tags})
        unseen = sorted({t for ex in dev for t in ex.tags} - set(labels))
        if unseen:
            raise LabelMismatch(f"dev tags not present in train: {unseen}")
        lab = {l: i for i, l in enumerate(labels)}

        def enc_tok(ex: TokenExample) -> _Encoded:
            e = _encode_words(ex.words, vocab, seq_len, cfg)
            return _Encoded(e, _token_labels(e, [lab[t] for t in ex.tags]))

        tr = [enc_tok(ex) for ex in train]
        dv = [enc_tok(ex) for ex in dev]
        metric_name = "span_f1"

    per_epoch: dict[int, list[float]] = {}
    for seed in cfg.seeds:
        per_epoch[seed] = _run_seed(encoder, vocab, tr, dv, dev, labels, cfg, seed)
    best = {s: max(v) for s, v in per_epoch.items()}
    kept = list(cfg.seeds)
    scores = [best[s] for s in kept]
    if cfg.remove_outliers:
        kept_scores = drop_outliers(scores)
        kept = [s for s in kept if best[s] in kept_scores]
        scores = [best[s] for s in kept]
    return FinetuneResult(metric_name, per_epoch, best, fmean(scores), pstdev(scores) if len(scores) > 1 else 0.0, kept)


def _run_seed(encoder, vocab, tr, dv, dev_raw, labels, cfg: FinetuneConfig, seed: int) -> list[float]:
    torch.manual_seed(seed)
    enc = _prepare_encoder(encoder, cfg, seed)
    model = Classifier(enc, len(labels), cfg.task, cfg.pooling)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        model.head.weight.normal_(0.0, 0.02, generator=g)
        model.head.bias.zero_()
    model.to(dtype=next(enc.parameters()).dtype)
    schema = enc.config.wb_schema

    per_epoch = math.ceil(len(tr) / cfg.batch_size)
    total = per_epoch * cfg.epochs
    sched = LinearSchedule(total, half_up(cfg.warmup_fraction * total), cfg.lr)
    opt = make_optimizer(model, cfg.lr, cfg.weight_decay)
    scores = []
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = np.random.default_rng([seed, 13, epoch]).permutation(len(tr))
        for b in range(per_epoch):
            items = [tr[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            ids, attn, wb, y = _collate(items, vocab, schema, cfg.task)
            for group in opt.param_groups:
                group["lr"] = lr_at(step, sched)
            logits = model(ids, attn, wb)
            loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), y.reshape(-1), ignore_index=IGNORE)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
        scores.append(_evaluate(model, vocab, dv, dev_raw, labels, cfg, schema))
        logger.info("seed %d epoch %d dev %.4f", seed, epoch + 1, scores[-1])
    return scores


@torch.no_grad()
def _evaluate(model, vocab, dv, dev_raw, labels, cfg: FinetuneConfig, schema) -> float:
    model.eval()
    preds: list = []
    for start in range(0, len(dv), cfg.batch_size):
        items = dv[start:start + cfg.batch_size]
        ids, attn, wb, _ = _collate(items, vocab, schema, cfg.task)
        logits = model(ids, attn, wb)
        if cfg.task is Task.SEQUENCE:
            preds.extend(logits.argmax(-1).tolist())
        else:
            am = logits.argmax(-1)
            for r, it in enumerate(items):
                n_words = len(dev_raw[start + r].words)
                tags = ["O"] * n_words
                prev = None
                for pos, wid in enumerate(it.encoding.word_ids):
                    if wid != NO_WORD and wid != prev:
                        tags[wid] = labels[int(am[r, pos])]
                    if wid != NO_WORD:
                        prev = wid
                preds.append(tags)
    if cfg.task is Task.SEQUENCE:
        return float(np.mean([p == it.label for p, it in zip(preds, dv)]))
    return span_f1([ex.tags for ex in dev_raw], preds)
