"""Masked-language-model pretraining: dynamic masking, LR schedule, training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .boundary import BoundarySchema, annotate, insert_wb_tokens
from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .encoder import BoundaryEncoder, MaskedBatch, ModelConfig, compute_loss, init_params
from .errors import CorpusTooSmall, InvalidConfig, NothingToMask, StepOutOfRange
from .tokenizer_core import MASK, PAD, SEP, WB, Encoding, Vocabulary, encode

logger = logging.getLogger(__name__)

EVAL_MASK_STREAM = 1_000_003  # fixed seed stream for the held-out masks


@dataclass
class TrainConfig:
    batch_size: int = 16
    total_steps: int = 1000
    warmup_steps: int | None = None
    warmup_fraction: float = 0.06
    peak_lr: float = 1e-4
    seq_len: int = 256
    mask_rate: float = 0.15
    seed: int = 0
    eval_every: int = 100
    checkpoint_every: int = 0
    eval_fraction: float = 0.1
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    wb_placement: str = "between"
    lowercase: bool = True

    def __post_init__(self) -> None:
        self.betas = tuple(self.betas)
        if not 0 < self.mask_rate < 1:
            raise InvalidConfig("mask_rate must lie in (0, 1)")
        if self.total_steps < 1 or self.batch_size < 1:
            raise InvalidConfig("total_steps and batch_size must be positive")
        if not 0 <= self.warmup <= self.total_steps:
            raise InvalidConfig("warmup must lie in [0, total_steps]")

    @property
    def warmup(self) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return int(math.floor(self.warmup_fraction * self.total_steps + 0.5))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass(frozen=True)
class LinearSchedule:
    total_steps: int
    warmup: int
    peak_lr: float


def lr_at(step: int, config: TrainConfig | LinearSchedule) -> float:
    """Linear warmup from 0 to the peak, then linear decay to 0 at ``total_steps``."""
    total, warm, peak = config.total_steps, config.warmup, config.peak_lr
    if not 0 <= step <= total:
        raise StepOutOfRange(f"step {step} outside [0, {total}]")
    if step < warm:
        return peak * (step / warm)
    if step == warm:
        return peak
    return peak * ((total - step) / (total - warm))


# --------------------------------------------------------------------------
# data


def half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def prepare_encoding(
    text: str,
    vocab: Vocabulary,
    schema: BoundarySchema,
    seq_len: int,
    lowercase: bool = True,
    wb_placement: str = "between",
) -> Encoding:
    """Encode one sentence as ``[CLS] ... [SEP]``, adding [WB] tokens for that schema."""
    enc = encode(text, vocab, add_special_tokens=True, max_length=seq_len, lowercase=lowercase)
    if BoundarySchema(schema) is BoundarySchema.WB_TOKENS:
        enc = insert_wb_tokens(enc, vocab, wb_placement)
        if len(enc) > seq_len:
            keep = seq_len - 1
            sep = vocab.token_to_id(SEP)
            enc = Encoding(enc.token_ids[:keep] + (sep,), enc.tokens[:keep] + (SEP,), enc.word_ids[:keep] + (-1,))
    return enc


@dataclass
class TokenBatch:
    """Padded, uncorrupted batch. ``usable`` marks positions eligible for masking."""

    input_ids: torch.Tensor
    attention_mask: torch.Tensor
    binary: torch.Tensor
    usable: torch.Tensor
    wb_indices: torch.Tensor | None = None


def collate(encodings: Sequence[Encoding], vocab: Vocabulary, schema: BoundarySchema) -> TokenBatch:
    schema = BoundarySchema(schema)
    width = max(len(e) for e in encodings)
    pad = vocab.token_to_id(PAD)
    wb_id = vocab.special_id(WB)
    ids = np.full((len(encodings), width), pad, dtype=np.int64)
    binary = np.zeros_like(ids)
    wb = np.zeros_like(ids)
    attn = np.zeros(ids.shape, dtype=bool)
    usable = np.zeros(ids.shape, dtype=bool)
    for row, enc in enumerate(encodings):
        n = len(enc)
        ann = annotate(enc)
        ids[row, :n] = enc.token_ids
        attn[row, :n] = True
        binary[row, :n] = ann.binary
        usable[row, :n] = np.asarray(ann.binary) > 0
        if schema is BoundarySchema.WB_TOKENS and wb_id is not None:
            # in-band boundary markers are ordinary prediction targets
            usable[row, :n] |= np.asarray(enc.token_ids) == wb_id
        idx = ann.indices(schema)
        if idx is not None:
            wb[row, :n] = idx
    t = torch.from_numpy
    return TokenBatch(t(ids), t(attn), t(binary), t(usable), t(wb) if schema.table_rows else None)


def dynamic_mask(
    batch: TokenBatch,
    rate: float,
    step_seed: int | Sequence[int],
    vocab: Vocabulary,
) -> MaskedBatch:
    """Select ``round(rate * usable)`` positions per sequence (at least one) and corrupt them.

    Selected positions become [MASK] 80% of the time, a random regular token
    10% of the time and stay unchanged otherwise.  The selection is a pure
    function of ``step_seed``.
    """
    rng = np.random.default_rng(step_seed)
    usable = batch.usable.numpy()
    if not usable.any():
        raise NothingToMask("batch has no maskable positions")
    inputs = batch.input_ids.numpy().copy()
    mask = np.zeros_like(usable)
    mask_id = vocab.token_to_id(MASK)
    regular = np.asarray(vocab.regular_ids)
    for row in range(usable.shape[0]):
        cand = np.flatnonzero(usable[row])
        if cand.size == 0:
            continue
        k = max(1, half_up(rate * cand.size))
        chosen = np.sort(rng.choice(cand, size=k, replace=False))
        mask[row, chosen] = True
        u = rng.random(k)
        replacement = rng.choice(regular, size=k)
        for pos, ui, rep in zip(chosen, u, replacement):
            if ui < 0.8:
                inputs[row, pos] = mask_id
            elif ui < 0.9:
                inputs[row, pos] = rep
    return MaskedBatch(
        input_ids=torch.from_numpy(inputs),
        target_ids=batch.input_ids,
        mask_positions=torch.from_numpy(mask),
        attention_mask=batch.attention_mask,
        wb_indices=batch.wb_indices,
        boundary_targets=batch.binary,
        usable=batch.usable,
    )


def split_corpus(n: int, eval_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    order = np.random.default_rng([seed, 7]).permutation(n)
    n_eval = max(1, half_up(eval_fraction * n)) if eval_fraction > 0 else 0
    return sorted(order[n_eval:].tolist()), sorted(order[:n_eval].tolist())


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalMetrics:
    loss: float
    token_acc: float
    boundary_acc: float | None
    n_masked: int


@torch.no_grad()
def evaluate_mlm(
    model: BoundaryEncoder,
    encodings: Sequence[Encoding],
    vocab: Vocabulary,
    rate: float,
    batch_size: int,
    seed: int,
) -> EvalMetrics:
    """Token loss and top-1 accuracy at masked positions over a fixed masking of ``encodings``."""
    schema = model.config.wb_schema
    total_ce = 0.0
    correct = 0
    n_masked = 0
    b_correct = 0
    b_total = 0
    for start in range(0, len(encodings), batch_size):
        tb = collate(encodings[start:start + batch_size], vocab, schema)
        if not tb.usable.any():
            continue
        mb = dynamic_mask(tb, rate, [seed, EVAL_MASK_STREAM, start], vocab)
        out = model(mb.input_ids, mb.attention_mask, mb.wb_indices)
        m = mb.mask_positions
        logits = out.token_logits[m]
        targets = mb.target_ids[m]
        total_ce += float(torch.nn.functional.cross_entropy(logits, targets, reduction="sum"))
        correct += int((logits.argmax(-1) == targets).sum())
        n_masked += int(m.sum())
        if out.boundary_logits is not None:
            bm = mb.usable if model.config.boundary_positions == "all" else m
            b_correct += int((out.boundary_logits[bm].argmax(-1) == mb.boundary_targets[bm]).sum())
            b_total += int(bm.sum())
    if n_masked == 0:
        raise NothingToMask("evaluation set has no maskable positions")
    return EvalMetrics(total_ce / n_masked, correct / n_masked, b_correct / b_total if b_total else None, n_masked)


# --------------------------------------------------------------------------
# training loop


@dataclass
class PretrainResult:
    model: BoundaryEncoder
    metrics: list[dict]
    checkpoint: Path | None = None
    train_losses: list[float] = field(default_factory=list)


def _param_groups(model: BoundaryEncoder, weight_decay: float) -> list[dict]:
    decay = [p for n, p in model.named_parameters() if p.dim() >= 2]
    no_decay = [p for n, p in model.named_parameters() if p.dim() < 2]
    return [{"params": decay, "weight_decay": weight_decay}, {"params": no_decay, "weight_decay": 0.0}]


def make_optimizer(
    model: BoundaryEncoder,
    lr: float,
    weight_decay: float = 0.01,
    betas: Sequence[float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> torch.optim.AdamW:
    """AdamW with decay on matrices only (biases, norms untouched)."""
    return torch.optim.AdamW(_param_groups(model, weight_decay), lr=lr, betas=tuple(betas), eps=eps)


def batch_indices(step: int, n_train: int, batch_size: int, seed: int) -> list[int]:
    """Example indices for ``step``; a fresh permutation per epoch, derived from (seed, epoch)."""
    per_epoch = n_train // batch_size
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, 11, epoch]).permutation(n_train)
    return perm[pos * batch_size:(pos + 1) * batch_size].tolist()


def _read_log(path: Path, upto: int) -> list[dict]:
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    return [r for r in rows if r["step"] <= upto]


def pretrain(
    corpus: Iterable[str],
    vocab: Vocabulary,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> PretrainResult:
    """Train ``model_config`` from scratch (or from ``resume``) with dynamic masking.

    With ``out_dir`` set, a ``metrics.jsonl`` record is appended every step and
    checkpoints ``step_<n>.ckpt`` are written every ``checkpoint_every`` steps
    and at the end.
    """
    cfg = train_config
    schema = model_config.wb_schema
    if model_config.vocab_size != len(vocab):
        raise InvalidConfig(f"model vocab_size {model_config.vocab_size} != vocabulary size {len(vocab)}")
    if schema is BoundarySchema.WB_TOKENS and vocab.special_id(WB) is None:
        raise InvalidConfig("wb_tokens schema needs [WB] in the vocabulary")
    seq_len = min(cfg.seq_len, model_config.max_seq_len)
    encodings = [
        e for e in (prepare_encoding(t, vocab, schema, seq_len, cfg.lowercase, cfg.wb_placement) for t in corpus)
        if len(e) > 2
    ]
    train_idx, eval_idx = split_corpus(len(encodings), cfg.eval_fraction, cfg.seed)
    if len(train_idx) < cfg.batch_size:
        raise CorpusTooSmall(f"{len(train_idx)} training sequences, need at least batch_size={cfg.batch_size}")
    train_set = [encodings[i] for i in train_idx]
    eval_set = [encodings[i] for i in eval_idx]

    torch.manual_seed(cfg.seed)
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume, dtype=model_config.dtype)
        model = ckpt.model
        start = ckpt.step
        optimizer = make_optimizer(model, cfg.peak_lr, cfg.weight_decay, cfg.betas, cfg.adam_eps)
        restore_optimizer(optimizer, model, ckpt)
    else:
        model = init_params(model_config, cfg.seed)
        optimizer = make_optimizer(model, cfg.peak_lr, cfg.weight_decay, cfg.betas, cfg.adam_eps)
    model.train()

    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    metrics: list[dict] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.jsonl"
        metrics = _read_log(log_path, start) if resume is not None else []
        with open(log_path, "w", encoding="utf-8") as fh:
            for rec in metrics:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    last_ckpt = None
    train_losses = []
    for step in range(start, cfg.total_steps):
        lr = lr_at(step, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        tb = collate([train_set[i] for i in batch_indices(step, len(train_set), cfg.batch_size, cfg.seed)], vocab, schema)
        mb = dynamic_mask(tb, cfg.mask_rate, [cfg.seed, step], vocab)
        losses = compute_loss(model, mb)
        optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        if cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()

        done = step + 1
        rec = {
            "step": done,
            "lr": lr,
            "train_loss": float(losses.total.detach()),
            "train_token_loss": float(losses.token.detach()),
            "eval_loss": None,
            "eval_token_acc": None,
            "eval_boundary_acc": None,
        }
        train_losses.append(rec["train_token_loss"])
        if eval_set and (done % cfg.eval_every == 0 or done == cfg.total_steps):
            model.eval()
            ev = evaluate_mlm(model, eval_set, vocab, cfg.mask_rate, cfg.batch_size, cfg.seed)
            model.train()
            rec.update(eval_loss=ev.loss, eval_token_acc=ev.token_acc, eval_boundary_acc=ev.boundary_acc)
        metrics.append(rec)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if on_step is not None:
            on_step(rec)
        if out is not None and (
            (cfg.checkpoint_every and done % cfg.checkpoint_every == 0) or done == cfg.total_steps
        ):
            last_ckpt = save_checkpoint(
                out / f"step_{done}.ckpt", model, done, cfg.seed, optimizer, vocab.tokens, cfg.to_dict()
            )
    return PretrainResult(model, metrics, last_ckpt, train_losses)


def eval_split(corpus: Sequence[str], vocab: Vocabulary, model_config: ModelConfig, cfg: TrainConfig) -> list[Encoding]:
    """The held-out encodings that :func:`pretrain` evaluates on, for replaying logged metrics."""
    seq_len = min(cfg.seq_len, model_config.max_seq_len)
    encodings = [
        e for e in (prepare_encoding(t, vocab, model_config.wb_schema, seq_len, cfg.lowercase, cfg.wb_placement) for t in corpus)
        if len(e) > 2
    ]
    _, eval_idx = split_corpus(len(encodings), cfg.eval_fraction, cfg.seed)
    return [encodings[i] for i in eval_idx]
