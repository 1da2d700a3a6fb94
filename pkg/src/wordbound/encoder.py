"""Small pre-norm transformer encoder with word-boundary inputs and heads.

The explicit variants add a learned boundary embedding (binary, word or
subword index) to the token and position embeddings.  The implicit variant
keeps the input unchanged and adds a second MLM head that predicts the
3-class boundary label; its loss is added to the token loss without
weighting.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import torch
import torch.nn.functional as F
from torch import nn

from .boundary import BoundarySchema, annotate
from .errors import IndexOutOfRange, InvalidConfig, NoMaskedPositions, ShapeMismatch

N_BOUNDARY_CLASSES = 3
INIT_STD = 0.02
IGNORE = -100

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 256
    vocab_size: int = 16384
    d_ff: int | None = None
    max_seq_len: int = 256
    wb_schema: BoundarySchema = BoundarySchema.NONE
    implicit_head: bool = False
    allow_wb_tokens_with_implicit: bool = False
    # "masked" scores the boundary head where the token head is scored,
    # "all" on every non-special, non-pad position.
    boundary_positions: str = "masked"
    dtype: str = "float32"

    def __post_init__(self) -> None:
        self.wb_schema = BoundarySchema(self.wb_schema)
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        self.validate()

    def validate(self) -> None:
        for name in ("n_layers", "n_heads", "d_model", "vocab_size", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise InvalidConfig(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.wb_schema is BoundarySchema.WB_TOKENS and self.implicit_head and not self.allow_wb_tokens_with_implicit:
            raise InvalidConfig("wb_tokens schema combined with the implicit head needs allow_wb_tokens_with_implicit")
        if self.boundary_positions not in ("masked", "all"):
            raise InvalidConfig(f"boundary_positions must be 'masked' or 'all', got {self.boundary_positions!r}")
        if self.dtype not in _DTYPES:
            raise InvalidConfig(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wb_schema"] = self.wb_schema.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for ``cfg``."""
    d, ff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    per_layer = (
        4 * d * d + 4 * d  # q, k, v, output projections
        + d * ff + ff + ff * d + d  # feed-forward
        + 4 * d  # two layer norms
    )
    total = v * d + cfg.max_seq_len * d + cfg.n_layers * per_layer + 2 * d
    total += cfg.wb_schema.table_rows * d
    total += d * v + v
    if cfg.implicit_head:
        total += d * N_BOUNDARY_CLASSES + N_BOUNDARY_CLASSES
    return total


@dataclass
class ForwardOutput:
    token_logits: torch.Tensor
    hidden_states: torch.Tensor
    boundary_logits: torch.Tensor | None = None


@dataclass
class MaskedBatch:
    """A corrupted MLM batch. All tensors are ``(batch, seq)``."""

    input_ids: torch.Tensor
    target_ids: torch.Tensor
    mask_positions: torch.Tensor
    attention_mask: torch.Tensor
    wb_indices: torch.Tensor | None = None
    boundary_targets: torch.Tensor | None = None
    # non-special, non-pad positions
    usable: torch.Tensor | None = None


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        b, s, d = x.shape
        h = self.n_heads
        dh = d // h

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(b, s, h, dh).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        # finfo.min rather than -inf keeps fully padded rows finite
        scores = scores.masked_fill(~key_mask[:, None, None, :], torch.finfo(scores.dtype).min)
        ctx = scores.softmax(dim=-1) @ v
        return self.out(ctx.transpose(1, 2).reshape(b, s, d))


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff1 = nn.Linear(d_model, d_ff)
        self.ff2 = nn.Linear(d_ff, d_model)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), key_mask)
        return x + self.ff2(F.gelu(self.ff1(self.ln2(x))))


class BoundaryEncoder(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        d = config.d_model
        self.tok_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_seq_len, d)
        rows = config.wb_schema.table_rows
        self.wb_emb = nn.Embedding(rows, d) if rows else None
        self.layers = nn.ModuleList(EncoderLayer(d, config.n_heads, config.d_ff) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(d)
        self.token_head = nn.Linear(d, config.vocab_size)
        self.boundary_head = nn.Linear(d, N_BOUNDARY_CLASSES) if config.implicit_head else None

    def attach_wb_table(self, schema: BoundarySchema, generator: torch.Generator | None = None) -> None:
        """Give a schema-none model a fresh boundary table (finetune-only injection)."""
        schema = BoundarySchema(schema)
        rows = schema.table_rows
        if not rows:
            raise InvalidConfig(f"schema {schema.value} has no embedding table")
        p = next(self.parameters())
        table = nn.Embedding(rows, self.config.d_model).to(dtype=p.dtype)
        with torch.no_grad():
            table.weight.normal_(0.0, INIT_STD, generator=generator)
        self.wb_emb = table
        self.config.wb_schema = schema

    def _check_inputs(self, input_ids: torch.Tensor, attention_mask: torch.Tensor, wb_indices: torch.Tensor | None) -> None:
        if input_ids.dim() != 2:
            raise ShapeMismatch(f"input_ids must be (batch, seq), got {tuple(input_ids.shape)}")
        if input_ids.shape[1] > self.config.max_seq_len:
            raise ShapeMismatch(f"sequence length {input_ids.shape[1]} > max_seq_len {self.config.max_seq_len}")
        if attention_mask.shape != input_ids.shape:
            raise ShapeMismatch("attention_mask shape differs from input_ids")
        if input_ids.numel() and (input_ids.min() < 0 or input_ids.max() >= self.config.vocab_size):
            raise IndexOutOfRange("token id outside the embedding table")
        if self.wb_emb is not None:
            if wb_indices is None:
                raise ShapeMismatch(f"schema {self.config.wb_schema.value} needs wb_indices")
            if wb_indices.shape != input_ids.shape:
                raise ShapeMismatch("wb_indices shape differs from input_ids")
            if wb_indices.numel() and (wb_indices.min() < 0 or wb_indices.max() >= self.wb_emb.num_embeddings):
                raise IndexOutOfRange("boundary index outside the embedding table")

    def embed(self, input_ids: torch.Tensor, wb_indices: torch.Tensor | None = None) -> torch.Tensor:
        positions = torch.arange(input_ids.shape[1], device=input_ids.device)
        x = self.tok_emb(input_ids) + self.pos_emb(positions)[None]
        if self.wb_emb is not None:
            x = x + self.wb_emb(wb_indices)
        return x

    def forward(
        self,
        input_ids: torch.Tensor,
        attention_mask: torch.Tensor | None = None,
        wb_indices: torch.Tensor | None = None,
    ) -> ForwardOutput:
        if attention_mask is None:
            attention_mask = torch.ones_like(input_ids, dtype=torch.bool)
        attention_mask = attention_mask.bool()
        self._check_inputs(input_ids, attention_mask, wb_indices)
        x = self.embed(input_ids, wb_indices)
        for layer in self.layers:
            x = layer(x, attention_mask)
        hidden = self.ln_f(x)
        boundary = self.boundary_head(hidden) if self.boundary_head is not None else None
        return ForwardOutput(self.token_head(hidden), hidden, boundary)

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_params(config: ModelConfig, seed: int) -> BoundaryEncoder:
    """Build a model with N(0, 0.02^2) weights, zero biases and unit layer-norm gains."""
    config.validate()
    model = BoundaryEncoder(config)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                module.weight.normal_(0.0, INIT_STD, generator=g)
                if getattr(module, "bias", None) is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
    return model.to(dtype=config.torch_dtype)


# --------------------------------------------------------------------------
# losses


def mlm_loss(logits: torch.Tensor, targets: torch.Tensor, mask_positions: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over the positions selected by ``mask_positions``."""
    mask_positions = mask_positions.bool()
    if not mask_positions.any():
        raise NoMaskedPositions("no masked positions in batch")
    return F.cross_entropy(logits[mask_positions], targets[mask_positions])


def combined_loss(token_loss: torch.Tensor | float, boundary_loss: torch.Tensor | float | None = None):
    if boundary_loss is None:
        return token_loss
    return token_loss + boundary_loss


@dataclass
class LossBreakdown:
    total: torch.Tensor
    token: torch.Tensor
    boundary: torch.Tensor | None = None
    output: ForwardOutput | None = field(default=None, repr=False)


def boundary_positions(model: BoundaryEncoder, batch: MaskedBatch) -> torch.Tensor:
    if model.config.boundary_positions == "all" and batch.usable is not None:
        return batch.usable
    return batch.mask_positions


def compute_loss(model: BoundaryEncoder, batch: MaskedBatch) -> LossBreakdown:
    out = model(batch.input_ids, batch.attention_mask, batch.wb_indices)
    tok = mlm_loss(out.token_logits, batch.target_ids, batch.mask_positions)
    bnd = None
    if out.boundary_logits is not None:
        if batch.boundary_targets is None:
            raise ShapeMismatch("implicit head needs boundary_targets")
        bnd = mlm_loss(out.boundary_logits, batch.boundary_targets, boundary_positions(model, batch))
    return LossBreakdown(combined_loss(tok, bnd), tok, bnd, out)


def backward(batch: MaskedBatch, model: BoundaryEncoder) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Loss and its gradient w.r.t. every named parameter; ``.grad`` is left untouched."""
    names, params = zip(*model.named_parameters())
    loss = compute_loss(model, batch).total
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return loss.detach(), {
        n: (g if g is not None else torch.zeros_like(p)) for n, p, g in zip(names, params, grads)
    }


# --------------------------------------------------------------------------
# finite-difference gradient check


def _sample_coordinates(model: BoundaryEncoder, n: int, gen: torch.Generator) -> Iterator[tuple[str, int]]:
    """One coordinate per tensor first, then uniform draws over all coordinates."""
    named = list(model.named_parameters())
    sizes = torch.tensor([p.numel() for _, p in named])
    for name, p in named[:n]:
        yield name, int(torch.randint(p.numel(), (1,), generator=gen))
    remaining = n - min(n, len(named))
    if remaining <= 0:
        return
    offsets = torch.cumsum(sizes, 0)
    flat = torch.randint(int(offsets[-1]), (remaining,), generator=gen)
    for f in flat.tolist():
        t = int(torch.searchsorted(offsets, torch.tensor(f), right=True))
        start = int(offsets[t - 1]) if t else 0
        yield named[t][0], f - start


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_coords: int
    worst: tuple[str, int] | None
    analytic: list[float]
    numeric: list[float]


def gradient_check(
    model: BoundaryEncoder,
    batch: MaskedBatch,
    n_coords: int = 200,
    eps: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-7,
) -> GradCheckResult:
    """Compare autograd gradients with central finite differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Run in double precision; single precision cannot resolve ``eps=1e-4``.
    """
    _, grads = backward(batch, model)
    params = dict(model.named_parameters())
    gen = torch.Generator().manual_seed(seed)

    def loss_value() -> float:
        with torch.no_grad():
            return float(compute_loss(model, batch).total)

    worst, max_err = None, 0.0
    analytic, numeric = [], []
    for name, idx in _sample_coordinates(model, n_coords, gen):
        flat = params[name].data.view(-1)
        orig = flat[idx].item()
        flat[idx] = orig + eps
        up = loss_value()
        flat[idx] = orig - eps
        down = loss_value()
        flat[idx] = orig
        num = (up - down) / (2 * eps)
        ana = float(grads[name].reshape(-1)[idx])
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        analytic.append(ana)
        numeric.append(num)
        if err >= max_err:
            max_err, worst = err, (name, idx)
    return GradCheckResult(max_err, len(analytic), worst, analytic, numeric)


def toy_grad_check_setup(
    schema: BoundarySchema | str = BoundarySchema.NONE,
    implicit_head: bool = False,
    seed: int = 0,
) -> tuple[BoundaryEncoder, MaskedBatch]:
    """Tiny double-precision model (1 layer, d=8, |V|=11, seq=6) and a hand-built batch."""
    schema = BoundarySchema(schema)
    cfg = ModelConfig(
        n_layers=1, n_heads=2, d_model=8, vocab_size=11, max_seq_len=6,
        wb_schema=schema, implicit_head=implicit_head,
        allow_wb_tokens_with_implicit=True, dtype="float64",
    )
    model = init_params(cfg, seed)
    # Larger-than-default weights so that gradients are not uniformly tiny.
    g = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.3)

    # ids 0..5 are the specials [PAD] [UNK] [CLS] [SEP] [MASK] [WB]
    if schema is BoundarySchema.WB_TOKENS:
        targets = torch.tensor([[2, 6, 5, 7, 8, 3], [2, 9, 10, 5, 6, 3]])
        word_ids = [[-1, 0, -1, 1, 1, -1], [-1, 0, 0, -1, 1, -1]]
    else:
        targets = torch.tensor([[2, 6, 7, 8, 9, 3], [2, 10, 6, 7, 3, 0]])
        word_ids = [[-1, 0, 1, 1, 2, -1], [-1, 0, 0, 1, -1, -1]]
    attention = targets != 0
    mask = torch.tensor([[0, 1, 0, 1, 1, 0], [0, 1, 1, 0, 0, 0]], dtype=torch.bool)
    inputs = targets.masked_fill(mask, 4)
    ann = [annotate(w) for w in word_ids]
    binary = torch.tensor([a.binary for a in ann])
    wb = None
    if schema.table_rows:
        wb = torch.tensor([a.indices(schema) for a in ann])
    usable = binary > 0
    return model, MaskedBatch(inputs, targets, mask, attention, wb, binary, usable)
