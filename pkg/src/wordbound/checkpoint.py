"""Checkpoint container.

Layout::

    WORDBOUND-CKPT 1\\n
    <one-line JSON header>\\n
    <tensor bytes>

The header records the model config, seed, step, the tensor table (name and
shape, in storage order) and optionally the vocabulary and training config.
Tensor payloads follow back to back as little-endian float32, row-major.
Optimizer moments, when present, are stored as extra tensors named
``optim.exp_avg.<param>`` and ``optim.exp_avg_sq.<param>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .encoder import BoundaryEncoder, ModelConfig
from .errors import CheckpointError

MAGIC = b"WORDBOUND-CKPT 1\n"
_LE_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    model: BoundaryEncoder
    step: int
    seed: int
    header: dict
    optimizer_state: dict[str, dict[str, torch.Tensor]] = field(default_factory=dict)
    optimizer_step: int = 0

    @property
    def vocab_tokens(self) -> list[str] | None:
        return self.header.get("vocab")

    @property
    def train_config(self) -> dict | None:
        return self.header.get("train_config")


def save_checkpoint(
    path: str | Path,
    model: BoundaryEncoder,
    step: int,
    seed: int,
    optimizer: torch.optim.Optimizer | None = None,
    vocab_tokens: list[str] | tuple[str, ...] | None = None,
    train_config: dict | None = None,
) -> Path:
    path = Path(path)
    tensors: list[tuple[str, torch.Tensor]] = list(model.state_dict().items())
    opt_step = 0
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                opt_step = int(state["step"])
                tensors.append((f"optim.exp_avg.{names[id(p)]}", state["exp_avg"]))
                tensors.append((f"optim.exp_avg_sq.{names[id(p)]}", state["exp_avg_sq"]))
    header = {
        "format": "little-endian float32, row-major",
        "model_config": model.config.to_dict(),
        "seed": seed,
        "step": step,
        "optimizer_step": opt_step,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    if train_config is not None:
        header["train_config"] = train_config
    if vocab_tokens is not None:
        header["vocab"] = list(vocab_tokens)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n")
        for _, t in tensors:
            fh.write(t.detach().cpu().numpy().astype(_LE_F32, copy=False).tobytes(order="C"))
    tmp.replace(path)
    return path


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise CheckpointError(f"{path}: not a wordbound checkpoint")
        return json.loads(fh.readline().decode("utf-8"))


def load_checkpoint(path: str | Path, dtype: str | None = None) -> Checkpoint:
    """Rebuild the model (and optimizer moments, if stored) from ``path``."""
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise CheckpointError(f"{path}: not a wordbound checkpoint")
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    cfg_dict = dict(header["model_config"])
    if dtype is not None:
        cfg_dict["dtype"] = dtype
    config = ModelConfig.from_dict(cfg_dict)
    model = BoundaryEncoder(config).to(dtype=config.torch_dtype)

    arrays: dict[str, torch.Tensor] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = n * _LE_F32.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at tensor {entry['name']}")
        arr = np.frombuffer(payload, dtype=_LE_F32, count=n, offset=offset).reshape(shape)
        arrays[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes")

    state = {k: v for k, v in arrays.items() if not k.startswith("optim.")}
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc

    opt_state: dict[str, dict[str, torch.Tensor]] = {}
    for k, v in arrays.items():
        if k.startswith("optim."):
            _, kind, pname = k.split(".", 2)
            opt_state.setdefault(pname, {})[kind] = v
    return Checkpoint(model, header["step"], header["seed"], header, opt_state, header.get("optimizer_step", 0))


def restore_optimizer(optimizer: torch.optim.Optimizer, model: BoundaryEncoder, ckpt: Checkpoint) -> None:
    """Install the stored AdamW moments into ``optimizer``."""
    if not ckpt.optimizer_state:
        return
    params = dict(model.named_parameters())
    for name, moments in ckpt.optimizer_state.items():
        p = params[name]
        optimizer.state[p] = {
            "step": torch.tensor(float(ckpt.optimizer_step)),
            "exp_avg": moments["exp_avg"].to(p.dtype).clone(),
            "exp_avg_sq": moments["exp_avg_sq"].to(p.dtype).clone(),
        }
