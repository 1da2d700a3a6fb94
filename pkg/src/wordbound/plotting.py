"""Report figures. Everything renders off-screen to files next to the TSV output."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .morpho_eval import SegEvalResult  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
    "svg.hashsalt": "wordbound",
}

# PNG metadata would otherwise embed the matplotlib version
_META = {"Software": None}


def golden_size(width: float = 5.0) -> tuple[float, float]:
    return width, width * 0.618


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_META if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_training_curves(metrics: Sequence[Mapping], path: str | Path, title: str = "") -> Path:
    """Train loss per step on the left axis, held-out MLM accuracies on the right."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=golden_size())
        steps = [m["step"] for m in metrics]
        ax.plot(steps, [m["train_loss"] for m in metrics], lw=0.8, color="0.3", label="train loss")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        evals = [m for m in metrics if m.get("eval_token_acc") is not None]
        if evals:
            ax2 = ax.twinx()
            ax2.spines["right"].set_visible(True)
            ax2.plot([m["step"] for m in evals], [m["eval_token_acc"] for m in evals], "o-", ms=3, color="C0", label="token acc")
            if any(m.get("eval_boundary_acc") is not None for m in evals):
                b = [m for m in evals if m.get("eval_boundary_acc") is not None]
                ax2.plot([m["step"] for m in b], [m["eval_boundary_acc"] for m in b], "s-", ms=3, color="C3", label="boundary acc")
            ax2.set_ylim(0, 1)
            ax2.set_ylabel("eval accuracy")
            h1, l1 = ax.get_legend_handles_labels()
            h2, l2 = ax2.get_legend_handles_labels()
            ax.legend(h1 + h2, l1 + l2, loc="center right", frameon=False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_loss_comparison(runs: Mapping[str, Sequence[Mapping]], path: str | Path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=golden_size())
        for name, metrics in runs.items():
            ax.plot([m["step"] for m in metrics], [m["train_token_loss"] for m in metrics], lw=0.8, label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("MLM loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_morph_comparison(results: Mapping[str, SegEvalResult], path: str | Path) -> Path:
    """Grouped bars of precision, recall and F1 (percent) with mean length annotated."""
    names = list(results)
    metrics = ("precision", "recall", "f1")
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=golden_size())
        width = 0.8 / len(names)
        for i, name in enumerate(names):
            r = results[name]
            xs = [j + i * width for j in range(len(metrics))]
            bars = ax.bar(xs, [100 * getattr(r, m) for m in metrics], width, label=f"{name} (len {r.avg_len:.2f})")
            ax.bar_label(bars, fmt="%.1f", fontsize=7, padding=1)
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(metrics))], ["Precision", "Recall", "F1"])
        ax.set_ylim(0, 105)
        ax.set_ylabel("%")
        ax.legend(frameon=False, loc="upper left")
        return _save(fig, path)


def plot_finetune_epochs(per_seed: Mapping[int, Sequence[float]], path: str | Path, metric: str = "dev metric") -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=golden_size())
        for seed, scores in per_seed.items():
            ax.plot(range(1, len(scores) + 1), scores, "o-", ms=3, lw=0.8, label=f"seed {seed}")
        ax.set_xlabel("epoch")
        ax.set_ylabel(metric)
        ax.legend(frameon=False)
        return _save(fig, path)
