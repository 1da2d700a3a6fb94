"""Boundary-based scoring of tokeniser segmentations against gold morphs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import Iterable, Mapping, Sequence

from .errors import EmptyGold, EmptyInput, MissingPrediction
from .tokenizer_core import UNK, MarkerMode, Vocabulary, encode_word

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GoldSegmentation:
    word: str
    morphs: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "morphs", tuple(self.morphs))
        if not self.morphs:
            raise ValueError(f"gold entry {self.word!r} has no morphs")

    @property
    def consistent(self) -> bool:
        return "".join(self.morphs) == self.word


@dataclass(frozen=True)
class SegEvalResult:
    precision: float
    recall: float
    f1: float
    avg_len: float
    n_words: int
    n_skipped: int = 0
    name: str = ""


def f_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def boundary_set(pieces: Sequence[str]) -> set[int]:
    """Character offsets of the split points strictly inside the word."""
    offsets = set()
    pos = 0
    for piece in pieces[:-1]:
        pos += len(piece)
        offsets.add(pos)
    return offsets


def strip_pieces(pieces: Sequence[str], word: str, prefix: str = "##") -> list[str]:
    """Surface pieces of a segmentation: continuation prefixes removed, UNK = whole word."""
    if list(pieces) == [UNK]:
        return [word]
    return [p[len(prefix):] if i > 0 and p.startswith(prefix) else p for i, p in enumerate(pieces)]


def evaluate(
    predictions: Mapping[str, Sequence[str]],
    gold: Iterable[GoldSegmentation],
    lowercase: bool = True,
    name: str = "",
) -> SegEvalResult:
    """Micro-averaged boundary precision/recall/F1 plus mean pieces per word.

    Predictions are looked up by the (case-normalised) gold word.  Gold entries
    whose morphs do not spell the word are skipped and counted.
    """
    hits = n_pred = n_gold = 0
    lengths: list[int] = []
    skipped = 0
    seen_any = False
    for entry in gold:
        seen_any = True
        if lowercase:
            entry = GoldSegmentation(entry.word.lower(), tuple(m.lower() for m in entry.morphs))
        if not entry.consistent:
            skipped += 1
            continue
        if entry.word not in predictions:
            raise MissingPrediction(entry.word)
        pieces = strip_pieces(predictions[entry.word], entry.word)
        pred_b = boundary_set(pieces)
        gold_b = boundary_set(entry.morphs)
        hits += len(pred_b & gold_b)
        n_pred += len(pred_b)
        n_gold += len(gold_b)
        lengths.append(len(pieces))
    if not seen_any or not lengths:
        raise EmptyGold(f"no usable gold entries{' in ' + name if name else ''} ({skipped} skipped)")
    if skipped:
        logger.warning("%s: skipped %d gold entries whose morphs do not spell the word", name or "gold", skipped)
    # Empty denominators: a vacuous score is 1 only if both sides are empty.
    if n_pred:
        precision = hits / n_pred
    else:
        precision = 1.0 if n_gold == 0 else 0.0
    if n_gold:
        recall = hits / n_gold
    else:
        recall = 1.0 if n_pred == 0 else 0.0
    return SegEvalResult(precision, recall, f_score(precision, recall), fmean(lengths), len(lengths), skipped, name)


def segment_words(vocab: Vocabulary, words: Iterable[str]) -> dict[str, list[str]]:
    return {w: encode_word(w, vocab) for w in words}


def evaluate_vocab(vocab: Vocabulary, gold: Sequence[GoldSegmentation], lowercase: bool = True, name: str = "") -> SegEvalResult:
    words = [g.word.lower() if lowercase else g.word for g in gold]
    return evaluate(segment_words(vocab, words), gold, lowercase=lowercase, name=name)


def macro_average(results: Sequence[SegEvalResult], name: str = "MEAN") -> SegEvalResult:
    """Unweighted mean over datasets; n_words and n_skipped are summed."""
    if not results:
        raise EmptyInput("no results to average")
    return SegEvalResult(
        precision=fmean(r.precision for r in results),
        recall=fmean(r.recall for r in results),
        f1=fmean(r.f1 for r in results),
        avg_len=fmean(r.avg_len for r in results),
        n_words=sum(r.n_words for r in results),
        n_skipped=sum(r.n_skipped for r in results),
        name=name,
    )


def vocab_redundancy(vocab: Vocabulary) -> float:
    """Share of non-special tokens that also exist in the other marking.

    Both members of a pair such as ``beat``/``##beat`` are counted.
    """
    if vocab.marker_mode is MarkerMode.BOUNDLESS:
        return 0.0
    prefix = vocab.continuation_prefix
    regular = [t for t in vocab.tokens if t not in vocab.specials]
    if not regular:
        return 0.0
    present = set(regular)
    dual = 0
    for t in regular:
        if t.startswith(prefix):
            if t[len(prefix):] in present:
                dual += 1
        elif prefix + t in present:
            dual += 1
    return dual / len(regular)


def avg_seq_len(vocab: Vocabulary, words: Sequence[str]) -> float:
    if not words:
        raise EmptyInput("avg_seq_len needs at least one word")
    return fmean(len(encode_word(w, vocab)) for w in words)


def read_gold(path: str | Path) -> list[GoldSegmentation]:
    """Read ``word<TAB>morph morph ...`` lines; blank lines and ``#`` comments are ignored."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2 or not cols[1].strip():
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>morphs'")
            out.append(GoldSegmentation(cols[0].strip(), tuple(cols[1].split())))
    if not out:
        raise EmptyGold(f"{path} contains no gold entries")
    return out
