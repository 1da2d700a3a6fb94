"""Word-boundary annotations over tokenised sequences.

Each non-special token gets three indices:

* binary: 1 for the first piece of a word, 2 for any later piece
* word index: 1-based position of the word in the sequence
* subword index: 1-based position of the piece inside its word

Special tokens get 0 in all three, a reserved embedding row.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .errors import LengthMismatch, MalformedWordIds, MissingWBSpecial
from .tokenizer_core import NO_WORD, WB, Encoding, Vocabulary

MAX_WORD_INDEX = 256
MAX_SUBWORD_INDEX = 512

# embedding table rows per schema, row 0 reserved for specials
BINARY_ROWS = 3
WORD_ROWS = MAX_WORD_INDEX + 1
SUBWORD_ROWS = MAX_SUBWORD_INDEX + 1


class BoundarySchema(str, enum.Enum):
    NONE = "none"
    BINARY = "binary"
    WORD_INDEX = "word"
    SUBWORD_INDEX = "subword"
    WB_TOKENS = "wb_tokens"

    @property
    def table_rows(self) -> int:
        """Rows of the additive boundary embedding table (0 = no table)."""
        return {
            BoundarySchema.BINARY: BINARY_ROWS,
            BoundarySchema.WORD_INDEX: WORD_ROWS,
            BoundarySchema.SUBWORD_INDEX: SUBWORD_ROWS,
        }.get(self, 0)


@dataclass(frozen=True)
class BoundaryAnnotation:
    binary: tuple[int, ...]
    word_index: tuple[int, ...]
    subword_index: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.binary)

    def indices(self, schema: BoundarySchema) -> tuple[int, ...] | None:
        """The index sequence that feeds the embedding table of ``schema``."""
        schema = BoundarySchema(schema)
        if schema is BoundarySchema.BINARY:
            return self.binary
        if schema is BoundarySchema.WORD_INDEX:
            return self.word_index
        if schema is BoundarySchema.SUBWORD_INDEX:
            return self.subword_index
        return None


def annotate(encoding: Encoding | Sequence[int]) -> BoundaryAnnotation:
    """Derive the three boundary index sequences from per-token word ids.

    Accepts an :class:`Encoding` or a bare word-id sequence, since the result
    depends on nothing else.
    """
    word_ids = encoding.word_ids if isinstance(encoding, Encoding) else tuple(encoding)
    binary: list[int] = []
    word_index: list[int] = []
    subword_index: list[int] = []
    prev = None
    n_word = 0
    n_sub = 0
    for pos, wid in enumerate(word_ids):
        if wid == NO_WORD:
            binary.append(0)
            word_index.append(0)
            subword_index.append(0)
            continue
        if prev is not None and wid < prev:
            raise MalformedWordIds(f"word id decreases from {prev} to {wid} at position {pos}")
        if wid != prev:
            n_word += 1
            n_sub = 1
            binary.append(1)
        else:
            n_sub += 1
            binary.append(2)
        word_index.append(min(n_word, MAX_WORD_INDEX))
        subword_index.append(min(n_sub, MAX_SUBWORD_INDEX))
        prev = wid
    return BoundaryAnnotation(tuple(binary), tuple(word_index), tuple(subword_index))


def insert_wb_tokens(encoding: Encoding, vocab: Vocabulary, placement: str = "between") -> Encoding:
    """Insert ``[WB]`` tokens into ``encoding``.

    ``placement="between"`` puts one marker between consecutive words;
    ``"before"`` puts one in front of every word.  Inserted markers carry the
    no-word sentinel, original tokens keep their word ids.
    """
    if placement not in ("between", "before"):
        raise ValueError(f"unknown placement {placement!r}")
    wb_id = vocab.special_id(WB)
    if wb_id is None:
        raise MissingWBSpecial("vocabulary has no [WB] token")
    ids: list[int] = []
    toks: list[str] = []
    wids: list[int] = []
    prev = None
    for tid, tok, wid in zip(encoding.token_ids, encoding.tokens, encoding.word_ids):
        if wid != NO_WORD and wid != prev:
            if prev is not None or placement == "before":
                ids.append(wb_id)
                toks.append(WB)
                wids.append(NO_WORD)
            prev = wid
        ids.append(tid)
        toks.append(tok)
        wids.append(wid)
    return Encoding(tuple(ids), tuple(toks), tuple(wids))


def remove_wb_tokens(encoding: Encoding) -> Encoding:
    keep = [i for i, tok in enumerate(encoding.tokens) if tok != WB]
    return Encoding(
        tuple(encoding.token_ids[i] for i in keep),
        tuple(encoding.tokens[i] for i in keep),
        tuple(encoding.word_ids[i] for i in keep),
    )


def detokenize_with_boundaries(tokens: Sequence[str], binary: Sequence[int]) -> str:
    """Rebuild text from boundless pieces plus binary boundary labels."""
    if len(tokens) != len(binary):
        raise LengthMismatch(f"{len(tokens)} tokens but {len(binary)} boundary labels")
    parts: list[str] = []
    started = False
    for tok, b in zip(tokens, binary):
        if b == 0:
            continue
        if b == 1 and started:
            parts.append(" ")
        parts.append(tok)
        started = True
    return "".join(parts)
