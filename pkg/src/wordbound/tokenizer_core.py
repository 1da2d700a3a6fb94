"""WordPiece training and greedy longest-match encoding.

Two flavours are supported.  ``MarkerMode.MARKED`` is standard WordPiece:
word-internal pieces carry the ``##`` continuation prefix, so ``beat`` and
``##beat`` are distinct vocabulary entries.  ``MarkerMode.BOUNDLESS`` drops the
prefix entirely: every piece has a single surface form and a tokenised
sequence no longer says where words begin.
"""

from __future__ import annotations

import enum
import logging
import unicodedata
import warnings
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import EmptyCorpus, UnknownTokenId, VocabSizeTooSmall

logger = logging.getLogger(__name__)

PAD = "[PAD]"
UNK = "[UNK]"
CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"
WB = "[WB]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK, WB)

CONTINUATION_PREFIX = "##"
NO_WORD = -1  # word id carried by special tokens


class MarkerMode(str, enum.Enum):
    MARKED = "marked"
    BOUNDLESS = "boundless"


@dataclass
class TokenizerConfig:
    vocab_size: int = 16384
    min_pair_frequency: int = 2
    lowercase: bool = True
    marker_mode: MarkerMode = MarkerMode.BOUNDLESS
    split_punctuation: bool = True

    def __post_init__(self) -> None:
        self.marker_mode = MarkerMode(self.marker_mode)
        if self.vocab_size <= 0 or self.min_pair_frequency <= 0:
            raise ValueError("vocab_size and min_pair_frequency must be positive")


# --------------------------------------------------------------------------
# pre-tokenisation


def is_punctuation(char: str) -> bool:
    cp = ord(char)
    # ASCII symbols such as "$" or "^" are not Unicode punctuation but are
    # split off all the same, as in BERT's basic tokenizer.
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(char).startswith("P")


def pretokenize(text: str, lowercase: bool = True, split_punctuation: bool = True) -> list[str]:
    """Split ``text`` on Unicode whitespace, isolating punctuation characters.

    >>> pretokenize("over-priced!")
    ['over', '-', 'priced', '!']
    """
    if lowercase:
        text = text.lower()
    out: list[str] = []
    for chunk in text.split():
        if not split_punctuation:
            out.append(chunk)
            continue
        start = 0
        for i, ch in enumerate(chunk):
            if is_punctuation(ch):
                if i > start:
                    out.append(chunk[start:i])
                out.append(ch)
                start = i + 1
        if start < len(chunk):
            out.append(chunk[start:])
    return out


# --------------------------------------------------------------------------
# vocabulary


class _Trie:
    """Character trie answering longest-prefix queries at an arbitrary offset."""

    _END = ""  # no real edge is labelled with the empty string

    def __init__(self, words: Iterable[str] = ()) -> None:
        self.root: dict = {}
        for w in words:
            self.add(w)

    def add(self, word: str) -> None:
        node = self.root
        for ch in word:
            node = node.setdefault(ch, {})
        node[self._END] = True

    def longest_match(self, text: str, start: int) -> int:
        """Return the end offset of the longest entry matching at ``start``, or -1."""
        node = self.root
        best = -1
        for i in range(start, len(text)):
            node = node.get(text[i])
            if node is None:
                break
            if self._END in node:
                best = i + 1
        return best


@dataclass(frozen=True)
class Vocabulary:
    """Ordered, immutable token inventory; the index of a token is its id."""

    tokens: tuple[str, ...]
    marker_mode: MarkerMode = MarkerMode.BOUNDLESS
    continuation_prefix: str = CONTINUATION_PREFIX
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "marker_mode", MarkerMode(self.marker_mode))
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise ValueError(f"duplicate token {tok!r} at ids {index[tok]} and {i}")
            index[tok] = i
        object.__setattr__(self, "_index", index)
        if UNK not in index:
            raise ValueError("vocabulary must contain [UNK]")
        if self.marker_mode is MarkerMode.BOUNDLESS:
            bad = [t for t in self.tokens if t.startswith(self.continuation_prefix)]
            if bad:
                raise ValueError(f"boundless vocabulary contains prefixed tokens: {bad[:5]}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def token_to_id(self, token: str) -> int:
        return self._index[token]

    def id_to_token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise UnknownTokenId(token_id)
        return self.tokens[token_id]

    @cached_property
    def specials(self) -> dict[str, int]:
        return {tok: self._index[tok] for tok in SPECIAL_TOKENS if tok in self._index}

    @cached_property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.specials.values())

    def special_id(self, token: str) -> int | None:
        return self.specials.get(token)

    @property
    def unk_id(self) -> int:
        return self._index[UNK]

    @cached_property
    def regular_ids(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.tokens)) if i not in self.special_ids)

    @cached_property
    def _tries(self) -> tuple[_Trie, _Trie | None]:
        prefix = self.continuation_prefix
        plain = [t for t in self.tokens if t not in self.specials]
        if self.marker_mode is MarkerMode.BOUNDLESS:
            return _Trie(plain), None
        initial = [t for t in plain if not t.startswith(prefix)]
        cont = [t[len(prefix):] for t in plain if t.startswith(prefix) and len(t) > len(prefix)]
        return _Trie(initial), _Trie(cont)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path, marker_mode: MarkerMode | str | None = None) -> "Vocabulary":
        """Read a one-token-per-line vocabulary file.

        When ``marker_mode`` is omitted it is inferred: any non-special token
        starting with ``##`` means the file is a marked vocabulary.
        """
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        if marker_mode is None:
            prefixed = any(t.startswith(CONTINUATION_PREFIX) for t in tokens if t not in SPECIAL_TOKENS)
            marker_mode = MarkerMode.MARKED if prefixed else MarkerMode.BOUNDLESS
        return cls(tuple(tokens), MarkerMode(marker_mode))


# --------------------------------------------------------------------------
# training


def _merge_symbols(symbols: list[str], a: str, b: str, merged: str) -> list[str]:
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == a and symbols[i + 1] == b:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _count_words(corpus: Iterable[str], config: TokenizerConfig) -> Counter:
    counts: Counter = Counter()
    for doc in corpus:
        counts.update(pretokenize(doc, config.lowercase, config.split_punctuation))
    return counts


def train_wordpiece(corpus: Iterable[str], config: TokenizerConfig) -> Vocabulary:
    """Learn a WordPiece vocabulary from an iterable of documents.

    Starting from single characters, the pair maximising
    ``freq(ab) / (freq(a) * freq(b))`` is merged until the vocabulary holds
    ``config.vocab_size`` entries.  Ties go to the lexicographically smallest
    merged string.  In boundless mode symbols carry no positional marking, so
    counts for a surface form are pooled across word-initial and word-internal
    occurrences.
    """
    marked = config.marker_mode is MarkerMode.MARKED
    prefix = CONTINUATION_PREFIX

    word_counts = _count_words(corpus, config)
    if not word_counts:
        raise EmptyCorpus("corpus is empty after pre-tokenisation")

    # Sorted so that the whole procedure is independent of corpus order.
    words: list[list[str]] = []
    freqs: list[int] = []
    for w in sorted(word_counts):
        if marked:
            words.append([w[0]] + [prefix + c for c in w[1:]])
        else:
            words.append(list(w))
        freqs.append(word_counts[w])

    alphabet = sorted({s for symbols in words for s in symbols})
    vocab: list[str] = list(SPECIAL_TOKENS) + [s for s in alphabet if s not in SPECIAL_TOKENS]
    if config.vocab_size < len(vocab):
        raise VocabSizeTooSmall(
            f"vocab_size={config.vocab_size} but {len(SPECIAL_TOKENS)} specials + "
            f"{len(alphabet)} alphabet symbols are required"
        )
    seen = set(vocab)

    sym_freq: Counter = Counter()
    pair_freq: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = {}

    def account(wi: int, sign: int) -> None:
        symbols, f = words[wi], freqs[wi] * sign
        for s in symbols:
            sym_freq[s] += f
        for pair in zip(symbols, symbols[1:]):
            pair_freq[pair] += f
            if sign > 0:
                where.setdefault(pair, set()).add(wi)

    for wi in range(len(words)):
        account(wi, +1)

    def merged_form(a: str, b: str) -> str:
        return a + b[len(prefix):] if marked and b.startswith(prefix) else a + b

    banned: set[tuple[str, str]] = set()
    n_merges = 0
    while len(vocab) < config.vocab_size:
        best = None
        best_score = -1.0
        best_key: tuple = ()
        for pair, f in pair_freq.items():
            if f < config.min_pair_frequency or pair in banned:
                continue
            score = f / (sym_freq[pair[0]] * sym_freq[pair[1]])
            if score > best_score or (score == best_score and (merged_form(*pair), pair) < best_key):
                best, best_score, best_key = pair, score, (merged_form(*pair), pair)
        if best is None:
            warnings.warn(
                f"merges exhausted at vocabulary size {len(vocab)} < {config.vocab_size}",
                stacklevel=2,
            )
            break
        a, b = best
        new = merged_form(a, b)
        if not marked and new.startswith(prefix):
            # Would break the no-prefix invariant of boundless vocabularies.
            banned.add(best)
            continue
        if new not in seen:
            vocab.append(new)
            seen.add(new)
        n_merges += 1
        for wi in sorted(where.pop(best, ())):
            account(wi, -1)
            for pair in zip(words[wi], words[wi][1:]):
                ws = where.get(pair)
                if ws is not None:
                    ws.discard(wi)
            words[wi] = _merge_symbols(words[wi], a, b, new)
            account(wi, +1)
        for pair in [p for p, f in pair_freq.items() if f == 0]:
            del pair_freq[pair]
            where.pop(pair, None)
        for s in [s for s, f in sym_freq.items() if f == 0]:
            del sym_freq[s]

    logger.info("trained %s vocabulary: %d tokens after %d merges", config.marker_mode.value, len(vocab), n_merges)
    return Vocabulary(tuple(vocab), config.marker_mode)


# --------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class Encoding:
    token_ids: tuple[int, ...]
    tokens: tuple[str, ...]
    word_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if not len(self.token_ids) == len(self.tokens) == len(self.word_ids):
            raise ValueError("token_ids, tokens and word_ids must have equal length")

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def n_words(self) -> int:
        return len({w for w in self.word_ids if w != NO_WORD})


def encode_word(word: str, vocab: Vocabulary) -> list[str]:
    """Greedy longest-match-first segmentation of a single pre-token.

    Returns ``["[UNK]"]`` when some position cannot be covered.
    """
    if not word:
        return []
    first, cont = vocab._tries
    pieces: list[str] = []
    start = 0
    while start < len(word):
        trie = first if start == 0 or cont is None else cont
        end = trie.longest_match(word, start)
        if end < 0:
            return [UNK]
        piece = word[start:end]
        if start > 0 and cont is not None:
            piece = vocab.continuation_prefix + piece
        pieces.append(piece)
        start = end
    return pieces


def encode(
    text: str,
    vocab: Vocabulary,
    add_special_tokens: bool = False,
    max_length: int | None = None,
    lowercase: bool = True,
    split_punctuation: bool = True,
) -> Encoding:
    """Pre-tokenise and segment ``text``; ``max_length`` counts [CLS]/[SEP] when wrapping."""
    tokens: list[str] = []
    word_ids: list[int] = []
    for wi, word in enumerate(pretokenize(text, lowercase, split_punctuation)):
        pieces = encode_word(word, vocab)
        tokens.extend(pieces)
        word_ids.extend([wi] * len(pieces))
    if max_length is not None:
        budget = max_length - (2 if add_special_tokens else 0)
        if budget < 0:
            raise ValueError("max_length too small for special tokens")
        tokens, word_ids = tokens[:budget], word_ids[:budget]
    if add_special_tokens:
        tokens = [CLS] + tokens + [SEP]
        word_ids = [NO_WORD] + word_ids + [NO_WORD]
    ids = tuple(vocab.token_to_id(t) for t in tokens)
    return Encoding(ids, tuple(tokens), tuple(word_ids))


_SKIP_ON_DECODE = frozenset({PAD, CLS, SEP, WB})


def decode(encoding: Encoding | Sequence[int], vocab: Vocabulary) -> str:
    """Turn token ids back into text.

    Marked vocabularies glue ``##`` pieces onto their predecessor.  Boundless
    vocabularies have nothing to glue on, so every piece becomes its own
    word: the join is lossy by construction.  Use
    :func:`wordbound.boundary.detokenize_with_boundaries` when boundary
    labels are available.
    """
    ids = encoding.token_ids if isinstance(encoding, Encoding) else encoding
    prefix = vocab.continuation_prefix
    marked = vocab.marker_mode is MarkerMode.MARKED
    words: list[str] = []
    for i in ids:
        tok = vocab.id_to_token(int(i))
        if tok in _SKIP_ON_DECODE:
            continue
        if marked and tok.startswith(prefix) and words:
            words[-1] += tok[len(prefix):]
        else:
            words.append(tok)
    return " ".join(words)


def read_corpus(path: str | Path) -> Iterator[str]:
    """Yield the non-blank lines of a UTF-8 corpus file (one document per line)."""
    with open(path, encoding="utf-8", errors="strict") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield line
