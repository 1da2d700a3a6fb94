import pytest
from hypothesis import given
from hypothesis import strategies as st

from wordbound.boundary import (
    BINARY_ROWS,
    MAX_SUBWORD_INDEX,
    MAX_WORD_INDEX,
    SUBWORD_ROWS,
    WORD_ROWS,
    BoundarySchema,
    annotate,
    detokenize_with_boundaries,
    insert_wb_tokens,
    remove_wb_tokens,
)
from wordbound.errors import LengthMismatch, MalformedWordIds, MissingWBSpecial
from wordbound.tokenizer_core import NO_WORD, Encoding, MarkerMode, Vocabulary, encode

SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[WB]")
VOCAB = Vocabulary(SPECIALS + ("un", "beat", "able", "b", "this", "game", "is"), MarkerMode.BOUNDLESS)


def reference_annotation(word_ids):
    """Direct restatement of the index definitions, one position at a time."""
    binary, word, sub = [], [], []
    for i, w in enumerate(word_ids):
        if w == NO_WORD:
            binary.append(0), word.append(0), sub.append(0)
            continue
        earlier = [x for x in word_ids[:i] if x != NO_WORD]
        starts = not earlier or earlier[-1] != w
        binary.append(1 if starts else 2)
        word.append(min(len(set(earlier) | {w}), MAX_WORD_INDEX))
        sub.append(min(sum(1 for x in earlier if x == w) + 1, MAX_SUBWORD_INDEX))
    return tuple(binary), tuple(word), tuple(sub)


def test_annotate_examples():
    enc = encode("this game is unbeatable", VOCAB)
    ann = annotate(enc)
    assert ann.binary == (1, 1, 1, 1, 2, 2)
    assert ann.word_index == (1, 2, 3, 4, 4, 4)
    assert ann.subword_index == (1, 1, 1, 1, 2, 3)

    single = annotate([0])
    assert (single.binary, single.word_index, single.subword_index) == ((1,), (1,), (1,))

    wrapped = annotate([NO_WORD, 0, NO_WORD])
    assert wrapped.binary == (0, 1, 0)
    assert wrapped.word_index == (0, 1, 0)


def test_annotate_rejects_decreasing_word_ids():
    with pytest.raises(MalformedWordIds):
        annotate([0, 1, 0])


def test_indices_are_clamped():
    ann = annotate(list(range(300)))
    assert max(ann.word_index) == MAX_WORD_INDEX
    ann = annotate([0] * 600)
    assert max(ann.subword_index) == MAX_SUBWORD_INDEX
    assert ann.subword_index[510:513] == (511, 512, 512)


def test_table_rows():
    assert BoundarySchema.BINARY.table_rows == BINARY_ROWS == 3
    assert BoundarySchema.WORD_INDEX.table_rows == WORD_ROWS == 257
    assert BoundarySchema.SUBWORD_INDEX.table_rows == SUBWORD_ROWS == 513
    assert BoundarySchema.NONE.table_rows == BoundarySchema.WB_TOKENS.table_rows == 0


word_id_runs = st.lists(st.tuples(st.integers(1, 4), st.booleans()), max_size=12)


def to_word_ids(runs, wrap):
    ids = [NO_WORD] if wrap else []
    for w, (n, _) in enumerate(runs):
        ids.extend([w] * n)
    return ids + ([NO_WORD] if wrap else [])


@given(word_id_runs, st.booleans())
def test_annotate_matches_reference_and_invariants(runs, wrap):
    word_ids = to_word_ids(runs, wrap)
    ann = annotate(word_ids)
    assert (ann.binary, ann.word_index, ann.subword_index) == reference_annotation(word_ids)
    prev_word = 0
    for b, w, s in zip(ann.binary, ann.word_index, ann.subword_index):
        if b == 0:
            continue
        assert (b == 1) == (s == 1)
        assert w == prev_word + (1 if b == 1 else 0)
        prev_word = w


def make_encoding(tokens, word_ids):
    return Encoding(tuple(VOCAB.token_to_id(t) for t in tokens), tuple(tokens), tuple(word_ids))


def test_insert_wb_examples():
    enc = encode("this game is unbeatable", VOCAB)
    out = insert_wb_tokens(enc, VOCAB)
    assert out.tokens == ("this", "[WB]", "game", "[WB]", "is", "[WB]", "un", "beat", "able")
    assert out.word_ids == (0, NO_WORD, 1, NO_WORD, 2, NO_WORD, 3, 3, 3)

    one = make_encoding(["un", "beat", "able"], [0, 0, 0])
    assert insert_wb_tokens(one, VOCAB) == one
    empty = make_encoding([], [])
    assert insert_wb_tokens(empty, VOCAB) == empty


def test_insert_wb_before_placement():
    enc = encode("un un", VOCAB, add_special_tokens=True)
    out = insert_wb_tokens(enc, VOCAB, placement="before")
    assert out.tokens == ("[CLS]", "[WB]", "un", "[WB]", "un", "[SEP]")


def test_insert_wb_needs_special():
    vocab = Vocabulary(("[PAD]", "[UNK]", "un"), MarkerMode.BOUNDLESS)
    with pytest.raises(MissingWBSpecial):
        insert_wb_tokens(encode("un", vocab), vocab)


@given(word_id_runs, st.booleans())
def test_insert_then_remove_is_identity(runs, wrap):
    word_ids = to_word_ids(runs, wrap)
    tokens = ["un"] * len(word_ids)
    if wrap:
        tokens[0], tokens[-1] = "[CLS]", "[SEP]"
    enc = make_encoding(tokens, word_ids)
    n_words = len(runs)
    out = insert_wb_tokens(enc, VOCAB)
    assert len(out) == len(enc) + max(n_words - 1, 0)
    assert remove_wb_tokens(out) == enc


def test_detokenize_examples():
    assert detokenize_with_boundaries(["un", "beat", "able"], [1, 2, 2]) == "unbeatable"
    assert detokenize_with_boundaries(["un", "beat", "able"], [1, 1, 1]) == "un beat able"
    assert detokenize_with_boundaries([], []) == ""
    assert detokenize_with_boundaries(["[CLS]", "un", "[SEP]"], [0, 1, 0]) == "un"
    with pytest.raises(LengthMismatch):
        detokenize_with_boundaries(["un"], [])


def test_annotation_depends_only_on_word_ids():
    a = make_encoding(["un", "beat", "is"], [0, 0, 1])
    b = make_encoding(["this", "game", "b"], [0, 0, 1])
    assert annotate(a) == annotate(b)
