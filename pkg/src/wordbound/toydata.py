"""Synthetic desk-scale data: a small morphologically rich English-like language.

Words are built from prefix + stem + suffix morphemes and dropped into a
handful of sentence templates, so the corpora have real subword structure
while staying tiny and fully reproducible from a seed.
"""

from __future__ import annotations

import random

from .morpho_eval import GoldSegmentation

PREFIXES = ("un", "re", "over")
STEMS = ("beat", "play", "price", "form", "paint", "charge")
SUFFIXES = ("able", "ed", "ing", "s")
DETERMINERS = ("the", "a", "this", "that", "every")
NOUNS = ("game", "player", "team", "city", "house", "river", "garden", "machine")
VERBS = ("is", "was", "seems", "looks")
ADVERBS = ("very", "quite", "so", "rather")


def complex_word(rng: random.Random) -> tuple[str, tuple[str, ...]]:
    morphs: list[str] = []
    if rng.random() < 0.4:
        morphs.append(rng.choice(PREFIXES))
    morphs.append(rng.choice(STEMS))
    if rng.random() < 0.5:
        morphs.append(rng.choice(SUFFIXES))
    return "".join(morphs), tuple(morphs)


def sentence(rng: random.Random) -> str:
    word, _ = complex_word(rng)
    template = rng.randrange(4)
    det, noun, verb, adv = rng.choice(DETERMINERS), rng.choice(NOUNS), rng.choice(VERBS), rng.choice(ADVERBS)
    if template == 0:
        return f"{det} {noun} {verb} {word}"
    if template == 1:
        return f"{det} {noun} {verb} {adv} {word}"
    if template == 2:
        other, _ = complex_word(rng)
        return f"{det} {word} {noun} {verb} {other}"
    return f"{word} {det} {noun} , {det} {noun} {verb} {adv} {word}"


def toy_corpus(n_sentences: int, seed: int = 0) -> list[str]:
    rng = random.Random(seed)
    return [sentence(rng) for _ in range(n_sentences)]


def toy_gold(n_words: int = 20, seed: int = 0) -> list[GoldSegmentation]:
    """Distinct complex words with their morph decomposition."""
    rng = random.Random(seed)
    seen: dict[str, tuple[str, ...]] = {}
    while len(seen) < n_words:
        word, morphs = complex_word(rng)
        seen.setdefault(word, morphs)
    return [GoldSegmentation(w, m) for w, m in seen.items()]


MARKER = "garden"


def toy_sequence_task(n: int, seed: int = 0, marker: str = MARKER) -> list[tuple[int, str]]:
    """Short ``det noun verb word`` sentences; label 1 iff the noun is ``marker``.

    Classes alternate before the final shuffle, so they are balanced.
    """
    rng = random.Random(seed)
    others = [w for w in NOUNS if w != marker]
    out = []
    for i in range(n):
        label = i % 2
        noun = marker if label else rng.choice(others)
        word, _ = complex_word(rng)
        out.append((label, f"{rng.choice(DETERMINERS)} {noun} {rng.choice(VERBS)} {word}"))
    rng.shuffle(out)
    return out


def toy_token_task(n: int, seed: int = 0) -> list[tuple[list[str], list[str]]]:
    """Word-level BIO tags: every noun is a one-word ``ENT`` mention."""
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        words = sentence(rng).split()
        tags = ["B-ENT" if w in NOUNS else "O" for w in words]
        out.append((words, tags))
    return out
