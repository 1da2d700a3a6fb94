"""Independent reference implementations used as test oracles.

Each one is written the slow, obvious way and shares no code with the
package beyond plain data types.
"""

from __future__ import annotations

import math
from collections import Counter
from itertools import product

SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[WB]"]


def naive_wordpiece(word_counts: dict[str, int], vocab_size: int, marked: bool, min_freq: int = 2) -> list[str]:
    """WordPiece trainer that recounts every statistic from scratch after each merge."""
    segs = {w: ([w[0]] + ["##" + c for c in w[1:]]) if marked else list(w) for w in word_counts}
    vocab = SPECIALS + sorted({s for seg in segs.values() for s in seg})
    banned = set()
    while len(vocab) < vocab_size:
        units = Counter()
        pairs = Counter()
        for w, seg in segs.items():
            f = word_counts[w]
            for s in seg:
                units[s] += f
            for i in range(len(seg) - 1):
                pairs[(seg[i], seg[i + 1])] += f
        candidates = []
        for (a, b), f in pairs.items():
            if f < min_freq or (a, b) in banned:
                continue
            joined = a + b[2:] if marked and b.startswith("##") else a + b
            candidates.append((-f / (units[a] * units[b]), joined, (a, b)))
        if not candidates:
            break
        _, joined, (a, b) = min(candidates)
        if not marked and joined.startswith("##"):
            banned.add((a, b))
            continue
        if joined not in vocab:
            vocab.append(joined)
        for w, seg in segs.items():
            out, i = [], 0
            while i < len(seg):
                if i + 1 < len(seg) and seg[i] == a and seg[i + 1] == b:
                    out.append(joined)
                    i += 2
                else:
                    out.append(seg[i])
                    i += 1
            segs[w] = out
    return vocab


def brute_greedy(word: str, tokens: list[str], marked: bool) -> list[str]:
    """Longest match at the cursor by scanning every vocabulary entry at every position."""
    regular = [t for t in tokens if t not in SPECIALS]
    pieces = []
    cur = 0
    while cur < len(word):
        best = None
        for t in regular:
            if marked:
                if cur == 0 and t.startswith("##"):
                    continue
                if cur > 0 and not t.startswith("##"):
                    continue
                surface = t[2:] if cur > 0 else t
            else:
                surface = t
            if surface and word[cur:cur + len(surface)] == surface:
                if best is None or len(surface) > len(best[1]):
                    best = (t, surface)
        if best is None:
            return ["[UNK]"]
        pieces.append(best[0])
        cur += len(best[1])
    return pieces


def all_words(alphabet: str, max_len: int):
    for n in range(1, max_len + 1):
        for chars in product(alphabet, repeat=n):
            yield "".join(chars)


def offsets(pieces: list[str]) -> set[int]:
    """Split offsets by enumerating every character position of the word."""
    word = "".join(pieces)
    owner = []
    for k, p in enumerate(pieces):
        owner.extend([k] * len(p))
    return {i for i in range(1, len(word)) if owner[i] != owner[i - 1]}


def brute_morph_scores(pred: dict[str, list[str]], gold: list[tuple[str, list[str]]]) -> tuple[float, float, float, float]:
    hit = npred = ngold = 0
    lens = []
    for word, morphs in gold:
        pieces = [p[2:] if i and p.startswith("##") else p for i, p in enumerate(pred[word])]
        if pieces == ["[UNK]"]:
            pieces = [word]
        p, g = offsets(pieces), offsets(morphs)
        hit += len(p & g)
        npred += len(p)
        ngold += len(g)
        lens.append(len(pieces))
    precision = hit / npred
    recall = hit / ngold
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1, sum(lens) / len(lens)


def lr_reference(step: int, total: int, warmup: int, peak: float) -> float:
    if step <= warmup:
        return peak * step / warmup if warmup else peak
    return peak * (total - step) / (total - warmup)


def softmax_xent(logits: list[float], target: int) -> float:
    m = max(logits)
    z = sum(math.exp(x - m) for x in logits)
    return -(logits[target] - m - math.log(z))


def make_brute_greedy(tokens: list[str], marked: bool):
    """:func:`brute_greedy` with the per-position scan memoised on the text it can see.

    The scan at a cursor depends only on whether the cursor is at 0 and on the
    next ``longest entry`` characters, so caching on that pair changes nothing
    but speed.
    """
    regular = [t for t in tokens if t not in SPECIALS]
    width = max(len(t) for t in regular)
    cache: dict[tuple[bool, str], tuple[str, int] | None] = {}

    def scan(initial: bool, window: str):
        best = None
        for t in regular:
            if marked:
                if initial == t.startswith("##"):
                    continue
                surface = t if initial else t[2:]
            else:
                surface = t
            if surface and window.startswith(surface) and (best is None or len(surface) > best[1]):
                best = (t, len(surface))
        return best

    def segment(word: str) -> list[str]:
        pieces = []
        cur = 0
        while cur < len(word):
            key = (cur == 0, word[cur:cur + width])
            hit = cache.get(key, False)
            if hit is False:
                hit = cache[key] = scan(*key)
            if hit is None:
                return ["[UNK]"]
            pieces.append(hit[0])
            cur += hit[1]
        return pieces

    return segment
