"""Independent reference implementations used to check the production code.

These are deliberately naive: exponential or quadratic, with no shared code
with the package under test.
"""

from __future__ import annotations

import unicodedata
from itertools import combinations


def brute_force_lcs(a, b) -> int:
    """Longest common subsequence by enumerating subsequences of the shorter input."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        for idx in combinations(range(len(short)), k):
            if _is_subsequence([short[i] for i in idx], long_):
                return k
    return 0


def _is_subsequence(sub, seq) -> bool:
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def oracle_f1(candidate, reference) -> float:
    lcs = brute_force_lcs(candidate, reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(candidate), lcs / len(reference)
    return 2 * p * r / (p + r)


def _word_char(ch: str) -> bool:
    return ch.isalnum() or ch in "-_" or unicodedata.category(ch).startswith("M")


def contains_whole_word(haystack: str, needle: str) -> list[int]:
    """Every start offset where ``needle`` occurs with non-word characters (or edges) on both sides.

    Checks every offset of the haystack one by one.
    """
    hits = []
    for i in range(len(haystack) - len(needle) + 1):
        if haystack[i : i + len(needle)] != needle:
            continue
        before_ok = i == 0 or not _word_char(haystack[i - 1])
        j = i + len(needle)
        after_ok = j == len(haystack) or not _word_char(haystack[j])
        if before_ok and after_ok:
            hits.append(i)
    return hits


def oracle_label(raw: str, labels) -> str | None | tuple:
    """Label decision by exhaustive scan.

    Returns the canonical label, ``None`` for no match, or a tuple of the
    matched labels when more than one survives.
    """
    fold = lambda s: unicodedata.normalize("NFC", s).casefold()
    text = fold(raw)
    trimmed = text.strip()
    while trimmed and (unicodedata.category(trimmed[0])[0] in "PS" or trimmed[0].isspace()):
        trimmed = trimmed[1:]
    while trimmed and (unicodedata.category(trimmed[-1])[0] in "PS" or trimmed[-1].isspace()):
        trimmed = trimmed[:-1]
    for lab in labels:
        if fold(lab) == trimmed:
            return lab
    spans = {}
    for lab in labels:
        n = fold(lab)
        spans[lab] = [(i, i + len(n)) for i in contains_whole_word(text, n)]
    surviving = []
    for lab, own in spans.items():
        keep = False
        for s, e in own:
            covered = any(
                other != lab and len(fold(other)) > len(fold(lab)) and os_ <= s and e <= oe
                for other, others in spans.items()
                for os_, oe in others
            )
            if not covered:
                keep = True
        if keep:
            surviving.append(lab)
    if not surviving:
        return None
    if len(surviving) == 1:
        return surviving[0]
    return tuple(surviving)


class SequentialSplitMix64:
    """Textbook stateful SplitMix64."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)


def reference_sample(items, n, seed):
    """Partial Fisher-Yates with rejection sampling, restated from the documented protocol."""
    if n >= len(items):
        return list(items)
    rng = SequentialSplitMix64(seed)
    order = list(range(len(items)))
    for i in range(n):
        bound = len(items) - i
        while True:
            v = rng.next()
            if v < (2**64 // bound) * bound:
                break
        j = i + v % bound
        order[i], order[j] = order[j], order[i]
    return [items[k] for k in sorted(order[:n])]
