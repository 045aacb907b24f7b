"""ROUGE-L, classification error rate and size-weighted averages."""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Hashable, Iterable, Sequence

from .errors import EmptyCorpusError, EmptyError, LengthMismatchError

TokenSequence = tuple[str, ...]


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> TokenSequence:
    """NFC-normalize, case-fold, split on whitespace and trim punctuation from each token."""
    text = unicodedata.normalize("NFC", text or "").casefold()
    tokens = (_strip_punct(t) for t in text.split())
    return tuple(t for t in tokens if t)


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if len(b) > len(a):
        a, b = b, a
    if not b:
        return 0
    row = [0] * (len(b) + 1)
    for x in a:
        diag = 0
        for j, y in enumerate(b, start=1):
            up = row[j]
            row[j] = diag + 1 if x == y else max(up, row[j - 1])
            diag = up
    return row[-1]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def rouge_l(candidate: Sequence[Hashable], reference: Sequence[Hashable]) -> RougeScore:
    lcs = lcs_length(candidate, reference)
    p = lcs / len(candidate) if candidate else 0.0
    r = lcs / len(reference) if reference else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeScore(p, r, f1)


def rouge_l_text(candidate: str, reference: str) -> RougeScore:
    return rouge_l(tokenize(candidate), tokenize(reference))


def corpus_rouge_l(pairs: Iterable[tuple[Sequence[Hashable], Sequence[Hashable]]]) -> float:
    """Mean sentence-level ROUGE-L F1 over ``(candidate, reference)`` pairs, as a percentage."""
    scores = [rouge_l(c, r).f1 for c, r in pairs]
    if not scores:
        raise EmptyCorpusError("corpus_rouge_l needs at least one pair")
    return 100.0 * math.fsum(scores) / len(scores)


def mean_f1_pct(f1s: Sequence[float]) -> float:
    if not f1s:
        raise EmptyCorpusError("no ROUGE scores to average")
    return 100.0 * math.fsum(f1s) / len(f1s)


@dataclass(frozen=True)
class ErrorStats:
    n_total: int
    n_wrong: int
    n_parse_failures: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.n_wrong <= self.n_total:
            raise ValueError(f"n_wrong={self.n_wrong} outside [0, {self.n_total}]")
        if self.n_parse_failures < 0:
            raise ValueError("n_parse_failures must be >= 0")

    @property
    def error_pct(self) -> float:
        if self.n_total == 0:
            raise EmptyError("error rate is undefined for zero examples")
        return 100.0 * self.n_wrong / self.n_total


def error_rate(
    predictions: Sequence[str | None],
    golds: Sequence[str],
    *,
    exclude_parse_failures: bool = False,
) -> ErrorStats:
    """Count wrong predictions; ``None`` marks an unparseable answer.

    By default a missing prediction counts as wrong and as a parse failure.
    With ``exclude_parse_failures`` it is dropped from the denominator
    instead (still reported in ``n_parse_failures``).
    """
    if len(predictions) != len(golds):
        raise LengthMismatchError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise EmptyError("error_rate needs at least one example")
    failures = sum(1 for p in predictions if p is None)
    wrong = sum(1 for p, g in zip(predictions, golds) if p is not None and p != g)
    if exclude_parse_failures:
        return ErrorStats(n_total=len(golds) - failures, n_wrong=wrong, n_parse_failures=failures)
    return ErrorStats(n_total=len(golds), n_wrong=wrong + failures, n_parse_failures=failures)


def weighted_average(per_dataset: Iterable[tuple[float, int]]) -> float:
    """Sum of ``error_pct * n`` divided by the sum of ``n``."""
    items = list(per_dataset)
    if not items:
        raise EmptyError("weighted_average needs at least one entry")
    for pct, n in items:
        if n <= 0:
            raise EmptyError(f"dataset size must be positive, got {n}")
    total = sum((_exact_weighted(pct, n) for pct, n in items), Fraction(0))
    return float(total / sum(n for _, n in items))


def _exact_weighted(pct: float, n: int) -> Fraction:
    """``pct * n`` as an exact rational.

    When ``pct`` is exactly the float a whole count ``k`` of ``n`` produces, the
    count itself is used, so recombining cells built from counts returns the
    same float as the pooled rate ``100 * sum(k) / sum(n)``.
    """
    k = round(pct * n / 100)
    if 0 <= k <= n and 100.0 * k / n == pct:
        return Fraction(100 * k)
    return Fraction(pct) * n


def format_pct(value: float, places: int = 2) -> str:
    """Half-up rounding for display; stored values keep full precision."""
    quant = Decimal(1).scaleb(-places)
    return str(Decimal(repr(value)).quantize(quant, rounding=ROUND_HALF_UP))
