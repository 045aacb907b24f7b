"""Extraction of labeled sections from raw model output.

A section starts at a line beginning with its header and a colon
(``Label: Positive``); light markdown decoration such as ``**Label:**`` or
``## Label:`` is tolerated. Its content runs to the next recognised header or
the end of the text. Failures are returned as :class:`ParseFailure` values so
callers can count them instead of catching exceptions.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from .dataset_io import LabelSet
from .prompts import PromptSpec, Section, Strategy

STRICT = "strict"
LENIENT = "lenient"
PARSE_MODES = (STRICT, LENIENT)


class FailureReason(str, Enum):
    MISSING_SECTION = "missing_section"
    AMBIGUOUS_LABEL = "ambiguous_label"
    UNKNOWN_LABEL = "unknown_label"
    EMPTY_RESPONSE = "empty_response"
    REFUSED = "refused"


@dataclass(frozen=True)
class ParseFailure:
    reason: FailureReason
    offending_text: str = ""
    detail: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "reason", FailureReason(self.reason))
        object.__setattr__(self, "offending_text", _excerpt(self.offending_text))

    def to_dict(self) -> dict:
        return {"reason": self.reason.value, "offending_text": self.offending_text, "detail": self.detail}


@dataclass(frozen=True)
class ParsedOutput:
    sections: Mapping[Section, str]
    predicted_label: str | None = None
    parse_mode_used: str = STRICT

    def to_dict(self) -> dict:
        return {
            "sections": {s.value: text for s, text in self.sections.items()},
            "predicted_label": self.predicted_label,
            "parse_mode_used": self.parse_mode_used,
        }


@dataclass(frozen=True)
class Headlines:
    marathi_headline: str
    english_headline: str | None = None


def _excerpt(text: str, limit: int = 200) -> str:
    text = text or ""
    return text if len(text) <= limit else text[: limit - 3] + "..."


def parse_result_from_dict(d: Mapping) -> ParsedOutput | ParseFailure:
    if "reason" in d:
        return ParseFailure(FailureReason(d["reason"]), d.get("offending_text", ""), d.get("detail", ""))
    return ParsedOutput(
        sections={Section(k): v for k, v in d["sections"].items()},
        predicted_label=d.get("predicted_label"),
        parse_mode_used=d.get("parse_mode_used", STRICT),
    )


# ---------------------------------------------------------------------------
# sections

# Leading bullets/quotes/heading marks, then optional emphasis that must be
# closed right around the colon ("**Label:**", "**Label**:"). Emphasis
# characters are never taken from the content itself.
_LEAD = r"[ \t>#\-]*(?P<em>\*\*|__|\*|_)?"


def _header_pattern(section: Section) -> re.Pattern[str]:
    words = r"\s+".join(re.escape(w) for w in section.header.split())
    close = r"(?:(?P=em)[ \t]*:|:(?:[ \t]*(?P=em))?)"
    return re.compile(rf"^{_LEAD}{words}[ \t]*{close}[ \t]*", re.IGNORECASE | re.MULTILINE)


_HEADER_PATTERNS = {s: _header_pattern(s) for s in Section}


def _find_headers(raw: str, sections: tuple[Section, ...]) -> list[tuple[int, int, Section]]:
    """All header hits as ``(start, content_start, section)`` sorted by position."""
    hits = []
    for section in sections:
        for m in _HEADER_PATTERNS[section].finditer(raw):
            hits.append((m.start(), m.end(), section))
    hits.sort()
    return hits


def _first_contents(raw: str, hits: list[tuple[int, int, Section]]) -> tuple[dict[Section, str], list[Section]]:
    contents: dict[Section, str] = {}
    order: list[Section] = []
    for i, (_, content_start, section) in enumerate(hits):
        if section in contents:
            continue
        end = hits[i + 1][0] if i + 1 < len(hits) else len(raw)
        contents[section] = raw[content_start:end].strip()
        order.append(section)
    return contents, order


def _strict(raw: str, expected: tuple[Section, ...]) -> dict[Section, str] | ParseFailure:
    contents, order = _first_contents(raw, _find_headers(raw, expected))
    missing = [s for s in expected if s not in contents]
    if missing:
        return ParseFailure(
            FailureReason.MISSING_SECTION, raw, f"missing {', '.join(s.header for s in missing)}"
        )
    if tuple(order) != tuple(expected):
        return ParseFailure(
            FailureReason.MISSING_SECTION, raw, "sections out of order: " + ", ".join(s.header for s in order)
        )
    return contents


def _lenient(raw: str, expected: tuple[Section, ...]) -> dict[Section, str] | ParseFailure:
    contents, _ = _first_contents(raw, _find_headers(raw, expected))
    missing = [s for s in expected if s not in contents and not s.carries_translation]
    if missing:
        return ParseFailure(
            FailureReason.MISSING_SECTION, raw, f"missing {', '.join(s.header for s in missing)}"
        )
    return {s: contents[s] for s in expected if s in contents}


def parse_sections(
    raw: str | None,
    spec: PromptSpec,
    mode: str = STRICT,
    labels: LabelSet | None = None,
) -> ParsedOutput | ParseFailure:
    """Pull the sections ``spec`` asked for out of ``raw``.

    Lenient mode first tries the strict rules and only falls back to
    accepting reordered sections and absent translation sections when those
    fail; ``parse_mode_used`` records which rules produced the result. When
    ``labels`` is given and a LABEL section was expected, its content is
    normalized into ``predicted_label``.
    """
    if mode not in PARSE_MODES:
        raise ValueError(f"parse mode must be one of {PARSE_MODES}, got {mode!r}")
    if raw is None or not raw.strip():
        return ParseFailure(FailureReason.EMPTY_RESPONSE, raw or "")
    expected = spec.expected_sections

    result = _strict(raw, expected)
    used = STRICT
    if isinstance(result, ParseFailure) and mode == LENIENT:
        result = _lenient(raw, expected)
        used = LENIENT
    if isinstance(result, ParseFailure):
        return result

    predicted = None
    if labels is not None and Section.LABEL in result:
        label = normalize_label(result[Section.LABEL], labels)
        if isinstance(label, ParseFailure):
            return label
        predicted = label
    return ParsedOutput(sections=result, predicted_label=predicted, parse_mode_used=used)


def render_sections(sections: Mapping[Section, str]) -> str:
    """Inverse of :func:`parse_sections` for well-formed content."""
    return "".join(f"{s.header}: {text}\n" for s, text in sections.items())


# ---------------------------------------------------------------------------
# labels


def _is_edge_junk(ch: str) -> bool:
    return ch.isspace() or unicodedata.category(ch)[0] in "PS"


def _trim(text: str) -> str:
    start, end = 0, len(text)
    while start < end and _is_edge_junk(text[start]):
        start += 1
    while end > start and _is_edge_junk(text[end - 1]):
        end -= 1
    return text[start:end]


def _is_word_char(ch: str) -> bool:
    # combining marks count as word characters so Devanagari vowel signs never form a boundary
    return ch.isalnum() or ch in "-_" or unicodedata.category(ch).startswith("M")


def _fold(text: str) -> str:
    return unicodedata.normalize("NFC", text).casefold()


def whole_word_spans(haystack: str, needle: str) -> list[tuple[int, int]]:
    spans = []
    if not needle:
        return spans
    start = haystack.find(needle)
    while start != -1:
        end = start + len(needle)
        before_ok = start == 0 or not _is_word_char(haystack[start - 1])
        after_ok = end == len(haystack) or not _is_word_char(haystack[end])
        if before_ok and after_ok:
            spans.append((start, end))
        start = haystack.find(needle, start + 1)
    return spans


def normalize_label(raw_label: str, labels: LabelSet) -> str | ParseFailure:
    """Map free-form model output onto one canonical label.

    Exact match after trimming punctuation/quotes and case-folding wins.
    Otherwise the label must be the only one occurring as a whole word; an
    occurrence lying inside the occurrence of a longer label does not count.
    """
    text = _fold(raw_label or "")
    folded = {_fold(lab): lab for lab in labels.labels}
    trimmed = _trim(text)
    if trimmed in folded:
        return folded[trimmed]

    spans = {key: whole_word_spans(text, key) for key in folded}
    matched = []
    for key, key_spans in spans.items():
        free = [
            (a, b)
            for a, b in key_spans
            if not any(
                other != key and oa <= a and b <= ob and (ob - oa) > (b - a)
                for other, other_spans in spans.items()
                for oa, ob in other_spans
            )
        ]
        if free:
            matched.append(folded[key])
    if len(matched) == 1:
        return matched[0]
    if matched:
        return ParseFailure(FailureReason.AMBIGUOUS_LABEL, raw_label, "matches " + ", ".join(matched))
    return ParseFailure(FailureReason.UNKNOWN_LABEL, raw_label)


# ---------------------------------------------------------------------------
# headlines


def extract_headlines(parsed: ParsedOutput, strategy: Strategy) -> Headlines | ParseFailure:
    marathi = parsed.sections.get(Section.MARATHI_HEADLINE, "").strip()
    if not marathi:
        return ParseFailure(FailureReason.MISSING_SECTION, "", "missing Marathi Headline")
    english = parsed.sections.get(Section.ENGLISH_HEADLINE)
    if strategy in (Strategy.HALF_TRANSLATION, Strategy.FULL_TRANSLATION):
        if english is None or not english.strip():
            return ParseFailure(FailureReason.MISSING_SECTION, "", "missing English Headline")
        return Headlines(marathi_headline=marathi, english_headline=english.strip())
    return Headlines(marathi_headline=marathi, english_headline=english.strip() if english else None)
