"""Prompt rendering for every prompting strategy.

Each strategy renders one example into a single :class:`PromptSpec`. Wording
lives in editable template files (``templates/<name>.txt``); a template has a
``[system]`` block and a ``[user]`` block and may use the placeholders
``{text}``, ``{labels}``, ``{task}`` and ``{format}``. ``{format}`` expands to
the labeled-section answer format derived from the strategy, so every
expected section header appears in the instructions exactly once.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping

from .dataset_io import ClassificationExample, GenerationExample, LabelSet
from .errors import StrategyError, ValidationError


class Strategy(str, Enum):
    STANDARD = "standard"
    COTR = "cotr"
    PRETRANSLATED = "pretranslated"
    DIRECT_GEN = "direct_gen"
    HALF_TRANSLATION = "half_translation"
    FULL_TRANSLATION = "full_translation"

    @property
    def is_generation(self) -> bool:
        return self in GENERATION_STRATEGIES

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        key = name.strip().lower().replace("-", "_")
        key = _STRATEGY_ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise StrategyError(f"unknown strategy {name!r}; expected one of {valid}") from None


CLASSIFICATION_STRATEGIES = (Strategy.STANDARD, Strategy.COTR, Strategy.PRETRANSLATED)
GENERATION_STRATEGIES = (Strategy.DIRECT_GEN, Strategy.HALF_TRANSLATION, Strategy.FULL_TRANSLATION)

_STRATEGY_ALIASES = {
    "direct": "standard",
    "translate_test": "pretranslated",
    "google_translate": "pretranslated",
    "without_translation": "direct_gen",
    "half": "half_translation",
    "full": "full_translation",
}


class Section(str, Enum):
    TRANSLATION = "TRANSLATION"
    LABEL = "LABEL"
    ENGLISH_ARTICLE = "ENGLISH_ARTICLE"
    ENGLISH_HEADLINE = "ENGLISH_HEADLINE"
    MARATHI_HEADLINE = "MARATHI_HEADLINE"

    @property
    def header(self) -> str:
        return SECTION_HEADERS[self]

    @property
    def carries_translation(self) -> bool:
        return self in (Section.TRANSLATION, Section.ENGLISH_ARTICLE)


SECTION_HEADERS = {
    Section.TRANSLATION: "Translation",
    Section.LABEL: "Label",
    Section.ENGLISH_ARTICLE: "English Article",
    Section.ENGLISH_HEADLINE: "English Headline",
    Section.MARATHI_HEADLINE: "Marathi Headline",
}

_SECTION_HINTS = {
    Section.TRANSLATION: "<the English translation of the text>",
    Section.LABEL: "<exactly one label from the list>",
    Section.ENGLISH_ARTICLE: "<the English translation of the article>",
    Section.ENGLISH_HEADLINE: "<the headline in English>",
    Section.MARATHI_HEADLINE: "<the headline in Marathi>",
}

SECTIONS_BY_STRATEGY: dict[Strategy, tuple[Section, ...]] = {
    Strategy.STANDARD: (Section.LABEL,),
    Strategy.COTR: (Section.TRANSLATION, Section.LABEL),
    Strategy.PRETRANSLATED: (Section.LABEL,),
    Strategy.DIRECT_GEN: (Section.MARATHI_HEADLINE,),
    Strategy.HALF_TRANSLATION: (Section.ENGLISH_HEADLINE, Section.MARATHI_HEADLINE),
    Strategy.FULL_TRANSLATION: (Section.ENGLISH_ARTICLE, Section.ENGLISH_HEADLINE, Section.MARATHI_HEADLINE),
}

# two-call mode: the first call stops at the English headline, a second call back-translates it
BACK_TRANSLATION = "back_translation"
_TWO_CALL_SECTIONS = {
    Strategy.HALF_TRANSLATION: (Section.ENGLISH_HEADLINE,),
    Strategy.FULL_TRANSLATION: (Section.ENGLISH_ARTICLE, Section.ENGLISH_HEADLINE),
}


@dataclass(frozen=True)
class PromptSpec:
    system_text: str
    user_text: str
    expected_sections: tuple[Section, ...]
    strategy: Strategy
    example_id: str

    @property
    def request_tag(self) -> str:
        return f"{self.example_id}:{self.strategy.value}"


# ---------------------------------------------------------------------------
# delimiter escaping

FENCE = '"""'
_QUOTE_RUN = re.compile(r'"{3,}')
_ESCAPED_RUN = re.compile(r'(?:\\"){3,}')


def escape_block(text: str) -> str:
    """Backslash every quote inside runs of three or more so the fence cannot close early."""
    return _QUOTE_RUN.sub(lambda m: '\\"' * len(m.group()), text)


def unescape_block(text: str) -> str:
    return _ESCAPED_RUN.sub(lambda m: '"' * (len(m.group()) // 2), text)


# ---------------------------------------------------------------------------
# templates

PLACEHOLDERS = ("text", "labels", "task", "format")
_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")
_ANY_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_]+)\}")
_BLOCK_RE = re.compile(r"^\[(system|user)\]\s*$", re.MULTILINE)

TEMPLATE_NAMES = tuple(s.value for s in Strategy) + (
    "half_translation.two_call",
    "full_translation.two_call",
    BACK_TRANSLATION,
)

_REQUIRED = {name: ("text", "format") for name in TEMPLATE_NAMES}
for _name in ("standard", "cotr", "pretranslated"):
    _REQUIRED[_name] = ("text", "labels", "task", "format")


@dataclass(frozen=True)
class Template:
    name: str
    system: str
    user: str
    source: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()


def parse_template(name: str, source: str) -> Template:
    parts = _BLOCK_RE.split(source)
    # split() yields [preamble, tag, body, tag, body, ...]
    blocks = {parts[i]: parts[i + 1] for i in range(1, len(parts) - 1, 2)}
    if "user" not in blocks:
        raise ValidationError(f"template {name!r} has no [user] block")
    system = blocks.get("system", "").strip("\n")
    user = blocks["user"].strip("\n")
    for block_name, body in (("system", system), ("user", user)):
        for ph in _ANY_PLACEHOLDER_RE.findall(body):
            if ph not in PLACEHOLDERS:
                raise ValidationError(f"template {name!r} uses unknown placeholder {{{ph}}} in [{block_name}]")
    if "{text}" in system:
        raise ValidationError(f"template {name!r}: {{text}} must only appear in [user]")
    if user.count("{text}") != 1:
        raise ValidationError(f"template {name!r}: [user] must contain {{text}} exactly once")
    for ph in _REQUIRED.get(name, ("text",)):
        if "{" + ph + "}" not in system + user:
            raise ValidationError(f"template {name!r} is missing placeholder {{{ph}}}")
    if (system + user).count("{format}") != 1:
        raise ValidationError(f"template {name!r} must contain {{format}} exactly once")
    return Template(name=name, system=system, user=user, source=source)


class TemplateSet:
    """Templates loaded from a directory, falling back to the shipped defaults."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._cache: dict[str, Template] = {}

    def _read(self, name: str) -> str:
        filename = f"{name}.txt"
        if self.directory is not None and (self.directory / filename).is_file():
            return (self.directory / filename).read_text(encoding="utf-8")
        return resources.files("cotr_harness").joinpath("templates").joinpath(filename).read_text(encoding="utf-8")

    def get(self, name: str) -> Template:
        if name not in self._cache:
            try:
                source = self._read(name)
            except FileNotFoundError:
                raise ValidationError(f"no template named {name!r}") from None
            self._cache[name] = parse_template(name, source)
        return self._cache[name]

    def digests(self) -> dict[str, str]:
        return {name: self.get(name).digest for name in TEMPLATE_NAMES}


DEFAULT_TEMPLATES = TemplateSet()


# ---------------------------------------------------------------------------
# rendering


def format_block(sections: tuple[Section, ...]) -> str:
    lines = ["Reply with exactly the following lines, in this order, and nothing else:"]
    lines += [f"{s.header}: {_SECTION_HINTS[s]}" for s in sections]
    return "\n".join(lines)


def _substitute(body: str, values: Mapping[str, str]) -> str:
    # single pass so substituted values are never re-scanned for placeholders
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], body)


def _render(
    template: Template,
    *,
    text: str,
    sections: tuple[Section, ...],
    strategy: Strategy,
    example_id: str,
    labels: LabelSet | None = None,
    task: str = "",
) -> PromptSpec:
    values = {
        "text": escape_block(text),
        "labels": ", ".join(labels.labels) if labels else "",
        "task": task.strip(),
        "format": format_block(sections),
    }
    return PromptSpec(
        system_text=_substitute(template.system, values),
        user_text=_substitute(template.user, values),
        expected_sections=sections,
        strategy=strategy,
        example_id=example_id,
    )


def _check_task(task_description: str) -> None:
    if not task_description or not task_description.strip():
        raise ValidationError("task_description must be non-empty")


def _check_text(text: str, what: str = "text") -> None:
    if not text or not text.strip():
        raise ValidationError(f"{what} must be non-empty")


def build_standard_classification_prompt(
    ex: ClassificationExample,
    labels: LabelSet,
    task_description: str,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> PromptSpec:
    _check_task(task_description)
    _check_text(ex.text)
    return _render(
        templates.get(Strategy.STANDARD.value),
        text=ex.text,
        sections=SECTIONS_BY_STRATEGY[Strategy.STANDARD],
        strategy=Strategy.STANDARD,
        example_id=ex.id,
        labels=labels,
        task=task_description,
    )


def build_cotr_classification_prompt(
    ex: ClassificationExample,
    labels: LabelSet,
    task_description: str,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> PromptSpec:
    """Single prompt: translate the source text to English, then classify the translation."""
    _check_task(task_description)
    _check_text(ex.text)
    return _render(
        templates.get(Strategy.COTR.value),
        text=ex.text,
        sections=SECTIONS_BY_STRATEGY[Strategy.COTR],
        strategy=Strategy.COTR,
        example_id=ex.id,
        labels=labels,
        task=task_description,
    )


def build_pretranslated_prompt(
    translated_text: str,
    labels: LabelSet,
    task_description: str,
    example_id: str = "",
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> PromptSpec:
    _check_text(translated_text, "translated_text")
    _check_task(task_description)
    return _render(
        templates.get(Strategy.PRETRANSLATED.value),
        text=translated_text,
        sections=SECTIONS_BY_STRATEGY[Strategy.PRETRANSLATED],
        strategy=Strategy.PRETRANSLATED,
        example_id=example_id,
        labels=labels,
        task=task_description,
    )


def build_generation_prompt(
    ex: GenerationExample,
    strategy: Strategy,
    templates: TemplateSet = DEFAULT_TEMPLATES,
    *,
    two_call: bool = False,
) -> PromptSpec:
    """Render a headline-generation prompt.

    With ``two_call`` the half and full translation strategies stop at the
    English headline; :func:`build_back_translation_prompt` covers the rest.
    """
    if not isinstance(strategy, Strategy) or not strategy.is_generation:
        raise StrategyError(f"{strategy!r} is not a generation strategy")
    _check_text(ex.article, "article")
    name = strategy.value
    sections = SECTIONS_BY_STRATEGY[strategy]
    if two_call and strategy in _TWO_CALL_SECTIONS:
        name = f"{strategy.value}.two_call"
        sections = _TWO_CALL_SECTIONS[strategy]
    return _render(templates.get(name), text=ex.article, sections=sections, strategy=strategy, example_id=ex.id)


def build_back_translation_prompt(
    english_headline: str,
    example_id: str,
    strategy: Strategy,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> PromptSpec:
    _check_text(english_headline, "english_headline")
    return _render(
        templates.get(BACK_TRANSLATION),
        text=english_headline,
        sections=(Section.MARATHI_HEADLINE,),
        strategy=strategy,
        example_id=f"{example_id}:back",
    )


def build_classification_prompt(
    strategy: Strategy,
    ex: ClassificationExample,
    labels: LabelSet,
    task_description: str,
    templates: TemplateSet = DEFAULT_TEMPLATES,
    translated_text: str | None = None,
) -> PromptSpec:
    if strategy is Strategy.STANDARD:
        return build_standard_classification_prompt(ex, labels, task_description, templates)
    if strategy is Strategy.COTR:
        return build_cotr_classification_prompt(ex, labels, task_description, templates)
    if strategy is Strategy.PRETRANSLATED:
        if translated_text is None:
            raise ValidationError("pretranslated strategy needs translated_text")
        return build_pretranslated_prompt(translated_text, labels, task_description, ex.id, templates)
    raise StrategyError(f"{strategy.value!r} is not a classification strategy")
