from __future__ import annotations

import os
import re
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cotr_harness.dataset_io import ClassificationExample, GenerationExample, LabelSet
from cotr_harness.errors import StrategyError, ValidationError
from cotr_harness.prompts import (
    DEFAULT_TEMPLATES,
    SECTION_HEADERS,
    TEMPLATE_NAMES,
    PromptSpec,
    Section,
    Strategy,
    TemplateSet,
    build_back_translation_prompt,
    build_classification_prompt,
    build_cotr_classification_prompt,
    build_generation_prompt,
    build_pretranslated_prompt,
    build_standard_classification_prompt,
    escape_block,
    parse_template,
    unescape_block,
)

GOLDEN = Path(__file__).parent / "golden" / "prompts"
SENT = LabelSet("sentiment", ("Positive", "Negative", "Neutral"))
HATE = LabelSet("hate", ("Hate", "Non-hate"))
SENT_TASK = "Classify the sentiment of the Marathi tweet."
TWEET = ClassificationExample("s1", "हा चित्रपट खूप छान होता, मला आवडला.", "Positive")
ARTICLE = GenerationExample(
    "x1",
    "पुणे शहरात आज मुसळधार पाऊस झाला. अनेक रस्त्यांवर पाणी साचले आणि वाहतूक कोंडी झाली.",
    "पुण्यात मुसळधार पाऊस, वाहतूक कोंडी",
)


def render(spec: PromptSpec) -> str:
    sections = ", ".join(s.name for s in spec.expected_sections)
    return f"[system]\n{spec.system_text}\n[user]\n{spec.user_text}\n[sections]\n{sections}\n"


def golden_specs() -> dict[str, PromptSpec]:
    return {
        "standard": build_standard_classification_prompt(TWEET, SENT, SENT_TASK),
        "cotr": build_cotr_classification_prompt(TWEET, SENT, SENT_TASK),
        "pretranslated": build_pretranslated_prompt(
            "This movie was very nice, I liked it.", SENT, SENT_TASK, example_id="s1"
        ),
        "direct_gen": build_generation_prompt(ARTICLE, Strategy.DIRECT_GEN),
        "half_translation": build_generation_prompt(ARTICLE, Strategy.HALF_TRANSLATION),
        "full_translation": build_generation_prompt(ARTICLE, Strategy.FULL_TRANSLATION),
        "half_translation.two_call": build_generation_prompt(ARTICLE, Strategy.HALF_TRANSLATION, two_call=True),
        "full_translation.two_call": build_generation_prompt(ARTICLE, Strategy.FULL_TRANSLATION, two_call=True),
        "back_translation": build_back_translation_prompt(
            "Heavy rain in Pune causes traffic jams", "x1", Strategy.HALF_TRANSLATION
        ),
    }


@pytest.mark.parametrize("name", TEMPLATE_NAMES)
def test_golden_prompt(name):
    text = render(golden_specs()[name])
    path = GOLDEN / f"{name}.txt"
    if os.environ.get("UPDATE_GOLDEN"):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    assert path.read_text(encoding="utf-8") == text


EXPECTED_SECTIONS = {
    Strategy.STANDARD: (Section.LABEL,),
    Strategy.COTR: (Section.TRANSLATION, Section.LABEL),
    Strategy.PRETRANSLATED: (Section.LABEL,),
    Strategy.DIRECT_GEN: (Section.MARATHI_HEADLINE,),
    Strategy.HALF_TRANSLATION: (Section.ENGLISH_HEADLINE, Section.MARATHI_HEADLINE),
    Strategy.FULL_TRANSLATION: (Section.ENGLISH_ARTICLE, Section.ENGLISH_HEADLINE, Section.MARATHI_HEADLINE),
}


@pytest.mark.parametrize("strategy", list(Strategy))
def test_expected_sections_mapping(strategy):
    spec = golden_specs()[strategy.value]
    assert tuple(spec.expected_sections) == EXPECTED_SECTIONS[strategy]
    assert spec.strategy is strategy


@pytest.mark.parametrize("name", TEMPLATE_NAMES)
def test_each_section_header_named_once(name):
    spec = golden_specs()[name]
    for section in Section:
        pattern = re.compile(rf"^{re.escape(SECTION_HEADERS[section])}:", re.MULTILINE)
        hits = len(pattern.findall(spec.user_text)) + len(pattern.findall(spec.system_text))
        assert hits == (1 if section in spec.expected_sections else 0), (name, section)


def test_cotr_translation_before_label():
    spec = golden_specs()["cotr"]
    text = spec.user_text
    assert text.index("Translation:") < text.index("Label:")
    # step 1 translates, step 2 works on the translation
    step1 = re.search(r"^1\. (.*)$", text, re.MULTILINE).group(1)
    step2 = re.search(r"^2\. (.*)$", text, re.MULTILINE).group(1)
    assert "translate" in step1.lower() and "english" in step1.lower()
    assert "translation" in step2.lower() and "label" in step2.lower()


def test_full_translation_instruction_order():
    text = golden_specs()["full_translation"].user_text
    assert text.index("English Article:") < text.index("English Headline:") < text.index("Marathi Headline:")
    steps = re.findall(r"^\d\. (.*)$", text, re.MULTILINE)
    assert len(steps) == 3
    assert "entire article" in steps[0] and "headline" in steps[1] and "back into Marathi" in steps[2]


def test_standard_prompt_embeds_text_and_labels():
    spec = build_standard_classification_prompt(TWEET, SENT, SENT_TASK)
    assert spec.user_text.count(TWEET.text) == 1
    assert "Positive, Negative, Neutral" in spec.user_text
    hate = build_standard_classification_prompt(ClassificationExample("h", "मजकूर", "Hate"), HATE, "Detect hate.")
    assert "Hate, Non-hate" in hate.user_text


def test_rendering_is_deterministic():
    a = build_cotr_classification_prompt(TWEET, SENT, SENT_TASK)
    b = build_cotr_classification_prompt(TWEET, SENT, SENT_TASK)
    assert a == b and render(a) == render(b)


def test_empty_inputs_rejected():
    with pytest.raises(ValidationError):
        build_cotr_classification_prompt(TWEET, SENT, "  ")
    with pytest.raises(ValidationError):
        build_pretranslated_prompt("", SENT, SENT_TASK)
    with pytest.raises(ValidationError):
        build_standard_classification_prompt(ClassificationExample("e", " ", "Positive"), SENT, SENT_TASK)


def test_generation_rejects_classification_strategy():
    with pytest.raises(StrategyError):
        build_generation_prompt(ARTICLE, Strategy.STANDARD)
    with pytest.raises(StrategyError):
        build_classification_prompt(Strategy.DIRECT_GEN, TWEET, SENT, SENT_TASK)


def test_pretranslated_keeps_newlines():
    spec = build_pretranslated_prompt("line one\nline two", SENT, SENT_TASK)
    assert '"""\nline one\nline two\n"""' in spec.user_text


def test_delimiter_in_text_is_escaped():
    text = 'तो म्हणाला """थांबा""" आणि गेला'
    spec = build_standard_classification_prompt(ClassificationExample("q", text, "Neutral"), SENT, SENT_TASK)
    body = spec.user_text.split('"""\n', 1)[1].rsplit('\n"""', 1)[0]
    assert '"""' not in body
    assert unescape_block(body) == text


@given(st.text(alphabet='"\\ab\n', max_size=30))
def test_escape_round_trip(text):
    escaped = escape_block(text)
    assert '"""' not in escaped
    assert unescape_block(escaped) == text


@given(st.text(min_size=1, max_size=40).filter(lambda s: s.strip()))
def test_source_text_appears_once(text):
    spec = build_standard_classification_prompt(ClassificationExample("p", text, "Positive"), SENT, SENT_TASK)
    block = spec.user_text.split('"""\n', 1)[1].rsplit('\n"""', 1)[0]
    assert unescape_block(block) == text


def test_strategy_parse_aliases():
    assert Strategy.parse("CoTR") is Strategy.COTR
    assert Strategy.parse("translate-test") is Strategy.PRETRANSLATED
    with pytest.raises(StrategyError):
        Strategy.parse("chain-of-thought")


def test_template_validation():
    ok = "[system]\nYou help.\n[user]\nText:\n{text}\n{format}\n"
    assert parse_template("t", ok).user.startswith("Text:")
    for bad in (
        "[user]\n{format}\n",  # no {text}
        "[system]\n{text}\n[user]\n{text}\n{format}\n",  # text in system block
        "[user]\n{text}\n{text}\n{format}\n",
        "[user]\n{text}\n{format}\n{unknown}\n",
    ):
        with pytest.raises(ValidationError):
            parse_template("t", bad)


def test_template_directory_override(tmp_path):
    for name in TEMPLATE_NAMES:
        (tmp_path / f"{name}.txt").write_text(DEFAULT_TEMPLATES.get(name).source, encoding="utf-8")
    custom = "[system]\nBe brief.\n[user]\nTask: {task}\nLabels: {labels}\n{text}\n{format}\n"
    (tmp_path / "standard.txt").write_text(custom, encoding="utf-8")
    ts = TemplateSet(tmp_path)
    spec = build_standard_classification_prompt(TWEET, SENT, SENT_TASK, templates=ts)
    assert spec.system_text == "Be brief."
    assert ts.digests()["standard"] != DEFAULT_TEMPLATES.digests()["standard"]
