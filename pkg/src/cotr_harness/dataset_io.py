"""Loading, validation and deterministic subsampling of evaluation datasets.

Two on-disk layouts are understood:

* ``delimited``: a header row followed by delimiter-separated columns.
* ``record-stream``: one JSON object per line.

Rows that fail validation abort the load unless ``skip_invalid`` is set, in
which case they are logged and reported through the ``skipped`` collector.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence, TypeVar

from .errors import FileError, LabelError, SchemaError, ValidationError

log = logging.getLogger(__name__)

T = TypeVar("T")

DELIMITED = "delimited"
RECORD_STREAM = "record-stream"
FORMATS = (DELIMITED, RECORD_STREAM)


@dataclass(frozen=True)
class LabelSet:
    task_name: str
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise ValidationError(f"label set for {self.task_name!r} is empty")
        folded = [lab.casefold() for lab in self.labels]
        if len(set(folded)) != len(folded):
            raise ValidationError(f"labels of {self.task_name!r} collide after case-folding: {self.labels}")
        if any(not lab.strip() for lab in self.labels):
            raise ValidationError(f"blank label in {self.task_name!r}")

    def canonical(self, raw: str) -> str | None:
        """Return the canonical spelling of ``raw`` or None if it is not a label."""
        key = raw.strip().casefold()
        for lab in self.labels:
            if lab.casefold() == key:
                return lab
        return None

    def __contains__(self, item: object) -> bool:
        return item in self.labels


@dataclass(frozen=True)
class ClassificationExample:
    id: str
    text: str
    gold: str


@dataclass(frozen=True)
class GenerationExample:
    id: str
    article: str
    reference_headline: str


@dataclass(frozen=True)
class DatasetSchema:
    format: str
    text_field: str
    label_field: str | None = None
    reference_field: str | None = None
    delimiter: str = ","
    label_map: Mapping[str, str] | None = None
    id_field: str | None = None

    def __post_init__(self) -> None:
        if self.format not in FORMATS:
            raise SchemaError(f"unknown dataset format {self.format!r}; expected one of {FORMATS}")
        if self.format == DELIMITED and len(self.delimiter) != 1:
            raise SchemaError(f"delimiter must be a single character, got {self.delimiter!r}")
        if self.label_map is not None:
            object.__setattr__(self, "label_map", {str(k): str(v) for k, v in self.label_map.items()})

    def check_labels(self, labels: LabelSet) -> None:
        if self.label_map:
            stray = sorted(set(self.label_map.values()) - set(labels.labels))
            if stray:
                raise SchemaError(f"label_map targets {stray} are not in label set {list(labels.labels)}")


# ---------------------------------------------------------------------------
# reading


def _read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FileError(f"{path}: not valid UTF-8 ({exc})") from exc
    except OSError as exc:
        raise FileError(f"{path}: cannot read ({exc.strerror or exc})") from exc


def _iter_rows(path: str | Path, schema: DatasetSchema) -> Iterator[tuple[int, Mapping[str, Any]]]:
    """Yield ``(row_number, record)`` with 1-based data-row numbers."""
    content = _read_text(path)
    if content.startswith("\ufeff"):
        content = content[1:]
    if schema.format == DELIMITED:
        reader = csv.DictReader(io.StringIO(content, newline=""), delimiter=schema.delimiter)
        for row_no, row in enumerate(reader, start=1):
            yield row_no, row
    else:
        for row_no, line in enumerate(content.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: row {row_no} is not a JSON record ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise SchemaError(f"{path}: row {row_no} is not a JSON object")
            yield row_no, record


def _field(record: Mapping[str, Any], name: str, path: str | Path, row: int) -> str:
    if name not in record or record[name] is None:
        raise SchemaError(f"{path}: row {row} is missing field {name!r}")
    value = record[name]
    return value if isinstance(value, str) else str(value)


def canonicalize_label(raw: str, labels: LabelSet, label_map: Mapping[str, str] | None = None) -> str | None:
    """Map a raw dataset label to its canonical form.

    ``label_map`` is consulted first, then the label set itself
    (case-insensitively), so canonical labels map to themselves.
    """
    key = raw.strip()
    if label_map and key in label_map:
        return label_map[key]
    return labels.canonical(key)


def _example_id(record: Mapping[str, Any], schema: DatasetSchema, path: str | Path, row: int) -> str:
    if schema.id_field:
        return _field(record, schema.id_field, path, row)
    return str(row)


def _check_header(path: str | Path, schema: DatasetSchema, required: Sequence[str]) -> None:
    if schema.format != DELIMITED:
        return
    content = _read_text(path).lstrip("\ufeff")
    if not content.strip():
        return
    header = next(csv.reader(io.StringIO(content, newline=""), delimiter=schema.delimiter))
    missing = [name for name in required if name not in header]
    if missing:
        raise SchemaError(f"{path}: header lacks column(s) {missing}; found {header}")


def _reject(message: str, exc: Exception, skip_invalid: bool, skipped: list | None, row: int) -> None:
    if not skip_invalid:
        raise exc
    log.warning("skipping row %d: %s", row, message)
    if skipped is not None:
        skipped.append((row, message))


def load_classification_dataset(
    path: str | Path,
    schema: DatasetSchema,
    labels: LabelSet,
    *,
    skip_invalid: bool = False,
    skipped: list | None = None,
) -> list[ClassificationExample]:
    if schema.label_field is None:
        raise SchemaError("classification schema needs label_field")
    schema.check_labels(labels)
    required = [schema.text_field, schema.label_field] + ([schema.id_field] if schema.id_field else [])
    _check_header(path, schema, required)

    examples: list[ClassificationExample] = []
    for row, record in _iter_rows(path, schema):
        text = _field(record, schema.text_field, path, row)
        raw_label = _field(record, schema.label_field, path, row)
        ex_id = _example_id(record, schema, path, row)
        if not text.strip():
            msg = f"{path}: row {row} has empty text"
            _reject(msg, SchemaError(msg), skip_invalid, skipped, row)
            continue
        gold = canonicalize_label(raw_label, labels, schema.label_map)
        if gold is None:
            msg = f"{path}: row {row} has label {raw_label!r} outside {list(labels.labels)}"
            _reject(msg, LabelError(msg, row=row), skip_invalid, skipped, row)
            continue
        examples.append(ClassificationExample(id=ex_id, text=text, gold=gold))
    if skipped:
        log.warning("%s: skipped %d invalid row(s)", path, len(skipped))
    return examples


def load_generation_dataset(
    path: str | Path,
    schema: DatasetSchema,
    *,
    skip_invalid: bool = False,
    skipped: list | None = None,
) -> list[GenerationExample]:
    if schema.reference_field is None:
        raise SchemaError("generation schema needs reference_field")
    required = [schema.text_field, schema.reference_field] + ([schema.id_field] if schema.id_field else [])
    _check_header(path, schema, required)

    examples: list[GenerationExample] = []
    for row, record in _iter_rows(path, schema):
        article = _field(record, schema.text_field, path, row)
        headline = _field(record, schema.reference_field, path, row)
        ex_id = _example_id(record, schema, path, row)
        if not article.strip() or not headline.strip():
            msg = f"{path}: row {row} has an empty article or headline"
            _reject(msg, SchemaError(msg), skip_invalid, skipped, row)
            continue
        examples.append(GenerationExample(id=ex_id, article=article, reference_headline=headline))
    return examples


# ---------------------------------------------------------------------------
# writing (used for round-trips and fixture generation)


def _write_records(path: str | Path, schema: DatasetSchema, fieldnames: list[str], rows: list[dict]) -> None:
    path = Path(path)
    if schema.format == RECORD_STREAM:
        lines = [json.dumps(r, ensure_ascii=False) for r in rows]
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return
    buf = io.StringIO(newline="")
    writer = csv.DictWriter(buf, fieldnames=fieldnames, delimiter=schema.delimiter, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def write_classification_dataset(
    examples: Sequence[ClassificationExample], path: str | Path, schema: DatasetSchema
) -> None:
    """Serialize examples with canonical labels so that loading them again is lossless."""
    assert schema.label_field is not None
    fieldnames = ([schema.id_field] if schema.id_field else []) + [schema.text_field, schema.label_field]
    rows = []
    for ex in examples:
        row = {schema.text_field: ex.text, schema.label_field: ex.gold}
        if schema.id_field:
            row = {schema.id_field: ex.id, **row}
        rows.append(row)
    _write_records(path, schema, fieldnames, rows)


def write_generation_dataset(examples: Sequence[GenerationExample], path: str | Path, schema: DatasetSchema) -> None:
    assert schema.reference_field is not None
    fieldnames = ([schema.id_field] if schema.id_field else []) + [schema.text_field, schema.reference_field]
    rows = []
    for ex in examples:
        row = {schema.text_field: ex.article, schema.reference_field: ex.reference_headline}
        if schema.id_field:
            row = {schema.id_field: ex.id, **row}
        rows.append(row)
    _write_records(path, schema, fieldnames, rows)


# ---------------------------------------------------------------------------
# sampling

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(seed: int, counter: int) -> int:
    """Counter-based SplitMix64: the ``counter``-th 64-bit output for ``seed``.

    Identical to the sequential SplitMix64 generator seeded with ``seed``,
    but addressable by index, so results never depend on platform RNGs.
    """
    z = (seed + (counter + 1) * _GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class _CounterStream:
    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self.counter = 0

    def next64(self) -> int:
        value = splitmix64(self.seed, self.counter)
        self.counter += 1
        return value

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by rejection sampling."""
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            value = self.next64()
            if value < limit:
                return value % bound


def sample_examples(examples: Sequence[T], n: int, seed: int) -> list[T]:
    """Pick ``n`` examples with a seeded partial Fisher-Yates shuffle.

    The chosen examples are returned in their original relative order. When
    ``n`` covers the whole input, the input is returned unchanged.
    """
    if n < 0:
        raise ValidationError(f"sample size must be >= 0, got {n}")
    if n >= len(examples):
        return list(examples)
    stream = _CounterStream(seed)
    idx = list(range(len(examples)))
    for i in range(n):
        j = i + stream.below(len(idx) - i)
        idx[i], idx[j] = idx[j], idx[i]
    return [examples[k] for k in sorted(idx[:n])]
