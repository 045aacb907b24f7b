"""Declarative run configuration, read from TOML.

Relative paths inside a config file are resolved against the file's
directory. See ``configs/example.toml`` for an annotated example.
"""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cache import digest_of
from .dataset_io import DatasetSchema, LabelSet
from .errors import ConfigError, HarnessError
from .gateway import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, RetryPolicy
from .parsing import PARSE_MODES, STRICT
from .prompts import CLASSIFICATION_STRATEGIES, GENERATION_STRATEGIES, Strategy

CLASSIFICATION = "classification"
GENERATION = "generation"


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    task: str
    path: Path
    schema: DatasetSchema
    labels: LabelSet | None = None
    task_description: str = ""
    sample_n: int = 100
    seed: int = 0
    skip_invalid: bool = False
    strategies: tuple[Strategy, ...] = ()
    models: tuple[str, ...] = ()

    @property
    def is_generation(self) -> bool:
        return self.task == GENERATION

    def identity(self) -> dict[str, Any]:
        """Fields that define which examples and labels a run saw."""
        schema = asdict(self.schema)
        schema["label_map"] = dict(self.schema.label_map or {})
        return {
            "name": self.name,
            "task": self.task,
            "schema": schema,
            "labels": list(self.labels.labels) if self.labels else None,
            "task_description": self.task_description,
            "sample_n": self.sample_n,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class ModelConfig:
    name: str
    model_id: str
    provider: str = "openai"
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    api_key_env: str = "OPENAI_API_KEY"


@dataclass(frozen=True)
class TranslationConfig:
    provider: str = "mock"
    name: str = ""
    endpoint_url: str = ""
    api_key_env: str | None = None
    source_lang: str = "mr"
    target_lang: str = "en"

    @property
    def provider_name(self) -> str:
        return self.name or self.provider


@dataclass(frozen=True)
class RunConfig:
    datasets: tuple[DatasetConfig, ...]
    models: tuple[ModelConfig, ...]
    strategies: tuple[Strategy, ...]
    output_dir: Path
    cache_dir: Path | None = None
    parse_mode: str = STRICT
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    parallelism: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    exclude_parse_failures: bool = False
    max_failure_fraction: float = 0.5
    two_call_mode: bool = False
    templates_dir: Path | None = None
    translation: TranslationConfig = field(default_factory=TranslationConfig)
    mock_chat_fixture: Path | None = None
    mock_translation_fixture: Path | None = None
    source_path: Path | None = None

    def __post_init__(self) -> None:
        if not self.datasets:
            raise ConfigError("config declares no datasets")
        if not self.models:
            raise ConfigError("config declares no models")
        if not self.strategies:
            raise ConfigError("config declares no strategies")
        if self.parse_mode not in PARSE_MODES:
            raise ConfigError(f"parse_mode must be one of {PARSE_MODES}, got {self.parse_mode!r}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.temperature < 0 or self.max_tokens <= 0:
            raise ConfigError("temperature must be >= 0 and max_tokens positive")
        if not 0.0 <= self.max_failure_fraction <= 1.0:
            raise ConfigError("max_failure_fraction must lie in [0, 1]")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dataset names in {names}")
        model_names = [m.name for m in self.models]
        if len(set(model_names)) != len(model_names):
            raise ConfigError(f"duplicate model names in {model_names}")
        for ds in self.datasets:
            unknown = set(ds.models) - set(model_names)
            if unknown:
                raise ConfigError(f"dataset {ds.name!r} references unknown model(s) {sorted(unknown)}")
            allowed = GENERATION_STRATEGIES if ds.is_generation else CLASSIFICATION_STRATEGIES
            wrong = [s.value for s in ds.strategies if s not in allowed]
            if wrong:
                raise ConfigError(f"dataset {ds.name!r} is a {ds.task} dataset but lists strategies {wrong}")
            if not self.strategies_for(ds):
                raise ConfigError(f"dataset {ds.name!r} ({ds.task}) has no applicable strategy")

    def strategies_for(self, ds: DatasetConfig) -> tuple[Strategy, ...]:
        allowed = GENERATION_STRATEGIES if ds.is_generation else CLASSIFICATION_STRATEGIES
        chosen = ds.strategies or self.strategies
        return tuple(s for s in chosen if s in allowed)

    def models_for(self, ds: DatasetConfig) -> tuple[ModelConfig, ...]:
        if not ds.models:
            return self.models
        return tuple(m for m in self.models if m.name in ds.models)

    def combinations(self) -> list[tuple[DatasetConfig, ModelConfig, Strategy]]:
        return [(ds, m, s) for ds in self.datasets for m in self.models_for(ds) for s in self.strategies_for(ds)]

    def decoding(self) -> dict[str, Any]:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens}

    def config_hash(self) -> str:
        payload = {
            "datasets": [d.identity() for d in self.datasets],
            "models": [asdict(m) for m in self.models],
            "strategies": [s.value for s in self.strategies],
            "decoding": self.decoding(),
            "parse_mode": self.parse_mode,
            "exclude_parse_failures": self.exclude_parse_failures,
            "two_call_mode": self.two_call_mode,
            "translation": asdict(self.translation),
        }
        return digest_of(payload)


# ---------------------------------------------------------------------------
# loading


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None or value == "":
        return None
    p = Path(value).expanduser()
    return Path(os.path.normpath(p if p.is_absolute() else base / p))


def _require(table: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in table:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return table[key]


def _parse_strategies(values: Any, where: str) -> tuple[Strategy, ...]:
    if isinstance(values, str):
        values = [values]
    try:
        return tuple(Strategy.parse(v) for v in values or ())
    except HarnessError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _dataset(table: Mapping[str, Any], base: Path, index: int) -> DatasetConfig:
    where = f"datasets[{index}]"
    name = _require(table, "name", where)
    where = f"dataset {name!r}"
    task = table.get("task", CLASSIFICATION)
    if task not in (CLASSIFICATION, GENERATION):
        raise ConfigError(f"{where}: task must be {CLASSIFICATION!r} or {GENERATION!r}")
    try:
        schema = DatasetSchema(
            format=table.get("format", "delimited"),
            text_field=_require(table, "text_field", where),
            label_field=table.get("label_field"),
            reference_field=table.get("reference_field"),
            delimiter=table.get("delimiter", ","),
            label_map=table.get("label_map"),
            id_field=table.get("id_field"),
        )
        labels = None
        if task == CLASSIFICATION:
            if not schema.label_field:
                raise ConfigError(f"{where}: classification datasets need label_field")
            labels = LabelSet(task_name=name, labels=tuple(_require(table, "labels", where)))
            schema.check_labels(labels)
            if not str(table.get("task_description", "")).strip():
                raise ConfigError(f"{where}: classification datasets need a task_description")
        elif not schema.reference_field:
            raise ConfigError(f"{where}: generation datasets need reference_field")
    except ConfigError:
        raise
    except HarnessError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    sample_n = int(table.get("sample_n", 100))
    if sample_n < 0:
        raise ConfigError(f"{where}: sample_n must be >= 0")
    return DatasetConfig(
        name=name,
        task=task,
        path=_resolve(base, _require(table, "path", where)),
        schema=schema,
        labels=labels,
        task_description=str(table.get("task_description", "")),
        sample_n=sample_n,
        seed=int(table.get("seed", 0)),
        skip_invalid=bool(table.get("skip_invalid", False)),
        strategies=_parse_strategies(table.get("strategies"), where),
        models=tuple(table.get("models", ())),
    )


def _model(table: Mapping[str, Any], index: int) -> ModelConfig:
    where = f"models[{index}]"
    model_id = _require(table, "model_id", where)
    return ModelConfig(
        name=table.get("name", model_id),
        model_id=model_id,
        provider=table.get("provider", "openai"),
        endpoint_url=table.get("endpoint_url", ModelConfig.endpoint_url),
        api_key_env=table.get("api_key_env", ModelConfig.api_key_env),
    )


def config_from_dict(data: Mapping[str, Any], base: Path, source_path: Path | None = None) -> RunConfig:
    run = data.get("run", {})
    retry = data.get("retry", {})
    mock = data.get("mock", {})
    trans = data.get("translation", {})
    try:
        policy = RetryPolicy(
            max_attempts=int(retry.get("max_attempts", 3)),
            base_delay=float(retry.get("base_delay", 1.0)),
            multiplier=float(retry.get("multiplier", 2.0)),
            max_delay=float(retry.get("max_delay", 30.0)),
        )
    except HarnessError as exc:
        raise ConfigError(f"[retry]: {exc}") from None
    parse_failures = run.get("parse_failures", "count")
    if parse_failures not in ("count", "exclude"):
        raise ConfigError("run.parse_failures must be 'count' or 'exclude'")
    return RunConfig(
        datasets=tuple(_dataset(t, base, i) for i, t in enumerate(data.get("datasets", []))),
        models=tuple(_model(t, i) for i, t in enumerate(data.get("models", []))),
        strategies=_parse_strategies(data.get("strategies", run.get("strategies", [])), "strategies"),
        output_dir=_resolve(base, run.get("output_dir", "runs/latest")),
        cache_dir=_resolve(base, run.get("cache_dir", ".cache")),
        parse_mode=run.get("parse_mode", STRICT),
        temperature=float(run.get("temperature", DEFAULT_TEMPERATURE)),
        max_tokens=int(run.get("max_tokens", DEFAULT_MAX_TOKENS)),
        parallelism=int(run.get("parallelism", 4)),
        retry=policy,
        exclude_parse_failures=parse_failures == "exclude",
        max_failure_fraction=float(run.get("max_failure_fraction", 0.5)),
        two_call_mode=bool(run.get("two_call_mode", False)),
        templates_dir=_resolve(base, run.get("templates_dir")),
        translation=TranslationConfig(
            provider=trans.get("provider", "mock"),
            name=trans.get("name", ""),
            endpoint_url=trans.get("endpoint_url", ""),
            api_key_env=trans.get("api_key_env"),
            source_lang=trans.get("source_lang", "mr"),
            target_lang=trans.get("target_lang", "en"),
        ),
        mock_chat_fixture=_resolve(base, mock.get("chat_fixture")),
        mock_translation_fixture=_resolve(base, mock.get("translation_fixture")),
        source_path=source_path,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc
    return config_from_dict(data, path.resolve().parent, source_path=path)


def apply_overrides(
    cfg: RunConfig,
    *,
    datasets: list[str] | None = None,
    models: list[str] | None = None,
    strategies: list[str] | None = None,
    limit: int | None = None,
    seed: int | None = None,
    cache_dir: str | Path | None = None,
    output_dir: str | Path | None = None,
    parse_mode: str | None = None,
    parallelism: int | None = None,
) -> RunConfig:
    """Narrow or adjust a config from command-line flags."""
    ds = cfg.datasets
    if datasets:
        unknown = set(datasets) - {d.name for d in ds}
        if unknown:
            raise ConfigError(f"unknown dataset(s) {sorted(unknown)}; known: {[d.name for d in ds]}")
        ds = tuple(d for d in ds if d.name in datasets)
    if limit is not None:
        if limit < 0:
            raise ConfigError("--limit must be >= 0")
        ds = tuple(replace(d, sample_n=min(d.sample_n, limit)) for d in ds)
    if seed is not None:
        ds = tuple(replace(d, seed=seed) for d in ds)
    ms = cfg.models
    if models:
        unknown = set(models) - {m.name for m in ms}
        if unknown:
            raise ConfigError(f"unknown model(s) {sorted(unknown)}; known: {[m.name for m in ms]}")
        ms = tuple(m for m in ms if m.name in models)
        ds = tuple(_narrow(d, "models", models) for d in ds)
    ss = cfg.strategies
    if strategies:
        ss = _parse_strategies(strategies, "--strategy")
        ds = tuple(_narrow(d, "strategies", ss) for d in ds)
    ds = tuple(
        d
        for d in ds
        if d is not None
        and any(s in (GENERATION_STRATEGIES if d.is_generation else CLASSIFICATION_STRATEGIES) for s in d.strategies or ss)
    )
    if not ds:
        raise ConfigError("no dataset remains after applying --dataset/--model/--strategy filters")
    return replace(
        cfg,
        datasets=ds,
        models=ms,
        strategies=ss,
        cache_dir=Path(cache_dir) if cache_dir else cfg.cache_dir,
        output_dir=Path(output_dir) if output_dir else cfg.output_dir,
        parse_mode=parse_mode or cfg.parse_mode,
        parallelism=parallelism or cfg.parallelism,
    )


def _narrow(d: DatasetConfig | None, attr: str, keep) -> DatasetConfig | None:
    """Intersect a per-dataset override list with ``keep``; None when nothing is left."""
    if d is None or not getattr(d, attr):
        return d
    kept = tuple(x for x in getattr(d, attr) if x in keep)
    return replace(d, **{attr: kept}) if kept else None
