"""Run the (dataset x model x strategy) grid and persist one record per example.

Run directory layout::

    <out>/manifest.json                        config/template hashes, per-combination counts
    <out>/records/<dataset>__<model>__<strategy>.jsonl
    <out>/raw/<cache digest>.txt               raw model text, referenced from records
    <out>/stats.json                           volatile numbers (cache hits, wall time)

Everything except ``stats.json`` is a deterministic function of the config,
the templates and the model responses.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .cache import atomic_write_text, canonical_json, digest_of
from .config import DatasetConfig, ModelConfig, RunConfig
from .dataset_io import (
    ClassificationExample,
    GenerationExample,
    load_classification_dataset,
    load_generation_dataset,
    sample_examples,
)
from .errors import ConfigError, HarnessError, ProviderError, TransportError
from .gateway import (
    CacheKey,
    ChatRequest,
    ChatResponse,
    FinishReason,
    HTTPChatBackend,
    LLMGateway,
    MockChatBackend,
    cache_key,
)
from .metrics import RougeScore, rouge_l, tokenize
from .parsing import (
    FailureReason,
    ParsedOutput,
    ParseFailure,
    extract_headlines,
    parse_result_from_dict,
    parse_sections,
)
from .prompts import (
    PromptSpec,
    Section,
    Strategy,
    TemplateSet,
    build_back_translation_prompt,
    build_classification_prompt,
    build_generation_prompt,
)
from .translation import HTTPTranslationProvider, MockTranslationProvider, TranslationResult, Translator

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SCORED = "scored"
FAILED = "failed"


class RunAborted(HarnessError):
    pass


@dataclass(frozen=True)
class RunRecord:
    example_id: str
    dataset: str
    task: str
    model: str
    model_id: str
    strategy: str
    status: str
    gold: str
    prompt_digest: str | None = None
    followup_digest: str | None = None
    raw_response_ref: str | None = None
    finish_reason: str | None = None
    parsed: Mapping[str, Any] | None = None
    parse_failure: bool = False
    prediction: str | None = None
    candidate: str | None = None
    english_headline: str | None = None
    correct: bool | None = None
    rouge: Mapping[str, float] | None = None
    translation: Mapping[str, Any] | None = None
    timing: Mapping[str, float] = field(default_factory=dict)
    from_cache: Mapping[str, bool] = field(default_factory=dict)
    error: Mapping[str, str] | None = None

    def to_json(self) -> str:
        return canonical_json(asdict(self))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    @property
    def parse_result(self) -> ParsedOutput | ParseFailure | None:
        return None if self.parsed is None else parse_result_from_dict(self.parsed)

    @property
    def empty_translation(self) -> bool:
        sections = (self.parsed or {}).get("sections") or {}
        return Section.TRANSLATION.value in sections and not sections[Section.TRANSLATION.value].strip()


@dataclass
class RunSummary:
    run_dir: Path
    n_records: int = 0
    n_failed: int = 0
    n_parse_failures: int = 0
    combos_run: int = 0
    combos_skipped: int = 0
    network_calls: int = 0
    translation_calls: int = 0
    cache_hits: int = 0
    aborted: bool = False

    @property
    def exit_status(self) -> int:
        if self.aborted:
            return 3
        return 1 if self.n_failed else 0


# ---------------------------------------------------------------------------
# backends


def build_gateways(
    cfg: RunConfig, *, mock: bool = False, mock_backend: MockChatBackend | None = None, sleep=time.sleep
) -> dict[str, LLMGateway]:
    gateways = {}
    shared_mock = mock_backend
    for m in cfg.models:
        if mock or m.provider == "mock":
            if shared_mock is None:
                if cfg.mock_chat_fixture is None:
                    raise ConfigError("mock mode needs [mock] chat_fixture in the config")
                shared_mock = MockChatBackend.from_file(cfg.mock_chat_fixture)
            backend = shared_mock
        else:
            backend = HTTPChatBackend(m.endpoint_url, m.api_key_env)
        gateways[m.name] = LLMGateway(backend, cfg.cache_dir, cfg.parallelism, cfg.retry, sleep=sleep)
    return gateways


def build_translator(cfg: RunConfig, *, mock: bool = False, sleep=time.sleep) -> Translator:
    tc = cfg.translation
    if mock or tc.provider == "mock":
        if cfg.mock_translation_fixture is None:
            raise ConfigError("mock translation needs [mock] translation_fixture in the config")
        provider = MockTranslationProvider.from_file(cfg.mock_translation_fixture)
        if tc.name:
            provider.name = tc.name
    elif tc.provider == "http":
        provider = HTTPTranslationProvider(tc.endpoint_url, tc.api_key_env, name=tc.provider_name)
    else:
        raise ConfigError(f"unknown translation provider {tc.provider!r}; expected 'http' or 'mock'")
    return Translator(provider, cfg.cache_dir, cfg.retry, sleep=sleep)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class LoadedDataset:
    config: DatasetConfig
    examples: tuple
    n_loaded: int
    n_skipped_rows: int

    def manifest_entry(self) -> dict[str, Any]:
        return {
            **self.config.identity(),
            "n_loaded": self.n_loaded,
            "n_sampled": len(self.examples),
            "n_skipped_rows": self.n_skipped_rows,
            "example_ids": [ex.id for ex in self.examples],
        }


def load_dataset(ds: DatasetConfig) -> LoadedDataset:
    skipped: list = []
    if ds.is_generation:
        examples = load_generation_dataset(ds.path, ds.schema, skip_invalid=ds.skip_invalid, skipped=skipped)
    else:
        examples = load_classification_dataset(
            ds.path, ds.schema, ds.labels, skip_invalid=ds.skip_invalid, skipped=skipped
        )
    ids = [ex.id for ex in examples]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"dataset {ds.name!r} has duplicate example ids")
    chosen = sample_examples(examples, ds.sample_n, ds.seed)
    return LoadedDataset(ds, tuple(chosen), len(examples), len(skipped))


# ---------------------------------------------------------------------------
# per-example work


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def records_relpath(dataset: str, model: str, strategy: Strategy) -> str:
    return f"records/{_safe_name(dataset)}__{_safe_name(model)}__{strategy.value}.jsonl"


def _failure_from_response(resp: ChatResponse) -> ParseFailure | None:
    if resp.finish_reason is FinishReason.REFUSED:
        return ParseFailure(FailureReason.REFUSED, "", "provider refused the request")
    if resp.finish_reason is FinishReason.ERROR:
        return ParseFailure(FailureReason.EMPTY_RESPONSE, "", "provider returned an error")
    return None


class _Combo:
    """Executes one (dataset, model, strategy) cell."""

    def __init__(self, runner: "ExperimentRunner", data: LoadedDataset, model: ModelConfig, strategy: Strategy):
        self.runner = runner
        self.cfg = runner.cfg
        self.ds = data.config
        self.data = data
        self.model = model
        self.strategy = strategy
        self.gateway = runner.gateways[model.name]

    def tag(self, ex_id: str, suffix: str = "") -> str:
        return f"{self.ds.name}/{ex_id}:{self.strategy.value}{suffix}"

    def request(self, spec: PromptSpec, tag: str) -> ChatRequest:
        req = ChatRequest.from_prompt(spec, self.model.model_id, self.cfg.temperature, self.cfg.max_tokens)
        return replace(req, request_tag=tag)

    def call(self, spec: PromptSpec, tag: str) -> tuple[ChatRequest, ChatResponse]:
        req = self.request(spec, tag)
        resp = self.gateway.complete(req)
        if resp.raw_text is not None:
            self.runner.store_raw(cache_key(req), resp.raw_text)
        return req, resp

    def base(self, ex_id: str, gold: str) -> dict[str, Any]:
        return {
            "example_id": ex_id,
            "dataset": self.ds.name,
            "task": self.ds.task,
            "model": self.model.name,
            "model_id": self.model.model_id,
            "strategy": self.strategy.value,
            "gold": gold,
        }

    def failed(self, base: dict[str, Any], exc: BaseException, translation: TranslationResult | None) -> RunRecord:
        log.warning("%s failed: %s", self.tag(base["example_id"]), exc)
        return RunRecord(
            **base,
            status=FAILED,
            translation=_translation_dict(translation),
            from_cache={"translation": translation.from_cache} if translation else {},
            error={"type": type(exc).__name__, "message": str(exc)},
        )

    def run_one(self, ex: ClassificationExample | GenerationExample) -> RunRecord:
        if isinstance(ex, GenerationExample):
            return self.run_generation(ex)
        return self.run_classification(ex)

    def run_classification(self, ex: ClassificationExample) -> RunRecord:
        base = self.base(ex.id, ex.gold)
        translation = None
        try:
            if self.strategy is Strategy.PRETRANSLATED:
                tc = self.cfg.translation
                translation = self.runner.translator.translate(ex.text, tc.source_lang, tc.target_lang)
            spec = build_classification_prompt(
                self.strategy,
                ex,
                self.ds.labels,
                self.ds.task_description,
                self.runner.templates,
                translated_text=translation.translated_text if translation else None,
            )
            req, resp = self.call(spec, self.tag(ex.id))
        except (ProviderError, TransportError) as exc:
            return self.failed(base, exc, translation)

        parsed = _failure_from_response(resp) or parse_sections(
            resp.raw_text, spec, self.cfg.parse_mode, self.ds.labels
        )
        prediction = parsed.predicted_label if isinstance(parsed, ParsedOutput) else None
        return RunRecord(
            **base,
            status=SCORED,
            prompt_digest=cache_key(req).digest,
            raw_response_ref=cache_key(req).digest if resp.raw_text is not None else None,
            finish_reason=resp.finish_reason.value,
            parsed=parsed.to_dict(),
            parse_failure=isinstance(parsed, ParseFailure),
            prediction=prediction,
            correct=prediction == ex.gold,
            translation=_translation_dict(translation),
            timing=_timing(resp),
            from_cache=_cache_flags(resp, translation),
        )

    def run_generation(self, ex: GenerationExample) -> RunRecord:
        base = self.base(ex.id, ex.reference_headline)
        two_call = self.cfg.two_call_mode and self.strategy in (Strategy.HALF_TRANSLATION, Strategy.FULL_TRANSLATION)
        templates = self.runner.templates
        follow_req = None
        try:
            spec = build_generation_prompt(ex, self.strategy, templates, two_call=two_call)
            req, resp = self.call(spec, self.tag(ex.id))
            parsed = _failure_from_response(resp) or parse_sections(resp.raw_text, spec, self.cfg.parse_mode)
            if two_call and isinstance(parsed, ParsedOutput):
                english = parsed.sections.get(Section.ENGLISH_HEADLINE, "")
                if english.strip():
                    back = build_back_translation_prompt(english, ex.id, self.strategy, templates)
                    follow_req, follow_resp = self.call(back, self.tag(ex.id, ":back"))
                    second = _failure_from_response(follow_resp) or parse_sections(
                        follow_resp.raw_text, back, self.cfg.parse_mode
                    )
                    if isinstance(second, ParseFailure):
                        parsed = second
                    else:
                        merged = {**parsed.sections, **second.sections}
                        mode = "lenient" if "lenient" in (parsed.parse_mode_used, second.parse_mode_used) else "strict"
                        parsed = ParsedOutput(sections=merged, parse_mode_used=mode)
                        resp = _combine(resp, follow_resp)
        except (ProviderError, TransportError) as exc:
            return self.failed(base, exc, None)

        candidate = english = None
        if isinstance(parsed, ParsedOutput):
            heads = extract_headlines(parsed, self.strategy)
            if isinstance(heads, ParseFailure):
                parsed = heads
            else:
                candidate, english = heads.marathi_headline, heads.english_headline
        score = rouge_l(tokenize(candidate), tokenize(ex.reference_headline)) if candidate else RougeScore(0.0, 0.0, 0.0)
        return RunRecord(
            **base,
            status=SCORED,
            prompt_digest=cache_key(req).digest,
            followup_digest=cache_key(follow_req).digest if follow_req else None,
            raw_response_ref=cache_key(req).digest if resp.raw_text is not None else None,
            finish_reason=resp.finish_reason.value,
            parsed=parsed.to_dict(),
            parse_failure=isinstance(parsed, ParseFailure),
            candidate=candidate,
            english_headline=english,
            rouge=score.to_dict(),
            timing=_timing(resp),
            from_cache=_cache_flags(resp, None),
        )


def _combine(first: ChatResponse, second: ChatResponse) -> ChatResponse:
    return replace(
        first,
        prompt_tokens=first.prompt_tokens + second.prompt_tokens,
        completion_tokens=first.completion_tokens + second.completion_tokens,
        latency=first.latency + second.latency,
        from_cache=first.from_cache and second.from_cache,
    )


def _timing(resp: ChatResponse) -> dict[str, float]:
    return {
        "latency": resp.latency,
        "prompt_tokens": resp.prompt_tokens,
        "completion_tokens": resp.completion_tokens,
    }


def _cache_flags(resp: ChatResponse, translation: TranslationResult | None) -> dict[str, bool]:
    flags = {"llm": resp.from_cache}
    if translation is not None:
        flags["translation"] = translation.from_cache
    return flags


def _translation_dict(tr: TranslationResult | None) -> dict[str, Any] | None:
    if tr is None:
        return None
    d = tr.to_dict()
    del d["from_cache"]
    return d


# ---------------------------------------------------------------------------
# runner


def _combo_key(dataset: str, model: str, strategy: Strategy) -> str:
    return f"{dataset}|{model}|{strategy.value}"


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_records(path: Path) -> list[RunRecord]:
    with open(path, encoding="utf-8") as fh:
        return [RunRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def read_manifest(run_dir: str | Path) -> dict[str, Any]:
    path = Path(run_dir) / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{run_dir} is not a run directory (no manifest.json)") from None


class ExperimentRunner:
    def __init__(
        self,
        cfg: RunConfig,
        gateways: Mapping[str, LLMGateway],
        translator: Translator | None = None,
        templates: TemplateSet | None = None,
    ):
        self.cfg = cfg
        self.gateways = dict(gateways)
        self.translator = translator
        self.templates = templates or TemplateSet(cfg.templates_dir)
        self.run_dir = Path(cfg.output_dir)

    def store_raw(self, key: CacheKey, text: str) -> None:
        path = self.run_dir / "raw" / f"{key.digest}.txt"
        if not path.exists():
            atomic_write_text(path, text)

    def _combo_hash(self, data: LoadedDataset, model: ModelConfig, strategy: Strategy) -> str:
        template_names = [strategy.value]
        if self.cfg.two_call_mode and strategy in (Strategy.HALF_TRANSLATION, Strategy.FULL_TRANSLATION):
            template_names = [f"{strategy.value}.two_call", "back_translation"]
        payload = {
            "dataset": data.manifest_entry(),
            "model": asdict(model),
            "strategy": strategy.value,
            "decoding": self.cfg.decoding(),
            "parse_mode": self.cfg.parse_mode,
            "templates": {n: self.templates.get(n).digest for n in template_names},
            "translation": asdict(self.cfg.translation) if strategy is Strategy.PRETRANSLATED else None,
        }
        return digest_of(payload)

    def run(self) -> RunSummary:
        cfg = self.cfg
        start = time.monotonic()
        summary = RunSummary(run_dir=self.run_dir)
        loaded = {ds.name: load_dataset(ds) for ds in cfg.datasets}
        if any(s is Strategy.PRETRANSLATED for _, _, s in cfg.combinations()) and self.translator is None:
            raise ConfigError("the pretranslated strategy needs a translation provider")

        paths = [records_relpath(d.name, m.name, s) for d, m, s in cfg.combinations()]
        if len(set(paths)) != len(paths):
            raise ConfigError("two dataset/model names collapse to the same records file name; rename one")

        previous = {}
        if (self.run_dir / "manifest.json").is_file():
            previous = {c["key"]: c for c in read_manifest(self.run_dir).get("combinations", [])}

        entries = []
        for ds, model, strategy in cfg.combinations():
            data = loaded[ds.name]
            key = _combo_key(ds.name, model.name, strategy)
            rel = records_relpath(ds.name, model.name, strategy)
            combo_hash = self._combo_hash(data, model, strategy)
            prior = previous.get(key)
            path = self.run_dir / rel
            if (
                prior
                and prior.get("combo_hash") == combo_hash
                and prior.get("status") == "complete"
                and path.is_file()
                and _file_digest(path) == prior.get("records_sha256")
            ):
                log.info("skipping %s: records present and verified", key)
                summary.combos_skipped += 1
                entries.append(prior)
                self._tally(summary, read_records(path))
                continue

            log.info("running %s on %d example(s)", key, len(data.examples))
            combo = _Combo(self, data, model, strategy)
            with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
                records = list(pool.map(combo.run_one, data.examples))
            body = "".join(r.to_json() + "\n" for r in records)
            atomic_write_text(path, body)
            summary.combos_run += 1
            n_failed = sum(r.status == FAILED for r in records)
            entries.append(
                {
                    "key": key,
                    "dataset": ds.name,
                    "task": ds.task,
                    "model": model.name,
                    "model_id": model.model_id,
                    "strategy": strategy.value,
                    "records": rel,
                    "records_sha256": hashlib.sha256(body.encode("utf-8")).hexdigest(),
                    "combo_hash": combo_hash,
                    "n_records": len(records),
                    "n_failed": n_failed,
                    "n_parse_failures": sum(r.parse_failure for r in records),
                    "n_empty_translation": sum(r.empty_translation for r in records),
                    "n_lenient": sum((r.parsed or {}).get("parse_mode_used") == "lenient" for r in records),
                    "status": "complete" if n_failed == 0 else "partial",
                }
            )
            self._tally(summary, records)
            if summary.n_records and summary.n_failed / summary.n_records > cfg.max_failure_fraction:
                summary.aborted = True
                log.error(
                    "aborting: %d of %d records failed (threshold %.0f%%)",
                    summary.n_failed,
                    summary.n_records,
                    100 * cfg.max_failure_fraction,
                )
                break

        self._write_manifest(loaded, entries, summary)
        summary.network_calls = sum(g.network_calls for g in self.gateways.values())
        summary.cache_hits = sum(g.cache_hits for g in self.gateways.values())
        summary.translation_calls = self.translator.network_calls if self.translator else 0
        stats = {**asdict(summary), "run_dir": str(self.run_dir), "wall_seconds": round(time.monotonic() - start, 3)}
        atomic_write_text(self.run_dir / "stats.json", json.dumps(stats, indent=2, sort_keys=True) + "\n")
        if summary.aborted:
            raise RunAborted(f"failure fraction exceeded {cfg.max_failure_fraction}; see {self.run_dir}")
        return summary

    @staticmethod
    def _tally(summary: RunSummary, records: list[RunRecord]) -> None:
        summary.n_records += len(records)
        summary.n_failed += sum(r.status == FAILED for r in records)
        summary.n_parse_failures += sum(r.parse_failure for r in records)

    def _write_manifest(self, loaded: Mapping[str, LoadedDataset], entries: list, summary: RunSummary) -> None:
        cfg = self.cfg
        manifest = {
            "format_version": MANIFEST_VERSION,
            "config_hash": cfg.config_hash(),
            "template_hashes": self.templates.digests(),
            "decoding": cfg.decoding(),
            "parse_mode": cfg.parse_mode,
            "exclude_parse_failures": cfg.exclude_parse_failures,
            "two_call_mode": cfg.two_call_mode,
            "translation_provider": cfg.translation.provider_name,
            "datasets": {name: d.manifest_entry() for name, d in loaded.items()},
            "combinations": entries,
            "counts": {
                "records": summary.n_records,
                "failed": summary.n_failed,
                "parse_failures": summary.n_parse_failures,
            },
            "status": "aborted" if summary.aborted else ("partial" if summary.n_failed else "complete"),
        }
        atomic_write_text(self.run_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def run_experiment(
    cfg: RunConfig,
    *,
    mock: bool = False,
    gateways: Mapping[str, LLMGateway] | None = None,
    translator: Translator | None = None,
) -> RunSummary:
    """Execute every configured combination and write the run directory."""
    if gateways is None:
        gateways = build_gateways(cfg, mock=mock)
    needs_mt = any(s is Strategy.PRETRANSLATED for _, _, s in cfg.combinations())
    if translator is None and needs_mt:
        translator = build_translator(cfg, mock=mock)
    return ExperimentRunner(cfg, gateways, translator).run()
