"""Command-line entry point: ``cotr-harness {run,report,score,translate-cache,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import RunConfig, apply_overrides, load_config
from .errors import HarnessError
from .metrics import corpus_rouge_l, error_rate, format_pct, tokenize
from .parsing import PARSE_MODES
from .prompts import Strategy, TemplateSet, TEMPLATE_NAMES
from .report import diff_runs, generate_report, render_text
from .runner import RunAborted, build_translator, load_dataset, run_experiment

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3

LIVE_MAX_EXAMPLES = 10

log = logging.getLogger("cotr_harness")


def _add_selection(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, type=Path, help="TOML run configuration")
    p.add_argument("--dataset", action="append", metavar="NAME", help="only this dataset (repeatable)")
    p.add_argument("--model", action="append", metavar="NAME", help="only this model (repeatable)")
    p.add_argument("--strategy", action="append", metavar="NAME", help="only this strategy (repeatable)")
    p.add_argument("--limit", type=int, metavar="N", help="cap examples per dataset")
    p.add_argument("--seed", type=int, metavar="N", help="override every dataset's sampling seed")
    p.add_argument("--cache-dir", type=Path, metavar="PATH")
    p.add_argument("--mock", action="store_true", help="use the fixture-driven mock backends")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotr-harness",
        description="Compare direct, chain-of-translation and translate-and-test prompting.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a configured experiment grid")
    _add_selection(run)
    run.add_argument("--out", type=Path, metavar="PATH", help="run directory (default: config output_dir)")
    run.add_argument("--parse-mode", choices=PARSE_MODES)
    run.add_argument("--parallelism", type=int, metavar="N")
    run.add_argument(
        "--live",
        action="store_true",
        help=f"wiring smoke test against real endpoints: one model, at most {LIVE_MAX_EXAMPLES} examples",
    )

    rep = sub.add_parser("report", help="aggregate run directories into tables")
    rep.add_argument("runs", nargs="*", type=Path, metavar="RUN_DIR")
    rep.add_argument("--out", type=Path, metavar="PATH", help="where to write report.txt/report.tsv")
    rep.add_argument("--diff", nargs=2, type=Path, metavar=("RUN_A", "RUN_B"), help="compare two runs cell by cell")

    score = sub.add_parser("score", help="score files directly (one item per line)")
    score.add_argument("--candidates", type=Path, help="generated headlines")
    score.add_argument("--references", type=Path, help="reference headlines")
    score.add_argument("--predictions", type=Path, help="predicted labels (empty line = unparsed)")
    score.add_argument("--golds", type=Path, help="gold labels")

    tc = sub.add_parser("translate-cache", help="pre-warm the machine-translation cache")
    _add_selection(tc)

    val = sub.add_parser("validate", help="check config, datasets and templates without calling any model")
    _add_selection(val)
    return parser


def _load(args: argparse.Namespace, **extra) -> RunConfig:
    cfg = load_config(args.config)
    return apply_overrides(
        cfg,
        datasets=args.dataset,
        models=args.model,
        strategies=args.strategy,
        limit=args.limit,
        seed=args.seed,
        cache_dir=args.cache_dir,
        **extra,
    )


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args, output_dir=args.out, parse_mode=args.parse_mode, parallelism=args.parallelism)
    if args.live:
        if args.mock:
            raise HarnessError("--live and --mock are mutually exclusive")
        limit = min(args.limit if args.limit is not None else LIVE_MAX_EXAMPLES, LIVE_MAX_EXAMPLES)
        cfg = apply_overrides(cfg, models=[cfg.models[0].name], limit=limit)
        print(f"live smoke run: model {cfg.models[0].name}, <= {limit} examples per dataset; no numeric checks")
    try:
        summary = run_experiment(cfg, mock=args.mock)
    except RunAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    print(
        f"{summary.n_records} records ({summary.n_failed} failed, {summary.n_parse_failures} unparsed) "
        f"in {summary.run_dir}; {summary.combos_run} combination(s) run, {summary.combos_skipped} resumed; "
        f"{summary.network_calls} model call(s), {summary.translation_calls} translation call(s), "
        f"{summary.cache_hits} cache hit(s)"
    )
    return summary.exit_status


def cmd_report(args: argparse.Namespace) -> int:
    if args.diff:
        sys.stdout.write(diff_runs(*args.diff))
        return EXIT_OK
    if not args.runs:
        raise HarnessError("report needs at least one RUN_DIR (or --diff RUN_A RUN_B)")
    table = generate_report(args.runs, args.out)
    sys.stdout.write(render_text(table))
    return EXIT_OK


def _lines(path: Path) -> list[str]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise HarnessError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return text.splitlines()


def cmd_score(args: argparse.Namespace) -> int:
    did = False
    if args.candidates or args.references:
        if not (args.candidates and args.references):
            raise HarnessError("--candidates and --references must be given together")
        cands, refs = _lines(args.candidates), _lines(args.references)
        if len(cands) != len(refs):
            raise HarnessError(f"{len(cands)} candidates vs {len(refs)} references")
        value = corpus_rouge_l([(tokenize(c), tokenize(r)) for c, r in zip(cands, refs)])
        print(f"ROUGE-L F1 (%): {format_pct(value)}  (n={len(cands)})")
        did = True
    if args.predictions or args.golds:
        if not (args.predictions and args.golds):
            raise HarnessError("--predictions and --golds must be given together")
        preds = [p.strip() or None for p in _lines(args.predictions)]
        golds = [g.strip() for g in _lines(args.golds)]
        stats = error_rate(preds, golds)
        print(
            f"Error rate (%): {format_pct(stats.error_pct)}  "
            f"(wrong={stats.n_wrong}, unparsed={stats.n_parse_failures}, n={stats.n_total})"
        )
        did = True
    if not did:
        raise HarnessError("score needs --candidates/--references and/or --predictions/--golds")
    return EXIT_OK


def cmd_translate_cache(args: argparse.Namespace) -> int:
    cfg = _load(args)
    datasets = [d for d in cfg.datasets if Strategy.PRETRANSLATED in cfg.strategies_for(d)]
    if not datasets:
        print("no dataset uses the pretranslated strategy; nothing to do")
        return EXIT_OK
    translator = build_translator(cfg, mock=args.mock)
    tc = cfg.translation
    failures = 0
    total = 0
    for ds in datasets:
        for ex in load_dataset(ds).examples:
            total += 1
            try:
                translator.translate(ex.text, tc.source_lang, tc.target_lang)
            except HarnessError as exc:
                failures += 1
                log.warning("%s/%s: %s", ds.name, ex.id, exc)
    print(f"{total - failures}/{total} translations cached ({translator.network_calls} provider call(s))")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    templates = TemplateSet(cfg.templates_dir)
    for name in TEMPLATE_NAMES:
        templates.get(name)
    for ds in cfg.datasets:
        loaded = load_dataset(ds)
        strategies = ", ".join(s.value for s in cfg.strategies_for(ds))
        models = ", ".join(m.name for m in cfg.models_for(ds))
        print(
            f"dataset {ds.name}: {loaded.n_loaded} rows, {len(loaded.examples)} sampled"
            f" ({loaded.n_skipped_rows} skipped); strategies: {strategies}; models: {models}"
        )
    if args.mock:
        for what, path in (("chat", cfg.mock_chat_fixture), ("translation", cfg.mock_translation_fixture)):
            if path is None or not Path(path).is_file():
                raise HarnessError(f"mock {what} fixture not found: {path}")
    print(f"ok: {len(cfg.combinations())} combination(s), {len(TEMPLATE_NAMES)} templates")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "report": cmd_report,
    "score": cmd_score,
    "translate-cache": cmd_translate_cache,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
