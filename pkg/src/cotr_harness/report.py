"""Aggregate run records into classification and generation tables.

Every number is recomputed from the persisted records: classification cells
via :func:`metrics.error_rate`, averages via :func:`metrics.weighted_average`
over the per-dataset cells, generation cells via :func:`metrics.corpus_rouge_l`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .cache import atomic_write_text
from .errors import IncompatibleRunsError
from .metrics import ErrorStats, corpus_rouge_l, error_rate, format_pct, tokenize, weighted_average
from .prompts import CLASSIFICATION_STRATEGIES, GENERATION_STRATEGIES, Strategy
from .runner import FAILED, RunRecord, read_manifest, read_records

COLUMN_TITLES = {
    Strategy.STANDARD: "Standard",
    Strategy.COTR: "CoTR",
    Strategy.PRETRANSLATED: "Translate-Test",
    Strategy.DIRECT_GEN: "Without Translation",
    Strategy.HALF_TRANSLATION: "Half Translation",
    Strategy.FULL_TRANSLATION: "Full Translation",
}


@dataclass(frozen=True)
class ClassificationCell:
    model: str
    dataset: str
    strategy: Strategy
    stats: ErrorStats
    n_failed: int = 0
    n_lenient: int = 0
    n_empty_translation: int = 0


@dataclass(frozen=True)
class GenerationCell:
    model: str
    dataset: str
    strategy: Strategy
    rouge_pct: float
    n: int
    n_parse_failures: int = 0
    n_failed: int = 0
    n_lenient: int = 0


@dataclass
class ReportTable:
    models: list[str] = field(default_factory=list)
    classification_datasets: list[str] = field(default_factory=list)
    generation_datasets: list[str] = field(default_factory=list)
    classification: dict[tuple[str, str, Strategy], ClassificationCell] = field(default_factory=dict)
    averages: dict[tuple[str, Strategy], float] = field(default_factory=dict)
    generation: dict[tuple[str, str, Strategy], GenerationCell] = field(default_factory=dict)

    def classification_strategies(self) -> list[Strategy]:
        used = {k[2] for k in self.classification}
        return [s for s in CLASSIFICATION_STRATEGIES if s in used]

    def generation_strategies(self) -> list[Strategy]:
        used = {k[2] for k in self.generation}
        return [s for s in GENERATION_STRATEGIES if s in used]

    def values(self) -> dict[str, float]:
        """Flat ``cell id -> value`` map, used for diffs."""
        out = {}
        for (m, d, s), cell in self.classification.items():
            if cell.stats.n_total:
                out[f"error/{m}/{d}/{s.value}"] = cell.stats.error_pct
        for (m, s), value in self.averages.items():
            out[f"error/{m}/AVERAGE/{s.value}"] = value
        for (m, d, s), cell in self.generation.items():
            out[f"rouge_l/{m}/{d}/{s.value}"] = cell.rouge_pct
        return out


def _append_unique(seq: list[str], value: str) -> None:
    if value not in seq:
        seq.append(value)


def _load_runs(run_dirs: Sequence[str | Path]) -> tuple[list[RunRecord], bool]:
    datasets: dict[str, dict] = {}
    exclude_flags = set()
    seen_combos: dict[str, str] = {}
    records: list[RunRecord] = []
    for run_dir in run_dirs:
        manifest = read_manifest(run_dir)
        exclude_flags.add(bool(manifest.get("exclude_parse_failures", False)))
        for name, entry in manifest.get("datasets", {}).items():
            ident = {k: entry.get(k) for k in ("task", "labels", "schema")}
            if name in datasets and datasets[name] != ident:
                raise IncompatibleRunsError(f"dataset {name!r} has different labels or schema across runs")
            datasets[name] = ident
        for combo in manifest.get("combinations", []):
            if combo["key"] in seen_combos:
                raise IncompatibleRunsError(
                    f"combination {combo['key']} appears in both {seen_combos[combo['key']]} and {run_dir}"
                )
            seen_combos[combo["key"]] = str(run_dir)
            records.extend(read_records(Path(run_dir) / combo["records"]))
    if len(exclude_flags) > 1:
        raise IncompatibleRunsError("runs disagree on whether parse failures are excluded from denominators")
    return records, exclude_flags.pop() if exclude_flags else False


def build_table(records: Iterable[RunRecord], exclude_parse_failures: bool = False) -> ReportTable:
    table = ReportTable()
    groups: dict[tuple[str, str, Strategy], list[RunRecord]] = {}
    for r in records:
        key = (r.model, r.dataset, Strategy(r.strategy))
        groups.setdefault(key, []).append(r)
        _append_unique(table.models, r.model)
        if r.task == "generation":
            _append_unique(table.generation_datasets, r.dataset)
        else:
            _append_unique(table.classification_datasets, r.dataset)

    for key, recs in groups.items():
        model, dataset, strategy = key
        scored = [r for r in recs if r.status != FAILED]
        n_failed = len(recs) - len(scored)
        n_lenient = sum((r.parsed or {}).get("parse_mode_used") == "lenient" for r in scored)
        if strategy.is_generation:
            if not scored:
                continue
            pairs = [(tokenize(r.candidate or ""), tokenize(r.gold)) for r in scored]
            table.generation[key] = GenerationCell(
                model,
                dataset,
                strategy,
                rouge_pct=corpus_rouge_l(pairs),
                n=len(scored),
                n_parse_failures=sum(r.parse_failure for r in scored),
                n_failed=n_failed,
                n_lenient=n_lenient,
            )
        else:
            if scored:
                preds = [None if r.parse_failure else r.prediction for r in scored]
                stats = error_rate(preds, [r.gold for r in scored], exclude_parse_failures=exclude_parse_failures)
            else:
                stats = ErrorStats(0, 0, 0)
            table.classification[key] = ClassificationCell(
                model,
                dataset,
                strategy,
                stats,
                n_failed=n_failed,
                n_lenient=n_lenient,
                n_empty_translation=sum(r.empty_translation for r in scored),
            )

    for model in table.models:
        for strategy in CLASSIFICATION_STRATEGIES:
            parts = [
                (cell.stats.error_pct, cell.stats.n_total)
                for (m, _, s), cell in table.classification.items()
                if m == model and s is strategy and cell.stats.n_total > 0
            ]
            if parts:
                table.averages[(model, strategy)] = weighted_average(parts)
    return table


def generate_report(run_dirs: Sequence[str | Path], out_dir: str | Path | None = None) -> ReportTable:
    """Build the table from one or more run directories and write ``report.txt`` / ``report.tsv``."""
    records, exclude = _load_runs(run_dirs)
    table = build_table(records, exclude)
    target = Path(out_dir) if out_dir else Path(run_dirs[0])
    atomic_write_text(target / "report.txt", render_text(table))
    atomic_write_text(target / "report.tsv", render_tsv(table))
    return table


# ---------------------------------------------------------------------------
# rendering


def _grid(rows: list[list[str]], left: int = 2) -> list[str]:
    """Align columns; the first ``left`` columns are text, the rest numbers."""
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [c.ljust(w) for c, w in zip(row[:left], widths[:left])]
        cells += [c.rjust(w) for c, w in zip(row[left:], widths[left:])]
        lines.append("  ".join(cells).rstrip())
    return lines


def _fmt(value: float | None) -> str:
    return "-" if value is None else format_pct(value)


def render_text(table: ReportTable) -> str:
    out: list[str] = []
    strategies = table.classification_strategies()
    if table.classification:
        out.append("Classification error rate (%), averages weighted by evaluated examples")
        header = ["Model", "Dataset"] + [COLUMN_TITLES[s] for s in strategies]
        header += [f"Avg {COLUMN_TITLES[s]}" for s in strategies]
        rows = [header]
        for model in table.models:
            datasets = [d for d in table.classification_datasets if any(k[:2] == (model, d) for k in table.classification)]
            for i, dataset in enumerate(datasets):
                row = [model if i == 0 else "", dataset]
                for s in strategies:
                    cell = table.classification.get((model, dataset, s))
                    row.append(_fmt(cell.stats.error_pct) if cell and cell.stats.n_total else "-")
                for s in strategies:
                    row.append(_fmt(table.averages.get((model, s))) if i == 0 else "")
                rows.append(row)
        out += _grid(rows)
        out.append("")

    gen_strategies = table.generation_strategies()
    if table.generation:
        out.append("Headline generation ROUGE-L F1 (%)")
        rows = [["Model", "Dataset"] + [COLUMN_TITLES[s] for s in gen_strategies]]
        for model in table.models:
            for dataset in table.generation_datasets:
                if not any(k[:2] == (model, dataset) for k in table.generation):
                    continue
                row = [model, dataset]
                for s in gen_strategies:
                    cell = table.generation.get((model, dataset, s))
                    row.append(_fmt(cell.rouge_pct) if cell else "-")
                rows.append(row)
        out += _grid(rows)
        out.append("")

    details = [["Model", "Dataset", "Strategy", "n", "wrong", "unparsed", "failed", "lenient", "empty-tr"]]
    for (m, d, s), cell in table.classification.items():
        st = cell.stats
        details.append(
            [m, d, s.value, str(st.n_total), str(st.n_wrong), str(st.n_parse_failures), str(cell.n_failed),
             str(cell.n_lenient), str(cell.n_empty_translation)]
        )
    for (m, d, s), cell in table.generation.items():
        details.append(
            [m, d, s.value, str(cell.n), "-", str(cell.n_parse_failures), str(cell.n_failed), str(cell.n_lenient), "-"]
        )
    if len(details) > 1:
        out.append("Cell details")
        out += _grid(details, left=3)
        out.append("")
    return "\n".join(out)


TSV_COLUMNS = ["section", "model", "dataset", "strategy", "value", "n", "n_wrong", "n_parse_failures", "n_failed"]


def render_tsv(table: ReportTable) -> str:
    lines = ["\t".join(TSV_COLUMNS)]
    for (m, d, s), cell in table.classification.items():
        st = cell.stats
        value = repr(st.error_pct) if st.n_total else ""
        lines.append("\t".join(["error_pct", m, d, s.value, value, str(st.n_total), str(st.n_wrong),
                                str(st.n_parse_failures), str(cell.n_failed)]))
    for (m, s), value in table.averages.items():
        n = sum(c.stats.n_total for (cm, _, cs), c in table.classification.items() if cm == m and cs is s)
        lines.append("\t".join(["error_pct_weighted_avg", m, "*", s.value, repr(value), str(n), "", "", ""]))
    for (m, d, s), cell in table.generation.items():
        lines.append("\t".join(["rouge_l_f1_pct", m, d, s.value, repr(cell.rouge_pct), str(cell.n), "",
                                str(cell.n_parse_failures), str(cell.n_failed)]))
    return "\n".join(lines) + "\n"


def render_diff(a: ReportTable, b: ReportTable, label_a: str = "A", label_b: str = "B") -> str:
    va, vb = a.values(), b.values()
    keys = list(va) + [k for k in vb if k not in va]
    rows = [["Cell", "", label_a, label_b, "Delta"]]
    for key in keys:
        x, y = va.get(key), vb.get(key)
        if x is None or y is None:
            delta = "-"
        else:
            d = y - x
            delta = ("-" if d < 0 else "+") + format_pct(abs(d))
        rows.append([key, "", _fmt(x), _fmt(y), delta])
    return "\n".join(_grid(rows, left=2)) + "\n"


def diff_runs(run_a: str | Path, run_b: str | Path) -> str:
    ra, ea = _load_runs([run_a])
    rb, eb = _load_runs([run_b])
    return render_diff(build_table(ra, ea), build_table(rb, eb), str(run_a), str(run_b))


def table_to_json(table: ReportTable) -> str:
    return json.dumps(table.values(), indent=2, sort_keys=True)
