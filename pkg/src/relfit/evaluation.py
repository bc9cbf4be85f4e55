"""Rank correlation, per-dataset reports and the relation-combination grid."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .model import (
    BenchmarkDataset,
    ConceptLexicon,
    EmbeddingTable,
    EvalReport,
    RelationCode,
    RelationGraph,
    RelfitError,
    RetrofitConfig,
    SkippedPair,
    relation_label,
)
from .relatedness import ScoredPair, score_pairs
from .retrofit import build_neighbor_lists, retrofit

log = logging.getLogger(__name__)

BASELINE_LABEL = "baseline"


class UndefinedCorrelationError(RelfitError):
    pass


def rank_transform(values: Sequence[float]) -> np.ndarray:
    """1-based fractional ranks; ties share the mean of their positions.

    >>> rank_transform([1, 2, 2, 4]).tolist()
    [1.0, 2.5, 2.5, 4.0]
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise RelfitError("rank_transform needs a non-empty 1-d sequence")
    if not np.all(np.isfinite(x)):
        raise RelfitError("non-finite value")
    n = x.size
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    breaks = np.flatnonzero(xs[1:] != xs[:-1]) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [n]))
    ranks = np.empty(n)
    ranks[order] = np.repeat((starts + 1 + ends) / 2.0, ends - starts)
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of the fractional ranks of ``x`` and ``y``."""
    if len(x) != len(y):
        raise RelfitError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise UndefinedCorrelationError("undefined correlation: fewer than 2 values")
    dx = rank_transform(x)
    dy = rank_transform(y)
    dx -= dx.mean()
    dy -= dy.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("undefined correlation: constant ranks")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def evaluate(scored: Sequence[ScoredPair], dataset_name: str) -> EvalReport:
    """Correlate predicted with gold scores over the pairs that were scored."""
    if not scored:
        raise RelfitError("nothing to evaluate")
    pred, gold, skipped = [], [], []
    for i, p in enumerate(scored):
        if p.predicted is None:
            skipped.append(SkippedPair(i, p.term1, p.term2, p.skip_reason))
        else:
            pred.append(p.predicted)
            gold.append(p.gold)
    rho, note = None, None
    try:
        rho = spearman(pred, gold)
    except UndefinedCorrelationError as exc:
        note = str(exc)
    return EvalReport(dataset_name, rho, len(pred), len(scored), tuple(skipped), note)


def evaluate_table(table: EmbeddingTable, dataset: BenchmarkDataset, policy: str = "skip",
                   require_cuis: bool = False) -> EvalReport:
    return evaluate(score_pairs(table, dataset, policy, require_cuis), dataset.name)


@dataclass(frozen=True)
class GridSpec:
    """One grid experiment: a row per relation set, a column per dataset.

    ``relation_sets`` may be given as any iterables of codes; display labels
    keep the order they were given in.
    """

    relation_sets: tuple
    datasets: tuple
    base_table: EmbeddingTable
    cfg: RetrofitConfig = RetrofitConfig()
    include_baseline: bool = True
    policy: str = "skip"
    require_cuis: bool = False
    display: tuple = field(init=False)

    def __post_init__(self):
        sets, display, seen = [], [], set()
        for codes in self.relation_sets:
            codes = [c if isinstance(c, RelationCode) else RelationCode.strict(c)
                     for c in codes]
            fs = frozenset(codes)
            if not fs:
                raise RelfitError("empty relation set")
            if fs in seen:
                raise RelfitError(f"duplicate relation set {relation_label(fs)}")
            seen.add(fs)
            sets.append(fs)
            display.append("+".join(dict.fromkeys(str(c) for c in codes)))
        if not sets and not self.include_baseline:
            raise RelfitError("grid has no rows")
        if not self.datasets:
            raise RelfitError("grid has no datasets")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise RelfitError("dataset names must be unique")
        object.__setattr__(self, "relation_sets", tuple(sets))
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "display", tuple(display))


@dataclass(frozen=True)
class GridReport:
    rows: Dict[str, Dict[str, EvalReport]]
    display: Dict[str, str]
    datasets: tuple
    best_per_dataset: Dict[str, Optional[str]]


def _failed(dataset: BenchmarkDataset, exc: Exception) -> EvalReport:
    return EvalReport(dataset.name, None, 0, len(dataset), (), f"error: {exc}")


def _score_row(table: EmbeddingTable, spec: GridSpec) -> Dict[str, EvalReport]:
    row = {}
    for ds in spec.datasets:
        try:
            row[ds.name] = evaluate_table(table, ds, spec.policy, spec.require_cuis)
        except RelfitError as exc:
            log.error("cell %s failed: %s", ds.name, exc)
            row[ds.name] = _failed(ds, exc)
    return row


def _run_cell_row(spec: GridSpec, codes: frozenset, graph: RelationGraph,
                  lexicon: ConceptLexicon) -> Dict[str, EvalReport]:
    try:
        lists = build_neighbor_lists(graph, lexicon, codes)
        result = retrofit(spec.base_table, lists, spec.cfg)
    except RelfitError as exc:
        log.error("row %s failed: %s", relation_label(codes), exc)
        return {ds.name: _failed(ds, exc) for ds in spec.datasets}
    log.info("row %s: %d terms updated", relation_label(codes), result.updated_count)
    return _score_row(result.table, spec)


def _best(rows: Dict[str, Dict[str, EvalReport]], name: str) -> Optional[str]:
    best, best_val = None, -math.inf
    for label in sorted(rows):
        v = rows[label][name].spearman
        if v is not None and v > best_val:
            best, best_val = label, v
    return best


def run_relation_grid(spec: GridSpec, graph: RelationGraph, lexicon: ConceptLexicon,
                      jobs: int = 1) -> GridReport:
    """Retrofit once per relation set and evaluate every dataset.

    Failures are isolated per cell; the report always covers the full grid.
    Row order is baseline first, then relation sets in the order given.
    """
    labels = [relation_label(s) for s in spec.relation_sets]
    if jobs > 1 and len(spec.relation_sets) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell_row, spec, s, graph, lexicon)
                       for s in spec.relation_sets]
            results = [f.result() for f in futures]
    else:
        results = [_run_cell_row(spec, s, graph, lexicon) for s in spec.relation_sets]

    rows: Dict[str, Dict[str, EvalReport]] = {}
    display: Dict[str, str] = {}
    if spec.include_baseline:
        rows[BASELINE_LABEL] = _score_row(spec.base_table, spec)
        display[BASELINE_LABEL] = BASELINE_LABEL
    for label, shown, row in zip(labels, spec.display, results):
        rows[label] = row
        display[label] = shown
    names = tuple(d.name for d in spec.datasets)
    best = {n: _best(rows, n) for n in names}
    return GridReport(rows, display, names, best)


def format_rho(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def grid_table(report: GridReport, mark_best: bool = True) -> str:
    """TSV rendering: one row per relation set, one column per dataset.

    With ``mark_best`` the best cell of each column carries a trailing ``*``.
    """
    lines = ["\t".join(("relations",) + report.datasets)]
    for label, row in report.rows.items():
        cells = [report.display[label]]
        for name in report.datasets:
            cell = format_rho(row[name].spearman)
            if mark_best and report.best_per_dataset[name] == label:
                cell += "*"
            cells.append(cell)
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def report_record(report: EvalReport, label: Optional[str] = None, best: bool = False) -> dict:
    rec = {
        "dataset": report.dataset_name,
        "spearman": report.spearman,
        "pairs_scored": report.pairs_scored,
        "pairs_total": report.pairs_total,
        "skipped": report.skip_histogram(),
    }
    if report.note:
        rec["note"] = report.note
    if label is not None:
        rec["label"] = label
        rec["best"] = best
    return rec


def grid_records(report: GridReport) -> List[dict]:
    out = []
    for label, row in report.rows.items():
        for name in report.datasets:
            rec = report_record(row[name], label, report.best_per_dataset[name] == label)
            rec["display"] = report.display[label]
            out.append(rec)
    return out
