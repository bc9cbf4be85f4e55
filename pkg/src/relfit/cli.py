"""Command-line interface: ``relfit {ingest,retrofit,score,eval,grid}``.

Exit codes: 0 success, 1 input or validation error, 2 I/O error.
Diagnostics go to stderr; set ``RELFIT_LOG`` to error, warn, info or debug.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from . import __version__
from .evaluation import (
    GridSpec,
    evaluate_table,
    format_rho,
    grid_records,
    grid_table,
    report_record,
    run_relation_grid,
)
from .ingest import (
    BenchmarkSchema,
    ConsoColumns,
    RelColumns,
    parse_benchmark,
    parse_embeddings,
    parse_neighbor_lists,
    parse_rrf_conso,
    parse_rrf_rel,
    write_embeddings,
    write_neighbor_lists,
)
from .model import RelationCode, RelfitError, RetrofitConfig, relation_label
from .relatedness import score_pairs
from .retrofit import build_neighbor_lists, retrofit

log = logging.getLogger("relfit")

FORMATS = """\
file formats:
  embeddings   optional header "count dim", then one "term<TAB>f1 f2 ... fd"
               line per term (UTF-8; terms are case-folded and whitespace-collapsed)
  neighbors    "term<TAB>neighbor1<TAB>neighbor2..." per line
  MRCONSO/MRREL pipe-delimited UMLS RRF rows (trailing pipe allowed); default
               columns CUI=0 LAT=1 TS=2 STR=14 and CUI1=0 REL=3 CUI2=4
  benchmark    comma- or tab-separated with a header row naming
               term1, cui1, term2, cui2, score (override with --columns)
  --benchmark  NAME:MIN:MAX:PATH, e.g. MayoSRS:1:10:data/mayo.tsv
"""

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("RELFIT_LOG", "warn").lower(), logging.WARNING)
    for h in list(log.handlers):
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("relfit: %(levelname)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(level)
    log.propagate = False


# -- argument helpers ------------------------------------------------------------

def parse_codes(text: str) -> List[RelationCode]:
    """``"RQ+RN,SY"`` → codes; rejects unknown codes."""
    parts = [p for p in text.replace(",", "+").split("+") if p.strip()]
    if not parts:
        raise RelfitError("no relations selected")
    return [RelationCode.strict(p) for p in parts]


def parse_sets(text: str) -> List[List[RelationCode]]:
    """``"RN;RQ+RN+SY"`` → list of code lists."""
    return [parse_codes(chunk) for chunk in text.split(";") if chunk.strip()]


def _cols(text: Optional[str], n: int) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        cols = [int(c) for c in text.split(",")]
    except ValueError:
        raise RelfitError(f"bad column list {text!r}") from None
    if len(cols) != n:
        raise RelfitError(f"expected {n} column indices, got {text!r}")
    return cols


@dataclass
class BenchmarkRef:
    name: str
    path: str
    scale: tuple
    schema: BenchmarkSchema = BenchmarkSchema()

    @classmethod
    def from_flag(cls, text: str, schema: BenchmarkSchema) -> "BenchmarkRef":
        parts = text.split(":", 3)
        if len(parts) != 4 or not parts[0] or not parts[3]:
            raise RelfitError(f"--benchmark expects NAME:MIN:MAX:PATH, got {text!r}")
        try:
            scale = (float(parts[1]), float(parts[2]))
        except ValueError:
            raise RelfitError(f"bad scale in --benchmark {text!r}") from None
        return cls(parts[0], parts[3], scale, schema)

    def load(self):
        with open(self.path, encoding="utf-8") as f:
            try:
                return parse_benchmark(f, self.name, self.scale, self.schema)
            except RelfitError as exc:
                raise RelfitError(f"{self.path}: {exc}") from None


def _retrofit_config(args) -> RetrofitConfig:
    return RetrofitConfig(iterations=args.iterations, alpha=args.alpha, beta=args.beta,
                          tolerance=args.tolerance)


def _load_embeddings(path: str):
    with open(path, encoding="utf-8") as f:
        try:
            return parse_embeddings(f)
        except RelfitError as exc:
            raise RelfitError(f"{path}: {exc}") from None


def _load_graph(path: str, cols: RelColumns, allowed=None):
    with open(path, encoding="utf-8") as f:
        try:
            return parse_rrf_rel(f, cols, allowed)
        except RelfitError as exc:
            raise RelfitError(f"{path}: {exc}") from None


def _load_lexicon(path: str, cols: ConsoColumns, language: Optional[str]):
    with open(path, encoding="utf-8") as f:
        try:
            return parse_rrf_conso(f, cols, language)
        except RelfitError as exc:
            raise RelfitError(f"{path}: {exc}") from None


def _rrf_columns(args):
    conso = _cols(args.conso_cols, 4)
    rel = _cols(args.rel_cols, 3)
    return (ConsoColumns(*conso) if conso else ConsoColumns(),
            RelColumns(*rel) if rel else RelColumns())


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _language(value: str) -> Optional[str]:
    return None if value.lower() in ("", "any", "none") else value


def _neighbors_from_rrf(args):
    if not (args.rel and args.conso and args.relations):
        raise RelfitError("need --neighbors, or all of --rel, --conso and --relations")
    codes = parse_codes(args.relations)
    conso_cols, rel_cols = _rrf_columns(args)
    graph = _load_graph(args.rel, rel_cols, codes)
    lexicon = _load_lexicon(args.conso, conso_cols, _language(args.language))
    return build_neighbor_lists(graph, lexicon, codes)


# -- subcommands -----------------------------------------------------------------

def cmd_ingest(args) -> int:
    lists = _neighbors_from_rrf(args)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        write_neighbor_lists(lists, f)
    log.info("wrote %d neighbor lists to %s", len(lists), args.out)
    return 0


def cmd_retrofit(args) -> int:
    cfg = _retrofit_config(args)
    table = _load_embeddings(args.embeddings)
    if args.neighbors:
        with open(args.neighbors, encoding="utf-8") as f:
            try:
                lists = parse_neighbor_lists(f)
            except RelfitError as exc:
                raise RelfitError(f"{args.neighbors}: {exc}") from None
    else:
        lists = _neighbors_from_rrf(args)
    result = retrofit(table, lists, cfg)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        write_embeddings(result.table, f, header=args.header)
    manifest = {
        "terms": len(table),
        "dim": table.dim,
        "iterations": cfg.iterations,
        "sweeps": result.sweeps,
        "alpha": cfg.alpha,
        "beta": cfg.beta.value,
        "tolerance": cfg.tolerance,
        "objective_trace": list(result.objective_trace),
        "updated_count": result.updated_count,
        "skipped_count": len(result.skipped_terms),
        "skipped_terms": list(result.skipped_terms),
        "nonreciprocal_links": result.nonreciprocal_links,
    }
    _write_json(args.manifest or args.out + ".manifest.json", manifest)
    log.info("retrofitted %d of %d terms", result.updated_count, len(table))
    return 0


def _benchmarks(args) -> List[BenchmarkRef]:
    schema = BenchmarkSchema.from_string(args.columns) if args.columns else BenchmarkSchema()
    return [BenchmarkRef.from_flag(b, schema) for b in args.benchmark or []]


def cmd_score(args) -> int:
    table = _load_embeddings(args.embeddings)
    refs = _benchmarks(args)
    if not refs:
        raise RelfitError("at least one --benchmark is required")
    lines = ["dataset\tterm1\tterm2\tgold\tpredicted\tskip_reason"]
    for ref in refs:
        for p in score_pairs(table, ref.load(), args.policy, args.require_cuis):
            pred = "" if p.predicted is None else repr(p.predicted)
            lines.append(f"{ref.name}\t{p.term1}\t{p.term2}\t{p.gold!r}\t{pred}\t{p.skip_reason or ''}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    table = _load_embeddings(args.embeddings)
    refs = _benchmarks(args)
    if not refs:
        raise RelfitError("at least one --benchmark is required")
    reports = [evaluate_table(table, ref.load(), args.policy, args.require_cuis) for ref in refs]
    print("dataset\tspearman\tcoverage")
    for r in reports:
        print(f"{r.dataset_name}\t{format_rho(r.spearman)}\t{r.pairs_scored}/{r.pairs_total}")
    if args.report:
        _write_json(args.report, [report_record(r) for r in reports])
    return 0


@dataclass
class RunConfig:
    """Resolved grid-run settings (config file overlaid with flags)."""

    embeddings: str
    conso: str
    rel: str
    benchmarks: List[BenchmarkRef]
    output_dir: Optional[str]
    retrofit: RetrofitConfig = RetrofitConfig()
    relation_sets: List[list] = field(default_factory=list)
    policy: str = "skip"
    require_cuis: bool = False
    include_baseline: bool = True
    language: Optional[str] = "ENG"
    jobs: int = 1
    conso_cols: ConsoColumns = ConsoColumns()
    rel_cols: RelColumns = RelColumns()

    def check_paths(self) -> None:
        for p in [self.embeddings, self.conso, self.rel] + [b.path for b in self.benchmarks]:
            if not os.path.isfile(p):
                raise FileNotFoundError(f"input file not found: {p}")


def _config_file(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        try:
            cfg = json.load(f)
        except json.JSONDecodeError as exc:
            raise RelfitError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise RelfitError(f"{path}: top level must be an object")
    return cfg


def build_run_config(args) -> RunConfig:
    file_cfg = _config_file(args.config) if args.config else {}
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()

    def rel_path(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    paths = file_cfg.get("paths", {})
    rcfg = file_cfg.get("retrofit", {})

    def pick(flag, key, section=file_cfg, default=None):
        return flag if flag is not None else section.get(key, default)

    embeddings = args.embeddings or rel_path(paths.get("embeddings"))
    conso = args.conso or rel_path(paths.get("conso"))
    rel = args.rel or rel_path(paths.get("rel"))
    for name, val in (("embeddings", embeddings), ("conso", conso), ("rel", rel)):
        if not val:
            raise RelfitError(f"missing --{name} (or paths.{name} in --config)")

    if args.benchmark:
        benchmarks = _benchmarks(args)
    else:
        benchmarks = []
        for b in paths.get("benchmarks", []):
            schema = BenchmarkSchema(**b["columns"]) if "columns" in b else BenchmarkSchema()
            try:
                benchmarks.append(BenchmarkRef(b["name"], rel_path(b["path"]),
                                               tuple(map(float, b["scale"])), schema))
            except (KeyError, TypeError, ValueError) as exc:
                raise RelfitError(f"bad benchmark entry in config: {exc}") from None
    if not benchmarks:
        raise RelfitError("at least one benchmark is required")

    if args.sets is not None:
        sets = parse_sets(args.sets)
    else:
        sets = [[RelationCode.strict(c) for c in s] for s in file_cfg.get("relation_sets", [])]

    retro = RetrofitConfig(
        iterations=pick(args.iterations, "iterations", rcfg, 10),
        alpha=float(pick(args.alpha, "alpha", rcfg, 1.0)),
        beta=pick(args.beta, "beta", rcfg, "inverse-degree"),
        tolerance=pick(args.tolerance, "tolerance", rcfg),
    )
    conso_cols = _cols(args.conso_cols, 4) or file_cfg.get("conso_columns")
    rel_cols = _cols(args.rel_cols, 3) or file_cfg.get("rel_columns")
    language = args.language if args.language is not None else file_cfg.get("language", "ENG")
    run = RunConfig(
        embeddings=embeddings, conso=conso, rel=rel, benchmarks=benchmarks,
        output_dir=args.out_dir or rel_path(paths.get("output_dir")),
        retrofit=retro, relation_sets=sets,
        policy=pick(args.policy, "policy", default="skip"),
        require_cuis=bool(args.require_cuis or file_cfg.get("require_cuis", False)),
        include_baseline=not args.no_baseline and file_cfg.get("include_baseline", True),
        language=_language(language or ""),
        jobs=int(pick(args.jobs, "jobs", default=1)),
        conso_cols=ConsoColumns(*conso_cols) if conso_cols else ConsoColumns(),
        rel_cols=RelColumns(*rel_cols) if rel_cols else RelColumns(),
    )
    if run.policy not in ("skip", "fail"):
        raise RelfitError(f"unknown policy {run.policy!r}")
    run.check_paths()
    return run


def cmd_grid(args) -> int:
    run = build_run_config(args)
    table = _load_embeddings(run.embeddings)
    datasets = [b.load() for b in run.benchmarks]
    codes = sorted({c for s in run.relation_sets for c in s}, key=str)
    graph = _load_graph(run.rel, run.rel_cols, codes)
    lexicon = _load_lexicon(run.conso, run.conso_cols, run.language)
    spec = GridSpec(tuple(run.relation_sets), tuple(datasets), table, run.retrofit,
                    include_baseline=run.include_baseline, policy=run.policy,
                    require_cuis=run.require_cuis)
    report = run_relation_grid(spec, graph, lexicon, jobs=run.jobs)
    sys.stdout.write(grid_table(report, mark_best=True))
    if run.output_dir:
        os.makedirs(run.output_dir, exist_ok=True)
        with open(os.path.join(run.output_dir, "grid.tsv"), "w", encoding="utf-8",
                  newline="\n") as f:
            f.write(grid_table(report, mark_best=False))
            best = [report.display[report.best_per_dataset[n]]
                    if report.best_per_dataset[n] else "n/a" for n in report.datasets]
            f.write("\t".join(["best"] + best) + "\n")
        _write_json(os.path.join(run.output_dir, "grid_report.json"), {
            "datasets": list(report.datasets),
            "best_per_dataset": {n: report.best_per_dataset[n] for n in report.datasets},
            "records": grid_records(report),
            "retrofit": {"iterations": run.retrofit.iterations, "alpha": run.retrofit.alpha,
                         "beta": run.retrofit.beta.value, "tolerance": run.retrofit.tolerance},
        })
    return 0


# -- parser ----------------------------------------------------------------------

def _add_retrofit_flags(p, grid: bool = False) -> None:
    p.add_argument("--iterations", type=int, default=None if grid else 10,
                   help="Gauss-Seidel sweeps (default 10)")
    p.add_argument("--alpha", type=float, default=None if grid else 1.0,
                   help="weight of the original vector (default 1.0)")
    p.add_argument("--beta", choices=["inverse-degree", "uniform"],
                   default=None if grid else "inverse-degree",
                   help="neighbor weighting (default inverse-degree)")
    p.add_argument("--tolerance", type=float, default=None,
                   help="stop early once the largest component change is below this")


def _add_rrf_flags(p, grid: bool = False) -> None:
    p.add_argument("--conso", help="MRCONSO-style file")
    p.add_argument("--rel", help="MRREL-style file")
    p.add_argument("--language", default=None if grid else "ENG",
                   help="keep MRCONSO rows with this LAT value; 'any' keeps all (default ENG)")
    p.add_argument("--conso-cols", metavar="CUI,LAT,TS,STR",
                   help="MRCONSO column indices (default 0,1,2,14)")
    p.add_argument("--rel-cols", metavar="CUI1,REL,CUI2",
                   help="MRREL column indices (default 0,3,4)")


def _add_benchmark_flags(p, grid: bool = False) -> None:
    p.add_argument("--benchmark", action="append", metavar="NAME:MIN:MAX:PATH",
                   help="benchmark dataset with its annotation scale (repeatable)")
    p.add_argument("--columns", metavar="T1,C1,T2,C2,SCORE",
                   help="benchmark header names (default term1,cui1,term2,cui2,score)")
    p.add_argument("--policy", choices=["skip", "fail"],
                   default=None if grid else "skip",
                   help="unscorable pairs: skip them or abort (default skip)")
    p.add_argument("--require-cuis", action="store_true",
                   help="treat pairs without a CUI as unscorable")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="relfit", description=__doc__, epilog=FORMATS, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"relfit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="build a neighbor-list file from MRCONSO/MRREL",
                       epilog=FORMATS, formatter_class=fmt)
    _add_rrf_flags(p)
    p.add_argument("--relations", required=True, help='codes to union, e.g. "RQ+RN+SY"')
    p.add_argument("--out", required=True, help="neighbor-list file to write")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("retrofit", help="retrofit an embedding file",
                       epilog=FORMATS, formatter_class=fmt)
    p.add_argument("--embeddings", required=True, help="input embedding file")
    p.add_argument("--neighbors", help="neighbor-list file (instead of --rel/--conso)")
    _add_rrf_flags(p)
    p.add_argument("--relations", help='codes to union when reading RRF, e.g. "RN+RQ"')
    _add_retrofit_flags(p)
    p.add_argument("--out", required=True, help="retrofitted embedding file to write")
    p.add_argument("--manifest", help="run manifest path (default OUT.manifest.json)")
    p.add_argument("--header", action="store_true", help='write a "count dim" header line')
    p.set_defaults(func=cmd_retrofit)

    p = sub.add_parser("score", help="write per-pair cosine scores",
                       epilog=FORMATS, formatter_class=fmt)
    p.add_argument("--embeddings", required=True)
    _add_benchmark_flags(p)
    p.add_argument("--out", help="TSV output (default stdout)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="Spearman correlation per benchmark",
                       epilog=FORMATS, formatter_class=fmt)
    p.add_argument("--embeddings", required=True)
    _add_benchmark_flags(p)
    p.add_argument("--report", help="structured JSON report to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="evaluate a grid of relation combinations",
                       epilog=FORMATS + """
config file (JSON; flags override it, relative paths resolve against its folder):
  {"paths": {"embeddings": ..., "conso": ..., "rel": ...,
             "benchmarks": [{"name": ..., "path": ..., "scale": [min, max],
                             "columns": {"term1": ..., ...}}],
             "output_dir": ...},
   "retrofit": {"iterations": 10, "alpha": 1.0, "beta": "inverse-degree"},
   "relation_sets": [["RN"], ["RQ", "RN", "SY"]],
   "policy": "skip", "language": "ENG", "include_baseline": true, "jobs": 1}

outputs (in --out-dir):
  grid.tsv          rows = relation sets, columns = datasets, last row "best"
  grid_report.json  one record per cell: label, display, dataset, spearman,
                    pairs_scored, pairs_total, skipped (reason histogram), best
""", formatter_class=fmt)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--embeddings")
    _add_rrf_flags(p, grid=True)
    _add_benchmark_flags(p, grid=True)
    p.add_argument("--sets", help='relation sets, e.g. "AQ;RN;RQ+RN+SY"')
    p.add_argument("--no-baseline", action="store_true", help="omit the un-retrofitted row")
    _add_retrofit_flags(p, grid=True)
    p.add_argument("--jobs", type=int, default=None, help="parallel grid rows (default 1)")
    p.add_argument("--out-dir", help="directory for grid.tsv and grid_report.json")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RelfitError as exc:
        print(f"relfit: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"relfit: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
