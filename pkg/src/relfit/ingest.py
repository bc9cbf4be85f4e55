"""Streaming readers and writers for the on-disk formats.

All parsers take any iterable of text lines (an open file works) and never
materialize the whole input. Line numbers in errors are 1-based.

Formats
-------
embeddings
    optional header ``count dim``, then ``term<TAB>f1 f2 ... fd``
neighbor lists
    ``term<TAB>n1<TAB>n2 ...``
RRF (MRCONSO / MRREL)
    pipe-delimited, trailing pipe tolerated
benchmark
    comma- or tab-separated, header row naming the five schema columns
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, TextIO, Tuple

import numpy as np

from .model import (
    BenchmarkDataset,
    BenchmarkPair,
    Concept,
    ConceptLexicon,
    EmbeddingTable,
    NeighborLists,
    OtherRelation,
    ParseError,
    RelationCode,
    RelationGraph,
    RelfitError,
    canonicalize_term,
    parse_relation,
)

log = logging.getLogger(__name__)


def _lines(source: Iterable[str]) -> Iterator[Tuple[int, str]]:
    for lineno, line in enumerate(source, 1):
        yield lineno, line.rstrip("\r\n")


# -- embeddings -------------------------------------------------------------

def _parse_header(line: str) -> Optional[Tuple[int, int]]:
    if "\t" in line:
        return None
    parts = line.split()
    if len(parts) != 2:
        return None
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        return None


def parse_embeddings(source: Iterable[str]) -> EmbeddingTable:
    """Read an embedding file into an :class:`EmbeddingTable`."""
    terms = []
    rows = []
    seen = {}
    dim = None
    declared = None
    first = True
    for lineno, line in _lines(source):
        if not line.strip():
            continue
        if first:
            first = False
            header = _parse_header(line)
            if header is not None:
                declared, dim = header
                if dim < 1:
                    raise ParseError(f"header declares dim {dim}", lineno)
                continue
        term, tab, rest = line.partition("\t")
        if not tab:
            raise ParseError("expected term<TAB>components", lineno)
        try:
            term = canonicalize_term(term)
        except RelfitError as exc:
            raise ParseError(str(exc), lineno) from None
        fields = rest.split()
        try:
            vec = np.array([float(x) for x in fields], dtype=np.float64)
        except ValueError:
            raise ParseError("non-numeric component", lineno) from None
        if dim is None:
            if not fields:
                raise ParseError("vector has no components", lineno)
            dim = len(fields)
        if len(fields) != dim:
            err = ParseError(f"dimension mismatch at line {lineno}: "
                             f"expected {dim}, got {len(fields)}")
            err.lineno = lineno
            raise err
        if not np.all(np.isfinite(vec)):
            raise ParseError("non-finite component", lineno)
        if term in seen:
            raise ParseError(f"duplicate term {term!r} (first at line {seen[term]})", lineno)
        seen[term] = lineno
        terms.append(term)
        rows.append(vec)
    if dim is None:
        raise ParseError("no vectors found")
    if declared is not None and declared != len(terms):
        log.warning("header declares %d entries, found %d", declared, len(terms))
    if not rows:
        return EmbeddingTable([], [], dim=dim)
    return EmbeddingTable(terms, np.vstack(rows))


def format_float(x: float) -> str:
    """Shortest decimal that parses back to exactly ``x``; ``1.0`` → ``1``."""
    r = repr(float(x))
    return r[:-2] if r.endswith(".0") else r


def write_embeddings(table: EmbeddingTable, sink: TextIO, header: bool = False) -> None:
    """Write ``table`` in the format :func:`parse_embeddings` reads."""
    if header:
        sink.write(f"{len(table)} {table.dim}\n")
    vecs = table.vectors
    for i, term in enumerate(table.terms):
        sink.write(term + "\t" + " ".join(map(format_float, vecs[i].tolist())) + "\n")


# -- RRF ---------------------------------------------------------------------

def _check_columns(*cols: int) -> None:
    if any(c < 0 for c in cols):
        raise RelfitError("column indices must be non-negative")
    if len(set(cols)) != len(cols):
        raise RelfitError("column indices must be distinct")


@dataclass(frozen=True)
class ConsoColumns:
    cui_col: int = 0
    language_col: int = 1
    term_status_col: int = 2
    string_col: int = 14

    def __post_init__(self):
        _check_columns(self.cui_col, self.language_col, self.term_status_col, self.string_col)

    @property
    def width(self) -> int:
        return max(self.cui_col, self.language_col, self.term_status_col, self.string_col) + 1


@dataclass(frozen=True)
class RelColumns:
    cui1_col: int = 0
    rel_col: int = 3
    cui2_col: int = 4

    def __post_init__(self):
        _check_columns(self.cui1_col, self.rel_col, self.cui2_col)

    @property
    def width(self) -> int:
        return max(self.cui1_col, self.rel_col, self.cui2_col) + 1


@dataclass(frozen=True)
class RrfColumnMap:
    """Column positions for MRCONSO and MRREL; defaults follow the UMLS layout."""

    conso: ConsoColumns = ConsoColumns()
    rel: RelColumns = RelColumns()


def _rrf_rows(source: Iterable[str], width: int) -> Iterator[Tuple[int, list]]:
    for lineno, line in _lines(source):
        if not line:
            continue
        fields = line.split("|")
        if len(fields) < width:
            raise ParseError(f"expected ≥{width} fields, got {len(fields)}", lineno)
        yield lineno, fields


def parse_rrf_conso(source: Iterable[str], cols: ConsoColumns = ConsoColumns(),
                    language_filter: Optional[str] = None,
                    preferred_flag: str = "P") -> ConceptLexicon:
    """Build a :class:`ConceptLexicon` from MRCONSO-style rows.

    The first row per CUI whose term-status equals ``preferred_flag`` supplies
    the preferred term; later such rows become synonyms. A CUI with no marked
    row gets its lexicographically smallest synonym and is listed in
    ``missing_preferred``.
    """
    preferred: dict = {}
    synonyms: dict = {}
    for lineno, fields in _rrf_rows(source, cols.width):
        if language_filter is not None and fields[cols.language_col] != language_filter:
            continue
        cui = fields[cols.cui_col].strip()
        string = fields[cols.string_col].strip()
        if not cui:
            raise ParseError("empty CUI", lineno)
        if not string:
            continue
        syns = synonyms.setdefault(cui, {})
        if fields[cols.term_status_col].strip() == preferred_flag:
            if cui not in preferred:
                preferred[cui] = string
                continue
            if string != preferred[cui]:
                log.debug("line %d: %s has a second preferred row %r; kept %r",
                          lineno, cui, string, preferred[cui])
        syns.setdefault(string, None)

    concepts = {}
    missing = []
    for cui in sorted(synonyms):
        syns = [s for s in synonyms[cui] if s != preferred.get(cui)]
        if cui in preferred:
            pref = preferred[cui]
        else:
            pref = min(syns)
            syns.remove(pref)
            missing.append(cui)
        concepts[cui] = Concept(pref, tuple(syns))
    if missing:
        log.warning("%d CUIs have no preferred-marked row; used smallest synonym", len(missing))
    return ConceptLexicon(concepts, tuple(missing))


def iter_rrf_rel(source: Iterable[str], cols: RelColumns = RelColumns(),
                 allowed: Optional[Iterable[RelationCode]] = None) -> Iterator[tuple]:
    """Yield ``(cui1, cui2, relation)`` for each accepted MRREL row."""
    allowed = None if allowed is None else frozenset(allowed)
    for lineno, fields in _rrf_rows(source, cols.width):
        a = fields[cols.cui1_col].strip()
        b = fields[cols.cui2_col].strip()
        raw = fields[cols.rel_col].strip()
        if not a or not b or not raw:
            raise ParseError("empty CUI or relation field", lineno)
        rel = parse_relation(raw)
        if allowed is not None and rel not in allowed:
            continue
        yield a, b, rel


def parse_rrf_rel(source: Iterable[str], cols: RelColumns = RelColumns(),
                  allowed: Optional[Iterable[RelationCode]] = None) -> RelationGraph:
    """Build a symmetric :class:`RelationGraph` from MRREL-style rows.

    Codes outside the closed set are kept as :class:`OtherRelation` unless
    ``allowed`` is given, in which case only listed codes survive.
    """
    return RelationGraph(iter_rrf_rel(source, cols, allowed))


# -- neighbor lists ------------------------------------------------------------

def write_neighbor_lists(lists: NeighborLists, sink: TextIO) -> None:
    for head in lists:
        sink.write("\t".join((head,) + lists[head]) + "\n")


def parse_neighbor_lists(source: Iterable[str]) -> NeighborLists:
    """Read ``term<TAB>n1<TAB>n2...`` lines.

    Self-neighbors are dropped with a warning; a repeated head is an error.
    """
    lists = {}
    for lineno, line in _lines(source):
        if not line.strip():
            continue
        fields = [f for f in line.split("\t") if f.strip()]
        try:
            head = canonicalize_term(fields[0])
            nbrs = [canonicalize_term(f) for f in fields[1:]]
        except RelfitError as exc:
            raise ParseError(str(exc), lineno) from None
        if head in lists:
            raise ParseError(f"duplicate head term {head!r}", lineno)
        if head in nbrs:
            log.warning("line %d: %r lists itself as a neighbor; dropped", lineno, head)
            nbrs = [n for n in nbrs if n != head]
        lists[head] = nbrs
    return NeighborLists(lists)


# -- benchmarks ------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkSchema:
    """Header names for the five benchmark columns."""

    term1: str = "term1"
    cui1: str = "cui1"
    term2: str = "term2"
    cui2: str = "cui2"
    score: str = "score"

    @classmethod
    def from_string(cls, spec: str) -> "BenchmarkSchema":
        """``"t1,c1,t2,c2,s"`` → schema with those header names."""
        names = [n.strip() for n in spec.split(",")]
        if len(names) != 5 or not all(names):
            raise RelfitError("schema needs five comma-separated column names")
        return cls(*names)


def parse_benchmark(source: Iterable[str], name: str, scale: Tuple[float, float],
                    schema: BenchmarkSchema = BenchmarkSchema()) -> BenchmarkDataset:
    """Read a delimited benchmark file with a header row.

    The delimiter is TAB when the header contains one, comma otherwise.
    Empty CUI cells are kept as ``None`` (see ``BenchmarkPair.cui_missing``).
    """
    lo, hi = float(scale[0]), float(scale[1])
    if not lo < hi:
        raise RelfitError(f"bad scale ({lo}, {hi})")
    it = iter(source)
    header_line = None
    for header_line in it:
        if header_line.strip():
            break
    if header_line is None or not header_line.strip():
        raise ParseError("missing header row")
    delim = "\t" if "\t" in header_line else ","
    header = [h.strip() for h in next(csv.reader([header_line], delimiter=delim))]
    wanted = [schema.term1, schema.cui1, schema.term2, schema.cui2, schema.score]
    missing = [w for w in wanted if w not in header]
    if missing:
        raise ParseError(f"missing required column(s): {', '.join(missing)}", 1)
    idx = [header.index(w) for w in wanted]
    width = max(idx) + 1

    pairs = []
    reader = csv.reader(it, delimiter=delim)
    for record, row in enumerate((r for r in reader if any(c.strip() for c in r)), 1):
        where = f"record {record} (line {reader.line_num + 1})"
        if len(row) < width:
            raise RelfitError(f"{where}: expected ≥{width} fields, got {len(row)}")
        t1, c1, t2, c2, s = (row[i].strip() for i in idx)
        try:
            score = float(s)
        except ValueError:
            raise RelfitError(f"{where}: non-numeric score {s!r}") from None
        if not math.isfinite(score) or not lo <= score <= hi:
            raise RelfitError(f"{where}: score out of range [{lo:g}, {hi:g}]: {s}")
        try:
            t1, t2 = canonicalize_term(t1), canonicalize_term(t2)
        except RelfitError as exc:
            raise RelfitError(f"{where}: {exc}") from None
        pairs.append(BenchmarkPair(t1, c1 or None, t2, c2 or None, score))
    if not pairs:
        raise RelfitError(f"benchmark {name!r} has no records")
    ds = BenchmarkDataset(name, lo, hi, tuple(pairs))
    if ds.cui_missing_count:
        log.info("%s: %d of %d pairs lack a CUI", name, ds.cui_missing_count, len(ds))
    return ds


__all__ = [
    "BenchmarkSchema", "ConsoColumns", "OtherRelation", "RelColumns", "RrfColumnMap",
    "format_float", "iter_rrf_rel", "parse_benchmark", "parse_embeddings",
    "parse_neighbor_lists", "parse_rrf_conso", "parse_rrf_rel",
    "write_embeddings", "write_neighbor_lists",
]
