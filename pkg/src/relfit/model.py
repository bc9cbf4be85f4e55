"""Shared domain types: vectors, embedding tables, relation graphs, datasets.

Everything here is immutable once built. Arrays handed out by
:class:`EmbeddingTable` are read-only views.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np


class RelfitError(ValueError):
    """Base class for every input/validation error raised by relfit."""


class ParseError(RelfitError):
    """A malformed line or record; ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def canonicalize_term(raw: str) -> str:
    """Trim, collapse internal whitespace and case-fold ``raw``.

    >>> canonicalize_term("  Squamous  Cell Carcinoma ")
    'squamous cell carcinoma'
    """
    term = " ".join(raw.casefold().split())
    if not term:
        raise RelfitError("empty term")
    return term


def make_vector(values: Iterable[float]) -> np.ndarray:
    """Return a read-only float64 vector, rejecting empty or non-finite input."""
    vec = np.array(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise RelfitError("vector must be one-dimensional with dim >= 1")
    if not np.all(np.isfinite(vec)):
        raise RelfitError("vector has non-finite components")
    vec.flags.writeable = False
    return vec


class EmbeddingTable(Mapping[str, np.ndarray]):
    """Term → vector map; rows are kept in lexicographic term order.

    Terms are canonicalized on construction and must stay unique afterwards.
    The backing matrix is exposed as :attr:`vectors` (read-only).
    """

    __slots__ = ("_terms", "_index", "_vectors")

    def __init__(self, terms: Sequence[str], vectors, dim: Optional[int] = None):
        canon = [canonicalize_term(t) for t in terms]
        mat = np.array(vectors, dtype=np.float64, copy=True)
        if mat.size == 0:
            if dim is None or dim < 1:
                raise RelfitError("empty table needs an explicit dim >= 1")
            mat = mat.reshape(0, dim)
        if mat.ndim != 2 or mat.shape[0] != len(canon):
            raise RelfitError(
                f"expected a ({len(canon)}, dim) matrix, got shape {mat.shape}")
        if mat.shape[1] < 1:
            raise RelfitError("dim must be >= 1")
        if dim is not None and mat.shape[1] != dim:
            raise RelfitError(f"dimension mismatch: {mat.shape[1]} != {dim}")
        if not np.all(np.isfinite(mat)):
            raise RelfitError("table has non-finite components")
        order = sorted(range(len(canon)), key=canon.__getitem__)
        sorted_terms = tuple(canon[i] for i in order)
        for a, b in zip(sorted_terms, sorted_terms[1:]):
            if a == b:
                raise RelfitError(f"duplicate term {a!r}")
        if order != list(range(len(canon))):
            mat = mat[order]
        mat.flags.writeable = False
        self._terms = sorted_terms
        self._index = {t: i for i, t in enumerate(sorted_terms)}
        self._vectors = mat

    @classmethod
    def from_dict(cls, entries: Mapping[str, Sequence[float]], dim: Optional[int] = None):
        terms = list(entries)
        if not terms:
            return cls([], [], dim=dim)
        return cls(terms, [list(entries[t]) for t in terms], dim=dim)

    @classmethod
    def _trusted(cls, terms: tuple, vectors: np.ndarray) -> "EmbeddingTable":
        # terms already canonical, sorted and unique; vectors finite
        self = cls.__new__(cls)
        vectors.flags.writeable = False
        self._terms = terms
        self._index = {t: i for i, t in enumerate(terms)}
        self._vectors = vectors
        return self

    def with_vectors(self, vectors: np.ndarray) -> "EmbeddingTable":
        """Same terms, new matrix (validated for shape and finiteness)."""
        mat = np.array(vectors, dtype=np.float64, copy=True)
        if mat.shape != self._vectors.shape:
            raise RelfitError(f"shape {mat.shape} != {self._vectors.shape}")
        if not np.all(np.isfinite(mat)):
            raise RelfitError("table has non-finite components")
        return EmbeddingTable._trusted(self._terms, mat)

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    @property
    def terms(self) -> tuple:
        return self._terms

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    def index_of(self, term: str) -> int:
        return self._index[term]

    def __getitem__(self, term: str) -> np.ndarray:
        return self._vectors[self._index[term]]

    def __contains__(self, term) -> bool:
        return term in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return (self._terms == other._terms
                and self.dim == other.dim
                and np.array_equal(self._vectors, other._vectors))

    __hash__ = None

    def __repr__(self) -> str:
        return f"EmbeddingTable(n={len(self)}, dim={self.dim})"


class RelationCode(str, enum.Enum):
    """UMLS coarse relationship labels (closed set)."""

    AQ = "AQ"    # allowed qualifier
    CHD = "CHD"  # child
    PAR = "PAR"  # parent
    QB = "QB"    # can be qualified by
    RB = "RB"    # broader
    RL = "RL"    # alike
    RN = "RN"    # narrower
    RO = "RO"    # other related
    RQ = "RQ"    # related, possibly synonymous
    RU = "RU"    # related, unspecified
    SIB = "SIB"  # sibling
    SY = "SY"    # source asserted synonymy
    XR = "XR"    # not related

    def __str__(self) -> str:
        return self.value

    @classmethod
    def strict(cls, raw: str) -> "RelationCode":
        """Parse a code from the closed set or raise ``unknown relation code``."""
        try:
            return cls(raw.strip().upper())
        except ValueError:
            raise RelfitError(f"unknown relation code {raw.strip()}") from None


@dataclass(frozen=True, order=True)
class OtherRelation:
    """A relation label outside the closed set, kept verbatim."""

    code: str

    def __str__(self) -> str:
        return self.code


Relation = Union[RelationCode, OtherRelation]


def parse_relation(raw: str) -> Relation:
    code = raw.strip()
    try:
        return RelationCode(code)
    except ValueError:
        return OtherRelation(code)


def relation_label(codes: Iterable[RelationCode]) -> str:
    """Canonical grid label: codes sorted and ``+``-joined."""
    return "+".join(sorted({str(c) for c in codes}))


@dataclass(frozen=True)
class Concept:
    preferred_term: str
    synonyms: tuple = ()

    def __post_init__(self):
        if not self.preferred_term.strip():
            raise RelfitError("concept needs a non-empty preferred term")


@dataclass(frozen=True)
class ConceptLexicon:
    """CUI → :class:`Concept`.

    ``missing_preferred`` lists CUIs whose preferred term had to be chosen
    from synonyms because no row was marked preferred.
    """

    concepts: Mapping[str, Concept]
    missing_preferred: tuple = ()

    def __len__(self) -> int:
        return len(self.concepts)

    def __contains__(self, cui) -> bool:
        return cui in self.concepts

    def preferred(self, cui: str) -> str:
        return self.concepts[cui].preferred_term


class RelationGraph:
    """Undirected, per-relation adjacency over CUIs.

    Edges are stored once per unordered pair and relation; self-loops are
    silently dropped at construction.
    """

    def __init__(self, edges: Iterable[tuple] = ()):
        adj: dict = {}
        count = 0
        for a, b, rel in edges:
            if a == b:
                continue
            by_cui = adj.setdefault(rel, {})
            nbrs = by_cui.setdefault(a, set())
            if b in nbrs:
                continue
            nbrs.add(b)
            by_cui.setdefault(b, set()).add(a)
            count += 1
        self._adj = {rel: {c: frozenset(n) for c, n in by_cui.items()}
                     for rel, by_cui in adj.items()}
        self._count = count

    def __len__(self) -> int:
        return self._count

    def relations(self) -> frozenset:
        return frozenset(self._adj)

    def neighbors(self, cui: str, rel: Relation) -> frozenset:
        return self._adj.get(rel, {}).get(cui, frozenset())

    def cuis(self, rel: Relation) -> frozenset:
        """CUIs with at least one edge under ``rel``."""
        return frozenset(self._adj.get(rel, {}))

    def edges(self) -> frozenset:
        """Unordered edges as ``(smaller_cui, larger_cui, rel)`` triples."""
        out = set()
        for rel, by_cui in self._adj.items():
            for a, nbrs in by_cui.items():
                for b in nbrs:
                    if a < b:
                        out.add((a, b, rel))
        return frozenset(out)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RelationGraph):
            return NotImplemented
        return self._adj == other._adj

    __hash__ = None

    def __repr__(self) -> str:
        return f"RelationGraph(edges={self._count}, relations={sorted(map(str, self._adj))})"


class NeighborLists(Mapping[str, tuple]):
    """Term → sorted, duplicate-free tuple of neighbor terms.

    Terms are canonicalized; a head listing itself is dropped (the dropped
    heads are recorded in :attr:`self_links`).
    """

    __slots__ = ("_lists", "self_links")

    def __init__(self, lists: Mapping[str, Iterable[str]] = None):
        built: dict = {}
        self_links = []
        for head, nbrs in (lists or {}).items():
            h = canonicalize_term(head)
            if h in built:
                raise RelfitError(f"duplicate head term {h!r}")
            clean = {canonicalize_term(n) for n in nbrs}
            if h in clean:
                clean.discard(h)
                self_links.append(h)
            built[h] = tuple(sorted(clean))
        self._lists = dict(sorted(built.items()))
        self.self_links = tuple(self_links)

    def __getitem__(self, term: str) -> tuple:
        return self._lists[term]

    def __iter__(self) -> Iterator[str]:
        return iter(self._lists)

    def __len__(self) -> int:
        return len(self._lists)

    def __eq__(self, other) -> bool:
        if isinstance(other, NeighborLists):
            return self._lists == other._lists
        return NotImplemented

    __hash__ = None

    def __repr__(self) -> str:
        return f"NeighborLists(heads={len(self._lists)})"


@dataclass(frozen=True)
class BenchmarkPair:
    term1: str
    cui1: Optional[str]
    term2: str
    cui2: Optional[str]
    mean_score: float

    @property
    def cui_missing(self) -> bool:
        return not self.cui1 or not self.cui2


@dataclass(frozen=True)
class BenchmarkDataset:
    """Concept pairs with mean human scores on ``[scale_min, scale_max]``."""

    name: str
    scale_min: float
    scale_max: float
    pairs: tuple

    def __post_init__(self):
        if not self.scale_min < self.scale_max:
            raise RelfitError(f"bad scale ({self.scale_min}, {self.scale_max})")
        if not self.pairs:
            raise RelfitError(f"dataset {self.name!r} has no pairs")
        for i, p in enumerate(self.pairs, 1):
            if not self.scale_min <= p.mean_score <= self.scale_max:
                raise RelfitError(f"pair {i}: score out of range")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def cui_missing_count(self) -> int:
        return sum(p.cui_missing for p in self.pairs)


class BetaScheme(str, enum.Enum):
    INVERSE_DEGREE = "inverse-degree"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class RetrofitConfig:
    """Retrofitting knobs.

    ``tolerance`` enables an early stop once the largest per-sweep component
    change drops below it; ``None`` always runs ``iterations`` sweeps.
    """

    iterations: int = 10
    alpha: float = 1.0
    beta: BetaScheme = BetaScheme.INVERSE_DEGREE
    tolerance: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "beta", BetaScheme(self.beta))
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise RelfitError("iterations must be a positive integer")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise RelfitError("alpha must be a finite non-negative number")
        if self.tolerance is not None and not self.tolerance > 0:
            raise RelfitError("tolerance must be positive")


@dataclass(frozen=True)
class SkippedPair:
    index: int          # 0-based position in the dataset
    term1: str
    term2: str
    reason: str


@dataclass(frozen=True)
class EvalReport:
    dataset_name: str
    spearman: Optional[float]
    pairs_scored: int
    pairs_total: int
    skipped: tuple = field(default_factory=tuple)
    note: Optional[str] = None

    def __post_init__(self):
        if self.pairs_scored > self.pairs_total:
            raise RelfitError("pairs_scored exceeds pairs_total")
        if self.spearman is not None and not -1.0 <= self.spearman <= 1.0:
            raise RelfitError(f"spearman {self.spearman} outside [-1, 1]")

    @property
    def defined(self) -> bool:
        return self.spearman is not None

    def skip_histogram(self) -> dict:
        hist: dict = {}
        for s in self.skipped:
            hist[s.reason] = hist.get(s.reason, 0) + 1
        return dict(sorted(hist.items()))
