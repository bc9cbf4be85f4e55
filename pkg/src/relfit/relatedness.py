"""Concept-vector pooling and cosine scoring of benchmark pairs."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from .model import (
    BenchmarkDataset,
    EmbeddingTable,
    RelfitError,
    canonicalize_term,
)

log = logging.getLogger(__name__)

MISSING_VECTOR = "missing_vector"
ZERO_VECTOR = "zero_vector"
MISSING_CUI = "missing_cui"


class ZeroVectorError(RelfitError):
    pass


def mean_pool(token_vectors: Sequence) -> np.ndarray:
    """Componentwise mean of equally sized token vectors."""
    if len(token_vectors) == 0:
        raise RelfitError("no tokens")
    try:
        mat = np.asarray(token_vectors, dtype=np.float64)
    except ValueError:
        raise RelfitError("token vectors have mixed dimensions") from None
    if mat.ndim != 2:
        raise RelfitError("token vectors have mixed dimensions")
    if mat.shape[1] == 0:
        raise RelfitError("token vectors must have dim >= 1")
    # sorting each column makes the sum independent of token order
    return np.sort(mat, axis=0).sum(axis=0) / mat.shape[0]


def pool_terms(terms: Iterable[str], token_table: EmbeddingTable,
               tokenize: Callable[[str], List[str]] = str.split) -> EmbeddingTable:
    """Build a concept table by averaging the token vectors of each term.

    Tokens without a vector are ignored; a term none of whose tokens has a
    vector is left out of the result (and logged).
    """
    out_terms, rows, dropped = [], [], []
    for raw in dict.fromkeys(canonicalize_term(t) for t in terms):
        toks = [t for t in tokenize(raw) if t in token_table]
        if not toks:
            dropped.append(raw)
            continue
        out_terms.append(raw)
        rows.append(mean_pool(np.stack([token_table[t] for t in toks])))
    if dropped:
        log.warning("%d terms have no token vectors", len(dropped))
    if not rows:
        return EmbeddingTable([], [], dim=token_table.dim)
    return EmbeddingTable(out_terms, np.vstack(rows))


def cosine(u, v) -> float:
    """Cosine similarity clamped to ``[-1, 1]``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise RelfitError(f"dimension mismatch: {u.shape} vs {v.shape}")
    mu = float(np.abs(u).max(initial=0.0))
    mv = float(np.abs(v).max(initial=0.0))
    if mu == 0.0 or mv == 0.0:
        raise ZeroVectorError("zero vector")
    # rescale by the largest component so the squared norms cannot under/overflow
    u = u / mu
    v = v / mv
    nu = math.sqrt(float(np.dot(u, u)))
    nv = math.sqrt(float(np.dot(v, v)))
    # normalize first: dot of unit vectors is symmetric and scale-free
    c = float(np.dot(u / nu, v / nv))
    return max(-1.0, min(1.0, c))


@dataclass(frozen=True)
class ScoredPair:
    term1: str
    term2: str
    cui1: Optional[str]
    cui2: Optional[str]
    gold: float
    predicted: Optional[float] = None
    skip_reason: Optional[str] = None

    def __post_init__(self):
        if (self.predicted is None) == (self.skip_reason is None):
            raise RelfitError("exactly one of predicted / skip_reason must be set")
        if self.predicted is not None and not -1.0 <= self.predicted <= 1.0:
            raise RelfitError(f"predicted {self.predicted} outside [-1, 1]")


def score_pairs(table: EmbeddingTable, dataset: BenchmarkDataset, policy: str = "skip",
                require_cuis: bool = False) -> List[ScoredPair]:
    """Cosine-score every pair of ``dataset`` against ``table``.

    Under ``policy="skip"`` unscorable pairs get a ``skip_reason``; under
    ``policy="fail"`` the first one raises. With ``require_cuis`` pairs
    lacking a CUI are treated as unscorable (``missing_cui``).
    """
    if policy not in ("skip", "fail"):
        raise RelfitError(f"unknown policy {policy!r}")
    out = []
    for n, p in enumerate(dataset.pairs, 1):
        reason = None
        predicted = None
        t1, t2 = canonicalize_term(p.term1), canonicalize_term(p.term2)
        if require_cuis and p.cui_missing:
            reason = MISSING_CUI
        elif t1 not in table or t2 not in table:
            reason = MISSING_VECTOR
        else:
            try:
                predicted = cosine(table[t1], table[t2])
            except ZeroVectorError:
                reason = ZERO_VECTOR
        if reason is not None and policy == "fail":
            raise RelfitError(f"{dataset.name} pair {n} ({p.term1!r}, {p.term2!r}): {reason}")
        out.append(ScoredPair(p.term1, p.term2, p.cui1, p.cui2, p.mean_score,
                              predicted, reason))
    return out
