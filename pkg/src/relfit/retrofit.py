"""Neighbor-list construction and Gauss–Seidel retrofitting.

Each sweep visits terms in lexicographic order and replaces every term that
has at least one effective neighbor (a listed neighbor that also has a
vector) by

    q_i = (beta_i * sum_j q_j + alpha * qhat_i) / (beta_i * deg_i + alpha)

using the latest neighbor values. ``beta_i`` is ``1 / deg_i`` (inverse-degree)
or ``1`` (uniform). Terms without effective neighbors are never written.

The tracked objective is the quadratic this sweep performs exact coordinate
descent on. With ``c_i = 1 / beta_i`` every link gets unit weight::

    J(q) = sum_i 2 * alpha * c_i * |q_i - qhat_i|^2
         + sum_i sum_{j in N(i)} m_ij * |q_i - q_j|^2

where ``m_ij = 1`` when ``i`` is also in ``N(j)`` (the link is counted once
from each endpoint) and ``m_ij = 2`` otherwise. Restricted to ``q_i`` this is
``2 * c_i * (alpha + beta_i * deg_i) * |q_i - update_i|^2 + const`` whenever
links between updated terms are reciprocal, so every update is the exact
minimizer along its block and J never increases. Neighbor lists produced by
:func:`build_neighbor_lists` always satisfy this.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numba
import numpy as np

from .model import (
    BetaScheme,
    ConceptLexicon,
    EmbeddingTable,
    NeighborLists,
    RelationCode,
    RelationGraph,
    RelfitError,
    RetrofitConfig,
    canonicalize_term,
)

log = logging.getLogger(__name__)


def build_neighbor_lists(graph: RelationGraph, lexicon: ConceptLexicon,
                         relations: Iterable[RelationCode],
                         heads: Optional[Iterable[str]] = None) -> NeighborLists:
    """Map each related concept's preferred term to its neighbors' preferred terms.

    Parameters
    ----------
    graph, lexicon
        Parsed MRREL graph and MRCONSO lexicon.
    relations
        Relation codes to union over; must be non-empty.
    heads
        Optional set of CUIs allowed to act as heads (for example the CUIs
        of the benchmark pairs). Neighbors are never restricted.
    """
    relations = frozenset(relations)
    if not relations:
        raise RelfitError("no relations selected")
    allowed_heads = None if heads is None else frozenset(heads)
    cuis = set()
    for rel in relations:
        cuis |= graph.cuis(rel)

    unresolved = set()
    preferred = {}

    def term_of(cui):
        if cui not in preferred:
            preferred[cui] = (canonicalize_term(lexicon.preferred(cui))
                              if cui in lexicon else None)
        return preferred[cui]

    acc: dict = {}
    for cui in sorted(cuis):
        if allowed_heads is not None and cui not in allowed_heads:
            continue
        head = term_of(cui)
        if head is None:
            unresolved.add(cui)
            continue
        for rel in relations:
            for nb in graph.neighbors(cui, rel):
                t = term_of(nb)
                if t is None:
                    unresolved.add(nb)
                elif t != head:
                    acc.setdefault(head, set()).add(t)
    if unresolved:
        log.warning("%d CUIs have no lexicon entry and were skipped", len(unresolved))
    return NeighborLists(acc)


@dataclass(frozen=True)
class RetrofitResult:
    table: EmbeddingTable
    objective_trace: tuple
    updated_count: int
    skipped_terms: tuple
    sweeps: int
    nonreciprocal_links: int = 0


@dataclass(frozen=True)
class _Graph:
    indptr: np.ndarray
    indices: np.ndarray
    mult: np.ndarray
    degree: np.ndarray
    skipped_terms: tuple
    nonreciprocal: int


def _effective_graph(table: EmbeddingTable, lists: NeighborLists) -> _Graph:
    """CSR adjacency over table rows, dropping vectorless heads and neighbors."""
    n = len(table)
    rows = [None] * n
    skipped = []
    index = table._index
    for head in lists:
        i = index.get(head)
        if i is None:
            skipped.append(head)
            continue
        rows[i] = [index[t] for t in lists[head] if t in index and t != head]
    degree = np.array([len(r) if r else 0 for r in rows], dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(degree, out=indptr[1:])
    indices = np.fromiter((j for r in rows if r for j in r), dtype=np.int64,
                          count=int(indptr[-1]))
    src = np.repeat(np.arange(n, dtype=np.int64), degree)
    fwd = src * n + indices
    rev = indices * n + src
    reciprocal = np.isin(rev, fwd)
    mult = np.where(reciprocal, 1.0, 2.0)
    # a one-way link into an updated term breaks the descent property
    nonrecip = int(np.count_nonzero(~reciprocal & (degree[indices] > 0)))
    return _Graph(indptr, indices, mult, degree, tuple(skipped), nonrecip)


def _weights(graph: _Graph, cfg: RetrofitConfig):
    deg = graph.degree.astype(np.float64)
    updated = graph.degree > 0
    if cfg.beta is BetaScheme.INVERSE_DEGREE:
        beta = np.where(updated, 1.0 / np.maximum(deg, 1.0), 1.0)
        beta_sum = np.ones_like(deg)
        scale = np.where(updated, deg, 1.0)
    else:
        beta = np.ones_like(deg)
        beta_sum = deg
        scale = np.ones_like(deg)
    anchor = 2.0 * cfg.alpha * scale
    return beta, beta_sum, anchor


@numba.njit(nogil=True, cache=True)
def _sweep(q, q0, indptr, indices, beta, beta_sum, alpha):
    n, dim = q.shape
    acc = np.empty(dim)
    max_change = 0.0
    for i in range(n):
        start, stop = indptr[i], indptr[i + 1]
        if start == stop:
            continue
        acc[:] = 0.0
        for p in range(start, stop):
            j = indices[p]
            for k in range(dim):
                acc[k] += q[j, k]
        b = beta[i]
        denom = beta_sum[i] + alpha
        for k in range(dim):
            v = (b * acc[k] + alpha * q0[i, k]) / denom
            change = abs(v - q[i, k])
            if change > max_change:
                max_change = change
            q[i, k] = v
    return max_change


@numba.njit(nogil=True, cache=True)
def _objective(q, q0, indptr, indices, mult, anchor):
    n, dim = q.shape
    total = 0.0
    for i in range(n):
        if anchor[i] != 0.0:
            d = 0.0
            for k in range(dim):
                diff = q[i, k] - q0[i, k]
                d += diff * diff
            total += anchor[i] * d
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            d = 0.0
            for k in range(dim):
                diff = q[i, k] - q[j, k]
                d += diff * diff
            total += mult[p] * d
    return total


def _check_alpha(graph: _Graph, cfg: RetrofitConfig, table: EmbeddingTable) -> None:
    if cfg.alpha == 0 and len(table) and np.any(graph.degree == 0):
        term = table.terms[int(np.argmin(graph.degree))]
        raise RelfitError(f"underdetermined update: alpha = 0 and {term!r} has no neighbors")


def retrofit(original: EmbeddingTable, lists: NeighborLists,
             cfg: RetrofitConfig = RetrofitConfig()) -> RetrofitResult:
    """Retrofit ``original`` towards ``lists`` and return a new table.

    ``objective_trace[k]`` is the objective after sweep ``k + 1``.
    """
    graph = _effective_graph(original, lists)
    _check_alpha(graph, cfg, original)
    if graph.skipped_terms:
        log.info("%d neighbor-list heads have no vector", len(graph.skipped_terms))
    if graph.nonreciprocal:
        log.warning("%d one-way links between updated terms; the objective "
                    "may not decrease monotonically", graph.nonreciprocal)
    beta, beta_sum, anchor = _weights(graph, cfg)
    q0 = original.vectors
    q = np.array(q0, copy=True)
    trace = []
    sweeps = 0
    alpha = float(cfg.alpha)
    for _ in range(cfg.iterations):
        change = _sweep(q, q0, graph.indptr, graph.indices, beta, beta_sum, alpha)
        sweeps += 1
        trace.append(float(_objective(q, q0, graph.indptr, graph.indices, graph.mult, anchor)))
        log.debug("sweep %d: objective %.12g, max change %.3g", sweeps, trace[-1], change)
        if cfg.tolerance is not None and change < cfg.tolerance:
            break
    return RetrofitResult(
        table=EmbeddingTable._trusted(original.terms, q),
        objective_trace=tuple(trace),
        updated_count=int(np.count_nonzero(graph.degree)),
        skipped_terms=graph.skipped_terms,
        sweeps=sweeps,
        nonreciprocal_links=graph.nonreciprocal,
    )


def objective_value(table: EmbeddingTable, original: EmbeddingTable,
                    lists: NeighborLists, cfg: RetrofitConfig = RetrofitConfig()) -> float:
    """Evaluate the retrofitting objective (see module docstring) at ``table``."""
    if table.terms != original.terms:
        raise RelfitError("table and original have different terms")
    if table.dim != original.dim:
        raise RelfitError(f"dimension mismatch: {table.dim} != {original.dim}")
    graph = _effective_graph(original, lists)
    _, _, anchor = _weights(graph, cfg)
    q = np.ascontiguousarray(table.vectors)
    q0 = np.ascontiguousarray(original.vectors)
    return float(_objective(q, q0, graph.indptr, graph.indices, graph.mult, anchor))
