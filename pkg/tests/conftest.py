import os

import numpy as np
import pytest

from relfit import EmbeddingTable, NeighborLists

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
SYNTHETIC = os.path.join(FIXTURES, "synthetic")

ACCEPTANCE_RESULTS = {}


def random_instance(rng, n_terms, dim, p_edge=0.4, scale=3.0):
    """Random table plus symmetric neighbor lists over term names ``t00``...

    Returns ``(table, lists, edges)`` where ``edges`` are index pairs ``i < j``.
    """
    terms = [f"t{i:02d}" for i in range(n_terms)]
    vecs = rng.normal(scale=scale, size=(n_terms, dim))
    edges = [(i, j) for i in range(n_terms) for j in range(i + 1, n_terms)
             if rng.random() < p_edge]
    nbrs = {t: [] for t in terms}
    for i, j in edges:
        nbrs[terms[i]].append(terms[j])
        nbrs[terms[j]].append(terms[i])
    lists = NeighborLists({t: v for t, v in nbrs.items() if v})
    return EmbeddingTable(terms, vecs), lists, edges


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def synthetic_dir():
    return SYNTHETIC


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")
