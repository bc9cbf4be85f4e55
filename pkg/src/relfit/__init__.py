"""Retrofit concept embeddings with ontology relations and score relatedness."""

__version__ = "0.1.0"

from .evaluation import (
    BASELINE_LABEL,
    GridReport,
    GridSpec,
    evaluate,
    evaluate_table,
    grid_table,
    rank_transform,
    run_relation_grid,
    spearman,
)
from .ingest import (
    BenchmarkSchema,
    ConsoColumns,
    RelColumns,
    RrfColumnMap,
    parse_benchmark,
    parse_embeddings,
    parse_neighbor_lists,
    parse_rrf_conso,
    parse_rrf_rel,
    write_embeddings,
    write_neighbor_lists,
)
from .model import (
    BenchmarkDataset,
    BenchmarkPair,
    ConceptLexicon,
    EmbeddingTable,
    EvalReport,
    NeighborLists,
    ParseError,
    RelationCode,
    RelationGraph,
    RelfitError,
    RetrofitConfig,
    canonicalize_term,
    make_vector,
)
from .relatedness import ScoredPair, cosine, mean_pool, pool_terms, score_pairs
from .retrofit import RetrofitResult, build_neighbor_lists, objective_value, retrofit
