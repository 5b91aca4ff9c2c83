"""Query-aware subgraph retrieval over textual graphs."""

__version__ = "0.1.0"

from .graph import (
    GraphFormatError,
    Query,
    Subgraph,
    TextualGraph,
    induced_edges,
    load_graph,
    load_queries,
    load_subgraph,
    save_graph,
    save_queries,
    save_subgraph,
)
from .retrieval import RetrievalConfig, SelectionTrace, cosine_scores, retrieve_attention, select_topk_union
from .pcst import PcstConfig, PcstInstance, assign_prizes, retrieve_pcst, solve_pcst

__all__ = [
    "GraphFormatError",
    "PcstConfig",
    "PcstInstance",
    "Query",
    "RetrievalConfig",
    "SelectionTrace",
    "Subgraph",
    "TextualGraph",
    "assign_prizes",
    "cosine_scores",
    "induced_edges",
    "load_graph",
    "load_queries",
    "load_subgraph",
    "retrieve_attention",
    "retrieve_pcst",
    "save_graph",
    "save_queries",
    "save_subgraph",
    "select_topk_union",
    "solve_pcst",
]
