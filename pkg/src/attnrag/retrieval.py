"""Query-aware subgraph selection by cosine attention scores.

Nodes and edges are scored against the query embedding, each side keeps
the union of its threshold-passing and top-k items, endpoints of kept
edges join the node set, and the edge set is closed over the final nodes.
The result is not required to be connected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .graph import GraphFormatError, Query, Subgraph, TextualGraph, _induced_mask, dumps_canonical, row_norms

EdgePolicy = Literal["induced", "selected-only"]
EDGE_POLICIES = ("induced", "selected-only")

# Any cosine is <= 1, so a threshold above 1 selects nothing.
THRESHOLD_DISABLED = 1.1

# Scores are snapped to multiples of 2**-40 (round half to even) so that
# cosines which are mathematically equal, or differ only by float rounding
# of a rescaled query, compare equal.
SCORE_GRID_BITS = 40


@dataclass(frozen=True)
class RetrievalConfig:
    k_nodes: int = 3
    k_edges: int = 3
    threshold_node: float = THRESHOLD_DISABLED
    threshold_edge: float = THRESHOLD_DISABLED
    edge_policy: EdgePolicy = "induced"

    def __post_init__(self):
        if self.k_nodes < 0 or self.k_edges < 0:
            raise ValueError("k_nodes and k_edges must be non-negative")
        for name in ("threshold_node", "threshold_edge"):
            t = getattr(self, name)
            # Values above 1 are accepted as "disabled".
            if not math.isfinite(t) or t < -1.0:
                raise ValueError(f"{name} must be a finite value >= -1, got {t}")
        if self.edge_policy == "selected":
            object.__setattr__(self, "edge_policy", "selected-only")
        if self.edge_policy not in EDGE_POLICIES:
            raise ValueError(f"edge_policy must be one of {EDGE_POLICIES}, got {self.edge_policy!r}")


@dataclass(frozen=True)
class SelectionTrace:
    node_scores: np.ndarray
    edge_scores: np.ndarray
    v_topk: frozenset[int] = field(default_factory=frozenset)
    e_topk: frozenset[int] = field(default_factory=frozenset)
    v_incident: frozenset[int] = field(default_factory=frozenset)

    def to_json(self) -> dict:
        return {
            "node_scores": self.node_scores.tolist(),
            "edge_scores": self.edge_scores.tolist(),
            "v_topk": sorted(self.v_topk),
            "e_topk": sorted(self.e_topk),
            "v_incident": sorted(self.v_incident),
        }


def cosine_scores(q_emb, features, norms: np.ndarray | None = None) -> np.ndarray:
    """Cosine similarity of ``q_emb`` with each row of ``features``.

    ``norms`` may supply precomputed row norms (as from ``row_norms``).
    A zero-norm query or row scores 0.  Results are clipped to [-1, 1] and
    snapped to the ``2**-SCORE_GRID_BITS`` grid (absolute error < 5e-13).
    """
    q = np.asarray(q_emb, dtype=np.float64).reshape(-1)
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1 and f.size == 0:
        f = f.reshape(0, q.shape[0])
    if f.ndim != 2 or f.shape[1] != q.shape[0]:
        raise GraphFormatError(f"dimension mismatch: query has length {q.shape[0]}, features have shape {f.shape}")
    n = f.shape[0]
    q_norm = math.sqrt(float(np.dot(q, q)))
    if n == 0 or q_norm == 0.0:
        return np.zeros(n)
    # Normalize the query first so huge or tiny scales do not under/overflow.
    # einsum, not matmul: BLAS gemv can sum identical rows in different orders,
    # which would split exact ties.
    dots = np.einsum("ij,j->i", f, q / q_norm)
    f_norm = row_norms(f) if norms is None else norms
    out = np.zeros(n)
    nz = f_norm > 0.0
    np.divide(dots, f_norm, out=out, where=nz)
    np.clip(out, -1.0, 1.0, out=out)
    return np.ldexp(np.rint(np.ldexp(out, SCORE_GRID_BITS)), -SCORE_GRID_BITS)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores, ties to the smaller index.

    Uses a partial partition, so cost is linear in ``len(scores)``.
    """
    n = scores.shape[0]
    k = min(max(int(k), 0), n)
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    if k == n:
        return np.arange(n, dtype=np.int64)
    neg = -scores
    kth = np.partition(neg, k - 1)[k - 1]
    above = np.flatnonzero(neg < kth)
    tied = np.flatnonzero(neg == kth)[: k - above.shape[0]]
    return np.concatenate([above, tied])


def select_topk_union(scores, k: int, threshold: float) -> frozenset[int]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    chosen = np.union1d(np.flatnonzero(s >= threshold), top_k_indices(s, k))
    return frozenset(chosen.tolist())


def retrieve_attention(
    graph: TextualGraph, query: Query, cfg: RetrievalConfig | None = None
) -> tuple[Subgraph, SelectionTrace]:
    cfg = cfg or RetrievalConfig()
    if query.embedding.shape[0] != graph.dimension:
        raise GraphFormatError(
            f"dimension mismatch: query has length {query.embedding.shape[0]}, graph dimension is {graph.dimension}"
        )
    node_scores = cosine_scores(query.embedding, graph.node_embeddings, graph.node_norms)
    edge_scores = cosine_scores(query.embedding, graph.edge_embeddings, graph.edge_norms)

    v_sel = np.union1d(np.flatnonzero(node_scores >= cfg.threshold_node), top_k_indices(node_scores, cfg.k_nodes))
    e_sel = np.union1d(np.flatnonzero(edge_scores >= cfg.threshold_edge), top_k_indices(edge_scores, cfg.k_edges))
    v_inc = np.union1d(graph.edge_src[e_sel], graph.edge_dst[e_sel])
    v_star = np.union1d(v_sel, v_inc)

    if cfg.edge_policy == "induced":
        e_star = np.flatnonzero(_induced_mask(graph, v_star))
    else:
        # Endpoints of every selected edge are already in V*, so this keeps all of them.
        member = np.zeros(graph.num_nodes, dtype=bool)
        member[v_star] = True
        e_star = e_sel[member[graph.edge_src[e_sel]] & member[graph.edge_dst[e_sel]]]

    node_scores.setflags(write=False)
    edge_scores.setflags(write=False)
    trace = SelectionTrace(
        node_scores,
        edge_scores,
        frozenset(v_sel.tolist()),
        frozenset(e_sel.tolist()),
        frozenset(v_inc.tolist()),
    )
    return Subgraph(graph.identity, frozenset(v_star.tolist()), frozenset(e_star.tolist())), trace


def save_trace(trace: SelectionTrace, path: str | Path) -> None:
    Path(path).write_text(dumps_canonical(trace.to_json()) + "\n", encoding="utf-8")
