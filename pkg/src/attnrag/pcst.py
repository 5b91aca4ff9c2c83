"""Prize-collecting Steiner tree baseline.

Prizes go to the ``k_prize`` nodes most similar to the query (``k_prize``
for the best, ``k_prize - 1`` for the next, ...) and every edge costs the
same.  Two solvers return a single tree:

``exact``
    enumerates connected node subsets (at most 16 nodes) and spans each
    with a minimum spanning tree.
``greedy``
    starts one cluster per prize node and repeatedly merges the pair of
    clusters whose cheapest connecting path gives the largest gain (ties
    included), then prunes unprofitable leaves.  Same spirit as moat
    growing, but merges are decided on exact path costs rather than dual
    growth.

Edges are treated as undirected and self-loops are never used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .graph import GraphFormatError, Query, Subgraph, TextualGraph
from .retrieval import cosine_scores, top_k_indices

Solver = Literal["greedy", "exact"]
EXACT_MAX_NODES = 16


@dataclass(frozen=True)
class PcstConfig:
    k_prize: int = 4
    edge_cost: float = 0.5
    solver: Solver = "greedy"

    def __post_init__(self):
        if self.k_prize < 1:
            raise ValueError(f"k_prize must be >= 1, got {self.k_prize}")
        if not self.edge_cost > 0 or not np.isfinite(self.edge_cost):
            raise ValueError(f"edge_cost must be positive and finite, got {self.edge_cost}")
        if self.solver not in ("greedy", "exact"):
            raise ValueError(f"solver must be 'greedy' or 'exact', got {self.solver!r}")


@dataclass(frozen=True)
class PcstInstance:
    prizes: np.ndarray
    costs: np.ndarray

    def __post_init__(self):
        p = np.array(self.prizes, dtype=np.float64).reshape(-1)
        c = np.array(self.costs, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("prizes must be finite and non-negative")
        if not np.all(np.isfinite(c)) or np.any(c <= 0):
            raise ValueError("costs must be finite and positive")
        p.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "prizes", p)
        object.__setattr__(self, "costs", c)


def assign_prizes(graph: TextualGraph, query: Query, cfg: PcstConfig) -> PcstInstance:
    if query.embedding.shape[0] != graph.dimension:
        raise GraphFormatError(
            f"dimension mismatch: query has length {query.embedding.shape[0]}, graph dimension is {graph.dimension}"
        )
    scores = cosine_scores(query.embedding, graph.node_embeddings, graph.node_norms)
    top = top_k_indices(scores, cfg.k_prize)
    # top_k_indices is not ordered; rank by (-score, index).
    ranked = top[np.lexsort((top, -scores[top]))]
    prizes = np.zeros(graph.num_nodes)
    prizes[ranked] = cfg.k_prize - np.arange(ranked.shape[0], dtype=np.float64)
    return PcstInstance(prizes, np.full(graph.num_edges, float(cfg.edge_cost)))


def objective(inst: PcstInstance, sub: Subgraph) -> float:
    return float(sum(inst.prizes[v] for v in sub.sorted_nodes) - sum(inst.costs[e] for e in sub.sorted_edges))


def solve_pcst(graph: TextualGraph, inst: PcstInstance, solver: Solver = "greedy") -> Subgraph:
    if inst.prizes.shape[0] != graph.num_nodes or inst.costs.shape[0] != graph.num_edges:
        raise ValueError("instance size does not match graph")
    if solver == "exact":
        nodes, edges = _solve_exact(graph, inst)
    elif solver == "greedy":
        nodes, edges = _solve_greedy(graph, inst)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return Subgraph(graph.identity, frozenset(nodes), frozenset(edges))


def retrieve_pcst(graph: TextualGraph, query: Query, cfg: PcstConfig | None = None) -> tuple[Subgraph, float]:
    cfg = cfg or PcstConfig()
    inst = assign_prizes(graph, query, cfg)
    sub = solve_pcst(graph, inst, cfg.solver)
    return sub, objective(inst, sub)


class _DisjointSet:
    def __init__(self, items):
        self.parent = {v: v for v in items}

    def find(self, v):
        root = v
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[v] != root:
            self.parent[v], v = root, self.parent[v]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True


def _cheapest_parallel_edges(graph: TextualGraph, costs: np.ndarray) -> dict[tuple[int, int], int]:
    """Map each unordered node pair to its cheapest edge (lowest index on ties)."""
    best: dict[tuple[int, int], int] = {}
    for e in range(graph.num_edges):
        u, v = int(graph.edge_src[e]), int(graph.edge_dst[e])
        if u == v:
            continue
        key = (u, v) if u < v else (v, u)
        cur = best.get(key)
        if cur is None or costs[e] < costs[cur]:
            best[key] = e
    return best


def _solve_exact(graph: TextualGraph, inst: PcstInstance) -> tuple[list[int], list[int]]:
    n = graph.num_nodes
    if n > EXACT_MAX_NODES:
        raise ValueError(f"exact solver is limited to {EXACT_MAX_NODES} nodes, graph has {n}")
    pairs = _cheapest_parallel_edges(graph, inst.costs)
    adj = [0] * n
    for u, v in pairs:
        adj[u] |= 1 << v
        adj[v] |= 1 << u
    # Kruskal order over simple edges, fixed once.
    order = sorted(pairs.items(), key=lambda kv: (inst.costs[kv[1]], kv[1]))
    prizes = inst.prizes.tolist()

    best_val, best_nodes, best_edges = 0.0, [], []
    for mask in range(1, 1 << n):
        # Connectivity by flood fill inside the mask.
        low = mask & -mask
        seen, frontier = low, low
        while frontier:
            grow = 0
            f = frontier
            while f:
                b = f & -f
                grow |= adj[b.bit_length() - 1]
                f ^= b
            frontier = grow & mask & ~seen
            seen |= frontier
        if seen != mask:
            continue
        nodes = [i for i in range(n) if mask >> i & 1]
        gain = sum(prizes[i] for i in nodes)
        if gain <= best_val:
            continue
        ds = _DisjointSet(nodes)
        tree, cost = [], 0.0
        for (u, v), e in order:
            if mask >> u & 1 and mask >> v & 1 and ds.union(u, v):
                tree.append(e)
                cost += inst.costs[e]
                if len(tree) == len(nodes) - 1:
                    break
        val = gain - cost
        if val > best_val:
            best_val, best_nodes, best_edges = val, nodes, tree
    return best_nodes, sorted(best_edges)


def _solve_greedy(graph: TextualGraph, inst: PcstInstance) -> tuple[list[int], list[int]]:
    n = graph.num_nodes
    prizes = inst.prizes
    seeds = np.flatnonzero(prizes > 0).tolist()
    if not seeds:
        return [], []

    src, dst, costs = graph.edge_src, graph.edge_dst, inst.costs
    keep = src != dst
    esrc, edst, ecost, eidx = src[keep], dst[keep], costs[keep], np.flatnonzero(keep)
    # Both directions; duplicate arcs are dropped by keeping the cheapest per pair below.
    arc_u = np.concatenate([esrc, edst])
    arc_v = np.concatenate([edst, esrc])
    arc_c = np.concatenate([ecost, ecost])
    arc_e = np.concatenate([eidx, eidx])
    order = np.lexsort((arc_e, arc_c, arc_v, arc_u))
    arc_u, arc_v, arc_c, arc_e = arc_u[order], arc_v[order], arc_c[order], arc_e[order]
    first = np.ones(arc_u.shape[0], dtype=bool)
    first[1:] = (arc_u[1:] != arc_u[:-1]) | (arc_v[1:] != arc_v[:-1])
    arc_u, arc_v, arc_c, arc_e = arc_u[first], arc_v[first], arc_c[first], arc_e[first]
    arc_of = {(int(u), int(v)): int(e) for u, v, e in zip(arc_u.tolist(), arc_v.tolist(), arc_e.tolist())}

    owner = np.full(n, -1, dtype=np.int64)
    clusters: dict[int, dict] = {}
    for cid, v in enumerate(seeds):
        owner[v] = cid
        clusters[cid] = {"nodes": {v}, "edges": set(), "value": float(prizes[v])}

    while len(clusters) > 1:
        best = None  # (gain, cid_a, cid_b, path_nodes, path_edges)
        for a in sorted(clusters):
            ca = clusters[a]
            # Arcs may leave cluster a or unclaimed nodes; other clusters are sinks.
            expand = (owner[arc_u] == a) | (owner[arc_u] == -1)
            g = csr_matrix((arc_c[expand], (arc_u[expand], arc_v[expand])), shape=(n, n))
            sources = sorted(ca["nodes"])
            limit = ca["value"]
            dist, pred, origin = dijkstra(
                g, directed=True, indices=sources, min_only=True, return_predecessors=True, limit=limit
            )
            for b in sorted(clusters):
                if b <= a:
                    continue
                cb = clusters[b]
                b_nodes = sorted(cb["nodes"])
                d_b = dist[b_nodes]
                j = int(np.argmin(d_b))
                path_cost = float(d_b[j])
                if not np.isfinite(path_cost):
                    continue
                gain = ca["value"] + cb["value"] - path_cost - max(ca["value"], cb["value"])
                # Zero-gain merges are kept: a later merge through the shared
                # Steiner nodes may pay off (e.g. three leaves of a star).
                if gain < 0:
                    continue
                if best is None or gain > best[0]:
                    target = b_nodes[j]
                    path_nodes, path_edges = [], []
                    v = target
                    while pred[v] >= 0:
                        u = int(pred[v])
                        path_edges.append(arc_of[(u, v)])
                        if owner[u] == -1:
                            path_nodes.append(u)
                        v = u
                    best = (gain, a, b, path_nodes, path_edges, path_cost)
        if best is None:
            break
        _, a, b, path_nodes, path_edges, path_cost = best
        ca, cb = clusters[a], clusters.pop(b)
        ca["nodes"] |= cb["nodes"] | set(path_nodes)
        ca["edges"] |= cb["edges"] | set(path_edges)
        ca["value"] = ca["value"] + cb["value"] + float(sum(prizes[v] for v in path_nodes)) - path_cost
        owner[list(ca["nodes"])] = a

    for c in clusters.values():
        _prune_leaves(c, graph, inst)

    best_cid = max(sorted(clusters), key=lambda cid: (clusters[cid]["value"], -cid))
    c = clusters[best_cid]
    return sorted(c["nodes"]), sorted(c["edges"])


def _prune_leaves(cluster: dict, graph: TextualGraph, inst: PcstInstance) -> None:
    """Drop leaves whose prize does not pay for their edge, repeatedly."""
    incident: dict[int, set[int]] = {v: set() for v in cluster["nodes"]}
    for e in cluster["edges"]:
        incident[int(graph.edge_src[e])].add(e)
        incident[int(graph.edge_dst[e])].add(e)
    stack = sorted(v for v, es in incident.items() if len(es) == 1)
    while stack:
        v = stack.pop()
        if v not in incident or len(incident[v]) != 1:
            continue
        (e,) = incident[v]
        if inst.prizes[v] >= inst.costs[e]:
            continue
        u = int(graph.edge_src[e]) if int(graph.edge_dst[e]) == v else int(graph.edge_dst[e])
        del incident[v]
        incident[u].discard(e)
        cluster["nodes"].discard(v)
        cluster["edges"].discard(e)
        cluster["value"] += float(inst.costs[e] - inst.prizes[v])
        if len(incident[u]) == 1:
            stack.append(u)
