"""Benchmark harness: attention retrieval vs. the PCST baseline.

Latency is wall time around the retrieval call only (graph and queries
already in memory).  Recall is node-level: ``|V* & gold| / |gold|``.
"""

from __future__ import annotations

import csv
import dataclasses
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .graph import Query, Subgraph, TextualGraph, dumps_canonical
from .pcst import PcstConfig, retrieve_pcst
from .retrieval import RetrievalConfig, retrieve_attention

METHODS = ("attention", "pcst")


@dataclass(frozen=True)
class SyntheticSpec:
    num_nodes: int
    num_edges: int
    dimension: int = 64
    gold_size: int = 5
    noise: float = 0.1
    seed: int = 0
    num_queries: int = 1

    def __post_init__(self):
        if self.num_nodes < 0 or self.num_edges < 0 or self.dimension <= 0:
            raise ValueError("sizes must be non-negative and dimension positive")
        if self.num_edges > self.num_nodes**2:
            raise ValueError(f"num_edges={self.num_edges} exceeds num_nodes^2={self.num_nodes ** 2}")
        if self.gold_size < 0 or self.num_queries < 0:
            raise ValueError("gold_size and num_queries must be non-negative")
        if self.gold_size * self.num_queries > self.num_nodes:
            raise ValueError(
                f"{self.num_queries} disjoint gold sets of size {self.gold_size} do not fit in {self.num_nodes} nodes"
            )
        if not self.noise >= 0:
            raise ValueError("noise must be >= 0")


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def generate_synthetic(spec: SyntheticSpec) -> tuple[TextualGraph, list[Query]]:
    """Random graph with one planted gold set per query.

    Gold node embeddings are ``q + noise * N(0, I)``; every other node and
    edge embedding is an independent random unit vector.  Endpoints are
    uniform, so self-loops and parallel edges can occur.
    """
    rng = np.random.default_rng(spec.seed)
    n, m, d = spec.num_nodes, spec.num_edges, spec.dimension
    # float32 rounding up front so queries and nodes share exact values.
    q_emb = _unit_rows(rng, spec.num_queries, d).astype(np.float32).astype(np.float64)
    node_emb = _unit_rows(rng, n, d)
    order = rng.permutation(n)
    gold_sets = []
    for qi in range(spec.num_queries):
        gold = np.sort(order[qi * spec.gold_size : (qi + 1) * spec.gold_size])
        node_emb[gold] = q_emb[qi] + spec.noise * rng.standard_normal((gold.shape[0], d))
        gold_sets.append(frozenset(gold.tolist()))
    if m:
        src = rng.integers(0, n, size=m)
        dst = rng.integers(0, n, size=m)
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    edge_emb = _unit_rows(rng, m, d)
    graph = TextualGraph(
        d,
        [f"entity {i}" for i in range(n)],
        node_emb,
        src,
        dst,
        [f"relation {j % 97}" for j in range(m)],
        edge_emb,
    )
    queries = [Query(f"q{qi}", f"query {qi}", q_emb[qi], gold_sets[qi]) for qi in range(spec.num_queries)]
    return graph, queries


def _recall(sub: Subgraph, gold: frozenset[int] | None) -> float | None:
    if not gold:
        return None
    return len(sub.node_ids & gold) / len(gold)


def _run_one(graph: TextualGraph, query: Query, method: str, cfg: Any) -> dict[str, Any]:
    row: dict[str, Any] = {"query": query.id, "method": method}
    try:
        if method == "attention":
            t0 = time.perf_counter_ns()
            sub, _ = retrieve_attention(graph, query, cfg)
            t1 = time.perf_counter_ns()
        elif method == "pcst":
            t0 = time.perf_counter_ns()
            sub, _ = retrieve_pcst(graph, query, cfg)
            t1 = time.perf_counter_ns()
        else:
            raise ValueError(f"unknown method {method!r}")
    except Exception as exc:  # recorded per query, never fatal
        row.update(latency_ms=None, num_nodes=None, num_edges=None, recall=None, error=f"{type(exc).__name__}: {exc}")
        return row
    row.update(
        latency_ms=max(t1 - t0, 1) / 1e6,
        num_nodes=len(sub.node_ids),
        num_edges=len(sub.edge_indices),
        recall=_recall(sub, query.gold_nodes),
        error=None,
    )
    return row


def _summarize(rows: list[dict[str, Any]]) -> dict[str, Any]:
    if not rows:
        return {}
    ok = [r for r in rows if r["error"] is None]
    lat = np.array([r["latency_ms"] for r in ok], dtype=np.float64)
    recalls = [r["recall"] for r in ok if r["recall"] is not None]
    return {
        "queries": len(rows),
        "failures": len(rows) - len(ok),
        "latency_ms": {
            "mean": float(lat.mean()) if ok else None,
            "median": float(np.median(lat)) if ok else None,
            "p95": float(np.percentile(lat, 95)) if ok else None,
        },
        "mean_nodes": float(np.mean([r["num_nodes"] for r in ok])) if ok else None,
        "mean_edges": float(np.mean([r["num_edges"] for r in ok])) if ok else None,
        "recall": float(np.mean(recalls)) if recalls else None,
    }


@dataclass
class BenchReport:
    methods: dict[str, dict[str, Any]]
    rows: list[dict[str, Any]]
    config: dict[str, Any]
    machine: dict[str, Any]
    mode: str

    def to_json(self) -> dict[str, Any]:
        out = {
            "methods": self.methods,
            "config": self.config,
            "machine": self.machine,
            "mode": self.mode,
            "queries": self.rows,
        }
        att = self.methods.get("attention", {}).get("latency_ms", {}).get("mean")
        pc = self.methods.get("pcst", {}).get("latency_ms", {}).get("mean")
        if att and pc:
            out["pcst_over_attention_latency"] = pc / att
        return out

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(dumps_canonical(self.to_json()) + "\n", encoding="utf-8")

    def write_csv(self, path: str | Path) -> None:
        fields = ["query", "method", "latency_ms", "num_nodes", "num_edges", "recall", "error"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: ("" if r[k] is None else r[k]) for k in fields})


def machine_metadata() -> dict[str, Any]:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


def default_configs() -> dict[str, Any]:
    return {"attention": RetrievalConfig(), "pcst": PcstConfig()}


def run_bench(
    graph: TextualGraph,
    queries: Sequence[Query],
    methods: Sequence[str] = METHODS,
    configs: Mapping[str, Any] | None = None,
    jobs: int = 1,
) -> BenchReport:
    """Run every method on every query and summarize.

    ``jobs > 1`` runs queries on a thread pool; the report's ``mode`` says so
    because latencies are then not comparable to sequential runs.
    """
    cfgs = default_configs()
    cfgs.update(configs or {})
    for q in queries:
        q.check_against(graph)
    graph.identity  # hash once, outside the timed region
    tasks = [(q, m) for m in methods for q in queries]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda t: _run_one(graph, t[0], t[1], cfgs.get(t[1])), tasks))
        mode = f"parallel(jobs={jobs})"
    else:
        rows = [_run_one(graph, q, m, cfgs.get(m)) for q, m in tasks]
        mode = "sequential"
    per_method = {m: _summarize([r for r in rows if r["method"] == m]) for m in methods}
    config = {
        "graph": {"identity": graph.identity, "num_nodes": graph.num_nodes, "num_edges": graph.num_edges},
        "methods": {m: dataclasses.asdict(cfgs[m]) for m in methods if dataclasses.is_dataclass(cfgs.get(m))},
        "jobs": jobs,
    }
    return BenchReport(per_method, rows, config, machine_metadata(), mode)


def strip_timings(report_json: dict[str, Any]) -> dict[str, Any]:
    """Copy of a report with every timing and machine field removed."""
    out = {k: v for k, v in report_json.items() if k not in ("machine", "pcst_over_attention_latency")}
    out["methods"] = {
        m: {k: v for k, v in s.items() if k != "latency_ms"} for m, s in report_json["methods"].items()
    }
    out["queries"] = [{k: v for k, v in r.items() if k != "latency_ms"} for r in report_json["queries"]]
    return out
