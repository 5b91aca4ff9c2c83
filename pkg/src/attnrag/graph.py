"""Textual graph data model and its on-disk formats.

A graph directory holds three files::

    graph.json    {"dimension", "directed", "num_nodes", "num_edges"}
    nodes.jsonl   {"id", "text", "embedding"} per line
    edges.jsonl   {"src", "dst", "text", "embedding"} per line

Node ids are renumbered densely in file order at load; the original ids
are kept in ``TextualGraph.original_ids``.  Embeddings are float32 on disk
and float64 (holding float32-representable values) in memory.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

GRAPH_HEADER = "graph.json"
NODES_FILE = "nodes.jsonl"
EDGES_FILE = "edges.jsonl"
_FLOAT32_MAX = float(np.finfo(np.float32).max)


class GraphFormatError(ValueError):
    """Raised when a graph, query, or subgraph file violates its schema."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


def dumps_canonical(obj: Any) -> str:
    """JSON with sorted keys and no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _as_float32_values(values: Any) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr.astype(np.float32).astype(np.float64)


@dataclass(frozen=True)
class NodeRecord:
    id: int
    text: str
    embedding: np.ndarray


@dataclass(frozen=True)
class EdgeRecord:
    src: int
    dst: int
    text: str
    embedding: np.ndarray


def row_norms(features: np.ndarray) -> np.ndarray:
    """Read-only L2 norm of each row (einsum keeps the summation order fixed)."""
    f = np.asarray(features, dtype=np.float64)
    out = np.sqrt(np.einsum("ij,ij->i", f, f)) if f.ndim == 2 else np.zeros(0)
    out.setflags(write=False)
    return out


class TextualGraph:
    """Immutable graph whose nodes and edges carry text and an embedding.

    Storage is columnar: ``node_embeddings`` is ``(|V|, d)``, ``edge_src`` /
    ``edge_dst`` are int64 arrays of dense node ids and ``edge_embeddings``
    is ``(|E|, d)``.  All arrays are made read-only.
    """

    def __init__(
        self,
        dimension: int,
        node_texts: Sequence[str],
        node_embeddings: Any,
        edge_src: Any = (),
        edge_dst: Any = (),
        edge_texts: Sequence[str] = (),
        edge_embeddings: Any = None,
        directed: bool = True,
        original_ids: Sequence[int] | None = None,
    ):
        if int(dimension) <= 0:
            raise GraphFormatError(f"dimension must be positive, got {dimension}")
        d = int(dimension)
        n = len(node_texts)
        node_emb = _as_float32_values(node_embeddings).reshape(n, d) if n else np.zeros((0, d))
        src = np.array(edge_src, dtype=np.int64).reshape(-1)
        dst = np.array(edge_dst, dtype=np.int64).reshape(-1)
        m = len(edge_texts)
        if edge_embeddings is None:
            edge_emb = np.zeros((0, d))
        else:
            edge_emb = _as_float32_values(edge_embeddings)
            edge_emb = edge_emb.reshape(m, d) if m else np.zeros((0, d))
        if node_emb.shape != (n, d):
            raise GraphFormatError(f"node embeddings have shape {node_emb.shape}, expected {(n, d)}")
        if src.shape != (m,) or dst.shape != (m,) or edge_emb.shape != (m, d):
            raise GraphFormatError("edge arrays disagree in length")
        if not np.all(np.isfinite(node_emb)) or not np.all(np.isfinite(edge_emb)):
            raise GraphFormatError("embeddings must be finite")
        if m and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
            raise GraphFormatError("edge endpoint out of range")
        if original_ids is None:
            orig = np.arange(n, dtype=np.int64)
        else:
            orig = np.array(original_ids, dtype=np.int64).reshape(-1)
            if orig.shape != (n,):
                raise GraphFormatError("original_ids length differs from node count")
        for a in (node_emb, src, dst, edge_emb, orig):
            a.setflags(write=False)
        self.dimension = d
        self.directed = bool(directed)
        self.node_texts = tuple(str(t) for t in node_texts)
        self.node_embeddings = node_emb
        self.edge_src = src
        self.edge_dst = dst
        self.edge_texts = tuple(str(t) for t in edge_texts)
        self.edge_embeddings = edge_emb
        self.original_ids = orig
        # Per-row L2 norms, computed once so retrieval streams each matrix once per query.
        self.node_norms = row_norms(node_emb)
        self.edge_norms = row_norms(edge_emb)
        self._identity: str | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.node_texts)

    @property
    def num_edges(self) -> int:
        return len(self.edge_texts)

    def node(self, i: int) -> NodeRecord:
        return NodeRecord(int(i), self.node_texts[i], self.node_embeddings[i])

    def edge(self, j: int) -> EdgeRecord:
        return EdgeRecord(int(self.edge_src[j]), int(self.edge_dst[j]), self.edge_texts[j], self.edge_embeddings[j])

    @property
    def identity(self) -> str:
        """Content hash naming this graph in subgraph files."""
        if self._identity is None:
            h = hashlib.sha256()
            h.update(dumps_canonical([self.dimension, self.directed, self.num_nodes, self.num_edges]).encode())
            for arr in (self.original_ids, self.edge_src, self.edge_dst):
                h.update(arr.astype("<i8").tobytes())
            for arr in (self.node_embeddings, self.edge_embeddings):
                h.update(arr.astype("<f4").tobytes())
            h.update(dumps_canonical([self.node_texts, self.edge_texts]).encode())
            self._identity = h.hexdigest()[:16]
        return self._identity

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TextualGraph):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.directed == other.directed
            and self.node_texts == other.node_texts
            and self.edge_texts == other.edge_texts
            and np.array_equal(self.original_ids, other.original_ids)
            and np.array_equal(self.edge_src, other.edge_src)
            and np.array_equal(self.edge_dst, other.edge_dst)
            and np.array_equal(self.node_embeddings, other.node_embeddings)
            and np.array_equal(self.edge_embeddings, other.edge_embeddings)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"TextualGraph(d={self.dimension}, |V|={self.num_nodes}, |E|={self.num_edges}, directed={self.directed})"


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    embedding: np.ndarray
    gold_nodes: frozenset[int] | None = None

    def __post_init__(self):
        emb = np.array(self.embedding, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(emb)):
            raise GraphFormatError(f"query {self.id!r}: embedding must be finite")
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)
        if self.gold_nodes is not None:
            object.__setattr__(self, "gold_nodes", frozenset(int(v) for v in self.gold_nodes))

    def check_against(self, graph: TextualGraph) -> None:
        if self.embedding.shape[0] != graph.dimension:
            raise GraphFormatError(
                f"query {self.id!r}: embedding length {self.embedding.shape[0]} != graph dimension {graph.dimension}"
            )
        if self.gold_nodes and (min(self.gold_nodes) < 0 or max(self.gold_nodes) >= graph.num_nodes):
            raise GraphFormatError(f"query {self.id!r}: gold node outside graph")


@dataclass(frozen=True)
class Subgraph:
    """Retrieved ``(V*, E*)``: node ids and indices into the parent edge list."""

    parent: str
    node_ids: frozenset[int] = field(default_factory=frozenset)
    edge_indices: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "node_ids", frozenset(int(v) for v in self.node_ids))
        object.__setattr__(self, "edge_indices", frozenset(int(e) for e in self.edge_indices))

    @property
    def sorted_nodes(self) -> list[int]:
        return sorted(self.node_ids)

    @property
    def sorted_edges(self) -> list[int]:
        return sorted(self.edge_indices)

    def validate(self, graph: TextualGraph) -> None:
        """Check containment in ``graph`` and edge closure over ``node_ids``."""
        if self.node_ids and (min(self.node_ids) < 0 or max(self.node_ids) >= graph.num_nodes):
            raise GraphFormatError("subgraph references unknown node ids")
        if self.edge_indices and (min(self.edge_indices) < 0 or max(self.edge_indices) >= graph.num_edges):
            raise GraphFormatError("subgraph references unknown edge indices")
        for e in self.edge_indices:
            if int(graph.edge_src[e]) not in self.node_ids or int(graph.edge_dst[e]) not in self.node_ids:
                raise GraphFormatError(f"edge {e} has an endpoint outside the subgraph node set")

    def to_json(self, **extra: Any) -> dict[str, Any]:
        obj = {"graph": self.parent, "nodes": self.sorted_nodes, "edges": self.sorted_edges}
        obj.update(extra)
        return obj


def induced_edges(graph: TextualGraph, node_ids: Iterable[int]) -> frozenset[int]:
    """Indices of all edges whose two endpoints lie in ``node_ids``."""
    ids = np.fromiter((int(v) for v in node_ids), dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= graph.num_nodes):
        bad = sorted(int(v) for v in ids if v < 0 or v >= graph.num_nodes)
        raise GraphFormatError(f"unknown node id(s): {bad}")
    return frozenset(_induced_mask(graph, ids).nonzero()[0].tolist())


def _induced_mask(graph: TextualGraph, ids: np.ndarray) -> np.ndarray:
    member = np.zeros(graph.num_nodes, dtype=bool)
    member[ids] = True
    return member[graph.edge_src] & member[graph.edge_dst]


# --------------------------------------------------------------------------
# Loading and saving
# --------------------------------------------------------------------------


def _read_jsonl(path: Path):
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise GraphFormatError("missing file", path) from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"invalid JSON: {exc.msg}", path, lineno) from None
            if not isinstance(obj, dict):
                raise GraphFormatError("record is not a JSON object", path, lineno)
            yield lineno, obj


def _field(obj: dict, key: str, kind: type | tuple, path: Path, lineno: int | None) -> Any:
    if key not in obj:
        raise GraphFormatError(f"missing field {key!r}", path, lineno)
    value = obj[key]
    if isinstance(value, bool) and kind is not bool:
        raise GraphFormatError(f"field {key!r} has wrong type", path, lineno)
    if not isinstance(value, kind):
        raise GraphFormatError(f"field {key!r} has wrong type", path, lineno)
    return value


def _embedding(obj: dict, d: int, path: Path, lineno: int) -> list[float]:
    emb = _field(obj, "embedding", list, path, lineno)
    if len(emb) != d:
        raise GraphFormatError(f"dimension mismatch: embedding has length {len(emb)}, expected {d}", path, lineno)
    for x in emb:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise GraphFormatError("embedding entries must be numbers", path, lineno)
        if not math.isfinite(x):
            raise GraphFormatError("non-finite embedding value", path, lineno)
    if max(map(abs, emb), default=0.0) > _FLOAT32_MAX:
        raise GraphFormatError("embedding value overflows float32", path, lineno)
    return emb


def load_graph(path: str | Path) -> TextualGraph:
    """Load and validate a graph directory.

    Every violation raises :class:`GraphFormatError` naming the file and,
    for record files, the 1-based line number.
    """
    root = Path(path)
    header_path = root / GRAPH_HEADER
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise GraphFormatError("missing file", header_path) from None
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"invalid JSON: {exc.msg}", header_path) from None
    if not isinstance(header, dict):
        raise GraphFormatError("header is not a JSON object", header_path)
    d = _field(header, "dimension", int, header_path, None)
    directed = _field(header, "directed", bool, header_path, None) if "directed" in header else True
    n_declared = _field(header, "num_nodes", int, header_path, None)
    m_declared = _field(header, "num_edges", int, header_path, None)
    if d <= 0:
        raise GraphFormatError("dimension must be positive", header_path)

    nodes_path = root / NODES_FILE
    dense: dict[int, int] = {}
    texts: list[str] = []
    embs: list[list[float]] = []
    for lineno, obj in _read_jsonl(nodes_path):
        nid = _field(obj, "id", int, nodes_path, lineno)
        if nid < 0:
            raise GraphFormatError(f"negative node id {nid}", nodes_path, lineno)
        if nid in dense:
            raise GraphFormatError(f"duplicate node id {nid}", nodes_path, lineno)
        texts.append(_field(obj, "text", str, nodes_path, lineno))
        embs.append(_embedding(obj, d, nodes_path, lineno))
        dense[nid] = len(dense)
    if len(texts) != n_declared:
        raise GraphFormatError(f"header declares {n_declared} nodes, found {len(texts)}", nodes_path)

    edges_path = root / EDGES_FILE
    src: list[int] = []
    dst: list[int] = []
    etexts: list[str] = []
    eembs: list[list[float]] = []
    for lineno, obj in _read_jsonl(edges_path):
        ends = []
        for key in ("src", "dst"):
            v = _field(obj, key, int, edges_path, lineno)
            if v not in dense:
                raise GraphFormatError(f"dangling edge endpoint {key}={v}", edges_path, lineno)
            ends.append(dense[v])
        src.append(ends[0])
        dst.append(ends[1])
        etexts.append(_field(obj, "text", str, edges_path, lineno))
        eembs.append(_embedding(obj, d, edges_path, lineno))
    if len(etexts) != m_declared:
        raise GraphFormatError(f"header declares {m_declared} edges, found {len(etexts)}", edges_path)

    return TextualGraph(
        d,
        texts,
        np.asarray(embs, dtype=np.float64).reshape(len(texts), d),
        src,
        dst,
        etexts,
        np.asarray(eembs, dtype=np.float64).reshape(len(etexts), d),
        directed=directed,
        original_ids=list(dense),
    )


def _float32_list(row: np.ndarray) -> list[float]:
    return row.astype(np.float32).astype(np.float64).tolist()


def save_graph(graph: TextualGraph, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "dimension": graph.dimension,
        "directed": graph.directed,
        "num_nodes": graph.num_nodes,
        "num_edges": graph.num_edges,
    }
    (root / GRAPH_HEADER).write_text(dumps_canonical(header) + "\n", encoding="utf-8")
    orig = graph.original_ids.tolist()
    with open(root / NODES_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(graph.num_nodes):
            rec = {"id": orig[i], "text": graph.node_texts[i], "embedding": _float32_list(graph.node_embeddings[i])}
            fh.write(dumps_canonical(rec) + "\n")
    src = graph.edge_src.tolist()
    dst = graph.edge_dst.tolist()
    with open(root / EDGES_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for j in range(graph.num_edges):
            rec = {
                "src": orig[src[j]],
                "dst": orig[dst[j]],
                "text": graph.edge_texts[j],
                "embedding": _float32_list(graph.edge_embeddings[j]),
            }
            fh.write(dumps_canonical(rec) + "\n")


def save_subgraph(sub: Subgraph, path: str | Path, **extra: Any) -> None:
    """Write ``subgraph.json``; ``extra`` adds fields such as ``objective``."""
    Path(path).write_text(dumps_canonical(sub.to_json(**extra)) + "\n", encoding="utf-8")


def load_subgraph(path: str | Path) -> Subgraph:
    p = Path(path)
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise GraphFormatError("missing file", p) from None
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"invalid JSON: {exc.msg}", p) from None
    if not isinstance(obj, dict):
        raise GraphFormatError("subgraph is not a JSON object", p)
    parent = _field(obj, "graph", str, p, None)
    nodes = _field(obj, "nodes", list, p, None)
    edges = _field(obj, "edges", list, p, None)
    for v in nodes + edges:
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise GraphFormatError("subgraph ids must be non-negative integers", p)
    return Subgraph(parent, frozenset(nodes), frozenset(edges))


def query_to_json(query: Query) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": query.id,
        "text": query.text,
        "embedding": query.embedding.tolist(),
    }
    if query.gold_nodes is not None:
        obj["gold_nodes"] = sorted(query.gold_nodes)
    return obj


def save_queries(queries: Iterable[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in queries:
            fh.write(dumps_canonical(query_to_json(q)) + "\n")


def load_queries(path: str | Path, graph: TextualGraph | None = None, embed=None) -> list[Query]:
    """Read a JSONL file of query records.

    ``embedding`` may be omitted when ``embed`` (a ``text -> vector``
    callable) is given.  ``gold_nodes`` are original node ids and are
    mapped to dense ids when ``graph`` is supplied.
    """
    p = Path(path)
    remap = None
    if graph is not None:
        remap = {int(o): i for i, o in enumerate(graph.original_ids.tolist())}
    out: list[Query] = []
    for lineno, obj in _read_jsonl(p):
        qid = obj.get("id", str(len(out)))
        if not isinstance(qid, (str, int)) or isinstance(qid, bool):
            raise GraphFormatError("field 'id' has wrong type", p, lineno)
        text = _field(obj, "text", str, p, lineno)
        if "embedding" in obj:
            d = graph.dimension if graph is not None else len(obj["embedding"]) if isinstance(obj["embedding"], list) else -1
            emb = _embedding(obj, d, p, lineno)
        elif embed is not None:
            emb = embed(text)
        else:
            raise GraphFormatError("missing field 'embedding'", p, lineno)
        gold = None
        if obj.get("gold_nodes") is not None:
            raw = _field(obj, "gold_nodes", list, p, lineno)
            gold = set()
            for v in raw:
                if isinstance(v, bool) or not isinstance(v, int):
                    raise GraphFormatError("gold node ids must be integers", p, lineno)
                if remap is not None:
                    if v not in remap:
                        raise GraphFormatError(f"gold node {v} not in graph", p, lineno)
                    v = remap[v]
                gold.add(v)
        q = Query(str(qid), text, np.asarray(emb, dtype=np.float64), frozenset(gold) if gold is not None else None)
        if graph is not None:
            try:
                q.check_against(graph)
            except GraphFormatError as exc:
                raise GraphFormatError(str(exc), p, lineno) from None
        out.append(q)
    return out
