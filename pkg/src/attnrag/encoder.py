"""Forward pass of the graph encoder: edge-aware graph transformer layers,
multi-head attention pooling and the widening projection MLP.

Edge ``e = (src -> dst)`` carries ``FFN(edge_attr) + W_rel (x_dst - x_src)``
and the receiving node ``dst`` attends over its in-edges.  A node with no
in-edges keeps its state (residual only).  All math is float64 numpy;
nothing here computes gradients.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import GraphFormatError, Subgraph, TextualGraph

LAYER_NORM_EPS = 1e-5


def silu(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(x), written with tanh so huge |x| does not overflow."""
    return x * (0.5 * (1.0 + np.tanh(0.5 * x)))


# Single switch for every hidden nonlinearity in this module.
ACTIVATION = silu


def layer_norm(x: np.ndarray, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    # Rescale before squaring so values near 1e154 cannot overflow.
    scale = np.max(np.abs(centered), axis=-1, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    c = centered / scale
    var = (c * c).mean(axis=-1, keepdims=True)
    return c / np.sqrt(var + eps / (scale * scale))


@dataclass(frozen=True)
class EncoderConfig:
    d_in: int
    d_hidden: int
    d_g: int
    d_llm: int
    num_layers: int = 2
    num_heads: int = 4
    expansion: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("d_in", "d_hidden", "d_g", "d_llm", "num_layers", "num_heads", "expansion"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_g % self.num_heads:
            raise ValueError(f"d_g={self.d_g} is not divisible by num_heads={self.num_heads}")
        if self.d_hidden % self.num_heads:
            raise ValueError(f"d_hidden={self.d_hidden} is not divisible by num_heads={self.num_heads}")

    @property
    def d_head(self) -> int:
        return self.d_hidden // self.num_heads

    @property
    def d_pool_head(self) -> int:
        return self.d_g // self.num_heads


@dataclass
class LayerParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray


@dataclass
class EncoderParams:
    """All weights, stored as ``(out, in)`` matrices."""

    config: EncoderConfig
    w_in: np.ndarray | None  # only when d_in != d_hidden
    edge_w1: np.ndarray
    edge_b1: np.ndarray
    edge_w2: np.ndarray
    edge_b2: np.ndarray
    w_rel: np.ndarray
    layers: list[LayerParams]
    pool_proj: np.ndarray  # (H, d_g/H, d_hidden)
    pool_score: np.ndarray  # (H, d_g/H)
    norm_gamma: np.ndarray
    norm_beta: np.ndarray
    proj_w1: np.ndarray
    proj_b1: np.ndarray
    proj_w2: np.ndarray
    proj_b2: np.ndarray

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        if self.w_in is not None:
            out.append(("w_in", self.w_in))
        out += [
            ("edge_w1", self.edge_w1),
            ("edge_b1", self.edge_b1),
            ("edge_w2", self.edge_w2),
            ("edge_b2", self.edge_b2),
            ("w_rel", self.w_rel),
        ]
        for i, layer in enumerate(self.layers):
            for name in ("w_q", "w_k", "w_v", "w_o"):
                out.append((f"layers.{i}.{name}", getattr(layer, name)))
        out += [
            ("pool_proj", self.pool_proj),
            ("pool_score", self.pool_score),
            ("norm_gamma", self.norm_gamma),
            ("norm_beta", self.norm_beta),
            ("proj_w1", self.proj_w1),
            ("proj_b1", self.proj_b1),
            ("proj_w2", self.proj_w2),
            ("proj_b2", self.proj_b2),
        ]
        return out


def expected_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    h, dh = cfg.num_heads, cfg.d_hidden
    wide = cfg.expansion * cfg.d_llm
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.d_in != dh:
        shapes["w_in"] = (dh, cfg.d_in)
    shapes.update(
        edge_w1=(dh, cfg.d_in),
        edge_b1=(dh,),
        edge_w2=(dh, dh),
        edge_b2=(dh,),
        w_rel=(dh, cfg.d_in),
    )
    for i in range(cfg.num_layers):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            shapes[f"layers.{i}.{name}"] = (dh, dh)
    shapes.update(
        pool_proj=(h, cfg.d_pool_head, dh),
        pool_score=(h, cfg.d_pool_head),
        norm_gamma=(cfg.d_g,),
        norm_beta=(cfg.d_g,),
        proj_w1=(wide, cfg.d_g),
        proj_b1=(wide,),
        proj_w2=(cfg.d_llm, wide),
        proj_b2=(cfg.d_llm,),
    )
    return shapes


def init_params(cfg: EncoderConfig) -> EncoderParams:
    """Seeded init: weights N(0, 1/fan_in), zero biases, unit norm gain."""
    rng = np.random.default_rng(cfg.seed)

    def dense(out_dim: int, in_dim: int) -> np.ndarray:
        return rng.standard_normal((out_dim, in_dim)) / math.sqrt(in_dim)

    dh, h = cfg.d_hidden, cfg.num_heads
    wide = cfg.expansion * cfg.d_llm
    w_in = dense(dh, cfg.d_in) if cfg.d_in != dh else None
    edge_w1 = dense(dh, cfg.d_in)
    edge_w2 = dense(dh, dh)
    w_rel = dense(dh, cfg.d_in)
    layers = [LayerParams(dense(dh, dh), dense(dh, dh), dense(dh, dh), dense(dh, dh)) for _ in range(cfg.num_layers)]
    pool_proj = rng.standard_normal((h, cfg.d_pool_head, dh)) / math.sqrt(dh)
    pool_score = rng.standard_normal((h, cfg.d_pool_head)) / math.sqrt(cfg.d_pool_head)
    return EncoderParams(
        config=cfg,
        w_in=w_in,
        edge_w1=edge_w1,
        edge_b1=np.zeros(dh),
        edge_w2=edge_w2,
        edge_b2=np.zeros(dh),
        w_rel=w_rel,
        layers=layers,
        pool_proj=pool_proj,
        pool_score=pool_score,
        norm_gamma=np.ones(cfg.d_g),
        norm_beta=np.zeros(cfg.d_g),
        proj_w1=dense(wide, cfg.d_g),
        proj_b1=np.zeros(wide),
        proj_w2=dense(cfg.d_llm, wide),
        proj_b2=np.zeros(cfg.d_llm),
    )


@dataclass(frozen=True)
class GraphInput:
    """Node features and edge list in local (0-based) numbering."""

    x: np.ndarray  # (n, d_in)
    edge_attr: np.ndarray  # (m, d_in)
    src: np.ndarray  # (m,)
    dst: np.ndarray  # (m,)

    @classmethod
    def from_graph(cls, graph: TextualGraph, sub: Subgraph | None = None) -> "GraphInput":
        if sub is None:
            return cls(graph.node_embeddings, graph.edge_embeddings, graph.edge_src, graph.edge_dst)
        sub.validate(graph)
        nodes = np.asarray(sub.sorted_nodes, dtype=np.int64)
        edges = np.asarray(sub.sorted_edges, dtype=np.int64)
        local = np.full(graph.num_nodes, -1, dtype=np.int64)
        local[nodes] = np.arange(nodes.shape[0])
        return cls(
            graph.node_embeddings[nodes].reshape(-1, graph.dimension),
            graph.edge_embeddings[edges].reshape(-1, graph.dimension),
            local[graph.edge_src[edges]],
            local[graph.edge_dst[edges]],
        )


def _check_dim(arr: np.ndarray, d: int, what: str) -> None:
    if arr.ndim != 2 or arr.shape[1] != d:
        raise GraphFormatError(f"dimension mismatch: {what} has shape {arr.shape}, expected (*, {d})")


def encode_edges(params: EncoderParams, g: GraphInput) -> np.ndarray:
    """Edge representations ``FFN(edge_attr) + W_rel (x_dst - x_src)``, shape ``(m, d_hidden)``."""
    d_in = params.config.d_in
    _check_dim(g.x, d_in, "node features")
    _check_dim(g.edge_attr, d_in, "edge features")
    hidden = ACTIVATION(g.edge_attr @ params.edge_w1.T + params.edge_b1)
    ffn = hidden @ params.edge_w2.T + params.edge_b2
    rel = (g.x[g.dst] - g.x[g.src]) @ params.w_rel.T
    return ffn + rel


def _segment_softmax(logits: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Softmax of ``logits`` (m, H) within groups given by ``seg`` (m,)."""
    h = logits.shape[1]
    peak = np.full((n, h), -np.inf)
    np.maximum.at(peak, seg, logits)
    w = np.exp(logits - peak[seg])
    total = np.zeros((n, h))
    np.add.at(total, seg, w)
    return w / total[seg]


def encode_nodes(params: EncoderParams, g: GraphInput, edge_repr: np.ndarray | None = None) -> np.ndarray:
    """Run the residual graph-transformer layers; returns ``(n, d_hidden)``."""
    cfg = params.config
    _check_dim(g.x, cfg.d_in, "node features")
    if edge_repr is None:
        edge_repr = encode_edges(params, g)
    n = g.x.shape[0]
    h, dk = cfg.num_heads, cfg.d_head
    z = g.x @ params.w_in.T if params.w_in is not None else np.array(g.x, dtype=np.float64)
    m = g.src.shape[0]
    if m == 0:
        return z
    e = edge_repr.reshape(m, h, dk)
    scale = 1.0 / math.sqrt(dk)
    for layer in params.layers:
        q = (z @ layer.w_q.T).reshape(n, h, dk)
        k = (z @ layer.w_k.T).reshape(n, h, dk)
        v = (z @ layer.w_v.T).reshape(n, h, dk)
        keys = k[g.src] + e
        logits = np.einsum("mhd,mhd->mh", q[g.dst], keys) * scale
        alpha = _segment_softmax(logits, g.dst, n)
        msg = (v[g.src] + e) * alpha[:, :, None]
        agg = np.zeros((n, h, dk))
        np.add.at(agg, g.dst, msg)
        z = z + agg.reshape(n, cfg.d_hidden) @ layer.w_o.T
    return z


def mha_pool(params: EncoderParams, z: np.ndarray, return_weights: bool = False):
    """Multi-head attention pooling of node embeddings into ``h_g`` (length ``d_g``).

    With ``return_weights`` also returns the ``(H, n)`` per-head softmax weights.
    """
    cfg = params.config
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("empty node set")
    _check_dim(z, cfg.d_hidden, "node embeddings")
    proj = np.einsum("hpd,nd->hnp", params.pool_proj, z)
    scores = np.einsum("hnp,hp->hn", proj, params.pool_score)
    scores = scores - scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    h_g = np.einsum("hn,hnp->hp", w, proj).reshape(cfg.d_g)
    if return_weights:
        return h_g, w
    return h_g


def project(params: EncoderParams, h_g: np.ndarray) -> np.ndarray:
    cfg = params.config
    h_g = np.asarray(h_g, dtype=np.float64)
    if h_g.shape != (cfg.d_g,):
        raise GraphFormatError(f"dimension mismatch: h_g has shape {h_g.shape}, expected ({cfg.d_g},)")
    u = layer_norm(h_g) * params.norm_gamma + params.norm_beta
    hidden = ACTIVATION(params.proj_w1 @ u + params.proj_b1)
    return params.proj_w2 @ hidden + params.proj_b2


@dataclass(frozen=True)
class GraphEmbedding:
    h_g: np.ndarray
    projected: np.ndarray
    pool_weights: np.ndarray = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {"h_g": self.h_g.tolist(), "projected": self.projected.tolist()}


def encode_graph(params: EncoderParams, graph: TextualGraph, sub: Subgraph | None = None) -> GraphEmbedding:
    g = GraphInput.from_graph(graph, sub)
    if g.x.shape[0] == 0:
        raise ValueError("empty node set")
    z = encode_nodes(params, g, encode_edges(params, g))
    h_g, w = mha_pool(params, z, return_weights=True)
    return GraphEmbedding(h_g, project(params, h_g), w)


# --------------------------------------------------------------------------
# Binary parameter file: magic, version, header length, JSON header, raw
# little-endian float64 arrays in header order.
# --------------------------------------------------------------------------

PARAMS_MAGIC = b"ATRGENC\0"
PARAMS_VERSION = 1


def save_params(params: EncoderParams, path: str | Path) -> None:
    cfg = params.config
    arrays = params.named_arrays()
    header = {
        "config": {
            "d_in": cfg.d_in,
            "d_hidden": cfg.d_hidden,
            "d_g": cfg.d_g,
            "d_llm": cfg.d_llm,
            "num_layers": cfg.num_layers,
            "num_heads": cfg.num_heads,
            "expansion": cfg.expansion,
            "seed": cfg.seed,
        },
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(PARAMS_MAGIC)
    buf.write(struct.pack("<II", PARAMS_VERSION, len(blob)))
    buf.write(blob)
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_params(path: str | Path) -> EncoderParams:
    p = Path(path)
    try:
        data = p.read_bytes()
    except FileNotFoundError:
        raise GraphFormatError("missing file", p) from None
    if not data.startswith(PARAMS_MAGIC):
        raise GraphFormatError("not an encoder parameter file", p)
    off = len(PARAMS_MAGIC)
    if len(data) < off + 8:
        raise GraphFormatError("parameter file is truncated", p)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != PARAMS_VERSION:
        raise GraphFormatError(f"unsupported parameter file version {version}", p)
    off += 8
    header = json.loads(data[off : off + hlen])
    off += hlen
    cfg = EncoderConfig(**header["config"])
    want = expected_shapes(cfg)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        if tuple(shape) != want.get(name):
            raise GraphFormatError(f"array {name} has shape {tuple(shape)}, expected {want.get(name)}", p)
        count = int(np.prod(shape))
        if off + 8 * count > len(data):
            raise GraphFormatError("parameter file is truncated", p)
        a = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
        arrays[name] = a
    if set(arrays) != set(want) or off != len(data):
        raise GraphFormatError("parameter file is truncated or has unexpected arrays", p)
    layers = [
        LayerParams(*(arrays[f"layers.{i}.{nm}"] for nm in ("w_q", "w_k", "w_v", "w_o"))) for i in range(cfg.num_layers)
    ]
    return EncoderParams(
        config=cfg,
        w_in=arrays.get("w_in"),
        layers=layers,
        **{k: arrays[k] for k in want if k != "w_in" and not k.startswith("layers.")},
    )
