"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
Data goes to stdout (or ``--out``); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .bench import METHODS, SyntheticSpec, generate_synthetic, run_bench
from .embedder import EmbedderConfig, TextEmbedder, load_embedding_table
from .encoder import EncoderConfig, encode_graph, init_params, load_params, save_params
from .graph import (
    GraphFormatError,
    Subgraph,
    dumps_canonical,
    load_graph,
    load_queries,
    load_subgraph,
    save_graph,
    save_queries,
    save_subgraph,
)
from .pcst import PcstConfig, retrieve_pcst
from .retrieval import THRESHOLD_DISABLED, RetrievalConfig, retrieve_attention, save_trace
from .textualize import TextualizationStyle, textualize

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_inputs(args):
    graph = load_graph(args.graph)
    embed = None
    if args.embeddings:
        table = load_embedding_table(args.embeddings, graph.dimension)
        embed = TextEmbedder(EmbedderConfig(graph.dimension, args.seed), table)
    else:
        embed = TextEmbedder(EmbedderConfig(graph.dimension, args.seed))
    queries = load_queries(args.query, graph, embed=embed)
    if not queries:
        raise GraphFormatError("query file has no records", args.query)
    return graph, queries


def _pick_query(queries, query_id):
    if query_id is None:
        return queries[0]
    for q in queries:
        if q.id == query_id:
            return q
    raise GraphFormatError(f"no query with id {query_id!r}")


def _retrieval_config(args) -> RetrievalConfig:
    return RetrievalConfig(
        k_nodes=args.k_nodes,
        k_edges=args.k_edges,
        threshold_node=args.threshold_node,
        threshold_edge=args.threshold_edge,
        edge_policy="selected-only" if args.edge_policy == "selected" else "induced",
    )


def _pcst_config(args) -> PcstConfig:
    return PcstConfig(k_prize=args.k_prize, edge_cost=args.edge_cost, solver=args.solver)


def cmd_retrieve(args) -> int:
    graph, queries = _load_inputs(args)
    query = _pick_query(queries, args.query_id)
    if args.method == "pcst":
        sub, obj = retrieve_pcst(graph, query, _pcst_config(args))
        text = dumps_canonical(sub.to_json(objective=obj)) + "\n"
    else:
        sub, trace = retrieve_attention(graph, query, _retrieval_config(args))
        if args.trace:
            save_trace(trace, args.trace)
        text = dumps_canonical(sub.to_json()) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_pcst(args) -> int:
    args.method = "pcst"
    return cmd_retrieve(args)


def cmd_textualize(args) -> int:
    graph = load_graph(args.graph)
    sub = load_subgraph(args.subgraph)
    if sub.parent != graph.identity:
        print(f"warning: subgraph was retrieved from graph {sub.parent}, not {graph.identity}", file=sys.stderr)
    style = TextualizationStyle("lists" if args.style == "lists" else "triples", args.max_chars)
    text = textualize(graph, sub, style)
    _emit(text + "\n" if text else "", args.out)
    return EXIT_OK


def cmd_encode(args) -> int:
    graph = load_graph(args.graph)
    if args.params:
        params = load_params(args.params)
        if params.config.d_in != graph.dimension:
            raise GraphFormatError(f"parameters expect d_in={params.config.d_in}, graph has {graph.dimension}")
    else:
        cfg = EncoderConfig(
            d_in=graph.dimension,
            d_hidden=args.d_hidden or graph.dimension,
            d_g=args.d_g,
            d_llm=args.d_llm,
            num_layers=args.num_layers,
            num_heads=args.num_heads,
            expansion=args.expansion,
            seed=args.seed,
        )
        params = init_params(cfg)
    if args.save_params:
        save_params(params, args.save_params)
    sub = load_subgraph(args.subgraph) if args.subgraph else Subgraph(graph.identity, range(graph.num_nodes), range(graph.num_edges))
    emb = encode_graph(params, graph, sub)
    _emit(dumps_canonical(emb.to_json()) + "\n", args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = SyntheticSpec(
        num_nodes=args.num_nodes,
        num_edges=args.num_edges,
        dimension=args.dimension,
        gold_size=args.gold_size,
        noise=args.noise,
        seed=args.seed,
        num_queries=args.num_queries,
    )
    graph, queries = generate_synthetic(spec)
    out = Path(args.out)
    save_graph(graph, out)
    save_queries(queries, out / "queries.jsonl")
    print(f"wrote {graph!r} and {len(queries)} queries to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.graph:
        if not args.query:
            raise UsageError("--query is required with --graph")
        graph, queries = _load_inputs(args)
    else:
        spec = SyntheticSpec(
            num_nodes=args.num_nodes,
            num_edges=args.num_edges,
            dimension=args.dimension,
            gold_size=args.gold_size,
            noise=args.noise,
            seed=args.seed,
            num_queries=args.num_queries,
        )
        graph, queries = generate_synthetic(spec)
    methods = args.method or list(METHODS)
    configs = {"attention": _retrieval_config(args), "pcst": _pcst_config(args)}
    report = run_bench(graph, queries, methods, configs, jobs=args.jobs)
    if args.csv:
        report.write_csv(args.csv)
    _emit(dumps_canonical(report.to_json()) + "\n", args.out)
    return EXIT_OK


def _add_retrieval_flags(p) -> None:
    p.add_argument("--k-nodes", type=int, default=3)
    p.add_argument("--k-edges", type=int, default=3)
    p.add_argument("--threshold-node", type=float, default=THRESHOLD_DISABLED)
    p.add_argument("--threshold-edge", type=float, default=THRESHOLD_DISABLED)
    p.add_argument("--edge-policy", choices=["induced", "selected"], default="induced")


def _add_pcst_flags(p) -> None:
    p.add_argument("--k-prize", type=int, default=4)
    p.add_argument("--edge-cost", type=float, default=0.5)
    p.add_argument("--solver", choices=["greedy", "exact"], default="greedy")


def _add_query_flags(p, required: bool = True) -> None:
    p.add_argument("--graph", required=required, metavar="DIR")
    p.add_argument("--query", required=required, metavar="FILE", help="JSONL of query records")
    p.add_argument("--query-id", help="query record to use (default: first)")
    p.add_argument("--embeddings", metavar="FILE", help="embeddings.jsonl overriding the toy embedder")


def _add_synthetic_flags(p, required: bool) -> None:
    p.add_argument("--num-nodes", type=int, required=required, default=None if required else 1000)
    p.add_argument("--num-edges", type=int, required=required, default=None if required else 3000)
    p.add_argument("--dimension", type=int, default=64)
    p.add_argument("--gold-size", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--num-queries", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attnrag", description="Query-aware subgraph retrieval over textual graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("retrieve", help="attention (or PCST) retrieval for one query")
    _add_query_flags(p)
    _add_retrieval_flags(p)
    _add_pcst_flags(p)
    p.add_argument("--method", choices=list(METHODS), default="attention")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--trace", metavar="PATH", help="write trace.json (attention only)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("pcst", help="PCST baseline retrieval for one query")
    _add_query_flags(p)
    _add_pcst_flags(p)
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pcst)

    p = sub.add_parser("textualize", help="render a subgraph as text")
    p.add_argument("--graph", required=True, metavar="DIR")
    p.add_argument("--subgraph", required=True, metavar="FILE")
    p.add_argument("--style", choices=["triples", "lists"], default="triples")
    p.add_argument("--max-chars", type=int)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_textualize)

    p = sub.add_parser("encode", help="graph-level embedding of a subgraph")
    p.add_argument("--graph", required=True, metavar="DIR")
    p.add_argument("--subgraph", metavar="FILE", help="default: the whole graph")
    p.add_argument("--params", metavar="FILE", help="encoder parameter file (default: seeded init)")
    p.add_argument("--save-params", metavar="FILE")
    p.add_argument("--d-hidden", type=int, help="default: graph dimension")
    p.add_argument("--d-g", type=int, default=64)
    p.add_argument("--d-llm", type=int, default=128)
    p.add_argument("--num-layers", type=int, default=2)
    p.add_argument("--num-heads", type=int, default=4)
    p.add_argument("--expansion", type=int, default=4)
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("bench", help="compare attention retrieval and PCST")
    _add_query_flags(p, required=False)
    _add_synthetic_flags(p, required=False)
    _add_retrieval_flags(p)
    _add_pcst_flags(p)
    p.add_argument("--method", action="append", choices=list(METHODS), help="repeatable; default: all")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", metavar="PATH", help="report.json (default: stdout)")
    p.add_argument("--csv", metavar="PATH", help="per-query CSV")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="write a synthetic graph and its queries")
    _add_synthetic_flags(p, required=True)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"attnrag: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphFormatError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"attnrag: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
