"""Render a retrieved subgraph as prompt-ready text.

``triples`` style, one line per item::

    <src text>, <edge text>, <dst text>      edges, ascending edge index
    node: <text>                            isolated nodes, ascending id

``lists`` style (node table then edge table, parent-graph ids)::

    node_id,node_attr
    <id>,<text>
    src,edge_attr,dst
    <src>,<text>,<dst>

Lines are joined with ``\\n`` and there is no trailing newline.  With
``max_chars`` the output keeps whole lines only and ends with a
``... (<n> more lines omitted)`` marker, total length <= ``max_chars``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

from .graph import GraphFormatError, Subgraph, TextualGraph

Style = Literal["triples", "lists"]
STYLES = ("triples", "lists")


@dataclass(frozen=True)
class TextualizationStyle:
    style: Style = "triples"
    max_chars: int | None = None

    def __post_init__(self):
        if self.style == "node-edge-lists":
            object.__setattr__(self, "style", "lists")
        if self.style not in STYLES:
            raise ValueError(f"style must be one of {STYLES}, got {self.style!r}")
        if self.max_chars is not None and self.max_chars <= 0:
            raise ValueError("max_chars must be positive")


def _lines(graph: TextualGraph, sub: Subgraph, style: str) -> list[str]:
    edges = sub.sorted_edges
    if style == "triples":
        out = []
        covered = set()
        for e in edges:
            s, d = int(graph.edge_src[e]), int(graph.edge_dst[e])
            covered.update((s, d))
            out.append(f"{graph.node_texts[s]}, {graph.edge_texts[e]}, {graph.node_texts[d]}")
        out.extend(f"node: {graph.node_texts[v]}" for v in sub.sorted_nodes if v not in covered)
        return out
    out = ["node_id,node_attr"]
    out.extend(f"{v},{graph.node_texts[v]}" for v in sub.sorted_nodes)
    out.append("src,edge_attr,dst")
    out.extend(f"{int(graph.edge_src[e])},{graph.edge_texts[e]},{int(graph.edge_dst[e])}" for e in edges)
    return out


def omitted_marker(count: int) -> str:
    return f"... ({count} more lines omitted)"


def textualize(graph: TextualGraph, sub: Subgraph, style: TextualizationStyle | None = None) -> str:
    style = style or TextualizationStyle()
    try:
        sub.validate(graph)
    except GraphFormatError as exc:
        raise GraphFormatError(f"cannot textualize: {exc}") from None
    if not sub.node_ids and not sub.edge_indices:
        return ""
    lines = _lines(graph, sub, style.style)
    text = "\n".join(lines)
    if style.max_chars is None or len(text) <= style.max_chars:
        return text

    kept: list[str] = []
    used = 0
    for i, line in enumerate(lines):
        extra = len(line) + (1 if kept else 0)
        marker = omitted_marker(len(lines) - i - 1)
        # Room must remain for the marker that follows the kept lines.
        if used + extra + 1 + len(marker) > style.max_chars:
            break
        kept.append(line)
        used += extra
    while True:
        out = "\n".join(kept + [omitted_marker(len(lines) - len(kept))])
        if len(out) <= style.max_chars:
            return out
        if not kept:
            # Not even the marker fits.
            return ""
        kept.pop()
