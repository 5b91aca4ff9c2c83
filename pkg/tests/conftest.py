from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from attnrag.graph import Query, TextualGraph, save_graph  # noqa: E402


def random_graph(rng: np.random.Generator, n: int, m: int, d: int, tie_rate: float = 0.2) -> TextualGraph:
    """Small random graph with deliberate exact ties and some zero vectors.

    Embeddings are drawn on a coarse grid so duplicates (and thus score
    ties) are common.
    """
    def feats(count):
        f = rng.integers(-3, 4, size=(count, d)).astype(np.float64)
        for i in range(1, count):
            u = rng.random()
            if u < tie_rate:
                f[i] = f[rng.integers(0, i)]
            elif u < tie_rate + 0.05:
                f[i] = 0.0
        return f

    src = rng.integers(0, max(n, 1), size=m) if n else np.zeros(0, dtype=np.int64)
    dst = rng.integers(0, max(n, 1), size=m) if n else np.zeros(0, dtype=np.int64)
    return TextualGraph(
        d,
        [f"n{i}" for i in range(n)],
        feats(n),
        src,
        dst,
        [f"r{j}" for j in range(m)],
        feats(m),
    )


def random_query(rng: np.random.Generator, d: int, graph: TextualGraph | None = None) -> Query:
    if graph is not None and graph.num_nodes and rng.random() < 0.3:
        # Sometimes point exactly at an existing node for a perfect score.
        emb = graph.node_embeddings[rng.integers(0, graph.num_nodes)].copy()
    else:
        emb = rng.integers(-3, 4, size=d).astype(np.float64)
    return Query("q", "query", emb)


@pytest.fixture
def path_graph() -> TextualGraph:
    """0 -> 1 -> 2 with orthogonal-ish features."""
    x = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    e = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    return TextualGraph(3, ["A", "B", "C"], x, [0, 1], [1, 2], ["born_in", "part_of"], e)


@pytest.fixture
def graph_dir(tmp_path, path_graph) -> Path:
    d = tmp_path / "g"
    save_graph(path_graph, d)
    return d


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
