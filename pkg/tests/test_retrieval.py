import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnrag.graph import GraphFormatError, Query, TextualGraph
from attnrag.retrieval import (
    RetrievalConfig,
    cosine_scores,
    retrieve_attention,
    save_trace,
    select_topk_union,
    top_k_indices,
)
from conftest import random_graph, random_query
from oracles import brute_force_retrieve, exact_snapped_cosine, py_cosine, sort_filter_select


class TestCosine:
    def test_identity(self):
        assert cosine_scores([0.3, -2.0, 5.0], [[0.3, -2.0, 5.0]])[0] == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_scores([1.0, 0.0], [[0.0, 3.0]])[0] == 0.0

    def test_half_diagonal(self):
        assert cosine_scores([1.0, 0.0], [[1.0, 1.0]])[0] == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_equal_true_cosines_tie_exactly(self):
        # [1,1,0] and [2,2,0] have the same true cosine with any query.
        q = [0.1, 0.7, -0.3]
        s = cosine_scores(q, [[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [3.0, 3.0, 0.0]])
        assert s[0] == s[1] == s[2] == exact_snapped_cosine(q, [1.0, 1.0, 0.0])

    def test_zero_norm_is_zero(self):
        assert cosine_scores([0.0, 0.0], [[1.0, 2.0]]).tolist() == [0.0]
        assert cosine_scores([1.0, 2.0], [[0.0, 0.0], [1.0, 2.0]])[0] == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(GraphFormatError, match="dimension mismatch"):
            cosine_scores([1.0, 0.0], [[1.0, 0.0, 0.0]])

    def test_empty_features(self):
        assert cosine_scores([1.0, 0.0], np.zeros((0, 2))).shape == (0,)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-300, 300))
    def test_matches_python_and_bounded(self, seed, log_scale):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal(5) * 10.0 ** (log_scale / 10)
        f = rng.standard_normal((7, 5)) * 10.0 ** rng.uniform(-30, 30, size=(7, 1))
        s = cosine_scores(q, f)
        assert np.all(np.abs(s) <= 1.0)
        ref = [py_cosine(q / np.abs(q).max(), row / np.abs(row).max()) for row in f]
        np.testing.assert_allclose(s, ref, atol=1e-12)


class TestSelectTopkUnion:
    def test_top2_threshold_off(self):
        assert select_topk_union([0.9, 0.1, 0.5], 2, 1.0) == {0, 2}

    def test_nothing(self):
        assert select_topk_union([0.9, 0.1, 0.5], 0, 0.95) == frozenset()

    def test_union(self):
        assert select_topk_union([0.9, 0.1, 0.5], 1, 0.4) == {0, 2}

    def test_ties_prefer_smaller_index(self):
        assert select_topk_union([0.2, 0.7, 0.7, 0.7], 2, 1.1) == {1, 2}
        assert top_k_indices(np.array([0.5, 0.5, 0.5]), 1).tolist() == [0]

    def test_k_clamped(self):
        assert select_topk_union([0.1, 0.2], 10, 1.1) == {0, 1}
        assert select_topk_union([], 3, 0.0) == frozenset()

    @settings(max_examples=300, deadline=None)
    @given(
        st.lists(st.sampled_from([-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(-1, 1), max_size=30),
        st.integers(0, 35),
        st.floats(-1, 1.1),
    )
    def test_matches_sort_oracle(self, scores, k, threshold):
        assert select_topk_union(scores, k, threshold) == sort_filter_select(scores, k, threshold)


def oracle_for(graph, query, cfg):
    edge_list = list(zip(graph.edge_src.tolist(), graph.edge_dst.tolist()))
    return brute_force_retrieve(
        query.embedding.tolist(),
        graph.node_embeddings.tolist(),
        edge_list,
        graph.edge_embeddings.tolist(),
        cfg.k_nodes,
        cfg.k_edges,
        cfg.threshold_node,
        cfg.threshold_edge,
        cfg.edge_policy,
    )


def random_cfg(rng, policy=None):
    def thr():
        return float(rng.choice([1.1, rng.uniform(-1, 1), 0.5, 0.0]))

    return RetrievalConfig(
        k_nodes=int(rng.integers(0, 6)),
        k_edges=int(rng.integers(0, 6)),
        threshold_node=thr(),
        threshold_edge=thr(),
        edge_policy=policy or str(rng.choice(["induced", "selected-only"])),
    )


class TestRetrieveAttention:
    def test_nothing_selected(self, path_graph):
        cfg = RetrievalConfig(0, 0, 1.1, 1.1)
        sub, trace = retrieve_attention(path_graph, Query("q", "", [1.0, 0.0, 0.0]), cfg)
        assert not sub.node_ids and not sub.edge_indices
        assert trace.node_scores.shape == (3,)

    def test_two_node_edge_match(self):
        g = TextualGraph(2, ["a", "b"], [[1.0, 0.0], [0.0, 1.0]], [0], [1], ["r"], [[0.6, 0.8]])
        sub, trace = retrieve_attention(g, Query("q", "", [0.6, 0.8]), RetrievalConfig(k_nodes=0, k_edges=1))
        assert sub.node_ids == {0, 1} and sub.edge_indices == {0}
        assert trace.e_topk == {0} and trace.v_incident == {0, 1} and trace.v_topk == frozenset()

    def test_random_8_12_matches_brute_force(self):
        rng = np.random.default_rng(20240611)
        g = random_graph(rng, 8, 12, 4)
        q = random_query(rng, 4, g)
        for policy in ("induced", "selected-only"):
            cfg = RetrievalConfig(3, 3, 0.6, 0.8, policy)
            sub, trace = retrieve_attention(g, q, cfg)
            v, e, vt, et, vi = oracle_for(g, q, cfg)
            assert (sub.node_ids, sub.edge_indices) == (v, e)
            assert (trace.v_topk, trace.e_topk, trace.v_incident) == (vt, et, vi)

    def test_induced_adds_edges_selected_only_does_not(self, path_graph):
        # Node 1 and edge 0 (0->1) are picked; edge 1 (1->2) only under induction once 2 is in.
        q = Query("q", "", [0.0, 1.0, 0.0])
        induced, _ = retrieve_attention(path_graph, q, RetrievalConfig(3, 1, 1.1, 1.1, "induced"))
        selected, trace = retrieve_attention(path_graph, q, RetrievalConfig(3, 1, 1.1, 1.1, "selected-only"))
        assert induced.edge_indices == {0, 1}
        assert selected.edge_indices == trace.e_topk == {0}

    def test_empty_graph(self):
        g = TextualGraph(3, [], np.zeros((0, 3)))
        sub, trace = retrieve_attention(g, Query("q", "", [1.0, 0.0, 0.0]), RetrievalConfig(5, 5, -1.0, -1.0))
        assert not sub.node_ids and not sub.edge_indices

    def test_dimension_mismatch(self, path_graph):
        with pytest.raises(GraphFormatError, match="dimension mismatch"):
            retrieve_attention(path_graph, Query("q", "", [1.0, 0.0]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RetrievalConfig(k_nodes=-1)
        with pytest.raises(ValueError):
            RetrievalConfig(threshold_node=-1.5)
        with pytest.raises(ValueError):
            RetrievalConfig(threshold_edge=float("nan"))
        with pytest.raises(ValueError):
            RetrievalConfig(edge_policy="everything")
        assert RetrievalConfig(edge_policy="selected").edge_policy == "selected-only"

    def test_trace_dump_sorted(self, tmp_path, path_graph):
        _, trace = retrieve_attention(path_graph, Query("q", "", [1.0, 1.0, 0.0]), RetrievalConfig(2, 1))
        save_trace(trace, tmp_path / "a.json")
        save_trace(trace, tmp_path / "b.json")
        text = (tmp_path / "a.json").read_text()
        assert text == (tmp_path / "b.json").read_text()
        assert text.startswith('{"e_topk":[0],"edge_scores":[')


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariants(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 13))
    g = random_graph(rng, n, int(rng.integers(0, 21)) if n else 0, 3)
    q = random_query(rng, 3, g)
    cfg = random_cfg(rng)
    sub, trace = retrieve_attention(g, q, cfg)
    src, dst = g.edge_src, g.edge_dst
    # closure
    assert all(int(src[e]) in sub.node_ids and int(dst[e]) in sub.node_ids for e in sub.edge_indices)
    # containment
    assert trace.v_topk <= sub.node_ids
    assert {int(src[e]) for e in trace.e_topk} | {int(dst[e]) for e in trace.e_topk} <= sub.node_ids
    if cfg.edge_policy == "selected-only":
        assert sub.edge_indices == trace.e_topk
    else:
        assert trace.e_topk <= sub.edge_indices
    # scale invariance
    for c in (1e-6, 3.0, 1e6):
        sub2, trace2 = retrieve_attention(g, Query("q", "", q.embedding * c), cfg)
        assert sub2 == sub
        np.testing.assert_allclose(trace2.node_scores, trace.node_scores, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_in_k(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 12, 20, 3)
    q = random_query(rng, 3, g)
    prev = frozenset()
    for k in range(0, 13):
        _, trace = retrieve_attention(g, q, RetrievalConfig(k, 0, 1.1, 1.1))
        assert prev <= trace.v_topk and len(trace.v_topk) == k
        prev = trace.v_topk


def test_deterministic_across_repeats_and_threads():
    from concurrent.futures import ThreadPoolExecutor

    rng = np.random.default_rng(1)
    g = random_graph(rng, 300, 900, 8, tie_rate=0.3)
    qs = [random_query(rng, 8, g) for _ in range(16)]
    cfg = RetrievalConfig(5, 5, 0.9, 0.9)
    seq = [retrieve_attention(g, q, cfg)[0] for q in qs]
    with ThreadPoolExecutor(4) as pool:
        par = list(pool.map(lambda q: retrieve_attention(g, q, cfg)[0], qs))
    assert seq == par == [retrieve_attention(g, q, cfg)[0] for q in qs]


def test_cached_norms_give_identical_scores():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 50, 120, 6)
    q = random_query(rng, 6, g)
    for feats, norms in ((g.node_embeddings, g.node_norms), (g.edge_embeddings, g.edge_norms)):
        assert cosine_scores(q.embedding, feats, norms).tobytes() == cosine_scores(q.embedding, feats).tobytes()
    assert not g.node_norms.flags.writeable
