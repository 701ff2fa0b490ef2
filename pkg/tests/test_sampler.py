import numpy as np
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from kcan.graph import IdMap, InteractionGraph, KnowledgeTriples, unify
from kcan.kagcn import AttentionCache, build_attention_cache, uniform_attention_cache
from kcan.params import init_params
from kcan.sampler import sample_fixed_neighbors, sample_subgraphs, target_subgraph


def _cache(weights, indptr, tails):
    w = np.asarray(weights, dtype=float)
    return AttentionCache(np.asarray(indptr), np.zeros(len(w), dtype=np.int64), np.asarray(tails), w)


def test_degenerate_row():
    cache = _cache([1.0], [0, 1, 1], [1])
    _, tails = sample_fixed_neighbors(0, 25, cache, np.random.default_rng(0))
    assert tails.tolist() == [1] * 25


def test_uniform_row_chi_square():
    cache = _cache([0.25] * 4, [0, 4, 4, 4, 4, 4], [1, 2, 3, 4])
    _, tails = sample_fixed_neighbors(0, 10_000, cache, np.random.default_rng(0))
    assert chisquare(np.bincount(tails, minlength=5)[1:]).pvalue > 0.01


def test_zero_draws():
    cache = _cache([1.0], [0, 1, 1], [1])
    rels, tails = sample_fixed_neighbors(0, 0, cache, np.random.default_rng(0))
    assert len(rels) == len(tails) == 0


def _chain():
    # user -click-> item -> a -> b; plus an isolated pair
    inter = InteractionGraph(IdMap(["u", "lone"]), IdMap(["i", "j"]), np.array([[0, 0]]))
    kg = KnowledgeTriples(IdMap(["i", "a", "b", "j"]), IdMap(["r"]), np.array([[0, 0, 1], [1, 0, 2]]))
    return unify(inter, kg, {"i": "i", "j": "j"})


def test_isolated_targets():
    g = _chain()
    cache = uniform_attention_cache(g)
    lone, j = g.user_entity[1], g.item_entity[1]
    sub = target_subgraph((lone, j), 2, 5, cache, np.random.default_rng(0))
    assert len(sub.local_nodes) == 2 and len(sub.local_edges) == 0


def test_forced_path_reaches_two_hops():
    g = _chain()
    cache = uniform_attention_cache(g)
    u = g.user_entity[0]
    a = g.entity_names.index("a")
    b = g.entity_names.index("b")
    sub = target_subgraph((u, a), 2, 3, cache, np.random.default_rng(0))
    assert b in set(sub.nodes.tolist())


def _random_graph(rng):
    n = int(rng.integers(3, 40))
    m = int(rng.integers(1, 120))
    trip = np.stack([rng.integers(0, n, m), rng.integers(0, 3, m), rng.integers(0, n, m)], axis=1)
    kg = KnowledgeTriples(IdMap([f"e{k}" for k in range(n)]), IdMap(["r0", "r1", "r2"]), trip)
    inter = InteractionGraph(IdMap(["u"]), IdMap(["i"]), np.array([[0, 0]]))
    return unify(inter, kg, {"i": "e0"})


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4), st.integers(1, 3))
def test_subgraph_soundness_and_bound(seed, m, hops):
    from kcan.checks import toy_config

    rng = np.random.default_rng(seed)
    g = _random_graph(rng)
    store = init_params(toy_config(), g.entity_count, g.relation_count, rng)
    cache = build_attention_cache(g, store)
    pairs = np.stack([rng.choice(g.entity_count, 2, replace=False) for _ in range(3)])
    batch = sample_subgraphs(pairs, hops, m, cache, np.random.default_rng(seed))
    # every edge is a graph edge whose endpoints match the local nodes
    h, r, t = g.triples[batch.edge_id].T
    np.testing.assert_array_equal(batch.node_entity[batch.edge_head], h)
    np.testing.assert_array_equal(batch.node_entity[batch.edge_tail], t)
    assert np.all(batch.node_sub[batch.edge_head] == batch.node_sub[batch.edge_tail])
    # hops: heads one hop short of the edge, tails no deeper than the edge
    assert np.all(batch.node_hop[batch.edge_head] == batch.edge_hop - 1)
    assert np.all(batch.node_hop[batch.edge_tail] <= batch.edge_hop)
    assert np.all(np.diff(batch.node_hop) >= 0)
    for b in range(len(pairs)):
        sub = batch.subgraph(b)
        assert len(sub.local_nodes) <= 2 * sum(m**k for k in range(hops + 1))
        nodes = sub.nodes
        assert len(np.unique(nodes)) == len(nodes)
        for v, neigh in sub.neighbor_lists(g).items():
            assert len(neigh) == len(set(neigh)) <= m
    again = sample_subgraphs(pairs, hops, m, cache, np.random.default_rng(seed))
    np.testing.assert_array_equal(batch.edge_id, again.edge_id)
    np.testing.assert_array_equal(batch.node_entity, again.node_entity)


def test_two_hop_node_bound_on_synthetic(small):
    _, split, g = small
    from kcan.config import TrainConfig

    cfg = TrainConfig()
    store = init_params(cfg, g.entity_count, g.relation_count, np.random.default_rng(0))
    cache = build_attention_cache(g, store)
    m = 4
    targets = np.stack([g.user_entity[:10], g.item_entity[:10]], axis=1)
    batch = sample_subgraphs(targets, 2, m, cache, np.random.default_rng(1))
    counts = np.bincount(batch.node_sub, minlength=10)
    assert counts.max() <= 2 * (1 + m + m * m)
