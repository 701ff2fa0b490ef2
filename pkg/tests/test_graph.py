import numpy as np
import pytest
from scipy.stats import chisquare

from kcan.graph import (
    DataError,
    IdMap,
    InteractionGraph,
    KnowledgeTriples,
    NegativeSamplingError,
    load_alignment,
    load_interactions,
    load_triples,
    read_id_map,
    sample_corrupt_tail,
    sample_corrupt_tails,
    sample_negative_item,
    sample_negative_items,
    split_leave_one_out,
    unify,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_interactions_dedups_and_ignores_third_field(tmp_path):
    g = load_interactions(_write(tmp_path / "i.tsv", "a\tx\nb\ty\tc\na\tx\n"))
    assert g.user_count == 2 and g.item_count == 2
    assert len(g.edges) == 2


def test_load_triples(tmp_path):
    kg = load_triples(_write(tmp_path / "t.tsv", "a\tr\tb\nb\ts\tc\nc\tr\ta\nd\tr\te\ne\ts\ta\na\tr\tb\n"))
    assert len(kg.triples) == 5
    assert len(kg.relation_ids) == 2
    with pytest.raises(DataError):
        load_triples(_write(tmp_path / "bad.tsv", "a\t\tb\n"))


def test_load_alignment(tmp_path):
    assert load_alignment(_write(tmp_path / "a.tsv", "i1\te1\n")) == {"i1": "e1"}


def _small():
    inter = InteractionGraph(IdMap(["u0", "u1"]), IdMap(["i0", "i1"]), np.array([[0, 0], [0, 1], [1, 1]]))
    kg = KnowledgeTriples(IdMap(["e0", "e1", "x", "y"]), IdMap(["r"]),
                          np.array([[0, 0, 2], [1, 0, 2], [2, 0, 3], [3, 0, 0]]))
    return inter, kg


def test_unify_doubles_triples():
    inter, kg = _small()
    g = unify(inter, kg, {"i0": "e0", "i1": "e1"})
    assert len(g.triples) == 2 * (3 + 4)
    assert g.entity_count == 6


def test_unify_without_kg_is_bipartite():
    inter, _ = _small()
    g = unify(inter, None)
    assert g.relation_names == ["click", "~click"]
    assert set(g.heads[g.relations == g.click_relation]) <= set(g.user_entity)


def test_inverse_closure_and_adjacency():
    inter, kg = _small()
    g = unify(inter, kg, {"i0": "e0"})
    keys = {tuple(t) for t in g.triples.tolist()}
    for h, r, t in keys:
        assert (t, int(g.inverse_of[r]), h) in keys
    for v in range(g.entity_count):
        rels, tails = g.adjacency(v)
        assert {(int(r), int(t)) for r, t in zip(rels, tails)} == {(r, t) for h, r, t in keys if h == v}


def test_entity_without_edges_is_allowed():
    inter, _ = _small()
    kg = KnowledgeTriples(IdMap(["lonely"]), IdMap([]), np.zeros((0, 3), dtype=np.int64))
    g = unify(inter, kg)
    assert len(g.adjacency(0)[1]) == 0


def test_alignment_to_unknown_item():
    inter, kg = _small()
    with pytest.raises(DataError):
        unify(inter, kg, {"nope": "e0"})


def test_id_map_round_trip(tmp_path):
    inter, kg = _small()
    g = unify(inter, kg, {"i0": "e0"})
    g.export_id_map(tmp_path / "ids.tsv")
    ents, rels = read_id_map(tmp_path / "ids.tsv")
    assert ents == g.entity_names and rels == g.relation_names
    assert unify(inter, kg, {"i0": "e0"}).id_map_hash() == g.id_map_hash()


def test_leave_one_out():
    edges = np.array([[0, i] for i in range(5)] + [[1, 0]])
    inter = InteractionGraph(IdMap(["a", "b"]), IdMap([f"i{i}" for i in range(5)]), edges)
    s = split_leave_one_out(inter, 7)
    assert (s.train_edges[:, 0] == 0).sum() == 4 and (s.test_edges[:, 0] == 0).sum() == 1
    assert (s.train_edges[:, 0] == 1).sum() == 1 and (s.test_edges[:, 0] == 1).sum() == 0
    s2 = split_leave_one_out(inter, 7)
    np.testing.assert_array_equal(s.test_edges, s2.test_edges)


def _star(n_tails=5):
    """Entity 0 linked to all but the last of ``n_tails`` entities."""
    names = [f"e{k}" for k in range(n_tails + 1)]
    trip = np.array([[0, 0, k] for k in range(1, n_tails)])
    inter = InteractionGraph(IdMap([]), IdMap([]), np.zeros((0, 2), dtype=np.int64))
    return unify(inter, KnowledgeTriples(IdMap(names), IdMap(["r"]), trip))


def test_corrupt_tail_forced():
    g = _star(3)
    # (0, r, t) exists for t in {1, 2}; valid corruptions are 0 and 3
    rng = np.random.default_rng(0)
    draws = {sample_corrupt_tail(g, 0, 0, rng) for _ in range(200)}
    assert draws == {0, 3}


def test_corrupt_tail_uniform():
    g = _star(3)
    rng = np.random.default_rng(1)
    draws = sample_corrupt_tails(g, np.zeros(10_000, dtype=np.int64), np.zeros(10_000, dtype=np.int64), rng)
    counts = np.bincount(draws, minlength=4)[[0, 3]]
    assert chisquare(counts).pvalue > 0.01


def test_corrupt_tail_single_entity():
    inter = InteractionGraph(IdMap([]), IdMap([]), np.zeros((0, 2), dtype=np.int64))
    g = unify(inter, KnowledgeTriples(IdMap(["solo"]), IdMap([]), np.zeros((0, 3), dtype=np.int64)))
    with pytest.raises(NegativeSamplingError):
        sample_corrupt_tail(g, 0, 0, np.random.default_rng(0))


def test_negative_item_cases():
    edges = np.array([[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2], [1, 3]])
    inter = InteractionGraph(IdMap(["a", "b"]), IdMap(["i0", "i1", "i2", "i3"]), edges)
    g = unify(inter, None)
    rng = np.random.default_rng(0)
    u0, u1 = g.user_entity
    assert {sample_negative_item(g, u0, rng) for _ in range(50)} == {g.item_entity[3]}
    with pytest.raises(NegativeSamplingError):
        sample_negative_item(g, u1, rng)


def test_negative_item_uniform():
    inter = InteractionGraph(IdMap(["a"]), IdMap([f"i{k}" for k in range(5)]), np.array([[0, 0]]))
    g = unify(inter, None)
    draws = sample_negative_items(g, np.full(10_000, g.user_entity[0]), np.random.default_rng(2))
    counts = np.array([(draws == g.item_entity[k]).sum() for k in range(1, 5)])
    assert (draws != g.item_entity[0]).all()
    assert chisquare(counts).pvalue > 0.01
