import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kcan.config import TrainConfig
from kcan.params import (
    GradientSet,
    ParameterStore,
    adam_step,
    grad_check,
    init_params,
    l2_penalty,
    load_snapshot,
    save_snapshot,
    xavier_uniform,
)


def test_init_shapes_and_unit_normals():
    store = init_params(TrainConfig(), 100, 6, np.random.default_rng(0))
    assert store["entity"].shape == (100, 16)
    np.testing.assert_allclose(np.linalg.norm(store["rel_w"], axis=1), 1.0, atol=1e-6)
    again = init_params(TrainConfig(), 100, 6, np.random.default_rng(0))
    assert store.equals(again)


def test_init_rejects_empty():
    with pytest.raises(ValueError):
        init_params(TrainConfig(), 0, 3, np.random.default_rng(0))


def test_xavier_bound():
    w = xavier_uniform(np.random.default_rng(0), (8, 16))
    bound = np.sqrt(6 / 24)
    assert abs(bound - 0.5) < 1e-12
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.9 * bound


def _scalar_store(value=0.0):
    return ParameterStore({"theta": np.array([value])})


def test_adam_first_step():
    store = _scalar_store()
    g = GradientSet()
    g.add_dense("theta", np.array([1.0]))
    adam_step(store, g, lr=0.025)
    assert abs(store["theta"][0] + 0.025) < 1e-6


def test_adam_zero_gradient_is_noop():
    store = init_params(TrainConfig(), 10, 2, np.random.default_rng(1))
    before = {k: v.copy() for k, v in store.params.items()}
    g = GradientSet()
    g.add_dense("Wo", np.zeros_like(store["Wo"]))
    g.add_sparse("entity", [1, 3], np.zeros((2, 16)))
    adam_step(store, g)
    for k in before:
        np.testing.assert_array_equal(before[k], store[k])


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100, allow_nan=False).filter(lambda x: abs(x) > 1e-3), st.integers(2, 6))
def test_adam_step_size_bound(g0, steps):
    store = _scalar_store(0.3)
    lr = 0.025
    prev = store["theta"][0]
    for _ in range(steps):
        g = GradientSet()
        g.add_dense("theta", np.array([g0]))
        adam_step(store, g, lr=lr)
        assert abs(store["theta"][0] - prev) <= lr * (1 + 1e-6)
        prev = store["theta"][0]


def test_adam_sparse_rows_and_renormalization():
    store = init_params(TrainConfig(), 10, 4, np.random.default_rng(2))
    before = store["entity"].copy()
    g = GradientSet()
    g.add_sparse("entity", [2], np.ones((1, 16)))
    g.add_sparse("rel_w", [1, 3], np.random.default_rng(3).normal(size=(2, 16)))
    adam_step(store, g)
    changed = np.flatnonzero(np.any(store["entity"] != before, axis=1))
    assert changed.tolist() == [2]
    np.testing.assert_allclose(np.linalg.norm(store["rel_w"], axis=1), 1.0, atol=1e-6)
    assert store.counts["entity"][2] == 1 and store.counts["entity"][0] == 0


def test_adam_decoupled_decay():
    # the shrink happens outside the adaptive scaling: first step moves by
    # exactly lr * decay * theta on top of the unit Adam step
    lr, decay = 0.025, 0.002
    store = _scalar_store(3.0)
    g = GradientSet()
    g.add_dense("theta", np.array([1e-3]))
    adam_step(store, g, lr=lr, decay=decay)
    assert store["theta"][0] == pytest.approx(3.0 * (1 - lr * decay) - lr, abs=1e-6)

    store = init_params(TrainConfig(), 10, 4, np.random.default_rng(2))
    before = store["entity"].copy()
    g = GradientSet()
    g.add_sparse("entity", [2], np.full((1, 16), 1e-12))
    adam_step(store, g, lr=lr, decay=decay)
    untouched = np.delete(np.arange(10), 2)
    np.testing.assert_array_equal(store["entity"][untouched], before[untouched])


def test_decay_keeps_zero_gradient_noop():
    store = _scalar_store(1.5)
    g = GradientSet()
    g.add_dense("theta", np.zeros(1))
    adam_step(store, g, decay=0.5)
    assert store["theta"][0] == 1.5


def test_l2_penalty_values():
    assert l2_penalty(_scalar_store(2.0), 0.0)[0] == 0.0
    value, grad = l2_penalty(_scalar_store(2.0), 0.5)
    assert value == 2.0
    assert grad.dense["theta"][0] == 2.0


def test_l2_gradient_finite_difference():
    store = ParameterStore({"a": np.random.default_rng(0).normal(size=(3, 2))})

    def evaluate(s):
        return l2_penalty(s, 0.3)

    assert grad_check(evaluate, store, probe_count=6) < 1e-6


def test_grad_check_square():
    store = _scalar_store(1.0)

    def evaluate(s):
        g = GradientSet()
        g.add_dense("theta", 2 * s["theta"])
        return float(s["theta"][0] ** 2), g

    err, details = grad_check(evaluate, store, probe_count=1, return_details=True)
    _, _, analytic, numeric, _ = details[0]
    assert analytic == 2.0 and abs(numeric - 2.0) < 1e-8
    assert err < 1e-6


def test_grad_check_catches_wrong_gradient():
    store = _scalar_store(1.0)

    def evaluate(s):
        g = GradientSet()
        g.add_dense("theta", 4 * s["theta"])
        return float(s["theta"][0] ** 2), g

    assert abs(grad_check(evaluate, store, probe_count=1) - 1.0) < 1e-6


def test_snapshot_round_trip(tmp_path):
    store = init_params(TrainConfig(), 12, 4, np.random.default_rng(5))
    g = GradientSet()
    g.add_sparse("entity", [1, 4], np.ones((2, 16)))
    g.add_dense("Wo", np.ones_like(store["Wo"]))
    adam_step(store, g)
    save_snapshot(tmp_path / "s.npz", store, {"note": "x"}, {"attention": np.arange(3.0)})
    back, meta, extra = load_snapshot(tmp_path / "s.npz")
    assert back.equals(store)
    assert meta["note"] == "x" and meta["step"] == 1
    np.testing.assert_array_equal(extra["attention"], np.arange(3.0))


def test_gradient_set_merge_sums_rows():
    a, b = GradientSet(), GradientSet()
    a.add_sparse("e", [3, 1], [[1.0], [2.0]])
    b.add_sparse("e", [1], [[5.0]])
    rows, vals = a.merge(b).sparse["e"]
    assert rows.tolist() == [1, 3] and vals.ravel().tolist() == [7.0, 1.0]


def test_table_rows_do_not_shrink_with_entity_count(toy_cfg):
    small = init_params(toy_cfg, 10, 3, np.random.default_rng(0))
    large = init_params(toy_cfg, 5000, 3, np.random.default_rng(0))
    bound = np.sqrt(6 / (2 * toy_cfg.embed_dim))
    for store in (small, large):
        ent = store["entity"]
        assert np.abs(ent).max() <= bound
        assert np.abs(ent).max() > 0.9 * bound
