import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfuse.gcn import (
    GcnModel,
    TrainConfig,
    block_diagonal_views,
    evaluate,
    forward,
    gradients,
    init_model,
    masked_cross_entropy,
    objective,
    predict,
    train,
)
from graphfuse.graph import Graph, renormalize

from .test_graph import random_graph


def random_instance(seed, n=8, d=5, c=3, hidden=4):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 0.4)
    s = rng.random((n, d))
    model = GcnModel(rng.standard_normal((d, hidden)), rng.standard_normal((hidden, c)))
    labels = rng.integers(0, c, size=n)
    return renormalize(g), s, model, labels


def two_cliques():
    edges = [(i, j) for base in (0, 10) for i in range(base, base + 10) for j in range(i + 1, base + 10)]
    g = Graph.from_edges(20, edges)
    rng = np.random.default_rng(0)
    s = rng.random((20, 6))
    labels = np.array([0] * 10 + [1] * 10)
    splits = {"train": np.array([0, 1, 10, 11]), "val": np.array([2, 3, 12, 13]),
              "test": np.array([4, 5, 6, 7, 8, 9, 14, 15, 16, 17, 18, 19])}
    return g, s, labels, splits


class TestForward:
    def test_zero_weights_uniform(self):
        a, s, _, _ = random_instance(0)
        model = GcnModel(np.zeros((5, 4)), np.zeros((4, 3)))
        np.testing.assert_allclose(forward(model, a, s), 1 / 3)

    def test_isolated_node_is_mlp(self):
        rng = np.random.default_rng(1)
        model = GcnModel(rng.standard_normal((3, 4)), rng.standard_normal((4, 2)))
        s = rng.random((1, 3))
        logits = np.maximum(s @ model.theta0, 0) @ model.theta1
        expected = np.exp(logits) / np.exp(logits).sum()
        np.testing.assert_allclose(forward(model, renormalize(Graph.empty(1)), s), expected, atol=1e-15)

    def test_row_sums_six_nodes(self):
        a, s, model, _ = random_instance(2, n=6)
        z = forward(model, a, s)
        assert np.max(np.abs(z.sum(axis=1) - 1)) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_rows_are_distributions(self, seed, active):
        a, s, model, _ = random_instance(seed, n=10)
        z = forward(model, a, s, dropout_active=active, seed=seed)
        assert np.max(np.abs(z.sum(axis=1) - 1)) <= 1e-9
        assert z.min() >= 0

    def test_shape_mismatch(self):
        a, s, model, _ = random_instance(3)
        with pytest.raises(ValueError):
            forward(model, a, s[:, :4])

    def test_non_finite(self):
        a, s, model, _ = random_instance(3)
        s[0, 0] = np.nan
        with pytest.raises(ValueError):
            forward(model, a, s)

    def test_pure_without_dropout(self):
        a, s, model, _ = random_instance(4)
        np.testing.assert_array_equal(forward(model, a, s), forward(model, a, s))

    def test_dropout_seeded(self):
        a, s, model, _ = random_instance(5)
        z1 = forward(model, a, s, dropout_active=True, seed=7)
        z2 = forward(model, a, s, dropout_active=True, seed=7)
        np.testing.assert_array_equal(z1, z2)
        assert not np.array_equal(z1, forward(model, a, s))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        g = random_graph(rng, 12, 0.3)
        s = rng.random((12, 5))
        model = init_model(5, 3, 8, seed=1)
        perm = rng.permutation(12)
        z = forward(model, renormalize(g), s)
        zp = forward(model, renormalize(g.permute(perm)), s[perm])
        np.testing.assert_allclose(zp, z[perm], atol=1e-10)


class TestCrossEntropy:
    def test_perfect(self):
        z = np.eye(3)
        assert masked_cross_entropy(z, [0, 1, 2], np.ones(3, dtype=bool)) <= 1e-10

    @pytest.mark.parametrize("c", [2, 3, 7])
    def test_uniform(self, c):
        z = np.full((4, c), 1 / c)
        assert masked_cross_entropy(z, [0, 1, 0, 1], [0, 1, 2, 3]) == pytest.approx(np.log(c), rel=1e-15)

    def test_ln3(self):
        z = np.full((2, 3), 1 / 3)
        assert masked_cross_entropy(z, [0, 2], [0, 1]) == pytest.approx(1.0986122886681098)

    def test_floor(self):
        z = np.array([[1.0, 0.0]])
        assert masked_cross_entropy(z, [1], [0]) == pytest.approx(-np.log(1e-12))

    def test_empty_mask(self):
        with pytest.raises(ValueError):
            masked_cross_entropy(np.eye(2), [0, 1], np.zeros(2, dtype=bool))


def finite_difference(model, a, s, labels, mask, wd, step=1e-5):
    grads = []
    for name in ("theta0", "theta1"):
        theta = getattr(model, name)
        g = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            theta[idx] = old + step
            up = objective(model, a, s, labels, mask, wd)
            theta[idx] = old - step
            down = objective(model, a, s, labels, mask, wd)
            theta[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_against_finite_differences(self, seed):
        a, s, model, labels = random_instance(seed)
        mask = np.arange(8) % 2 == 0
        cfg = TrainConfig(weight_decay=5e-4)
        analytic = gradients(model, a, s, labels, mask, cfg)
        numeric = finite_difference(model, a, s, labels, mask, cfg.weight_decay)
        for ga, gn in zip(analytic, numeric):
            rel = np.abs(ga - gn) / np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-6)
            assert rel.max() <= 1e-4

    def test_sparse_features(self):
        a, s, model, labels = random_instance(9)
        mask = np.ones(8, dtype=bool)
        dense = gradients(model, a, s, labels, mask)
        sparse = gradients(model, a, sp.csr_matrix(s), labels, mask)
        for gd, gs in zip(dense, sparse):
            np.testing.assert_allclose(gd, gs, atol=1e-14)

    def test_decay_dominates_with_confident_labels(self):
        a, s, model, _ = random_instance(10)
        model.theta1 *= 200.0
        labels = predict(model, a, s)
        wd = 5e-4
        g0, _ = gradients(model, a, s, labels, np.ones(8, dtype=bool), TrainConfig(weight_decay=wd))
        assert np.max(np.abs(g0 - wd * model.theta0)) <= 1e-3

    def test_k2_swap_symmetry(self):
        a = renormalize(Graph.from_edges(2, [(0, 1)]))
        s = np.array([[1.0, 0.0], [0.0, 1.0]])
        model = GcnModel(np.zeros((2, 3)), np.zeros((3, 2)))
        mask = np.ones(2, dtype=bool)
        g0, g1 = gradients(model, a, s, [0, 1], mask)
        sw0, sw1 = gradients(model, a, s[::-1], [1, 0], mask)
        np.testing.assert_allclose(g0, sw0[::-1], atol=1e-15)
        np.testing.assert_allclose(g1, sw1, atol=1e-15)


class TestTrain:
    def test_two_cliques(self):
        g, s, labels, splits = two_cliques()
        model, rep = train(g, s, labels, splits, TrainConfig(seed=0))
        assert rep.test_accuracy == 1.0
        assert evaluate(model, renormalize(g), s / s.sum(axis=1, keepdims=True), labels, splits["test"]) == 1.0
        assert len(rep.train_loss) == len(rep.val_accuracy) == 200

    def test_zero_learning_rate(self):
        g, s, labels, splits = two_cliques()
        model, rep = train(g, s, labels, splits, TrainConfig(epochs=1, learning_rate=0.0, seed=3))
        init = init_model(6, 2, 16, seed=3)
        np.testing.assert_array_equal(model.theta0, init.theta0)
        np.testing.assert_array_equal(model.theta1, init.theta1)
        assert rep.best_epoch == 0

    def test_byte_identical_reports(self):
        g, s, labels, splits = two_cliques()

        def dump(rep):
            d = dict(vars(rep))
            d.pop("seconds")
            return json.dumps(d, sort_keys=True)

        a = dump(train(g, s, labels, splits, TrainConfig(seed=4, epochs=30))[1])
        b = dump(train(g, s, labels, splits, TrainConfig(seed=4, epochs=30))[1])
        assert a == b

    def test_best_epoch_earliest_on_ties(self):
        g, s, labels, splits = two_cliques()
        _, rep = train(g, s, labels, splits, TrainConfig(seed=0))
        best = max(rep.val_accuracy)
        assert rep.best_epoch == rep.val_accuracy.index(best)

    def test_overlapping_splits(self):
        g, s, labels, splits = two_cliques()
        splits = dict(splits, val=splits["train"])
        with pytest.raises(ValueError):
            train(g, s, labels, splits)

    def test_empty_split(self):
        g, s, labels, splits = two_cliques()
        with pytest.raises(ValueError):
            train(g, s, labels, dict(splits, train=np.array([], dtype=int)))

    def test_label_out_of_range(self):
        g, s, labels, splits = two_cliques()
        with pytest.raises(ValueError):
            train(g, s, labels, splits, num_classes=1)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(dropout=1.0)


class TestEvaluate:
    def test_uniform_model_ties_to_class_zero(self):
        a = renormalize(Graph.empty(10))
        model = GcnModel(np.zeros((2, 3)), np.zeros((3, 2)))
        labels = np.array([0, 1] * 5)
        acc = evaluate(model, a, np.ones((10, 2)), labels, np.arange(10))
        assert acc == 0.5

    def test_empty_mask(self):
        a = renormalize(Graph.empty(2))
        with pytest.raises(ValueError):
            evaluate(init_model(2, 2), a, np.eye(2), [0, 1], np.zeros(2, dtype=bool))


class TestBlockDiagonal:
    def test_layout(self):
        g1 = Graph.from_edges(3, [(0, 1)])
        g2 = Graph.from_edges(3, [(1, 2)])
        s = np.eye(3)
        splits = {"train": np.array([0]), "val": np.array([1]), "test": np.array([2])}
        a, x, labels, rep = block_diagonal_views([g1, g2], s, [0, 1, 0], splits)
        assert a.matrix.shape == (6, 6)
        np.testing.assert_allclose(a.matrix[:3, :3].toarray(), renormalize(g1).toarray())
        np.testing.assert_allclose(a.matrix[3:, 3:].toarray(), renormalize(g2).toarray())
        assert a.matrix[:3, 3:].nnz == 0
        assert x.shape == (6, 3)
        np.testing.assert_array_equal(labels, [0, 1, 0, 0, 1, 0])
        np.testing.assert_array_equal(rep["train"], [0, 3])
        np.testing.assert_array_equal(rep["test"], [2])
