import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfuse.graph import (
    Graph,
    GraphError,
    build_laplacian,
    cosine_similarity_graph,
    remove_test_structure,
    renormalize,
)


def path3():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


def random_graph(rng, n, density=0.3, weighted=True):
    upper = np.triu(rng.random((n, n)) < density, k=1)
    w = rng.uniform(0.1, 2.0, size=(n, n)) if weighted else np.ones((n, n))
    a = np.where(upper, w, 0.0)
    return Graph.from_matrix(a + a.T)


@st.composite
def graphs(draw, max_n=50):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    density = draw(st.floats(0.0, 1.0))
    return random_graph(np.random.default_rng(seed), n, density)


class TestGraph:
    def test_rejects_asymmetric(self):
        with pytest.raises(GraphError):
            Graph(sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]])))

    def test_rejects_negative(self):
        with pytest.raises(GraphError):
            Graph(sp.csr_matrix(np.array([[0.0, -1.0], [-1.0, 0.0]])))

    def test_self_loops_stripped_at_ingestion(self):
        g = Graph.from_edges(3, [(0, 0), (0, 1), (1, 0), (0, 1)])
        assert g.num_edges == 1
        assert g.weight(0, 0) == 0
        assert g.weight(0, 1) == g.weight(1, 0) == 1

    def test_out_of_range_edge(self):
        with pytest.raises(GraphError):
            Graph.from_edges(3, [(0, 5)])

    def test_entries_upper_triangle(self):
        assert list(path3().entries()) == [(0, 1, 1.0), (1, 2, 1.0)]


class TestLaplacian:
    def test_path3(self):
        expected = [[1, -1, 0], [-1, 2, -1], [0, -1, 1]]
        np.testing.assert_array_equal(build_laplacian(path3()).toarray(), expected)

    def test_edgeless(self):
        np.testing.assert_array_equal(build_laplacian(Graph.empty(3)).toarray(), np.zeros((3, 3)))

    def test_triangle(self):
        lap = build_laplacian(Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])).toarray()
        np.testing.assert_array_equal(np.diag(lap), [2, 2, 2])
        off = lap[~np.eye(3, dtype=bool)]
        np.testing.assert_array_equal(off, -np.ones(6))

    @settings(max_examples=100, deadline=None)
    @given(graphs())
    def test_rows_sum_to_zero_and_psd(self, g):
        lap = build_laplacian(g).matrix
        np.testing.assert_allclose(np.asarray(lap.sum(axis=1)).ravel(), 0.0, atol=1e-10)
        rng = np.random.default_rng(g.n)
        for _ in range(5):
            x = rng.standard_normal(g.n)
            assert x @ (lap @ x) >= -1e-9 * (x @ x)


def dense_renormalize(a):
    """Reference: D~^{-1/2} (W + I) D~^{-1/2} with dense numpy."""
    w = a + np.eye(len(a))
    d = np.diag(1.0 / np.sqrt(w.sum(axis=1)))
    return d @ w @ d


class TestRenormalize:
    def test_isolated_node(self):
        np.testing.assert_array_equal(renormalize(Graph.empty(1)).toarray(), [[1.0]])

    def test_single_edge(self):
        g = Graph.from_edges(2, [(0, 1)])
        np.testing.assert_allclose(renormalize(g).toarray(), np.full((2, 2), 0.5), atol=1e-15)

    def test_path3_hand_values(self):
        a = renormalize(path3()).toarray()
        oracle = dense_renormalize(path3().adj.toarray())
        np.testing.assert_allclose(a, oracle, atol=1e-15)
        assert a[0, 0] == pytest.approx(1 / 2)
        assert a[0, 1] == pytest.approx(1 / np.sqrt(6))
        assert a[1, 1] == pytest.approx(1 / 3)
        assert a[1, 2] == pytest.approx(1 / np.sqrt(6))
        assert a[2, 2] == pytest.approx(1 / 2)
        assert a[0, 2] == 0

    @settings(max_examples=100, deadline=None)
    @given(graphs())
    def test_propagation_invariants(self, g):
        a = renormalize(g).toarray()
        np.testing.assert_allclose(a, a.T, atol=1e-14)
        assert a.min() >= 0 and a.max() <= 1 + 1e-12
        assert np.max(np.abs(np.linalg.eigvalsh(a))) <= 1 + 1e-9
        np.testing.assert_allclose(a, dense_renormalize(g.adj.toarray()), atol=1e-12)


class TestCosineGraph:
    def test_identical_rows(self):
        g = cosine_similarity_graph(np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]))
        assert list(g.entries()) == [(0, 1, 1.0)]

    def test_orthogonal_rows(self):
        assert cosine_similarity_graph(np.array([[1.0, 0.0], [0.0, 1.0]])).num_edges == 0

    def test_below_threshold(self):
        # cos = 1/sqrt(2) < 0.8
        assert cosine_similarity_graph(np.array([[1.0, 0.0], [1.0, 1.0]])).num_edges == 0

    def test_zero_rows_get_no_edges(self):
        g = cosine_similarity_graph(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]))
        assert g.num_edges == 0

    def test_comparator(self):
        # cos((1,0),(1,1)) = 1/sqrt(2); thresholding exactly at that value
        feats = np.array([[1.0, 0.0], [1.0, 1.0]])
        t = float(feats[0] @ feats[1] / np.sqrt(2))
        assert cosine_similarity_graph(feats, t, inclusive=True).num_edges == 1
        assert cosine_similarity_graph(feats, t, inclusive=False).num_edges == 0

    def test_matches_brute_force_across_blocks(self):
        rng = np.random.default_rng(0)
        feats = (rng.random((37, 6)) < 0.4).astype(float)
        g = cosine_similarity_graph(sp.csr_matrix(feats), 0.6, block_size=5)
        norms = np.linalg.norm(feats, axis=1)
        expected = set()
        for i, j in itertools.combinations(range(37), 2):
            if norms[i] > 0 and norms[j] > 0 and feats[i] @ feats[j] / (norms[i] * norms[j]) >= 0.6:
                expected.add((i, j))
        assert {tuple(e) for e in g.edges().tolist()} == expected

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            cosine_similarity_graph(np.eye(2), 0.0)


class TestRemoveTestStructure:
    def star_and_chain(self):
        # 10 edges touch node 0 (the only test node), 3 do not
        edges = [(0, i) for i in range(1, 11)] + [(11, 12), (12, 13), (13, 14)]
        return Graph.from_edges(15, edges)

    def test_fraction_zero_is_identity(self):
        g = self.star_and_chain()
        assert remove_test_structure(g, [0], 0.0, seed=1) is g

    def test_fraction_one_clears_test_edges(self):
        g = self.star_and_chain()
        out = remove_test_structure(g, [0], 1.0, seed=3)
        assert out.adj[0].nnz == 0
        assert out.num_edges == 3

    def test_exact_count_by_enumeration(self):
        g = self.star_and_chain()
        mask = np.zeros(15, dtype=bool)
        mask[0] = True
        out = remove_test_structure(g, mask, 0.6, seed=7)
        before = {tuple(e) for e in g.edges().tolist()}
        after = {tuple(e) for e in out.edges().tolist()}
        removed = before - after
        assert after <= before
        assert len(removed) == 6
        assert all(0 in e for e in removed)
        # untouched non-test edges
        assert {(11, 12), (12, 13), (13, 14)} <= after

    def test_determinism(self):
        rng = np.random.default_rng(5)
        g = random_graph(rng, 30, 0.3, weighted=False)
        test = np.arange(10)
        a = remove_test_structure(g, test, 0.4, seed=11)
        b = remove_test_structure(g, test, 0.4, seed=11)
        c = remove_test_structure(g, test, 0.4, seed=12)
        assert a == b
        assert a.num_edges == c.num_edges
        assert remove_test_structure(g, test, 0.0, seed=1) == remove_test_structure(g, test, 0.0, seed=2)

    def test_output_is_valid_graph(self):
        g = random_graph(np.random.default_rng(8), 25, 0.4)
        out = remove_test_structure(g, np.arange(5, 15), 0.5, seed=0)
        adj = out.adj.toarray()
        np.testing.assert_array_equal(adj, adj.T)
        assert np.all(np.diag(adj) == 0)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            remove_test_structure(path3(), [0], 1.5, seed=0)
