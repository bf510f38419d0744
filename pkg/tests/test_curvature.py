import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperricci import Hypergraph
from hyperricci.curvature import (
    MetricOracle,
    NodeMeasure,
    curvature,
    forman_curvature,
    node_measure,
    ollivier_curvature,
    wasserstein1,
)
from hyperricci.kernels import transport_cost

from conftest import hypergraphs, random_hypergraph
from oracles import brute_force_transport, clique_graph, forman_loop, lp_transport, ollivier_graph_oracle


def random_units(rng, k, total):
    cuts = np.sort(rng.integers(0, total + 1, size=k - 1))
    return np.diff(np.concatenate([[0], cuts, [total]]))


class TestForman:
    @pytest.mark.parametrize("size", [2, 3, 7])
    @pytest.mark.parametrize("weight", [0.3, 1.0, 5.0])
    def test_isolated_edge_equals_size(self, size, weight):
        h = Hypergraph(size + 2, [list(range(size)), [size, size + 1]])
        assert forman_curvature(h, [weight, 1.0])[0] == pytest.approx(size)

    def test_isolated_edge_counting_itself(self):
        h = Hypergraph(3, [[0, 1, 2]])
        assert forman_curvature(h, [1.0], include_self=True)[0] == pytest.approx(0.0)

    def test_two_edges_sharing_a_node(self):
        h = Hypergraph(3, [[0, 1], [1, 2]])
        np.testing.assert_allclose(forman_curvature(h, [1.0, 1.0]), [1.0, 1.0])

    @pytest.mark.parametrize("include_self", [False, True])
    def test_matches_loop(self, rng, include_self):
        for _ in range(20):
            h = random_hypergraph(rng)
            w = rng.uniform(0.1, 3.0, h.m)
            np.testing.assert_allclose(forman_curvature(h, w, include_self), forman_loop(h, w, include_self),
                                       rtol=1e-12, atol=1e-12)

    @given(hypergraphs(), st.floats(0.01, 100.0))
    def test_scaling_weights(self, h, c):
        w = np.linspace(0.5, 2.0, h.m)
        sub = h.edge_size - forman_curvature(h, w)
        sub_c = h.edge_size - forman_curvature(h, c * w)
        np.testing.assert_allclose(sub_c, np.sqrt(c) * sub, rtol=1e-9, atol=1e-12)

    @given(hypergraphs())
    def test_bounded_by_size(self, h):
        w = np.random.default_rng(h.m).uniform(0.1, 3.0, h.m)
        assert np.all(forman_curvature(h, w) <= h.edge_size + 1e-12)

    def test_lipschitz_in_weights(self, rng):
        h = random_hypergraph(rng, n_range=(10, 20))
        w = rng.uniform(0.5, 2.0, h.m)
        k0 = forman_curvature(h, w)
        slopes = []
        for delta in (1e-3, 1e-4, 1e-5):
            dw = delta * rng.standard_normal(h.m)
            slopes.append(np.max(np.abs(forman_curvature(h, w + dw) - k0)) / np.max(np.abs(dw)))
        assert max(slopes) < 10 * min(slopes) + 1e-9
        assert max(slopes) < 1e3

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.nan])
    def test_nonpositive_weight(self, toy, bad):
        with pytest.raises(ValueError, match="edge 1"):
            forman_curvature(toy, [1.0, bad, 1.0])

    def test_wrong_length(self, toy):
        with pytest.raises(ValueError, match="expected 3"):
            forman_curvature(toy, [1.0, 1.0])


class TestNodeMeasure:
    def test_single_triangle_edge_drop_self(self):
        h = Hypergraph(3, [[0, 1, 2]])
        assert node_measure(h, [1.0], 0).as_dict() == pytest.approx({1: 0.5, 2: 0.5})

    def test_single_triangle_edge_keep_self(self):
        h = Hypergraph(3, [[0, 1, 2]])
        mu = node_measure(h, [1.0], 0, keep_self=True).as_dict()
        assert mu == pytest.approx({0: 1 / 3, 1: 1 / 3, 2: 1 / 3})

    def test_two_pair_edges(self):
        h = Hypergraph(3, [[0, 1], [0, 2]])
        assert node_measure(h, [1.0, 1.0], 0).as_dict() == pytest.approx({1: 0.5, 2: 0.5})

    def test_weights_shift_mass(self):
        h = Hypergraph(3, [[0, 1], [0, 2]])
        assert node_measure(h, [3.0, 1.0], 0).as_dict() == pytest.approx({1: 0.75, 2: 0.25})

    def test_masses_sum_to_one(self, rng):
        count = 0
        while count < 1000:
            h = random_hypergraph(rng)
            w = rng.uniform(0.1, 3.0, h.m)
            for i in range(h.n):
                mu = node_measure(h, w, i, keep_self=bool(count % 2))
                assert abs(mu.mass.sum() - 1.0) <= 1e-12
                assert np.all(mu.mass >= 0)
                assert len(set(mu.support.tolist())) == mu.support.size
                count += 1

    def test_invalid_measure(self):
        with pytest.raises(ValueError):
            NodeMeasure(np.array([0, 1]), np.array([0.7, 0.7]))
        with pytest.raises(ValueError):
            NodeMeasure(np.array([0, 1]), np.array([1.5, -0.5]))


class TestMetric:
    def test_axioms(self, rng):
        h = random_hypergraph(rng, n_range=(15, 30))
        d = MetricOracle(h)
        D = d.rows(range(h.n))
        G = clique_graph(h)
        ref = dict(nx.all_pairs_shortest_path_length(G))
        for u in range(h.n):
            assert D[u, u] == 0
            for v in range(h.n):
                assert D[u, v] == D[v, u] == ref[u].get(v, np.inf)
        for _ in range(200):
            a, b, c = rng.integers(0, h.n, size=3)
            assert D[a, c] <= D[a, b] + D[b, c]

    def test_distance_and_matrix(self, toy):
        d = MetricOracle(toy)
        assert d.distance(1, 4) == 2
        np.testing.assert_array_equal(d.matrix([0, 1], [3, 4]), [[1, 1], [2, 2]])


class TestWasserstein:
    def test_identical(self, toy):
        mu = node_measure(toy, np.ones(3), 2)
        assert wasserstein1(mu, mu, MetricOracle(toy)) == 0.0

    def test_point_masses_three_hops(self):
        h = Hypergraph(4, [[0, 1], [1, 2], [2, 3]])
        a = NodeMeasure(np.array([0]), np.array([1.0]))
        b = NodeMeasure(np.array([3]), np.array([1.0]))
        assert wasserstein1(a, b, MetricOracle(h)) == 3.0

    def test_unreachable_pair(self):
        h = Hypergraph(4, [[0, 1], [2, 3]])
        a = NodeMeasure(np.array([0]), np.array([1.0]))
        b = NodeMeasure(np.array([3]), np.array([1.0]))
        with pytest.raises(ValueError, match="nodes 0 and 3"):
            wasserstein1(a, b, MetricOracle(h))

    def test_small_supports_exact(self, rng):
        # dyadic masses keep every intermediate exact, so equality is bitwise
        for _ in range(200):
            p, q = rng.integers(1, 6, size=2)
            a, b = random_units(rng, p, 16), random_units(rng, q, 16)
            C = rng.integers(0, 5, size=(p, q)).astype(float)
            assert transport_cost(a / 16, b / 16, C) == brute_force_transport(a, b, C)

    def test_against_lp_on_node_measures(self, rng):
        h = random_hypergraph(rng, n_range=(20, 30), m_range=(10, 20))
        d = MetricOracle(h)
        w = rng.uniform(0.2, 2.0, h.m)
        for _ in range(30):
            i, j = rng.integers(0, h.n, size=2)
            a, b = node_measure(h, w, i), node_measure(h, w, j)
            C = d.matrix(a.support, b.support)
            if np.all(np.isfinite(C)):
                assert wasserstein1(a, b, d) == pytest.approx(lp_transport(a.mass, b.mass, C), abs=1e-10)


class TestOllivier:
    @pytest.mark.parametrize("size", [2, 3, 5])
    def test_isolated_edge_keep_self(self, size):
        h = Hypergraph(size, [list(range(size))])
        assert ollivier_curvature(h, [1.0], keep_self=True)[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("size", [3, 4, 6])
    def test_isolated_edge_drop_self(self, size):
        # each member's measure is uniform on the other members; one unit of 1/(k-1) moves by one hop
        h = Hypergraph(size, [list(range(size))])
        assert ollivier_curvature(h, [1.0])[0] == pytest.approx(1.0 - 1.0 / (size - 1))

    @pytest.mark.parametrize("length", [4, 7, 12])
    def test_chain_matches_graph_oracle(self, rng, length):
        edges = [[k, k + 1] for k in range(length)]
        h = Hypergraph(length + 1, edges)
        w = rng.uniform(0.3, 3.0, h.m)
        got = ollivier_curvature(h, w)
        ref = ollivier_graph_oracle(clique_graph(h), {frozenset(e): w[k] for k, e in enumerate(edges)})
        for k, e in enumerate(edges):
            assert got[k] == pytest.approx(ref[frozenset(e)], abs=1e-10)

    def test_random_graph_matches_oracle(self, rng):
        G = nx.connected_watts_strogatz_graph(14, 4, 0.3, seed=2)
        edges = [sorted(e) for e in G.edges()]
        h = Hypergraph(14, edges)
        w = rng.uniform(0.3, 3.0, h.m)
        got = ollivier_curvature(h, w)
        ref = ollivier_graph_oracle(G, {frozenset(e): w[k] for k, e in enumerate(edges)})
        np.testing.assert_allclose(got, [ref[frozenset(e)] for e in edges], atol=1e-10)

    def test_at_most_one(self, rng):
        seen = 0
        while seen < 500:
            h = random_hypergraph(rng, n_range=(6, 25), m_range=(5, 30))
            k = ollivier_curvature(h, rng.uniform(0.1, 3.0, h.m), keep_self=bool(seen % 2))
            assert np.all(np.isfinite(k)) and np.all(k <= 1.0 + 1e-12)
            seen += h.m


class TestDispatch:
    def test_forman(self, toy):
        w = np.array([1.0, 2.0, 0.5])
        np.testing.assert_array_equal(curvature(toy, w, "forman"), forman_curvature(toy, w))

    def test_ollivier(self, toy):
        w = np.array([1.0, 2.0, 0.5])
        np.testing.assert_array_equal(curvature(toy, w, "Ollivier", keep_self=True),
                                      ollivier_curvature(toy, w, keep_self=True))

    def test_unknown_kind(self, toy):
        with pytest.raises(ValueError, match="unknown curvature kind"):
            curvature(toy, np.ones(3), "resistance")

    @settings(max_examples=200)
    @given(hypergraphs(max_n=10, max_m=6, max_size=4), st.sampled_from(["forman", "ollivier"]))
    def test_finite(self, h, kind):
        assert np.all(np.isfinite(curvature(h, np.ones(h.m), kind)))
