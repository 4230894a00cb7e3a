"""Host graph core: neighborhoods, typicality, cyclic order, sampling."""

from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treepack.errors import InputError
from treepack.graphs import (CyclicOrder, Digraph, Graph, common_neighborhood,
                             cyclic_distance, independent_subsample,
                             is_typical, random_orientation)
from treepack.rng import stream


class TestCommonNeighborhood:
    def test_k4_pair(self):
        assert common_neighborhood(Graph.complete(4), {0, 1}) == {2, 3}

    def test_empty_set_is_all_vertices(self):
        g = Graph.cycle(6)
        assert common_neighborhood(g, set()) == set(range(6))

    def test_c5(self):
        assert common_neighborhood(Graph.cycle(5), {0, 2}) == {1}

    def test_out_of_range(self):
        with pytest.raises(InputError):
            common_neighborhood(Graph.complete(3), {5})

    @given(st.integers(0, 99))
    @settings(max_examples=30, deadline=None)
    def test_extension_identity(self, seed):
        r = np.random.default_rng(seed)
        g = Graph.gnp(12, 0.5, r)
        s = set(int(v) for v in r.choice(12, size=2, replace=False))
        x = int(r.integers(12))
        lhs = common_neighborhood(g, s | {x})
        rhs = common_neighborhood(g, s) & g.adj[x]
        assert lhs == rhs


class TestTypicality:
    def test_k10(self):
        v = is_typical(Graph.complete(10), 0.3, 2)
        assert v.typical and not v.sampled

    def test_k10_minus_matching(self):
        g = Graph.complete(10)
        for i in range(5):
            g.remove_edge(2 * i, 2 * i + 1)
        # d = 40/45; the degree band (1 +- .01) * (8/9) * 10 misses 8
        v = is_typical(g, 0.01, 1)
        assert not v.typical
        assert v.witness is not None and len(v.witness) == 1

    def test_empty_graph(self):
        assert is_typical(Graph(10), 0.5, 1).typical

    def test_exhaustive_agrees_with_double_loop(self, rng):
        g = Graph.gnp(14, 0.6, rng)
        xi, s = 0.35, 2
        v = is_typical(g, xi, s)
        d = g.density_exact()
        naive_ok = True
        for k in (1, 2):
            for sub in combinations(range(g.n), k):
                c = len(common_neighborhood(g, sub))
                lo = (1 - Fraction(xi)) ** k * d ** k * g.n
                hi = (1 + Fraction(xi)) ** k * d ** k * g.n
                if not (lo <= c <= hi):
                    naive_ok = False
        assert v.typical == naive_ok

    def test_bad_args(self):
        g = Graph.complete(4)
        with pytest.raises(InputError):
            is_typical(g, 1.5, 1)
        with pytest.raises(InputError):
            is_typical(g, 0.5, 9)


class TestCyclicDistance:
    def test_examples(self):
        o = CyclicOrder.identity(10)
        assert cyclic_distance(o, 2, 9) == 3
        assert cyclic_distance(o, 4, 4) == 0
        assert cyclic_distance(CyclicOrder.identity(7), 1, 5) == 3

    @given(st.integers(3, 40), st.data())
    @settings(max_examples=60, deadline=None)
    def test_metric_and_shift(self, n, data):
        o = CyclicOrder.identity(n)
        x = data.draw(st.integers(0, n - 1))
        y = data.draw(st.integers(0, n - 1))
        z = data.draw(st.integers(0, n - 1))
        d = cyclic_distance
        assert d(o, x, y) == d(o, y, x) <= n // 2
        assert d(o, x, z) <= d(o, x, y) + d(o, y, z)
        assert d(o, x, y) == d(o, o.successor(x), o.successor(y))


class TestRandomOrientation:
    def test_single_edge_frequencies(self):
        g = Graph(2, [(0, 1)])
        fwd = sum(random_orientation(g, np.random.default_rng(s)).has_arc(0, 1)
                  for s in range(400))
        assert 140 <= fwd <= 260

    def test_empty(self, rng):
        assert not random_orientation(Graph(5), rng).arcs

    def test_support_preserved(self, rng):
        g = Graph.complete(4)
        d = random_orientation(g, rng)
        assert len(d.arcs) == 6
        for u, v in g.edges():
            assert d.has_arc(u, v) != d.has_arc(v, u)

    def test_seed_reproducible(self):
        g = Graph.complete(6)
        a = random_orientation(g, stream(7, "o")).to_json_obj()
        b = random_orientation(g, stream(7, "o")).to_json_obj()
        assert a == b


class TestIndependentSubsample:
    def test_extremes(self, rng):
        g = Graph.complete(6)
        assert sorted(independent_subsample(g, 1.0, rng).edges()) == sorted(g.edges())
        assert independent_subsample(g, 0.0, rng).edge_count() == 0

    def test_binomial_band(self):
        # K_100 at p = .5: mean 2475, sd ~ 35; 4 sd over 100 seeds
        g = Graph.complete(100)
        for s in range(100):
            m = independent_subsample(g, 0.5, stream(s, "sub")).edge_count()
            assert abs(m - 2475) < 4 * 35.2

    def test_bad_p(self, rng):
        with pytest.raises(InputError):
            independent_subsample(Graph.complete(3), 1.5, rng)


class TestSerialization:
    def test_edge_list_round_trip(self):
        g = Graph.from_edge_list_text("0 1\n1 2\n")
        assert g.n == 3 and g.edge_count() == 2

    def test_json_round_trip(self, rng):
        g = Graph.gnp(9, 0.4, rng)
        assert sorted(Graph.from_json_obj(g.to_json_obj()).edges()) == sorted(g.edges())

    def test_digraph_dot(self):
        d = Digraph(3)
        d.add_arc(0, 1, label="x")
        text = d.to_dot()
        assert "digraph" in text and "0 -> 1" in text

    def test_graph_invariants(self):
        g = Graph.complete(5)
        with pytest.raises(InputError):
            g.add_edge(1, 1)
        for v in range(5):
            for u in g.adj[v]:
                assert v in g.adj[u]
