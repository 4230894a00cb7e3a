"""Tree analysis: k-span, classification, partition, label scheme."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treepack.config import ParamConfig
from treepack.errors import ClassificationError, InputError
from treepack.rng import stream
from treepack.trees import (CaseTag, Tree, bare_segments, classify_case,
                            k_span, k_span_naive, label_scheme, leaf_stars,
                            tree_partition)

from conftest import caterpillar, spider


def cfg_with_lambda(n, lam, **kw):
    """Config whose big star threshold is exactly lam."""
    c = 1.0 - math.log(lam) / math.log(n)
    return ParamConfig(n=n, c=c, **kw).validate()


class TestKSpan:
    def test_path_k3_merges(self):
        t = Tree.path(5)
        assert k_span(t, {0, 4}, 3) == {0, 1, 2, 3, 4}

    def test_path_k2_fixed(self):
        assert k_span(Tree.path(5), {0, 4}, 2) == {0, 4}

    def test_empty(self):
        assert k_span(Tree.path(4), set(), 3) == set()

    def test_bad_k(self):
        with pytest.raises(InputError):
            k_span(Tree.path(3), {0}, 0)

    @given(st.integers(0, 500))
    @settings(max_examples=60, deadline=None)
    def test_matches_naive_and_bound(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(4, 14))
        t = Tree.random(n, r)
        size = int(r.integers(1, 4))
        s = set(int(v) for v in r.choice(n, size=size, replace=False))
        k = int(r.integers(1, 4))
        out = k_span(t, s, k)
        assert out == k_span_naive(t, s, k)
        assert len(out) <= (k + 1) * len(s)

    @given(st.integers(0, 200))
    @settings(max_examples=40, deadline=None)
    def test_monotone_idempotent(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(5, 40))
        t = Tree.random(n, r)
        s1 = set(int(v) for v in r.choice(n, size=2, replace=False))
        s2 = s1 | {int(r.integers(n))}
        k = int(r.integers(1, 5))
        a, b = k_span(t, s1, k), k_span(t, s2, k)
        assert a <= k_span(t, a | (s2 - s1), k)  # monotone via superset
        assert k_span(t, b, k) == b              # idempotent
        assert a <= b or not (s1 <= s2)


class TestStructure:
    def test_leaf_stars_path(self):
        assert leaf_stars(Tree.path(4)) == {1: [0], 2: [3]}

    def test_leaf_stars_star(self):
        assert leaf_stars(Tree.star(4)) == {0: [1, 2, 3, 4]}

    def test_single_edge(self):
        assert leaf_stars(Tree(2, [(0, 1)])) == {0: [1]}
        assert bare_segments(Tree(2, [(0, 1)])) == [[0, 1]]

    def test_bare_segments_path(self):
        segs = bare_segments(Tree.path(6))
        assert segs == [[0, 1, 2, 3, 4, 5]]

    def test_bare_segments_spider(self):
        t = spider(3, 1)     # spine 0-1-2 with one leaf each
        segs = {tuple(s) for s in bare_segments(t)}
        # three maximal bare paths hang off the single branch vertex 1
        assert segs == {(1, 0, 3), (1, 2, 5), (1, 4)}


class TestClassify:
    def test_case_l_star(self):
        t = Tree.star(99)
        cfg = cfg_with_lambda(100, 50, p_plus=0.1)
        tag = classify_case(t, cfg)
        assert tag.case == "L" and tag.witness == 100

    def test_case_s_caterpillar(self):
        t = caterpillar(50, twig_at=range(50))
        cfg = cfg_with_lambda(100, 50, p_minus=0.3)
        tag = classify_case(t, cfg)
        assert tag.case == "S"
        assert tag.measured["small_star_vertices"] >= 50

    def test_case_p_long_path(self):
        t = Tree.path(1000)
        cfg = cfg_with_lambda(1000, 50, p_plus=0.2, K=4)
        tag = classify_case(t, cfg)
        assert tag.case == "P"
        assert len(tag.witness) == 999 // 32

    def test_no_case_certifies(self):
        # binary-ish tree with no leaf-star mass and no long bare paths
        r = np.random.default_rng(0)
        edges = [(i, 2 * i + 1) for i in range(20) if 2 * i + 1 < 41]
        edges += [(i, 2 * i + 2) for i in range(20) if 2 * i + 2 < 41]
        t = Tree(41, edges)
        cfg = ParamConfig(n=5000, p_minus=0.9, p_plus=0.0001,
                          eta_plus=0.00005).validate()
        with pytest.raises(ClassificationError) as e:
            classify_case(t, cfg)
        assert "outside_big_stars" in e.value.measured


def _partition_for(t, n_host, seed=0, **kw):
    cfg = ParamConfig(n=n_host, **kw).validate()
    tag = classify_case(t, cfg)
    return tree_partition(t, tag, cfg, stream(seed, "tp")), cfg, tag


def check_partition_invariants(t, tp, cfg):
    # disjointness of the head pieces
    assert not (tp.a_star & tp.a_star_star)
    assert tp.a0 == tp.a_star | tp.a_star_star | tp.a0_prime
    for i, layer in enumerate(tp.layers):
        assert not (layer & tp.a0)
        for j in range(i):
            assert not (layer & tp.layers[j])
        # independence in F (star groups only remove a-center edges)
        f_adj = {}
        for u, v in tp.f_edges:
            f_adj.setdefault(u, set()).add(v)
        for u in layer:
            assert not (f_adj.get(u, set()) & layer), "layer not independent"
    for v in range(t.n):
        assert len(tp.n_less(v)) <= 4
    a0 = tp.a0
    for u in range(t.n):
        if u not in a0:
            assert len(tp.n_less(u) & a0) <= 1
    assert tp.i_star < math.ceil(7.0 * math.log(1.0 / cfg.eps)) + 1
    # order: A* before A** before A'_0 before layers
    pos = tp.order_pos
    for a in tp.a_star:
        for b in tp.a_star_star | tp.a0_prime:
            assert pos[a] < pos[b]
    for b in tp.a_star_star:
        for c in tp.a0_prime:
            assert pos[b] < pos[c]


class TestPartition:
    def test_case_s_small(self):
        t = spider(10, 2)
        tp, cfg, _ = _partition_for(t, 2 * (t.n - 1) + 1, eps=0.02,
                                    p_max=0.01)
        assert tp.case == "S"
        total = sum(len(ls) for _, ls in tp.p_ex_stars)
        assert total >= cfg.p_minus * cfg.n / 2 - cfg.big_lambda
        check_partition_invariants(t, tp, cfg)

    def test_case_p_small(self):
        t = caterpillar(80, twig_at=(10, 50))
        tp, cfg, _ = _partition_for(t, 2 * (t.n - 1) + 1, eps=0.02,
                                    p_max=0.01)
        assert tp.case == "P"
        assert len(tp.p_ex_leaf_edges) == 2
        for seq in tp.p_ex_paths:
            assert len(seq) == 8 * cfg.K + 1
        check_partition_invariants(t, tp, cfg)

    def test_deterministic(self):
        t = spider(10, 2)
        a = _partition_for(t, 2 * (t.n - 1) + 1, seed=5)[0].to_json_obj()
        b = _partition_for(t, 2 * (t.n - 1) + 1, seed=5)[0].to_json_obj()
        assert a == b

    def test_partition_rejects_case_l(self):
        t = Tree.star(30)
        cfg = cfg_with_lambda(61, 5)
        with pytest.raises(InputError):
            tree_partition(t, CaseTag("L", 31), cfg, stream(0, "x"))

    def test_f_splits_t(self):
        t = spider(10, 2)
        tp, _, _ = _partition_for(t, 2 * (t.n - 1) + 1)
        assert tp.f_edges | tp.p_ex_edges == set(t.edges())
        assert not (tp.f_edges & tp.p_ex_edges)
        assert tp.f_prime_edges <= tp.f_edges


class TestLabelScheme:
    def test_empty_scheme(self):
        t = spider(10, 2)
        tp, cfg, _ = _partition_for(t, 2 * (t.n - 1) + 1)
        sch = label_scheme(tp, cfg)
        if tp.m == 0:
            assert sch.empty and not sch.all_labels()
        else:
            assert len(sch.all_labels()) >= tp.m

    def test_apportionment_exact(self):
        # random high-degree trees that actually produce star groups
        hit = 0
        for seed in range(40):
            r = np.random.default_rng(seed)
            t = Tree.random(60, r)
            cfg = ParamConfig(n=40, c=0.4).validate()
            try:
                tag = classify_case(t, cfg)
                if tag.case not in ("S", "P"):
                    continue
                tp = tree_partition(t, tag, cfg, r)
            except Exception:
                continue
            sch = label_scheme(tp, cfg)
            if sch.empty:
                continue
            hit += 1
            for name, q in (("lt", tp.q_delta), ("ge", tp.q_lambda)):
                tot = sum(sch.cap_ai.get(ai, 0) for ai in q)
                if any(tp.m_ai[ai] for ai in q):
                    assert tot == tp.m
            for (a, i), cnt in sch.cap_ai.items():
                lab = [l for l in sch.all_labels() if l[:2] == (a, i)]
                assert len(lab) == cnt
        assert hit >= 1


class TestSerialization:
    def test_parent_array(self):
        t = Tree.from_parent_array_text("-1\n0\n0\n1\n")
        assert t.n == 4 and sorted(t.edges()) == [(0, 1), (0, 2), (1, 3)]

    def test_json_round_trip(self):
        t = spider(4, 1)
        t2 = Tree.from_json_obj(t.to_json_obj())
        assert sorted(t2.edges()) == sorted(t.edges())

    def test_invalid_trees(self):
        with pytest.raises(InputError):
            Tree(4, [(0, 1), (2, 3), (0, 2), (1, 3)])
        with pytest.raises(InputError):
            Tree(4, [(0, 1), (2, 3)])
