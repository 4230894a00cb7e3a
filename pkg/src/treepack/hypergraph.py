"""Weighted hypergraph near-perfect matching by iterative random bites.

Edges carry positive weights with weighted degree at most 1 at every
vertex and small weighted codegree at every pair.  Each round activates
surviving edges independently with probability bite * omega(e), drops all
clashing activations, commits the rest, and removes covered vertices; a
greedy pass finishes.  Clean test functions are tracked incrementally as
edges commit.
"""

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import kernels
from .errors import InputError
from .rng import kernel_seed


@dataclass
class WeightedHypergraph:
    n_verts: int
    edges: list                  # sorted vertex tuples, size <= r
    omega: list                  # positive weights, parallel to edges
    r: int

    def __post_init__(self):
        if len(self.edges) != len(self.omega):
            raise InputError("edges and omega lengths differ")
        norm = []
        for e in self.edges:
            e = tuple(sorted(int(v) for v in e))
            if not e or len(e) > self.r:
                raise InputError(f"edge size must be in [1, {self.r}]: {e}")
            if len(set(e)) != len(e):
                raise InputError(f"repeated vertex in edge {e}")
            if not all(0 <= v < self.n_verts for v in e):
                raise InputError(f"edge {e} out of range")
            norm.append(e)
        self.edges = norm
        self.omega = [float(w) for w in self.omega]
        if any(w <= 0 for w in self.omega):
            raise InputError("edge weights must be positive")

    def incidence(self):
        inc = [[] for _ in range(self.n_verts)]
        for i, e in enumerate(self.edges):
            for v in e:
                inc[v].append(i)
        return inc

    def covered_universe(self):
        return {v for e in self.edges for v in e}

    @classmethod
    def from_json_obj(cls, obj):
        return cls(
            n_verts=len(obj["vertices"]) if "vertices" in obj else int(obj["n_verts"]),
            edges=[tuple(e["verts"]) for e in obj["edges"]],
            omega=[e["w"] for e in obj["edges"]],
            r=int(obj["r"]),
        )

    def to_json_obj(self):
        return {"r": self.r, "vertices": list(range(self.n_verts)),
                "edges": [{"verts": list(e), "w": w}
                          for e, w in zip(self.edges, self.omega)]}


def weighted_degree(h: WeightedHypergraph, v) -> float:
    if not (0 <= v < h.n_verts):
        raise InputError(f"vertex {v} outside universe")
    return sum(w for e, w in zip(h.edges, h.omega) if v in e)


def weighted_codegree(h: WeightedHypergraph, u, v) -> float:
    if u == v:
        raise InputError("codegree needs distinct vertices")
    return sum(w for e, w in zip(h.edges, h.omega) if u in e and v in e)


@dataclass
class LoadCheck:
    ok: bool
    bad_weight_edges: list
    bad_degree_vertices: list
    bad_codegree_pairs: list


def check_load(h: WeightedHypergraph, C: float, beta: float) -> LoadCheck:
    """Validate omega >= 1/C, degrees <= 1 and codegrees < C^-beta."""
    bad_w = [i for i, w in enumerate(h.omega) if w < 1.0 / C - 1e-12]
    deg = np.zeros(h.n_verts)
    codeg = {}
    for e, w in zip(h.edges, h.omega):
        for v in e:
            deg[v] += w
        for u, v in combinations(e, 2):
            codeg[(u, v)] = codeg.get((u, v), 0.0) + w
    bad_d = [int(v) for v in np.flatnonzero(deg > 1.0 + 1e-12)]
    cb = C ** (-beta)
    bad_c = sorted(p for p, w in codeg.items() if w >= cb)
    ok = not (bad_w or bad_d or bad_c)
    return LoadCheck(ok, bad_w, bad_d, bad_c)


class CleanFunction:
    """Nonnegative function of a matching built from per-edge and
    per-edge-pair terms (ell <= 2); zero on non-matchings by convention.
    Supports incremental accumulation as edges join the matching.
    """

    def __init__(self, name, single=None, pair=None, ell=1):
        if ell not in (1, 2):
            raise InputError("only ell in {1, 2} supported")
        self.name = name
        self.single = single or (lambda e, w: 0.0)
        self.pair = pair
        self.ell = ell
        if ell == 2 and pair is None:
            raise InputError("ell=2 needs a pair term")

    def of_matching(self, h, matched_ids):
        """From-scratch evaluation on a set of edge indices."""
        ids = sorted(matched_ids)
        seen = set()
        for i in ids:
            e = h.edges[i]
            if seen & set(e):
                return 0.0        # not a matching
            seen |= set(e)
        total = sum(self.single(h.edges[i], h.omega[i]) for i in ids)
        if self.ell == 2:
            for i, j in combinations(ids, 2):
                total += self.pair(h.edges[i], h.omega[i], h.edges[j], h.omega[j])
        return total

    def expectation(self, h):
        """f(H, omega): each edge counted with weight omega(e), pairs with
        the product weight over disjoint pairs."""
        total = sum(self.single(e, w) * w for e, w in zip(h.edges, h.omega))
        if self.ell == 2:
            for i, j in combinations(range(len(h.edges)), 2):
                ei, ej = h.edges[i], h.edges[j]
                if set(ei) & set(ej):
                    continue
                total += (self.pair(ei, h.omega[i], ej, h.omega[j])
                          * h.omega[i] * h.omega[j])
        return total


def size_function(name="size"):
    return CleanFunction(name, single=lambda e, w: 1.0)


@dataclass
class NibbleReport:
    matched_ids: list
    covered: set
    coverage: float              # fraction of coverable vertices hit
    rounds_run: int
    f_rows: list                 # (name, f_M incremental, f_M scratch, f_expect, rel_dev)

    def f_csv(self):
        lines = ["f_name,f_M,f_expect,rel_dev"]
        for name, finc, _, fexp, dev in self.f_rows:
            lines.append(f"{name},{finc:.9g},{fexp:.9g},{dev:.9g}")
        return "\n".join(lines) + "\n"


def nibble_match(h: WeightedHypergraph, fs, rng, rounds=None, bite=0.1) -> NibbleReport:
    """Random bites then greedy completion; always returns a matching."""
    if not (0.0 < bite <= 1.0):
        raise InputError("bite must lie in (0, 1]")
    if rounds is None:
        rounds = int(np.ceil(30.0 / bite))
    n_e = len(h.edges)
    # CSR layout shared with the compiled clash kernel
    edge_off = np.zeros(n_e + 1, dtype=np.int64)
    for i, e in enumerate(h.edges):
        edge_off[i + 1] = edge_off[i] + len(e)
    edge_verts = np.fromiter((v for e in h.edges for v in e), dtype=np.int64,
                             count=int(edge_off[-1]))
    w = np.asarray(h.omega)
    alive = np.ones(n_e, dtype=bool)
    vertex_free = np.ones(h.n_verts, dtype=bool)

    matched = []
    covered = set()
    inc_vals = {f.name: 0.0 for f in fs}

    def commit(i):
        e = h.edges[i]
        for f in fs:
            inc_vals[f.name] += f.single(e, h.omega[i])
            if f.ell == 2 and f.pair is not None:
                for j in matched:
                    inc_vals[f.name] += f.pair(h.edges[j], h.omega[j], e, h.omega[i])
        matched.append(i)
        covered.update(e)
        for v in e:
            vertex_free[v] = False

    def prune():
        # edge stays alive iff all its vertices are still free
        all_free = np.bitwise_and.reduceat(vertex_free[edge_verts], edge_off[:-1])
        np.logical_and(alive, all_free, out=alive)

    rounds_run = 0
    for _ in range(rounds):
        ids = np.flatnonzero(alive)
        if ids.size == 0:
            break
        act = ids[rng.random(ids.size) < bite * w[ids]]
        rounds_run += 1
        if act.size == 0:
            continue
        keep = kernels.nibble_survivors(edge_off, edge_verts, act, h.n_verts)
        for i in act[keep]:
            commit(int(i))
        prune()

    # greedy completion in weight order (heaviest first, index tiebreak)
    for i in sorted(np.flatnonzero(alive), key=lambda i: (-w[i], i)):
        if all(vertex_free[v] for v in h.edges[i]):
            commit(int(i))

    coverable = h.covered_universe()
    coverage = len(covered) / len(coverable) if coverable else 1.0
    rows = []
    for f in fs:
        scratch = f.of_matching(h, matched)
        expect = f.expectation(h)
        dev = abs(inc_vals[f.name] - expect) / expect if expect else 0.0
        rows.append((f.name, inc_vals[f.name], scratch, expect, dev))
    return NibbleReport(sorted(matched), covered, coverage, rounds_run, rows)


def random_regular_design(n_verts, deg, rng):
    """Near-regular 3-graph: deg rounds of a random partition into triples.

    Every vertex lies in at most deg edges of weight 1/deg, so weighted
    degrees are <= 1 exactly; codegrees are k/deg for small k.
    """
    if n_verts % 3:
        raise InputError("vertex count must be divisible by 3")
    edges = set()
    for _ in range(deg):
        perm = rng.permutation(n_verts)
        for i in range(0, n_verts, 3):
            edges.add(tuple(sorted(int(v) for v in perm[i:i + 3])))
    edges = sorted(edges)
    return WeightedHypergraph(n_verts, edges, [1.0 / deg] * len(edges), 3)


def max_weight_matching_exhaustive(h: WeightedHypergraph, cap=20):
    """Exact maximum-weight matching by branch and bound; small inputs only."""
    if len(h.edges) > cap:
        raise InputError(f"exhaustive search capped at {cap} edges")
    best = [0.0, []]

    def rec(i, used, total, chosen):
        if total > best[0]:
            best[0], best[1] = total, list(chosen)
        if i == len(h.edges):
            return
        rest = sum(h.omega[i:])
        if total + rest <= best[0]:
            return
        e = set(h.edges[i])
        if not (e & used):
            chosen.append(i)
            rec(i + 1, used | e, total + h.omega[i], chosen)
            chosen.pop()
        rec(i + 1, used, total, chosen)

    rec(0, set(), 0.0, [])
    return best[0], best[1]


def load_json(path):
    with open(path) as fh:
        return WeightedHypergraph.from_json_obj(json.load(fh))
