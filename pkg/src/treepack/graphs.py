"""Host-graph core: graphs, cyclic orders, digraphs, typicality checks.

Vertices are dense integers [0, n).  The cyclic identification of V(G)
with [n] is stored as a separate bijection (CyclicOrder) so the graph
itself never needs relabeling.
"""

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from .errors import InputError


class Graph:
    """Simple undirected graph on [0, n)."""

    __slots__ = ("n", "adj")

    def __init__(self, n, edges=()):
        if n < 0:
            raise InputError("vertex count must be nonnegative")
        self.n = n
        self.adj = [set() for _ in range(n)]
        for u, v in edges:
            self.add_edge(u, v)

    def add_edge(self, u, v):
        self._check(u)
        self._check(v)
        if u == v:
            raise InputError(f"loop at {u}")
        self.adj[u].add(v)
        self.adj[v].add(u)

    def remove_edge(self, u, v):
        self.adj[u].discard(v)
        self.adj[v].discard(u)

    def _check(self, v):
        if not (0 <= v < self.n):
            raise InputError(f"vertex {v} out of range [0, {self.n})")

    def has_edge(self, u, v):
        return v in self.adj[u]

    def edges(self):
        for u in range(self.n):
            for v in self.adj[u]:
                if u < v:
                    yield (u, v)

    def edge_count(self):
        return sum(len(a) for a in self.adj) // 2

    def degree(self, v):
        return len(self.adj[v])

    def density(self):
        if self.n < 2:
            return 0.0
        return self.edge_count() / (self.n * (self.n - 1) / 2)

    def density_exact(self):
        if self.n < 2:
            return Fraction(0)
        return Fraction(self.edge_count(), self.n * (self.n - 1) // 2)

    def copy(self):
        g = Graph(self.n)
        g.adj = [set(a) for a in self.adj]
        return g

    def __eq__(self, other):
        return isinstance(other, Graph) and self.n == other.n and self.adj == other.adj

    def __repr__(self):
        return f"Graph(n={self.n}, m={self.edge_count()})"

    # --- constructors ---

    @classmethod
    def complete(cls, n):
        g = cls(n)
        for u in range(n):
            for v in range(u + 1, n):
                g.add_edge(u, v)
        return g

    @classmethod
    def cycle(cls, n):
        return cls(n, [(i, (i + 1) % n) for i in range(n)])

    @classmethod
    def gnp(cls, n, p, rng):
        g = cls(n)
        if n < 2:
            return g
        iu, iv = np.triu_indices(n, k=1)
        keep = rng.random(iu.shape[0]) < p
        for u, v in zip(iu[keep], iv[keep]):
            g.add_edge(int(u), int(v))
        return g

    # --- serialization ---

    @classmethod
    def from_edge_list_text(cls, text, n=None):
        """Whitespace "u v" lines, 0-based."""
        pairs = []
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InputError(f"line {ln}: expected 'u v', got {line!r}")
            pairs.append((int(parts[0]), int(parts[1])))
        if n is None:
            n = 1 + max((max(u, v) for u, v in pairs), default=-1)
        return cls(n, pairs)

    @classmethod
    def from_json_obj(cls, obj):
        return cls(int(obj["n"]), [(int(u), int(v)) for u, v in obj["edges"]])

    def to_json_obj(self):
        return {"n": self.n, "edges": sorted(self.edges())}


class CyclicOrder:
    """Bijection V(G) -> [n] with wraparound successor/predecessor."""

    __slots__ = ("n", "pos", "vert")

    def __init__(self, pos):
        pos = list(pos)
        self.n = len(pos)
        if sorted(pos) != list(range(self.n)):
            raise InputError("cyclic order must be a bijection onto [n)")
        self.pos = pos
        self.vert = [0] * self.n
        for v, lab in enumerate(pos):
            self.vert[lab] = v

    @classmethod
    def identity(cls, n):
        return cls(range(n))

    @classmethod
    def random(cls, n, rng):
        return cls(rng.permutation(n).tolist())

    def successor(self, v):
        return self.vert[(self.pos[v] + 1) % self.n]

    def predecessor(self, v):
        return self.vert[(self.pos[v] - 1) % self.n]

    def distance(self, x, y):
        if not (0 <= x < self.n and 0 <= y < self.n):
            raise InputError("vertex out of range")
        d = abs(self.pos[x] - self.pos[y])
        return min(d, self.n - d)


def cyclic_distance(order, x, y):
    """min(|x-y|, n-|x-y|) in label space."""
    return order.distance(x, y)


class Digraph:
    """Arc set with optional per-arc role labels."""

    __slots__ = ("n", "arcs", "labels")

    def __init__(self, n, arcs=(), labels=None):
        self.n = n
        self.arcs = set()
        self.labels = {}
        for a in arcs:
            self.add_arc(*a)
        if labels:
            for arc, lab in labels.items():
                self.labels[arc] = lab

    def add_arc(self, u, v, label=None):
        if u == v:
            raise InputError(f"loop at {u}")
        if not (0 <= u < self.n and 0 <= v < self.n):
            raise InputError("arc endpoint out of range")
        self.arcs.add((u, v))
        if label is not None:
            self.labels[(u, v)] = label

    def has_arc(self, u, v):
        return (u, v) in self.arcs

    def out_neighbors(self, u):
        return {v for (a, v) in self.arcs if a == u}

    def in_neighbors(self, v):
        return {u for (u, b) in self.arcs if b == v}

    def out_degrees(self):
        deg = [0] * self.n
        for u, _ in self.arcs:
            deg[u] += 1
        return deg

    def to_json_obj(self):
        return {
            "n": self.n,
            "arcs": sorted([u, v, self.labels.get((u, v))] for u, v in self.arcs),
        }

    def to_dot(self):
        lines = ["digraph G {"]
        for u, v in sorted(self.arcs):
            lab = self.labels.get((u, v))
            attr = f' [label="{lab}"]' if lab is not None else ""
            lines.append(f"  {u} -> {v}{attr};")
        lines.append("}")
        return "\n".join(lines)


# --- operations ---


def common_neighborhood(g, s):
    """Intersection of the neighborhoods of s; V(g) for s empty."""
    s = list(s)
    for v in s:
        g._check(v)
    if not s:
        return set(range(g.n))
    out = set(g.adj[s[0]])
    for v in s[1:]:
        out &= g.adj[v]
    return out


@dataclass
class TypicalityVerdict:
    typical: bool
    witness: tuple | None   # a violating vertex set, if any
    sampled: bool           # True when the verdict is Monte-Carlo
    checked: int

    def __bool__(self):
        return self.typical


def _subset_count(n, s):
    total = 0
    c = 1
    for k in range(1, s + 1):
        c = c * (n - k + 1) // k
        total += c
        if total > 10**9:
            break
    return total


def is_typical(g, xi, s, rng=None, max_exhaustive=200_000, samples=2000):
    """Check (xi, s)-typicality: every set S, |S| <= s, has
    ((1 +- xi) d)^{|S|} n common neighbours.

    Exhaustive when the subset count allows, else Monte-Carlo over
    `samples` uniform sets (verdict flagged as sampled).  Comparisons are
    exact rational for n <= 10^4 to avoid boundary flakiness.
    """
    if not (0 < xi < 1):
        raise InputError("xi must lie in (0, 1)")
    if s < 1:
        raise InputError("s must be >= 1")
    if s > g.n:
        raise InputError("s exceeds vertex count")

    exact = g.n <= 10_000
    if exact:
        d = g.density_exact()
        lo_base, hi_base = (1 - Fraction(xi)) * d, (1 + Fraction(xi)) * d
    else:
        d = g.density()
        lo_base, hi_base = (1 - xi) * d, (1 + xi) * d

    def in_bounds(size, count):
        lo = (lo_base ** size) * g.n
        hi = (hi_base ** size) * g.n
        if exact:
            return lo <= count <= hi
        return lo - 1e-9 <= count <= hi + 1e-9

    exhaustive = _subset_count(g.n, s) <= max_exhaustive
    checked = 0
    if exhaustive:
        for k in range(1, s + 1):
            for sub in combinations(range(g.n), k):
                checked += 1
                if not in_bounds(k, len(common_neighborhood(g, sub))):
                    return TypicalityVerdict(False, sub, False, checked)
        return TypicalityVerdict(True, None, False, checked)

    rng = rng if rng is not None else np.random.default_rng(0)
    for _ in range(samples):
        k = int(rng.integers(1, s + 1))
        sub = tuple(sorted(rng.choice(g.n, size=k, replace=False).tolist()))
        checked += 1
        if not in_bounds(k, len(common_neighborhood(g, sub))):
            return TypicalityVerdict(False, sub, True, checked)
    return TypicalityVerdict(True, None, True, checked)


def random_orientation(g, rng):
    """Each edge independently directed either way with probability 1/2."""
    d = Digraph(g.n)
    for u, v in sorted(g.edges()):
        if rng.random() < 0.5:
            d.add_arc(u, v)
        else:
            d.add_arc(v, u)
    return d


def independent_subsample(g, p, rng):
    """Keep each edge independently with probability p."""
    if not (0.0 <= p <= 1.0):
        raise InputError("keep probability must lie in [0, 1]")
    out = Graph(g.n)
    for u, v in sorted(g.edges()):
        if rng.random() < p:
            out.add_edge(u, v)
    return out
