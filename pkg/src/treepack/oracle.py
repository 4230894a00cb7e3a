"""Ground truth: decomposition verifier, exact backtracking searches for
tree decompositions and path systems, exact perfect matchings, and the
exhaustive matching enumerators the sampler tests are measured against.

Everything here is exponential-time but complete within its caps, so the
randomized modules can be validated against it at desk scale.
"""

import json
import time
from dataclasses import dataclass

from .errors import BudgetExceeded, InputError
from .graphs import Graph
from .matching import BipartiteInstance, hall_violator, hopcroft_karp
from .trees import Tree


@dataclass
class Decomposition:
    host: Graph
    tree: Tree
    copies: list                 # each a list: tree vertex -> host vertex

    def edge_images(self):
        out = []
        for phi in self.copies:
            out.append({(min(phi[u], phi[v]), max(phi[u], phi[v]))
                        for u, v in self.tree.edges()})
        return out

    def to_json_obj(self):
        return {"host": self.host.to_json_obj(), "tree": self.tree.to_json_obj(),
                "copies": [{"map": list(phi)} for phi in self.copies]}

    @classmethod
    def from_json_obj(cls, obj):
        return cls(Graph.from_json_obj(obj["host"]), Tree.from_json_obj(obj["tree"]),
                   [list(c["map"]) for c in obj["copies"]])


@dataclass
class Verdict:
    ok: bool
    violation: str | None = None

    def __bool__(self):
        return self.ok


def verify(d: Decomposition) -> Verdict:
    """Copy count, injectivity, adjacency, disjointness, exact coverage."""
    m_t = d.tree.edge_count()
    m_g = d.host.edge_count()
    if m_t == 0:
        return Verdict(m_g == 0, None if m_g == 0 else "edgeless tree, nonempty host")
    if m_g % m_t != 0 or len(d.copies) != m_g // m_t:
        return Verdict(False, f"copy count {len(d.copies)} != {m_g}/{m_t}")
    seen = set()
    for ci, phi in enumerate(d.copies):
        if len(phi) != d.tree.n:
            return Verdict(False, f"copy {ci}: map length {len(phi)} != {d.tree.n}")
        if len(set(phi)) != len(phi):
            return Verdict(False, f"copy {ci}: not injective")
        for u, v in d.tree.edges():
            a, b = phi[u], phi[v]
            if not (0 <= a < d.host.n and 0 <= b < d.host.n):
                return Verdict(False, f"copy {ci}: image out of range")
            if not d.host.has_edge(a, b):
                return Verdict(False, f"copy {ci}: ({u},{v}) -> non-edge ({a},{b})")
            e = (min(a, b), max(a, b))
            if e in seen:
                return Verdict(False, f"copy {ci}: edge {e} reused")
            seen.add(e)
    if len(seen) != m_g:
        return Verdict(False, f"coverage {len(seen)} of {m_g} edges")
    return Verdict(True)


# --- brute-force tree decomposition ---


def _rooted_code(t, root, parent):
    subs = sorted(_rooted_code(t, c, root) for c in t.adj[root] if c != parent)
    return "(" + "".join(subs) + ")"


def _edge_rooted_reps(t):
    """One directed tree edge per class of (code at a, code at b) pairs.

    Placing each representative onto a forced host edge covers all
    embeddings up to tree automorphism.
    """
    seen = set()
    reps = []
    for u, v in t.edges():
        for a, b in ((u, v), (v, u)):
            code = (_rooted_code(t, a, b), _rooted_code(t, b, a))
            if code not in seen:
                seen.add(code)
                reps.append((a, b))
    return reps


def _bfs_layout(t, a, b):
    """Visit order with parents, starting from the edge (a, b)."""
    order = [a, b]
    parent = {a: None, b: a}
    i = 0
    while i < len(order):
        x = order[i]
        i += 1
        for y in sorted(t.adj[x]):
            if y not in parent:
                parent[y] = x
                order.append(y)
    return order, parent


class _Budget:
    def __init__(self, nodes, seconds):
        self.nodes = nodes
        self.deadline = time.monotonic() + seconds if seconds else None

    def tick(self):
        self.nodes -= 1
        if self.nodes < 0:
            raise BudgetExceeded("node budget exhausted")
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise BudgetExceeded("time budget exhausted")


def brute_decompose(g: Graph, t: Tree, edge_cap=60, node_budget=50_000_000,
                    time_budget=None):
    """Exact search for a T-decomposition; None when none exists.

    Each copy is forced to cover the lexicographically smallest uncovered
    host edge, with the tree edge placed there ranging over automorphism
    classes only.
    """
    m_t = t.edge_count()
    m_g = g.edge_count()
    if m_t == 0:
        raise InputError("tree must have at least one edge")
    if m_g % m_t != 0:
        raise InputError(f"|E(host)| = {m_g} not divisible by |E(tree)| = {m_t}")
    if m_g > edge_cap:
        raise BudgetExceeded(f"host has {m_g} > {edge_cap} edges; refusing")
    n_copies = m_g // m_t
    reps = _edge_rooted_reps(t)
    layouts = [(_bfs_layout(t, a, b)) for a, b in reps]
    uncovered = set(g.edges())
    budget = _Budget(node_budget, time_budget)
    copies = []

    adj_unc = [set(g.adj[v]) for v in range(g.n)]

    def cover(a, b):
        uncovered.discard((min(a, b), max(a, b)))
        adj_unc[a].discard(b)
        adj_unc[b].discard(a)

    def uncover(a, b):
        uncovered.add((min(a, b), max(a, b)))
        adj_unc[a].add(b)
        adj_unc[b].add(a)

    def place(order, parent, phi, idx):
        budget.tick()
        if idx == len(order):
            return True
        u = order[idx]
        p = parent[u]
        base = phi[p]
        taken = set(phi.values())
        for x in sorted(adj_unc[base]):
            if x in taken:
                continue
            phi[u] = x
            cover(base, x)
            if place(order, parent, phi, idx + 1):
                return True
            uncover(base, x)
            del phi[u]
        return False

    def solve():
        budget.tick()
        if not uncovered:
            return True
        e = min(uncovered)
        for (order, parent), (ta, tb) in zip(layouts, reps):
            for ha, hb in (e, e[::-1]):
                phi = {ta: ha, tb: hb}
                cover(ha, hb)
                if place(order, parent, phi, 2):
                    copies.append([phi[u] for u in range(t.n)])
                    if solve():
                        return True
                    copies.pop()
                    # re-cover this copy's edges before undoing
                    for u, v in t.edges():
                        uncover(phi[u], phi[v])
                    cover(ha, hb)
                uncover(ha, hb)
        return False

    if solve():
        d = Decomposition(g, t, copies)
        assert len(copies) == n_copies and verify(d)
        return d
    return None


# --- exact bipartite matching ---


def exact_perfect_matching(inst: BipartiteInstance):
    """(matching dict, None) when perfect, else (None, Hall violator)."""
    adj = [[] for _ in range(inst.x_size)]
    for x, y in inst.b_edges:
        adj[x].append(y)
    mx, my = hopcroft_karp(inst.x_size, inst.y_size, adj)
    if inst.x_size == inst.y_size and -1 not in mx:
        return {x: mx[x] for x in range(inst.x_size)}, None
    return None, hall_violator(inst.x_size, adj, mx, my)


def maximum_matching_size(inst: BipartiteInstance):
    adj = [[] for _ in range(inst.x_size)]
    for x, y in inst.b_edges:
        adj[x].append(y)
    mx, _ = hopcroft_karp(inst.x_size, inst.y_size, adj)
    return sum(1 for y in mx if y != -1)


def enumerate_perfect_matchings(inst: BipartiteInstance, cap=2_000_000):
    """All perfect matchings as tuples (y for each x); exponential."""
    if inst.x_size != inst.y_size:
        return []
    n = inst.x_size
    adj = [sorted(y for x2, y in inst.b_edges if x2 == x) for x in range(n)]
    out = []
    used = [False] * n
    cur = [0] * n

    def rec(x):
        if x == n:
            out.append(tuple(cur))
            if len(out) > cap:
                raise BudgetExceeded("too many perfect matchings to enumerate")
            return
        for y in adj[x]:
            if not used[y]:
                used[y] = True
                cur[x] = y
                rec(x + 1)
                used[y] = False

    rec(0)
    return out


def is_mzmz_free(match, z_edges):
    """No pair x, x' with (x, match[x']) and (x', match[x]) both in Z."""
    n = len(match)
    z = set(z_edges)
    for x in range(n):
        for xp in range(x + 1, n):
            if (x, match[xp]) in z and (xp, match[x]) in z:
                return False
    return True


def mzmz_free_matchings(inst: BipartiteInstance, cap=2_000_000):
    return [m for m in enumerate_perfect_matchings(inst, cap)
            if is_mzmz_free(m, inst.z_edges)]


# --- exact path systems ---


def path_factor_solve(g: Graph, demands: dict, forbidden=None, edge_cap=60,
                      node_budget=20_000_000):
    """Assign every edge of g to demanded paths; None when infeasible.

    demands: w -> list of ((x, y), length); forbidden: w -> vertex set
    banned as internal vertices.  Paths of the same w must be vertex
    disjoint; all paths are globally edge disjoint and cover E(g).
    """
    m_g = g.edge_count()
    if m_g > edge_cap:
        raise BudgetExceeded(f"host has {m_g} > {edge_cap} edges; refusing")
    total = sum(ln for dl in demands.values() for _, ln in dl)
    if total != m_g:
        raise InputError(f"demanded lengths sum to {total}, host has {m_g} edges")
    forbidden = forbidden or {}
    slots = [(w, xy, ln) for w in sorted(demands) for xy, ln in demands[w]]
    unused = [set(g.adj[v]) for v in range(g.n)]
    w_used = {w: set() for w in demands}
    budget = _Budget(node_budget, None)
    solution = {w: [] for w in demands}

    # backtracking over whole paths: retry alternate routes per slot
    def solve_bt(i):
        budget.tick()
        if i == len(slots):
            return True
        w, (x, y), ln = slots[i]
        ban = set(forbidden.get(w, ()))
        for path in _all_paths(g, unused, x, y, ln, ban, w_used[w], budget):
            for a, b in zip(path, path[1:]):
                unused[a].discard(b)
                unused[b].discard(a)
            added = set(path) - w_used[w]
            w_used[w] |= added
            solution[w].append(list(path))
            if solve_bt(i + 1):
                return True
            solution[w].pop()
            w_used[w] -= added
            for a, b in zip(path, path[1:]):
                unused[a].add(b)
                unused[b].add(a)
        return False

    if solve_bt(0):
        return solution
    return None


def _all_paths(g, unused, x, y, length, ban, w_taken, budget):
    """Generate x-y paths of exact edge count over currently unused edges."""
    path = [x]

    def rec(cur, left):
        budget.tick()
        if left == 0:
            if cur == y:
                yield list(path)
            return
        for nxt in sorted(unused[cur]):
            if nxt in path:
                continue
            if nxt == y:
                if left != 1:
                    continue
            elif nxt in ban or nxt in w_taken:
                continue
            path.append(nxt)
            yield from rec(nxt, left - 1)
            path.pop()

    if x == y:
        return
    yield from rec(x, length)


def all_trees_with_edges(k):
    """Non-isomorphic trees with k edges, by canonical-code dedup."""
    n = k + 1
    seen = {}
    for pruefer in _pruefer_space(n):
        t = _tree_from_pruefer(n, pruefer)
        code = min(_rooted_code(t, r, None) for r in range(n))
        if code not in seen:
            seen[code] = t
    return list(seen.values())


def _pruefer_space(n):
    if n <= 2:
        yield ()
        return
    from itertools import product
    yield from product(range(n), repeat=n - 2)


def _tree_from_pruefer(n, seq):
    if n == 1:
        return Tree(1, [])
    if n == 2:
        return Tree(2, [(0, 1)])
    deg = [1] * n
    for x in seq:
        deg[x] += 1
    import heapq
    heap = [v for v in range(n) if deg[v] == 1]
    heapq.heapify(heap)
    edges = []
    for x in seq:
        leaf = heapq.heappop(heap)
        edges.append((leaf, x))
        deg[x] -= 1
        if deg[x] == 1:
            heapq.heappush(heap, x)
    edges.append((heapq.heappop(heap), heapq.heappop(heap)))
    return Tree(n, edges)


def save_decomposition(d: Decomposition, path):
    with open(path, "w") as fh:
        json.dump(d.to_json_obj(), fh, sort_keys=True, indent=1)
        fh.write("\n")
