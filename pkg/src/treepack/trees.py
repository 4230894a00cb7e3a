"""Tree structure analysis: k-span, case classification, the tree
partition subroutine with its derived index sets, and the label scheme.

All size thresholds are expressed in the host vertex count cfg.n (the
tree being partitioned has about p*n/2 edges in the intended setting).
"""

import math
from collections import deque
from dataclasses import dataclass, field

from .config import ParamConfig
from .errors import ClassificationError, InputError, PartitionError


class Tree:
    """Tree on vertices [0, n_t)."""

    __slots__ = ("n", "adj")

    def __init__(self, n, edges):
        edges = [(min(u, v), max(u, v)) for u, v in edges]
        if len(edges) != n - 1:
            raise InputError(f"tree on {n} vertices needs {n-1} edges, got {len(edges)}")
        self.n = n
        self.adj = [set() for _ in range(n)]
        for u, v in edges:
            if u == v or not (0 <= u < n and 0 <= v < n):
                raise InputError(f"bad tree edge ({u}, {v})")
            if v in self.adj[u]:
                raise InputError(f"duplicate tree edge ({u}, {v})")
            self.adj[u].add(v)
            self.adj[v].add(u)
        # connectivity (acyclicity follows from the edge count)
        if n > 0:
            seen = {0}
            q = deque([0])
            while q:
                x = q.popleft()
                for y in self.adj[x]:
                    if y not in seen:
                        seen.add(y)
                        q.append(y)
            if len(seen) != n:
                raise InputError("edge list is not connected")

    def degree(self, v):
        return len(self.adj[v])

    def edges(self):
        for u in range(self.n):
            for v in self.adj[u]:
                if u < v:
                    yield (u, v)

    def edge_count(self):
        return self.n - 1

    def leaves(self):
        return [v for v in range(self.n) if len(self.adj[v]) == 1]

    def __repr__(self):
        return f"Tree(n={self.n})"

    # --- constructors ---

    @classmethod
    def path(cls, n):
        return cls(n, [(i, i + 1) for i in range(n - 1)])

    @classmethod
    def star(cls, leaves):
        return cls(leaves + 1, [(0, i) for i in range(1, leaves + 1)])

    @classmethod
    def random(cls, n, rng):
        """Uniform labeled tree via a Pruefer sequence."""
        if n <= 1:
            return cls(n, [])
        if n == 2:
            return cls(2, [(0, 1)])
        seq = rng.integers(0, n, size=n - 2).tolist()
        deg = [1] * n
        for x in seq:
            deg[x] += 1
        edges = []
        import heapq

        leaves_heap = [v for v in range(n) if deg[v] == 1]
        heapq.heapify(leaves_heap)
        for x in seq:
            leaf = heapq.heappop(leaves_heap)
            edges.append((leaf, x))
            deg[x] -= 1
            if deg[x] == 1:
                heapq.heappush(leaves_heap, x)
        u = heapq.heappop(leaves_heap)
        v = heapq.heappop(leaves_heap)
        edges.append((u, v))
        return cls(n, edges)

    # --- serialization ---

    @classmethod
    def from_parent_array_text(cls, text):
        """Line i holds the parent of vertex i; the root has parent -1."""
        parents = [int(line.strip()) for line in text.splitlines() if line.strip()]
        edges = [(i, p) for i, p in enumerate(parents) if p != -1]
        return cls(len(parents), edges)

    @classmethod
    def from_json_obj(cls, obj):
        return cls(int(obj["n"]), [(int(u), int(v)) for u, v in obj["edges"]])

    def to_json_obj(self):
        return {"n": self.n, "edges": sorted(self.edges())}


# --- k-span ---


class _UF:
    def __init__(self, items):
        self.p = {x: x for x in items}

    def find(self, x):
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.p[rb] = ra
        return True


def k_span(t, s, k):
    """Closure of s under adding <=k-sets that reduce the component count
    of the induced forest.

    Deterministic rule: in each round, multi-source BFS labels every
    vertex with its nearest current component and internal distance; the
    crossing tree edges whose stale internal counts are <= k are merged
    in (count, u, v) order.  Stale counts only overestimate, so every
    merge is valid, and a round with no merge certifies the fixed point.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    sstar = set(s)
    for v in sstar:
        if not (0 <= v < t.n):
            raise InputError(f"vertex {v} outside tree")
    if not sstar:
        return set()
    while True:
        uf = _UF(sstar)
        for v in sstar:
            for u in t.adj[v]:
                if u in sstar:
                    uf.union(u, v)
        # BFS from all of sstar; dist = number of path vertices outside sstar
        dist = {v: 0 for v in sstar}
        comp = {v: uf.find(v) for v in sstar}
        parent = {}
        frontier = sorted(sstar)
        dcur = 0
        while frontier:
            nxt = []
            for v in frontier:
                for u in t.adj[v]:
                    if u not in dist:
                        dist[u] = dcur + 1
                        comp[u] = comp[v]
                        parent[u] = v
                        nxt.append(u)
            frontier = sorted(nxt)
            dcur += 1
        candidates = []
        for u, v in t.edges():
            if comp[u] != comp[v]:
                total = dist[u] + dist[v]
                if total <= k:
                    candidates.append((total, u, v))
        candidates.sort()
        merged = False
        for total, u, v in candidates:
            cu = uf.find(comp[u])
            cv = uf.find(comp[v])
            if cu == cv:
                continue
            for x in (u, v):
                y = x
                while y not in sstar:
                    sstar.add(y)
                    uf.p[y] = y
                    uf.union(cu, y)
                    y = parent[y]
            uf.union(cu, cv)
            merged = True
        if not merged:
            return sstar


def k_span_naive(t, s, k):
    """Literal definition by subset scan; exponential, for oracle tests."""
    from itertools import combinations

    def ncomp(vs):
        if not vs:
            return 0
        uf = _UF(vs)
        for v in vs:
            for u in t.adj[v]:
                if u in vs:
                    uf.union(u, v)
        return len({uf.find(v) for v in vs})

    sstar = set(s)
    changed = True
    while changed:
        changed = False
        rest = [v for v in range(t.n) if v not in sstar]
        base = ncomp(sstar)
        for size in range(1, k + 1):
            for extra in combinations(rest, size):
                if ncomp(sstar | set(extra)) < base:
                    sstar |= set(extra)
                    changed = True
                    break
            if changed:
                break
    return sstar


# --- leaf stars / bare paths ---


def leaf_stars(t):
    """Maximal leaf stars: {center: sorted list of leaf neighbours}."""
    out = {}
    if t.n == 2:
        return {0: [1]}
    for c in range(t.n):
        ls = sorted(u for u in t.adj[c] if t.degree(u) == 1)
        if ls and t.degree(c) > 1:
            out[c] = ls
    return out


def bare_segments(t):
    """Maximal bare paths as vertex sequences (internal degree 2 in t)."""
    if t.n == 2:
        return [[0, 1]]
    segs = []
    seen_mid = set()
    anchors = [v for v in range(t.n) if t.degree(v) != 2]
    for a in anchors:
        for b in t.adj[a]:
            if t.degree(b) != 2:
                if a < b:
                    segs.append([a, b])
                continue
            if b in seen_mid:
                continue
            path = [a, b]
            prev, cur = a, b
            while t.degree(cur) == 2:
                seen_mid.add(cur)
                nxt = next(x for x in t.adj[cur] if x != prev)
                path.append(nxt)
                prev, cur = cur, nxt
            segs.append(path)
    return segs


@dataclass
class CaseTag:
    case: str                 # 'L', 'S' or 'P'
    witness: object           # vertex count for L/S, list of paths for P
    measured: dict = field(default_factory=dict)


def classify_case(t, cfg: ParamConfig) -> CaseTag:
    """Pick a case in {L, S, P} per the three defining thresholds.

    Case P's witness is a greedy extraction of vertex-disjoint bare
    8K-paths cut from the maximal bare segments in DFS discovery order.
    """
    if t.n < 2:
        raise InputError("tree must have at least one edge")
    n = cfg.n
    lam = cfg.big_lambda
    stars = leaf_stars(t)
    in_big = set()
    in_small = set()
    for c, ls in stars.items():
        members = set(ls) | {c}
        if len(ls) >= lam:
            in_big |= members
        if len(ls) <= lam:
            in_small |= members
    outside_big = t.n - len(in_big)
    if outside_big <= cfg.p_plus * n:
        return CaseTag("L", len(in_big), {"outside_big_stars": outside_big})
    if len(in_small) >= cfg.p_minus * n:
        return CaseTag("S", len(in_small), {"small_star_vertices": len(in_small)})
    plen = 8 * cfg.K
    paths = []
    for seg in bare_segments(t):
        nedges = len(seg) - 1
        for piece in range(nedges // plen):
            paths.append(seg[piece * plen: piece * plen + plen + 1])
    need = cfg.p_plus * n / (100 * cfg.K)
    if len(paths) >= need:
        return CaseTag("P", paths, {"bare_paths": len(paths)})
    raise ClassificationError(
        "no case certifies at the configured thresholds",
        measured={
            "outside_big_stars": outside_big,
            "small_star_vertices": len(in_small),
            "bare_paths": len(paths),
            "need_L_at_most": cfg.p_plus * n,
            "need_S_at_least": cfg.p_minus * n,
            "need_P_at_least": need,
        },
    )


# --- tree partition ---


@dataclass
class TreePartition:
    tree: Tree
    case: str
    a_star: set
    a_star_star: set
    a0_prime: set
    a0: set
    layers: list                 # A_1 .. A_{i*}
    star_groups: dict            # (a, i) -> set A^a_i  (a in A^Delta_i)
    class_hi: list               # per layer i (1-based -> index i-1)
    class_lo: list
    class_no: list
    class_lt_lambda: list
    class_ge_lambda: list
    p_ex_edges: set              # edges of P_ex
    p_ex_stars: list             # Case S: (center, [leaves])
    p_ex_paths: list             # Case P: vertex sequences
    p_ex_leaf_edges: list        # Case P: the two leaf edges
    f_edges: set
    f_prime_edges: set
    order: list                  # the order on V(T)
    q_delta: set                 # {(a, i)}
    q_lambda: set
    m_ai: dict                   # (a, i) -> m^a_i
    m_a: dict
    m: int
    i_star: int

    def __post_init__(self):
        self.order_pos = {v: i for i, v in enumerate(self.order)}
        self._fprime_adj = [set() for _ in range(self.tree.n)]
        for u, v in self.f_prime_edges:
            self._fprime_adj[u].add(v)
            self._fprime_adj[v].add(u)

    def n_less(self, v):
        pv = self.order_pos[v]
        return {u for u in self._fprime_adj[v] if self.order_pos[u] < pv}

    def n_greater(self, v):
        pv = self.order_pos[v]
        return {u for u in self._fprime_adj[v] if self.order_pos[u] > pv}

    def layer_of(self, v):
        """0 for A_0, i for A_i, None for P_ex-only vertices."""
        if v in self.a0:
            return 0
        for i, layer in enumerate(self.layers, start=1):
            if v in layer:
                return i
        return None

    def to_json_obj(self):
        return {
            "case": self.case,
            "a_star": sorted(self.a_star),
            "a_star_star": sorted(self.a_star_star),
            "a0_prime": sorted(self.a0_prime),
            "layers": [sorted(l) for l in self.layers],
            "star_groups": {f"{a},{i}": sorted(s) for (a, i), s in self.star_groups.items()},
            "p_ex_edges": sorted(map(list, self.p_ex_edges)),
            "order": self.order,
            "q_delta": sorted(map(list, self.q_delta)),
            "q_lambda": sorted(map(list, self.q_lambda)),
            "m_ai": {f"{a},{i}": m for (a, i), m in sorted(self.m_ai.items())},
            "m": self.m,
            "i_star": self.i_star,
        }


def _forest_mis(vertices, adj):
    """Exact maximum independent set of a forest, component by component."""
    vs = set(vertices)
    seen = set()
    result = set()
    for root in sorted(vs):
        if root in seen:
            continue
        # iterative rooted DP: take[v] / skip[v]
        order = []
        parent = {root: None}
        stack = [root]
        seen.add(root)
        while stack:
            x = stack.pop()
            order.append(x)
            for y in adj[x]:
                if y in vs and y not in seen:
                    seen.add(y)
                    parent[y] = x
                    stack.append(y)
        take = {v: 1 for v in order}
        skip = {v: 0 for v in order}
        for v in reversed(order):
            p = parent[v]
            if p is not None:
                take[p] += skip[v]
                skip[p] += max(take[v], skip[v])
        chosen = set()
        # reconstruct top-down
        state = {root: "take" if take[root] > skip[root] else "skip"}
        for v in order:
            if state[v] == "take":
                chosen.add(v)
            for y in adj[v]:
                if parent.get(y) == v:
                    if state[v] == "take":
                        state[y] = "skip"
                    else:
                        state[y] = "take" if take[y] > skip[y] else "skip"
        result |= chosen
    return result


def _bfs_order(t, roots):
    """Global BFS order of T from the given roots (then any leftovers)."""
    order = []
    seen = set()
    q = deque()
    for r in list(roots) + list(range(t.n)):
        if r in seen:
            continue
        seen.add(r)
        q.append(r)
        while q:
            x = q.popleft()
            order.append(x)
            for y in sorted(t.adj[x]):
                if y not in seen:
                    seen.add(y)
                    q.append(y)
    return {v: i for i, v in enumerate(order)}


def tree_partition(t, case_tag, cfg: ParamConfig, rng) -> TreePartition:
    """Steps i-v of the partition subroutine (cases S and P only)."""
    if case_tag.case not in ("S", "P"):
        raise InputError("partition applies to cases S and P")
    n = cfg.n
    big_delta = cfg.big_delta
    big_lambda = cfg.big_lambda

    deg = [t.degree(v) for v in range(t.n)]
    a_delta_set = {v for v in range(t.n) if deg[v] >= big_delta}
    a_lambda_set = {v for v in range(t.n) if deg[v] >= big_lambda}
    a_D_set = {v for v in range(t.n) if deg[v] >= cfg.D}

    a_star = k_span(t, a_delta_set, 4)

    # --- step i: select P_ex avoiding T[A*] ---
    p_ex_edges = set()
    p_ex_stars = []
    p_ex_paths = []
    p_ex_leaf_edges = []
    if case_tag.case == "S":
        target = cfg.p_minus * n / 2
        total = 0
        for c, ls in sorted(leaf_stars(t).items()):
            if total >= target:
                break
            usable = [u for u in ls if u not in a_star and not (c in a_star and u in a_star)]
            usable = usable[: min(len(usable), int(big_lambda))]
            if not usable:
                continue
            room = math.ceil(target - total)
            take = usable[: min(len(usable), room)]
            p_ex_stars.append((c, take))
            for u in take:
                p_ex_edges.add((min(c, u), max(c, u)))
            total += len(take)
        if total < target - big_lambda:
            raise PartitionError(
                "not enough small leaf stars outside T[A*] for P_ex",
                deficit={"have": total, "target": target, "tolerance": big_lambda},
            )
    else:  # Case P
        plen = 8 * cfg.K
        want = math.ceil(cfg.p_plus * n / (101 * cfg.K))
        used = set()
        for path in case_tag.witness:
            if len(p_ex_paths) >= want:
                break
            if any(v in a_star for v in path[1:-1]):
                continue
            if any(v in used for v in path):
                continue
            if len(path) - 1 != plen:
                continue
            p_ex_paths.append(path)
            used |= set(path)
            for u, v in zip(path, path[1:]):
                p_ex_edges.add((min(u, v), max(u, v)))
        if len(p_ex_paths) < want:
            raise PartitionError(
                "not enough disjoint bare paths outside T[A*] for P_ex",
                deficit={"have": len(p_ex_paths), "target": want},
            )
        for v in range(t.n):
            if len(p_ex_leaf_edges) >= 2:
                break
            if deg[v] == 1 and v not in a_star and v not in used:
                c = next(iter(t.adj[v]))
                if c in used or c in a_star:
                    continue
                p_ex_leaf_edges.append((min(c, v), max(c, v)))
                p_ex_edges.add((min(c, v), max(c, v)))
                used.add(v)
                used.add(c)
        if len(p_ex_leaf_edges) < 2:
            raise PartitionError(
                "could not reserve two disjoint leaf edges for P_ex",
                deficit={"have": len(p_ex_leaf_edges), "target": 2},
            )

    f_edges = {e for e in t.edges() if e not in p_ex_edges}
    f_adj = [set() for _ in range(t.n)]
    for u, v in f_edges:
        f_adj[u].add(v)
        f_adj[v].add(u)

    # F* = F minus A* vertices; layer only vertices with an F-edge
    fstar_verts = {v for v in range(t.n) if v not in a_star and f_adj[v] - a_star}
    pex_only = {v for v in range(t.n) if v not in a_star and not (f_adj[v] - a_star)
                and not f_adj[v]}
    # vertices whose only F-neighbours lie in A* still belong to the layering
    fstar_verts |= {v for v in range(t.n)
                    if v not in a_star and v not in pex_only and v not in fstar_verts}

    def deg_in(v, vs):
        return sum(1 for u in f_adj[v] if u in vs and u not in a_star)

    # --- step ii: layering ---
    cs = []
    assigned = set()
    eps_floor = cfg.eps * n
    pmax_inv = 1.0 / cfg.p_max
    while True:
        b_i = fstar_verts - assigned
        c_prime = {
            v for v in b_i
            if deg_in(v, b_i) <= 3 and deg_in(v, assigned) <= pmax_inv
        }
        fs_adj = [set(u for u in f_adj[v] if u in c_prime) if v in c_prime else set()
                  for v in range(t.n)]
        c_i = _forest_mis(c_prime, fs_adj)
        if len(c_i) < eps_floor:
            break
        cs.append(c_i)
        assigned |= c_i
    i_star = len(cs)
    b_rest = fstar_verts - assigned

    # --- step iii: A_0, layers, classes ---
    a0 = k_span(t, a_star | a_D_set | b_rest, 4)
    a_star_star = (k_span(t, a_D_set, 4) - a_star) if a_D_set else set()
    a0 |= a_star          # span already contains it, but keep explicit
    a0_prime = a0 - (a_star | a_star_star)

    def build_layers(a0_now):
        layers = [cs[i_star - i] - a0_now for i in range(1, i_star + 1)] if i_star else []
        star_groups = {}
        for i, layer in enumerate(layers, start=1):
            for a in a_delta_set:
                grp = f_adj[a] & layer
                if len(grp) >= big_delta:
                    star_groups[(a, i)] = set(grp)
        fprime = set(f_edges)
        for (a, i), grp in star_groups.items():
            for b in grp:
                fprime.discard((min(a, b), max(a, b)))
        fp_adj = [set() for _ in range(t.n)]
        for u, v in fprime:
            fp_adj[u].add(v)
            fp_adj[v].add(u)
        hi, lo, no, ltl, gel = [], [], [], [], []
        for i, layer in enumerate(layers, start=1):
            hi_i = set()
            ltl_i = set()
            gel_i = set()
            for (a, j), grp in star_groups.items():
                if j != i:
                    continue
                hi_i |= grp
                if a in a_lambda_set:
                    gel_i |= grp
                else:
                    ltl_i |= grp
            lo_i = {u for u in layer if len(fp_adj[u] & a0_now) == 1}
            no_i = {u for u in layer if not (f_adj[u] & a0_now)}
            hi.append(hi_i)
            lo.append(lo_i)
            no.append(no_i)
            ltl.append(ltl_i)
            gel.append(gel_i)
        return layers, star_groups, fprime, fp_adj, hi, lo, no, ltl, gel

    layers, star_groups, fprime, fp_adj, hi, lo, no, ltl, gel = build_layers(a0)

    # --- step iv: absorb undersized classes in the (no, >=L, <L, lo) sweep ---
    sweep = [("no", 1), ("gel", 2), ("ltl", 3), ("lo", 4)]
    for name, j in sweep:
        floor = cfg.delta_floor(j) * n
        while True:
            fam = {"no": no, "gel": gel, "ltl": ltl, "lo": lo}[name]
            moved = None
            for i0, cls in enumerate(fam):
                if cls and len(cls) < floor:
                    moved = cls
                    break
            if moved is None:
                break
            a0 = k_span(t, a0 | moved, 4)
            a0_prime = a0 - (a_star | a_star_star)
            layers, star_groups, fprime, fp_adj, hi, lo, no, ltl, gel = build_layers(a0)

    # --- step v ---
    if not any(hi):
        a_star_star = a_star_star | a_star
        a_star = set()
        a0_prime = a0 - (a_star | a_star_star)

    # --- order ---
    bfs_pos = _bfs_order(t, sorted(a_star) or [0])
    order = []
    for part in (a_star, a_star_star, a0_prime):
        order.extend(sorted(part, key=lambda v: bfs_pos[v]))
    for layer in layers:
        order.extend(sorted(layer))
    placed = set(order)
    order.extend(sorted(v for v in range(t.n) if v not in placed))

    # --- Q sets and m counts ---
    q_delta = set()
    q_lambda = set()
    m_ai = {}
    for (a, i), grp in star_groups.items():
        cnt = len(f_adj[a] & layers[i - 1])
        if a in a_lambda_set and cnt >= big_lambda:
            q_lambda.add((a, i))
        elif big_delta <= cnt < big_lambda:
            q_delta.add((a, i))
        m_ai[(a, i)] = math.ceil(big_delta ** -0.2 * len(grp))
    m_a = {}
    for (a, i), mv in m_ai.items():
        m_a[a] = m_a.get(a, 0) + mv
    m = sum(m_a.values())

    return TreePartition(
        tree=t, case=case_tag.case,
        a_star=a_star, a_star_star=a_star_star, a0_prime=a0_prime, a0=a0,
        layers=layers, star_groups=star_groups,
        class_hi=hi, class_lo=lo, class_no=no,
        class_lt_lambda=ltl, class_ge_lambda=gel,
        p_ex_edges=p_ex_edges, p_ex_stars=p_ex_stars,
        p_ex_paths=p_ex_paths, p_ex_leaf_edges=p_ex_leaf_edges,
        f_edges=f_edges, f_prime_edges=fprime,
        order=order, q_delta=q_delta, q_lambda=q_lambda,
        m_ai=m_ai, m_a=m_a, m=m, i_star=i_star,
    )


# --- label scheme ---


@dataclass
class LabelScheme:
    labels_lt: list          # labels ell_{aij} for the <Lambda class
    labels_ge: list
    cap_ai: dict             # (a, i) -> M^a_i
    p_lt: float
    p_ge: float
    m: int
    empty: bool

    def all_labels(self):
        return self.labels_lt + self.labels_ge


def _largest_remainder(quotas, total):
    """Integer apportionment: each result in {floor, ceil}, sum == total."""
    floors = {k: math.floor(q) for k, q in quotas.items()}
    rem = total - sum(floors.values())
    frac = sorted(quotas, key=lambda k: (-(quotas[k] - floors[k]), k))
    out = dict(floors)
    for k in frac[:rem]:
        out[k] += 1
    return out


def label_scheme(tp: TreePartition, cfg: ParamConfig) -> LabelScheme:
    """m^a_i-derived label counts with exact per-class apportionment."""
    if tp.m == 0:
        return LabelScheme([], [], {}, 0.0, 0.0, 0, empty=True)
    m = tp.m
    cap = {}
    labels = {"lt": [], "ge": []}
    pvals = {}
    for name, q in (("lt", tp.q_delta), ("ge", tp.q_lambda)):
        m_circ = sum(tp.m_ai[ai] for ai in q)
        p_circ = m_circ / m
        pvals[name] = p_circ
        if m_circ == 0:
            continue
        quotas = {ai: tp.m_ai[ai] / p_circ for ai in q}
        alloc = _largest_remainder(quotas, m)
        for (a, i), cnt in sorted(alloc.items()):
            cap[(a, i)] = cnt
            labels[name].extend((a, i, j) for j in range(cnt))
    return LabelScheme(labels["lt"], labels["ge"], cap,
                       pvals.get("lt", 0.0), pvals.get("ge", 0.0), m, empty=False)
