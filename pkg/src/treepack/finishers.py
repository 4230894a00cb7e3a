"""Exact finishing steps that turn a near-complete embedding state into
full tree copies: target-degree orientation by arc reversals, the star
leaf assignment (Case S), the path parity / reservation / greedy pass
(Case P), and the self-contained large-star routine (Case L).

Each randomized loop carries an explicit move budget so that failure is
observable instead of a hang; every structural claim (imbalance drops by
2, Sigma drops by 2, J stays 2-cycle-free) is asserted on live data.
"""

import math
from dataclasses import dataclass

from . import oracle, trees
from .embedding import _run_match, _e
from .errors import InfeasibleMatchingError, InputError, PipelineAbort, StuckError
from .graphs import Digraph, Graph
from .rng import stream


# --- target-degree orientation ---


@dataclass
class OrientResult:
    digraph: Digraph
    moves: int
    log: list                    # (step, imbalance, moves)

    def log_csv(self):
        lines = ["step,imbalance,moves"]
        lines += [f"{s},{i},{m}" for s, i, m in self.log]
        return "\n".join(lines) + "\n"


def degree_target_orient(g: Graph, targets, rng, budget=None) -> OrientResult:
    """Orient g so that d^+(x) = targets[x] for every x.

    Starts from a uniform orientation; while some vertex is off target,
    picks a deficit vertex x, a surplus vertex y and z in N^+(y) cap
    N^-(x), and reverses the arcs y->z, z->x.  Each executed reversal
    pair lowers the total imbalance by exactly 2.
    """
    n = g.n
    targets = list(targets)
    if len(targets) != n:
        raise InputError("targets must give one value per vertex")
    if any(t < 0 for t in targets):
        raise InputError("targets must be nonnegative")
    if sum(targets) != g.edge_count():
        raise InputError(
            f"targets sum to {sum(targets)}, graph has {g.edge_count()} edges")
    if budget is None:
        budget = int(100 * n * max(1.0, math.log(max(n, 2))))

    out = [set() for _ in range(n)]
    inn = [set() for _ in range(n)]
    edges = list(g.edges())
    flips = rng.random(len(edges)) < 0.5
    for (u, v), f in zip(edges, flips):
        a, b = (u, v) if f else (v, u)
        out[a].add(b)
        inn[b].add(a)

    d_plus = [len(out[v]) for v in range(n)]
    deficit = {v for v in range(n) if d_plus[v] < targets[v]}
    surplus = {v for v in range(n) if d_plus[v] > targets[v]}
    imbalance = sum(abs(d_plus[v] - targets[v]) for v in range(n))
    moves = 0
    log = [("start", imbalance, 0)]

    while imbalance > 0:
        if moves >= budget:
            raise StuckError("orientation move budget exhausted",
                             residual=imbalance)
        found = None
        defs = sorted(deficit)
        surs = sorted(surplus)
        for _ in range(max(n, 8)):
            x = defs[int(rng.integers(len(defs)))]
            y = surs[int(rng.integers(len(surs)))]
            if x in out[y]:
                # the arc y->x exists: a single reversal fixes both ends
                found = (x, y, None)
                break
            zs = sorted(out[y] & inn[x])
            if zs:
                found = (x, y, zs[int(rng.integers(len(zs)))])
                break
        if found is None:
            # short moves exhausted: reverse a whole directed path from
            # some surplus vertex to some deficit vertex; interior
            # degrees cancel, so the imbalance still drops by exactly 2
            parent = {v: None for v in surs}
            queue = list(surs)
            hit = None
            k = 0
            while k < len(queue) and hit is None:
                u = queue[k]
                k += 1
                for v in sorted(out[u]):
                    if v not in parent:
                        parent[v] = u
                        if v in deficit:
                            hit = v
                            break
                        queue.append(v)
            if hit is None:
                raise StuckError("no reversal pair available",
                                 residual=imbalance)
            path = [hit]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            path.reverse()           # surplus y ... deficit x along arcs
            found = (path[-1], path[0], path)
        x, y, z = found
        before = abs(d_plus[x] - targets[x]) + abs(d_plus[y] - targets[y])
        if z is None:
            out[y].discard(x); inn[x].discard(y)
            out[x].add(y); inn[y].add(x)
        elif isinstance(z, list):
            for a, b in zip(z, z[1:]):
                out[a].discard(b); inn[b].discard(a)
                out[b].add(a); inn[a].add(b)
        else:
            out[y].discard(z); inn[z].discard(y)
            out[z].add(y); inn[y].add(z)
            out[z].discard(x); inn[x].discard(z)
            out[x].add(z); inn[z].add(x)
        d_plus[y] -= 1
        d_plus[x] += 1
        after = abs(d_plus[x] - targets[x]) + abs(d_plus[y] - targets[y])
        assert before - after == 2, "reversal pair must cut imbalance by 2"
        imbalance -= 2
        moves += 1
        for v in (x, y):
            if d_plus[v] < targets[v]:
                deficit.add(v); surplus.discard(v)
            elif d_plus[v] > targets[v]:
                surplus.add(v); deficit.discard(v)
            else:
                deficit.discard(v); surplus.discard(v)
        if moves % 64 == 0:
            log.append(("reversals", imbalance, moves))

    log.append(("done", 0, moves))
    d = Digraph(n)
    for u in range(n):
        for v in out[u]:
            d.add_arc(u, v)
    return OrientResult(d, moves, log)


# --- shared accessors for pipeline / toy states ---


def _j_ex_sets(state):
    """Per-copy reserved exceptional neighborhoods."""
    jex = getattr(state, "j_ex", None)
    if jex is not None:
        return jex
    out = {w: set() for w in range(state.n)}
    for (x, w), lab in state.j_reserve.items():
        if lab == ("J_ex",):
            out[w].add(x)
    return out


def _g_ex_edges(state):
    """Unused host edges reserved for the exceptional forest."""
    gex = getattr(state, "g_ex_edges", None)
    if gex is None:
        gex = {_e(*arc) for arc, lab in state.reserve.items()
               if lab == ("G_ex",)}
    return {e for e in gex if e not in state.used}


# --- Case S: star leaves ---


def star_demands(state):
    """L_x: (leaf, copy) pairs demanded at each host vertex x."""
    demands = {}
    for w in range(state.n):
        phi_w = state.phi[w]
        for center, leaves in state.tp.p_ex_stars:
            if center not in phi_w:
                raise PipelineAbort("small_stars", "star center unembedded",
                                    {"w": w, "center": center})
            x = phi_w[center]
            demands.setdefault(x, []).extend((u, w) for u in leaves)
    return demands


def small_stars(state, rng):
    """Complete every copy by assigning star leaves along an orientation
    of the reserved exceptional graph with out-degrees |L_x|."""
    n_host = state.host.n
    jex = _j_ex_sets(state)
    gex = Graph(n_host, _g_ex_edges(state))
    demands = star_demands(state)
    for x, lst in demands.items():
        if len(lst) > gex.degree(x):
            raise InfeasibleMatchingError(
                f"{len(lst)} leaves demanded at {x}, "
                f"exceptional degree {gex.degree(x)}")
    targets = [len(demands.get(x, ())) for x in range(n_host)]
    try:
        res = degree_target_orient(gex, targets, rng)
    except StuckError as exc:
        raise PipelineAbort("small_stars:orient", "orientation stuck",
                            {"residual": exc.residual})
    state.record("small_stars", "orient_moves", res.moves)

    for x in sorted(demands):
        lx = sorted(demands[x])
        ys = sorted(res.digraph.out_neighbors(x))
        b_pairs = [((u, w), y) for (u, w) in lx for y in ys
                   if y in jex[w] and y not in state.images[w]]
        mm = _run_match(state, f"small_stars:{x}", lx, ys, b_pairs, [], rng)
        for (u, w), y in mm.items():
            state.embed(w, u, y, "small_stars")
    state.mark("small_stars_done")
    return state


# --- Case P: parity, leaf matchings, path reservation, greedy ---


def _leaf_edge(tree, e):
    """(attachment, leaf) split of a leaf edge."""
    u, v = e
    if tree.degree(v) == 1:
        return u, v
    if tree.degree(u) == 1:
        return v, u
    raise InputError(f"{e} is not a leaf edge")


def odd_vertex_set(state):
    """Vertices whose exceptional degree has the wrong parity relative
    to the number of copies placing a bare-path end there."""
    gex = Graph(state.host.n, _g_ex_edges(state))
    ends = set()
    for seq in state.tp.p_ex_paths:
        ends.add(seq[0])
        ends.add(seq[-1])
    end_count = {}
    for w in range(state.n):
        phi_w = state.phi[w]
        for a in ends:
            x = phi_w.get(a)
            if x is not None:
                end_count[x] = end_count.get(x, 0) + 1
    return {x for x in range(state.host.n)
            if gex.degree(x) % 2 != end_count.get(x, 0) % 2}


def _y_pairs(state):
    """Per copy: (x, successor-of-y, path length factor d) triples."""
    yp = getattr(state, "y_pairs", None)
    if yp is not None:
        return yp
    out = {w: [] for w in range(state.n)}
    for w, fam in state.y_families.items():
        for (px, py) in sorted(fam):
            d = (py - px) % state.n
            x = state.order.vert[px]
            y_succ = state.order.vert[py % state.n]
            out[w].append((x, y_succ, d))
    return out


def _free(state, u, v):
    return state.host.has_edge(u, v) and _e(u, v) not in state.used


def paths_parity_and_reserve(state, rng):
    n = state.n
    tp = state.tp
    tree = state.tree
    jex = _j_ex_sets(state)

    # step i: odd set and the two leaf edges
    x_odd = sorted(odd_vertex_set(state))
    if len(x_odd) % 2:
        raise PipelineAbort("paths:parity", "odd set has odd size",
                            {"size": len(x_odd)})
    if len(tp.p_ex_leaf_edges) != 2:
        raise PipelineAbort("paths:parity", "need exactly two leaf edges",
                            {"have": len(tp.p_ex_leaf_edges)})
    a1, l1 = _leaf_edge(tree, tp.p_ex_leaf_edges[0])
    a2, l2 = _leaf_edge(tree, tp.p_ex_leaf_edges[1])

    # step ii: all phi_w(l1) at once
    ws = list(range(n))
    b1 = [(v, w) for w in ws for v in sorted(jex[w])
          if v not in state.images[w] and a1 in state.phi[w]
          and _free(state, v, state.phi[w][a1])]
    z1 = [(state.phi[w][a1], w) for w in ws if a1 in state.phi[w]]
    m1 = _run_match(state, "paths:l1", list(range(state.host.n)), ws,
                    b1, z1, rng)
    for v, w in m1.items():
        state.embed(w, l1, v, "paths:l1")

    # steps iii-iv: phi_w(l2) with the odd-set split
    half = len(x_odd) // 2
    xp = sorted(int(v) for v in rng.choice(x_odd, size=half, replace=False)) \
        if half else []
    wp = sorted(int(v) for v in rng.choice(n, size=half, replace=False)) \
        if half else []
    xp_set, wp_set = set(xp), set(wp)
    if xp:
        b2p = [(v, w) for w in wp for v in xp
               if v in jex[w] and v not in state.images[w]
               and _free(state, v, state.phi[w][a2])]
        z2p = [(state.phi[w][a2], w) for w in wp]
        m2p = _run_match(state, "paths:l2_odd", xp, wp, b2p, z2p, rng)
        for v, w in m2p.items():
            state.embed(w, l2, v, "paths:l2")
    v_rest = sorted((set(range(state.host.n)) - set(x_odd)) | xp_set)
    w_rest = [w for w in ws if w not in wp_set]
    b2 = [(v, w) for w in w_rest for v in sorted(jex[w])
          if v in set(v_rest) and v not in state.images[w]
          and _free(state, v, state.phi[w][a2])]
    z2 = [(state.phi[w][a2], w) for w in w_rest]
    m2 = _run_match(state, "paths:l2", v_rest, w_rest, b2, z2, rng)
    for v, w in m2.items():
        state.embed(w, l2, v, "paths:l2")

    # step v: reserve central 8d-paths inside bare (8d+2)-paths
    ypairs = _y_pairs(state)
    reservations = {w: [] for w in range(n)}
    for w in range(n):
        pieces = [list(seq) for seq in tp.p_ex_paths]
        free_ranges = [(k, 0, len(seq) - 1) for k, seq in enumerate(pieces)]
        for (x, y_succ, d) in sorted(ypairs[w], key=lambda t: -t[2]):
            need = 8 * d + 2                        # edges of the bare piece
            slot = None
            for ri, (k, lo, hi) in enumerate(free_ranges):
                if hi - lo >= need:
                    slot = (ri, k, lo)
                    break
            if slot is None:
                raise PipelineAbort("paths:reserve", "reservation deficit",
                                    {"w": w, "d": d, "need_edges": need})
            ri, k, lo = slot
            sub = pieces[k][lo:lo + need + 1]
            _, _, hi = free_ranges[ri]
            free_ranges[ri] = (k, lo + need + 1, hi)
            end1, end2 = sub[1], sub[-2]
            interior = sub[2:-2]
            reservations[w].append((end1, end2, interior, x, y_succ, d))
            if end1 not in state.phi[w]:
                state.embed(w, end1, x, "paths:reserve")
            if end2 not in state.phi[w]:
                state.embed(w, end2, y_succ, "paths:reserve")

        # random greedy over the remaining exceptional vertices
        deferred = {a for res in reservations[w] for a in res[2]}
        p_ex_verts = {v for e in tp.p_ex_edges for v in e}
        todo = {a for a in p_ex_verts
                if a not in state.phi[w] and a not in deferred}
        while todo:
            pick = None
            for a in sorted(todo):
                if any(b in state.phi[w] for b in tree.adj[a]):
                    pick = a
                    break
            if pick is None:
                pick = min(todo)
            nbrs = [state.phi[w][b] for b in tree.adj[pick]
                    if b in state.phi[w]]
            cands = [z for z in sorted(jex[w])
                     if z not in state.images[w]
                     and all(_free(state, z, zp) for zp in nbrs)]
            if not cands:
                raise PipelineAbort("paths:greedy", "greedy dead end",
                                    {"w": w, "vertex": pick})
            z = cands[int(rng.integers(len(cands)))]
            state.embed(w, pick, z, "paths:greedy")
            todo.discard(pick)
    state.mark("paths_reserved")

    # every remaining free degree must be even before the exact split
    free_edges = [e for e in state.host.edges() if e not in state.used]
    deg = {}
    for u, v in free_edges:
        deg[u] = deg.get(u, 0) + 1
        deg[v] = deg.get(v, 0) + 1
    odd_left = sorted(x for x, dg in deg.items() if dg % 2)
    if odd_left:
        raise PipelineAbort("paths:even", "free graph has odd degrees",
                            {"vertices": odd_left[:8]})

    # step vi: exact split of the free graph into the reserved paths
    g_free = Graph(state.host.n, free_edges)
    demands = {}
    forb = {}
    for w in range(n):
        if not reservations[w]:
            continue
        demands[w] = [((x, y_succ), 8 * d)
                      for (_, _, _, x, y_succ, d) in reservations[w]]
        ends = {x for (_, _, _, x, y_succ, _) in reservations[w]}
        ends |= {y_succ for (_, _, _, x, y_succ, _) in reservations[w]}
        forb[w] = state.images[w] - ends
    if demands:
        sol = oracle.path_factor_solve(g_free, demands, forbidden=forb,
                                       edge_cap=state.cfg.oracle_edge_cap)
        if sol is None:
            raise PipelineAbort("paths:factor", "no path factor found",
                                {"free_edges": g_free.edge_count()})
        for w in sorted(demands):
            for res, path in zip(reservations[w], sol[w]):
                end1, end2, interior, x, y_succ, d = res
                assert path[0] == x and path[-1] == y_succ
                for a, z in zip(interior, path[1:-1]):
                    state.embed(w, a, z, "paths:factor")
    state.mark("paths_done")
    return state


# --- Case L: the standalone large-star routine ---


class LargeStarsState:
    """Minimal mutable state for Case L; same embed contract as the
    pipeline state (injectivity, adjacency, single edge use)."""

    def __init__(self, host: Graph, tree, cfg, seed: int):
        self.host = host
        self.tree = tree
        self.cfg = cfg
        self.seed = seed
        self.case = "L"
        self.n = host.n
        self.phi = [dict() for _ in range(self.n)]
        self.images = [set() for _ in range(self.n)]
        self.used = set()
        self.stage = "init"
        self.clock = ["init"]
        self.metrics = []
        self.abort = None

    def embed(self, w, a, v, stage):
        phi_w = self.phi[w]
        if a in phi_w:
            raise PipelineAbort(stage, "vertex embedded twice",
                                {"w": w, "a": a})
        if v in self.images[w]:
            raise PipelineAbort(stage, "injectivity violation",
                                {"w": w, "a": a, "v": v})
        touched = []
        for b in self.tree.adj[a]:
            if b in phi_w:
                if not self.host.has_edge(phi_w[b], v):
                    raise PipelineAbort(stage, "image not host-adjacent",
                                        {"w": w, "edge": (b, a)})
                e = _e(phi_w[b], v)
                if e in self.used:
                    raise PipelineAbort(stage, "host edge reuse",
                                        {"w": w, "host_edge": e})
                touched.append(e)
        self.used.update(touched)
        phi_w[a] = v
        self.images[w].add(v)

    def rng_for(self, name):
        return stream(self.seed, name)

    def mark(self, label):
        self.clock.append(label)
        self.stage = label

    def record(self, stage, name, value):
        self.metrics.append((stage, name, float(value)))


def make_large_stars_state(host, tree, cfg, seed):
    return LargeStarsState(host, tree, cfg, seed)


def _bfs_forest_order(adj, root, verts):
    order = [root]
    parent = {root: None}
    k = 0
    while k < len(order):
        u = order[k]
        k += 1
        for v in sorted(adj[u]):
            if v in verts and v not in parent:
                parent[v] = u
                order.append(v)
    return order, parent


def large_stars(state, rng):
    """Full Case L embedding: trunk matchings, orientation, Sigma-zeroing
    xvz-moves, then star leaves along the per-copy out-neighborhoods."""
    t = state.tree
    cfg = state.cfg
    n = state.n
    big_lambda = cfg.big_lambda
    stars = trees.leaf_stars(t)
    big = {c: ls for c, ls in stars.items() if len(ls) >= big_lambda}
    if not big:
        raise PipelineAbort("large_stars", "no large leaf stars",
                            {"threshold": big_lambda})
    S = sorted(big)
    d_s = {a: len(big[a]) for a in S}
    total_leaves = sum(d_s.values())
    s_plus = {v for v in range(t.n) if t.degree(v) >= big_lambda}
    leaf_set = {u for ls in big.values() for u in ls}
    f_verts = set(range(t.n)) - leaf_set
    state.mark("large_stars:setup")

    # step i: W thirds and the U^a_i partition of the host
    perm = [int(v) for v in rng.permutation(n)]
    sizes = [n // 3 + (1 if k < n % 3 else 0) for k in range(3)]
    w_parts = []
    at = 0
    for sz in sizes:
        w_parts.append(set(perm[at:at + sz]))
        at += sz
    w_idx = {w: i for i, part in enumerate(w_parts) for w in part}

    keys = [(a, i) for a in S for i in range(3)]
    probs = [d_s[a] / (3 * total_leaves) for a, _ in keys]
    draws = rng.choice(len(keys), size=n, p=probs)
    u_sets = {k: set() for k in keys}
    class_a = {}
    for v, ki in enumerate(draws):
        u_sets[keys[int(ki)]].add(v)
        class_a[v] = keys[int(ki)][0]

    def u_i(i):
        return set().union(*(u_sets[(a, i)] for a in S))

    u_by_i = [u_i(i) for i in range(3)]
    while True:
        gaps = [len(w_parts[i]) - len(u_by_i[i]) for i in range(3)]
        if sum(abs(g) for g in gaps) == 0:
            break
        src = max(range(3), key=lambda i: -gaps[i])   # |U| surplus
        dst = max(range(3), key=lambda i: gaps[i])
        movable = sorted(u_by_i[src])
        v = movable[int(rng.integers(len(movable)))]
        a = class_a[v]
        u_sets[(a, src)].discard(v)
        u_sets[(a, dst)].add(v)
        u_by_i[src].discard(v)
        u_by_i[dst].add(v)
    u_all = {a: set().union(*(u_sets[(a, i)] for i in range(3))) for a in S}
    idx_of = {v: i for i in range(3) for v in u_by_i[i]}

    # step ii: order on V(F) from a high-degree root; embed u_0
    roots = sorted(s_plus & f_verts)
    if not roots:
        raise PipelineAbort("large_stars", "no high-degree trunk root", {})
    u0 = roots[0]
    order, parent = _bfs_forest_order(t.adj, u0, f_verts)
    if len(order) != len(f_verts):
        raise PipelineAbort("large_stars", "trunk is disconnected",
                            {"seen": len(order), "trunk": len(f_verts)})

    inv = {a: {} for a in order}                  # a -> {host image: w}
    j_arcs = set()
    j_out = {}
    j_in = {}
    state.j_arcs = j_arcs                         # exposed for audits

    def j_add(y, x, stage):
        # J only steers the orientation of free edges, so arcs over
        # non-edges or already-used edges are dropped at the door
        if y == x or not _free(state, y, x):
            return
        if (x, y) in j_arcs:
            raise PipelineAbort(stage, "J 2-cycle", {"arc": (y, x)})
        if (y, x) in j_arcs:
            return
        j_arcs.add((y, x))
        j_out.setdefault(y, set()).add(x)
        j_in.setdefault(x, set()).add(y)

    def embed_ls(w, a, v, stage):
        state.embed(w, a, v, stage)
        if a in f_verts:
            inv[a][v] = w
        if a in S:
            for x in u_all[a] & state.images[w]:
                j_add(v, x, stage)
        for b in S:
            y = state.phi[w].get(b)
            if y is not None and v in u_all[b]:
                j_add(y, v, stage)

    for i in range(3):
        ui = sorted(u_by_i[i])
        spots = [ui[int(k)] for k in rng.permutation(len(ui))]
        for w, v in zip(sorted(w_parts[i]), spots):
            embed_ls(w, u0, v, "large_stars:u0")
    state.mark("large_stars:u0")

    # step iv: trunk matchings in order, three blocks each
    for a in order[1:]:
        am = parent[a]
        for i in range(3):
            wi = sorted(w_parts[i])
            def pair_ok(v, w):
                # adding phi_w(a) = v must not close a J 2-cycle: the
                # new arc phi_w(b) -> v (b the class of v) needs a fresh
                # reverse, and when a is a star centre the new arcs
                # v -> x' for x' in im phi_w cap U^a do too
                b = class_a[v]
                yb = state.phi[w].get(b)
                if yb is None or not _free(state, v, yb):
                    return True             # no arc will be added
                if v in j_in.get(yb, set()):
                    return False
                if a in S and yb in u_all[a] and b not in state.tree.adj[a]:
                    return False            # both arcs would appear at once
                return True

            if a not in s_plus:
                side = sorted(u_by_i[(i - 1) % 3])
                xs, ys = list(side), list(wi)
                while len(xs) > len(ys):
                    xs.pop(int(rng.integers(len(xs))))
                while len(xs) < len(ys):
                    cands = [(v, w) for w in ys
                             for v in xs
                             if _free(state, v, state.phi[w][am])
                             and v not in state.images[w] and pair_ok(v, w)]
                    if not cands:
                        raise PipelineAbort(f"large_stars:M_{a}_{i}",
                                            "size fixup has no choice", {})
                    v, w = cands[int(rng.integers(len(cands)))]
                    embed_ls(w, a, v, f"large_stars:M_{a}_{i}")
                    ys.remove(w)
                b_pairs = [(v, w) for w in ys for v in xs
                           if _free(state, v, state.phi[w][am])
                           and v not in state.images[w] and pair_ok(v, w)]
                z_pairs = [(state.phi[w][am], w) for w in ys]
            else:
                xs = sorted(u_by_i[i])
                ys = list(wi)
                b_pairs = []
                for w in ys:
                    y = state.phi[w][am]
                    bad = set(state.images[w])
                    for x in state.images[w] & u_all[a]:
                        bad |= j_out.get(x, set())
                    for b in S:
                        yb = state.phi[w].get(b)
                        bad_b = bad | (j_in.get(yb, set()) if yb is not None
                                       else set())
                        for v in u_sets[(b, i)]:
                            if (v not in bad_b and _free(state, v, y)
                                    and pair_ok(v, w)):
                                b_pairs.append((v, w))
                z_pairs = [(v, w) for w in ys
                           for v in ({state.phi[w][am]}
                                     | (u_all[a] & state.images[w]))]
            # two batch pairs can feed each other's reverse arc; forbid
            # only the simultaneous choice via the alternating-cycle
            # exclusion instead of dropping either pair outright
            pair_set = set(b_pairs)
            extra_z = set()
            for (v, w) in sorted(pair_set):
                yb = state.phi[w].get(class_a[v])
                if yb is None or not _free(state, v, yb):
                    continue
                w2 = inv.get(class_a[yb], {}).get(v)
                if w2 is not None and (yb, w2) in pair_set \
                        and (yb, w2) != (v, w):
                    extra_z.add((v, w2))
                    extra_z.add((yb, w))
            b_pairs = sorted(pair_set)
            z_pairs = sorted(set(z_pairs) | extra_z)
            mm = _run_match(state, f"large_stars:M_{a}_{i}", xs, ys,
                            b_pairs, z_pairs, rng)
            for v, w in mm.items():
                embed_ls(w, a, v, f"large_stars:M_{a}_{i}")
        state.record("large_stars", f"j_arcs_after_{a}", len(j_arcs))
    state.mark("large_stars:trunk")

    # step v: orient the free graph, homes by the tail-image rule
    arc_home = {}
    out_all = {}
    in_all = {}
    out_w = {}
    heads = {}                   # home -> delivered head set (kept unique)

    def add_arc(tail, head, home):
        assert head not in heads.get(home, ()), "one arc per (home, head)"
        arc_home[(tail, head)] = home
        out_all.setdefault(tail, set()).add(head)
        in_all.setdefault(head, set()).add(tail)
        out_w.setdefault((home, tail), set()).add(head)
        heads.setdefault(home, set()).add(head)

    for e in state.host.edges():
        if e in state.used:
            continue
        x, y = e
        fxy = (x, y) in j_arcs
        fyx = (y, x) in j_arcs
        if fxy and fyx:
            raise PipelineAbort("large_stars:orient", "J 2-cycle", {"edge": e})
        if fxy:
            tail, head = y, x
        elif fyx:
            tail, head = x, y
        else:
            tail, head = (x, y) if rng.random() < 0.5 else (y, x)
        home = inv[class_a[head]].get(tail)
        if home is None:
            raise PipelineAbort("large_stars:orient",
                                "tail is not an image of the head class",
                                {"arc": (tail, head)})
        if head in state.images[home]:
            raise PipelineAbort("large_stars:orient",
                                "head already used by the home copy",
                                {"arc": (tail, head), "w": home})
        add_arc(tail, head, home)
    state.mark("large_stars:oriented")

    # step vi: Sigma-zeroing xvz-moves
    term_keys = [(w, a) for w in range(n) for a in S]

    def outdeg(w, a):
        return len(out_w.get((w, state.phi[w][a]), ()))

    def term(w, a):
        return abs(outdeg(w, a) - d_s[a])

    sigma = sum(term(w, a) for w, a in term_keys)
    deficits = {k for k in term_keys if outdeg(*k) < d_s[k[1]]}
    surpluses = {k for k in term_keys if outdeg(*k) > d_s[k[1]]}
    moved = set()
    budget = int(cfg.move_budget_factor * n * max(1.0, math.log(max(n, 2))))
    moves = 0
    state.record("large_stars", "sigma_start", sigma)

    def find_move():
        defs = sorted(deficits)
        surs = sorted(surpluses)
        for _ in range(max(64, len(defs))):
            w, a = defs[int(rng.integers(len(defs)))]
            wp, ap = surs[int(rng.integers(len(surs)))]
            u = state.phi[w][a]
            up = state.phi[wp][ap]
            if u == up:
                continue
            # arcs qualify when their current home still follows the
            # tail rule; then the reassignment cancels exactly and the
            # move cuts Sigma by 2
            xs = [x for x in in_all.get(u, ())
                  if arc_home[(x, u)] == inv[class_a[u]][x]
                  and x not in state.images[w] and x != up
                  and x not in heads.get(w, ())]
            if not xs:
                continue
            ordx = [xs[int(k)] for k in rng.permutation(len(xs))]
            for x in ordx[:32]:
                wx = inv[class_a[u]][x]
                vs = [v for v in in_all.get(x, set()) & out_all.get(up, set())
                      if arc_home[(v, x)] == inv[class_a[x]][v]
                      and arc_home[(up, v)] == inv[class_a[v]][up]
                      and v not in state.images[wp]
                      and v not in state.images[wx]
                      and v not in (u, up, x)]
                for v in [vs[int(k)] for k in rng.permutation(len(vs))][:32]:
                    if v in heads.get(wx, ()):
                        continue
                    wv = inv[class_a[x]][v]
                    if up in state.images[wv] or up in heads.get(wv, ()):
                        continue
                    wup = inv[class_a[v]][up]
                    zs = [z for z in out_w.get((wp, up), ())
                          if z not in state.images[wup]
                          and (z not in heads.get(wup, ())
                               or arc_home.get((up, z)) == wup)
                          and z not in (x, v, u)]
                    if not zs:
                        continue
                    z = zs[int(rng.integers(len(zs)))]
                    return (w, a, wp, ap, u, up, x, v, z, wx, wv, wup)
        return None

    def drop_arc(tail, head):
        home = arc_home.pop((tail, head))
        out_all[tail].discard(head)
        in_all[head].discard(tail)
        out_w[(home, tail)].discard(head)
        heads[home].discard(head)
        return home

    while sigma > 0:
        if moves >= budget:
            raise PipelineAbort("large_stars:moves", "move budget exhausted",
                                {"sigma": sigma, "moves": moves})
        mv = find_move()
        if mv is None:
            blocking = (sorted(deficits)[0], sorted(surpluses)[0])
            raise PipelineAbort("large_stars:moves", "no valid xvz-move",
                                {"sigma": sigma, "blocking": blocking})
        w, a, wp, ap, u, up, x, v, z, wx, wv, wup = mv
        affected = {(w, a), (wp, ap)}
        for hh, tt in ((wx, x), (wv, v), (wup, up)):
            aa = next((s for s in S if state.phi[hh].get(s) == tt), None)
            if aa is not None:
                affected.add((hh, aa))
        before = sum(term(*k) for k in affected)
        h1 = drop_arc(x, u)
        assert h1 == wx, "unmoved arc home must follow the tail rule"
        add_arc(u, x, w)
        h2 = drop_arc(v, x)
        assert h2 == wv
        add_arc(x, v, wx)
        h3 = drop_arc(up, v)
        assert h3 == wup
        add_arc(v, up, wv)
        out_w[(wp, up)].discard(z)
        heads[wp].discard(z)
        out_w.setdefault((wup, up), set()).add(z)
        heads.setdefault(wup, set()).add(z)
        arc_home[(up, z)] = wup
        moved.update({(u, x), (x, v), (v, up), (up, z)})
        after = sum(term(*k) for k in affected)
        assert before - after == 2, "xvz-move must cut Sigma by exactly 2"
        sigma -= 2
        moves += 1
        for k in affected:
            od = outdeg(*k)
            tg = d_s[k[1]]
            deficits.discard(k); surpluses.discard(k)
            if od < tg:
                deficits.add(k)
            elif od > tg:
                surpluses.add(k)
        if moves % 128 == 0:
            state.record("large_stars", "sigma", sigma)
    state.record("large_stars", "moves", moves)
    state.mark("large_stars:balanced")

    # leaves: per copy, the out-neighborhood of each star centre
    for w in range(n):
        for a in S:
            y = state.phi[w][a]
            heads = sorted(out_w.get((w, y), ()))
            if len(heads) != d_s[a]:
                raise PipelineAbort("large_stars:leaves",
                                    "out-degree misses the star size",
                                    {"w": w, "a": a, "have": len(heads)})
            for leaf, head in zip(sorted(big[a]), heads):
                state.embed(w, leaf, head, "large_stars:leaves")
    state.mark("large_stars_done")
    return state


def run_large_stars(host, tree, cfg, seed):
    """Case L end to end; aborts are stored, mirroring the pipeline."""
    state = make_large_stars_state(host, tree, cfg, seed)
    rng = state.rng_for("large_stars")
    try:
        large_stars(state, rng)
    except PipelineAbort as exc:
        state.abort = exc
        state.mark(f"aborted:{exc.stage}")
    return state


def finish(state, rng):
    """Dispatch the case-specific finisher on a pipeline state."""
    if state.case == "S":
        return small_stars(state, rng)
    if state.case == "P":
        return paths_parity_and_reserve(state, rng)
    raise InputError(f"no post-pipeline finisher for case {state.case!r}")


def to_decomposition(state):
    """Package a complete state for the verifier."""
    copies = []
    for w in range(state.n):
        if len(state.phi[w]) != state.tree.n:
            raise InputError(f"copy {w} is incomplete "
                             f"({len(state.phi[w])}/{state.tree.n})")
        copies.append([state.phi[w][a] for a in range(state.tree.n)])
    return oracle.Decomposition(state.host, state.tree, copies)
