"""Staged embedding pipeline over a shared mutable state.

Stages: shift selection and HIGH DEGREES (star centers), INTERVALS,
EMBED A_0, the DIGRAPH reserve allocation, and the layer-by-layer
approximate decomposition.  Every stage either completes or raises a
classified PipelineAbort; the state is left intact for auditing either
way.  Invariants (injectivity, host adjacency, single use of every host
edge) are enforced at the single embed() choke point.

The analysis behind these stages only guarantees success for enormous
hosts; at test scale aborts are expected and are part of the contract.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import hypergraph, matching
from .errors import PipelineAbort
from .graphs import CyclicOrder, Graph
from .rng import stream
from .trees import LabelScheme, TreePartition, label_scheme


def _e(u, v):
    return (u, v) if u < v else (v, u)


class EmbeddingState:
    """All mutable pipeline data; W is identified with [n]."""

    def __init__(self, host: Graph, tp: TreePartition, cfg, seed: int,
                 scheme: LabelScheme = None):
        self.host = host
        self.tree = tp.tree
        self.tp = tp
        self.cfg = cfg
        self.seed = seed
        self.case = tp.case
        self.scheme = scheme if scheme is not None else label_scheme(tp, cfg)
        n = host.n
        self.n = n
        self.order = CyclicOrder.random(n, stream(seed, "identify"))
        self.phi = [dict() for _ in range(n)]        # w -> {tree vertex: host vertex}
        self.images = [set() for _ in range(n)]
        self.used = set()
        self.stage = "init"
        self.clock = ["init"]
        self.metrics = []                            # (stage, name, value)

        # HIGH DEGREES
        self.shifts = {}
        self.n0 = n
        self.n_star = 0
        self.v0, self.w0 = set(range(n)), set(range(n))
        self.v_blocks, self.w_blocks = [], []        # index v* -> vertex set
        self.v_block_of, self.w_block_of = {}, {}
        self.ma = {}                                 # a -> {w: v} full matching

        # INTERVALS
        self.xbar = {}                               # w -> vertex set
        self.pbar = {}
        self.iw, self.jw = {}, {}
        self.x_families = {}                         # w -> set of intervals (x, y)
        self.y_families = {}
        self.interval_cache = {}

        # EMBED A_0 / DIGRAPH
        self.g0 = set()
        self.j0 = {}                                 # w -> vertex set
        self.g1_arcs = set()                         # (tail, head)
        self.u_parts = []
        self.u_of = {}
        self.h_assign = {}                           # label -> h
        self.rainbow = []
        self.nibble_m = []
        self.reserve = {}                            # arc -> label tuple
        self.arc_w = {}                              # arc in some H*_ai -> w
        self.h_star = {}                             # (a, i) -> arc set
        self.j_hi = {}                               # (a, i) -> set of (x, w)
        self.j_reserve = {}                          # (x, w) -> label tuple
        self.j0k_ex = {}                             # arc -> "0" | "K" (Case P)
        self.class_pair_p = {}
        self.alpha = {}
        self.p_ex = len(tp.p_ex_edges) / n
        self.group = self._group_map()
        self.hi_built = []                           # H_i diagnostics per layer
        self.abort = None

    def _group_map(self):
        """Disjoint class of every layer vertex: hi beats lo beats no."""
        g = {}
        for (a, i), grp in self.tp.star_groups.items():
            for u in grp:
                g[u] = ("hi", a, i)
        for i in range(1, self.tp.i_star + 1):
            for u in self.tp.class_lo[i - 1]:
                g.setdefault(u, ("lo", i))
            for u in self.tp.class_no[i - 1]:
                g.setdefault(u, ("no", i))
        return g

    def group_tag(self, u):
        """('hi'|'lo'|'no', layer) for layer vertices, ('0', 0) for A_0."""
        if u in self.tp.a0:
            return ("0", 0)
        gr = self.group.get(u)
        if gr is None:
            return (None, None)
        if gr[0] == "hi":
            return ("hi", gr[2])
        return gr

    # --- core mutation ---

    def embed(self, w, a, v, stage):
        """Set phi_w(a) = v, consuming every tree edge this completes."""
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

    # --- audit helpers ---

    def embedded_edge_count(self):
        total = 0
        for w in range(self.n):
            phi_w = self.phi[w]
            for u, v in self.tree.edges():
                if u in phi_w and v in phi_w:
                    total += 1
        return total

    def snapshot_obj(self):
        return {
            "stage": self.stage,
            "clock": list(self.clock),
            "case": self.case,
            "used": len(self.used),
            "shifts": {str(a): x for a, x in sorted(self.shifts.items())},
            "embedded_per_w": [len(p) for p in self.phi],
            "metrics": [[s, k, v] for s, k, v in self.metrics],
        }

    def snapshot_json(self):
        return json.dumps(self.snapshot_obj(), sort_keys=True)


def _run_match(state, stage, xs, ys, b_pairs, z_pairs, rng):
    """MATCH(B, Z) on object-labeled parts; classified abort on failure."""
    xi = {x: k for k, x in enumerate(xs)}
    yi = {y: k for k, y in enumerate(ys)}
    if len(xs) != len(ys):
        raise PipelineAbort(stage, "unbalanced matching instance",
                            {"x": len(xs), "y": len(ys)})
    if not xs:
        return {}
    inst = matching.BipartiteInstance(
        len(xs), len(ys),
        {(xi[x], yi[y]) for x, y in b_pairs},
        {(xi[x], yi[y]) for x, y in z_pairs if x in xi and y in yi},
    )
    steps = matching.default_steps(len(xs), state.cfg.pipeline_mix)
    try:
        res = matching.match_sample(inst, rng, steps=steps)
    except matching.InfeasibleMatchingError as exc:
        raise PipelineAbort(stage, "matching infeasible",
                            {"hall_violator_size": len(exc.hall_violator or [])})
    except matching.StuckError as exc:
        raise PipelineAbort(stage, "matching repair stuck",
                            {"residual": exc.residual})
    return {xs[xk]: ys[yk] for xk, yk in res.pairs.items()}


# --- HIGH DEGREES ---


def pick_shifts(state: EmbeddingState):
    """x_a in [m] for a in A* in order, first-feasible scan."""
    tp, cfg = state.tp, state.cfg
    a_list = [v for v in tp.order if v in tp.a_star]
    state.mark("shifts")
    if not a_list:
        return state
    m = tp.m
    d = cfg.d

    def dist(x, y):
        t = abs(x - y) % m
        return min(t, m - t)

    f_adj = [set() for _ in range(state.tree.n)]
    for u, v in tp.f_edges:
        f_adj[u].add(v)
        f_adj[v].add(u)
    placed = []
    for a in a_list:
        earlier = set(placed)
        nless = {b for b in tp.n_less(a) if b in state.shifts}
        fpairs = [(b, bp) for b in earlier for bp in f_adj[b]
                  if bp in earlier and b < bp]
        banned_diffs = {dist(state.shifts[b], state.shifts[bp]) for b, bp in fpairs}
        choice = None
        for cand in range(m):
            if any(dist(cand, state.shifts[ap]) <= 3 * d for ap in earlier):
                continue
            if any(dist(cand, state.shifts[ap]) in banned_diffs for ap in nless):
                continue
            choice = cand
            break
        if choice is None:
            raise PipelineAbort("shifts", "no feasible shift",
                                {"a": a, "placed": len(placed), "m": m,
                                 "min_gap": 3 * d})
        state.shifts[a] = choice
        placed.append(a)
    return state


def _split_parts(n, m, cfg, rng):
    """n = m n_* + n_0 with n_0 near n Delta^{-.1}; parts by permutation."""
    if m == 0:
        return n, 0
    target = n * cfg.big_delta ** -0.1
    best = None
    for n_star in range(1, n // m + 1):
        n0 = n - m * n_star
        key = (abs(n0 - target), -n_star)   # ties broken toward smaller n_0
        if best is None or key < best[0]:
            best = (key, n_star, n0)
    if best is None:
        raise PipelineAbort("high_degrees", "cannot split n = m n_* + n_0",
                            {"n": n, "m": m})
    return best[2], best[1]


def high_degrees(state: EmbeddingState):
    """Embed all of A* by per-block perfect matchings."""
    tp, cfg, n = state.tp, state.cfg, state.n
    a_list = [v for v in tp.order if v in tp.a_star]
    m = tp.m
    rng = state.rng_for("high_degrees")
    state.n0, state.n_star = _split_parts(n, m, cfg, rng)

    def partition(seq):
        seq = [int(x) for x in rng.permutation(n)]
        base = set(seq[: state.n0])
        blocks = [set(seq[state.n0 + k * state.n_star:
                          state.n0 + (k + 1) * state.n_star]) for k in range(m)]
        return base, blocks

    state.v0, state.v_blocks = partition(range(n))
    state.w0, state.w_blocks = partition(range(n))
    state.v_block_of = {v: k for k, blk in enumerate(state.v_blocks) for v in blk}
    state.w_block_of = {w: k for k, blk in enumerate(state.w_blocks) for w in blk}
    state.mark("high_degrees")
    if not a_list:
        return state

    for a in a_list:
        nless = sorted(tp.n_less(a))
        ma = {}

        def allowed(v, w):
            if v in state.images[w]:
                return False
            for b in nless:
                y = state.phi[w].get(b)
                if y is None or not state.host.has_edge(y, v) or _e(y, v) in state.used:
                    return False
            return True

        blocks = [(sorted(state.v0), sorted(state.w0), "0")]
        xa = state.shifts.get(a, 0)
        for wstar in range(m):
            blocks.append((sorted(state.v_blocks[(xa + wstar) % m]),
                           sorted(state.w_blocks[wstar]), wstar))
        for vs, ws, tag in blocks:
            b_pairs = [(v, w) for w in ws for v in vs if allowed(v, w)]
            z_pairs = [(state.phi[w][b], w) for w in ws for b in nless
                       if b in state.phi[w]]
            mb = _run_match(state, "high_degrees", vs, ws, b_pairs, z_pairs, rng)
            for v, w in mb.items():
                state.embed(w, a, v, "high_degrees")
                ma[w] = v
        state.ma[a] = ma
        state.clock.append(f"t_a:{a}")
    state.mark("t_hi")
    return state


# --- INTERVALS ---


def _interval_families(state, i):
    """I^i: partition of [n) label space into intervals per residue j."""
    if i in state.interval_cache:
        return state.interval_cache[i]
    n, cfg = state.n, state.cfg
    d_i = max(1, math.ceil(cfg.d / (2 * cfg.s) ** (i - 1)))
    fams = []
    for j in range(d_i):
        pts = list(range(j, n, d_i))
        fam = [(pts[k], pts[(k + 1) % len(pts)]) for k in range(len(pts))]
        fams.append(fam)
    state.interval_cache[i] = (d_i, fams)
    return d_i, fams


def _interval_positions(n, iv):
    x, y = iv
    if x < y:
        return list(range(x, y))
    return list(range(x, n)) + list(range(0, y))


def intervals(state: EmbeddingState):
    cfg, n = state.cfg, state.n
    rng = state.rng_for("intervals")
    allv = set(range(n))
    if state.case != "P":
        for w in range(n):
            state.xbar[w] = allv - {state.phi[w][a] for a in state.tp.a_star
                                    if a in state.phi[w]}
            state.pbar[w] = len(state.xbar[w]) / n
        state.mark("t_iv")
        return state

    eta = cfg.eta(state.case)
    p_keep = (1 - eta) * len(state.tp.p_ex_edges) / n
    depth = 2 * cfg.s + 1
    x_of = {}                     # (i, interval) -> set of w
    w_of_i = {i: [] for i in range(1, depth + 1)}
    for w in range(n):
        i = int(rng.integers(1, depth + 1))
        d_i, fams = _interval_families(state, i)
        j = int(rng.integers(0, d_i))
        state.iw[w], state.jw[w] = i, j
        w_of_i[i].append(w)
        fam = fams[j]
        flags = rng.random(len(fam)) < 0.5
        chosen = [k for k in range(len(fam)) if flags[k]]
        in_a = set(chosen)
        isolated = [fam[k] for k in in_a
                    if (k - 1) % len(fam) not in in_a and (k + 1) % len(fam) not in in_a]
        xw = [iv for iv in isolated if rng.random() < p_keep]
        state.x_families[w] = set(xw)
        for iv in xw:
            x_of.setdefault((i, iv), set()).add(w)
    for w in range(n):
        pos = set()
        for iv in state.x_families[w]:
            pos.update(_interval_positions(n, iv))
        xw_verts = {state.order.vert[z] for z in pos}
        xw_plus = {state.order.vert[(z + 1) % n] for z in pos}
        astar_img = {state.phi[w][a] for a in state.tp.a_star if a in state.phi[w]}
        state.xbar[w] = allv - (astar_img | xw_verts | xw_plus)
        state.pbar[w] = len(state.xbar[w]) / n

    # equalize: drop intervals hitting phi_w(A*), then downsample to t_i
    for w in range(n):
        astar_pos = {state.order.pos[state.phi[w][a]]
                     for a in state.tp.a_star if a in state.phi[w]}
        keep = {iv for iv in state.x_families[w]
                if not (set(_interval_positions(n, iv)) & astar_pos)}
        dropped = state.x_families[w] - keep
        for iv in dropped:
            x_of[(state.iw[w], iv)].discard(w)
        state.x_families[w] = keep
    state.y_families = {w: set(state.x_families[w]) for w in range(n)}
    for i in range(1, depth + 1):
        _, fams = _interval_families(state, i)
        counts = [len(x_of.get((i, iv), ())) for fam in fams for iv in fam]
        t_i = min(counts) if counts else 0
        state.record("intervals", f"t_{i}", t_i)
        for fam in fams:
            for iv in fam:
                ws = sorted(x_of.get((i, iv), ()))
                excess = len(ws) - t_i
                if excess > 0:
                    for w in rng.choice(ws, size=excess, replace=False):
                        state.y_families[int(w)].discard(iv)
    state.mark("t_iv")
    return state


# --- EMBED A_0 ---


def embed_a0(state: EmbeddingState):
    cfg, n = state.cfg, state.n
    rng = state.rng_for("embed_a0")
    gstar = [e for e in state.host.edges() if e not in state.used]
    keep = rng.random(len(gstar)) < cfg.p0 / cfg.p
    state.g0 = {e for e, k in zip(gstar, keep) if k}
    for w in range(n):
        prob = cfg.p0 / state.pbar[w] if state.pbar[w] > 0 else 0.0
        if prob > 1:
            raise PipelineAbort("embed_a0", "J_0 probability exceeds 1",
                                {"w": w, "pbar": state.pbar[w]})
        xs = sorted(state.xbar[w])
        flags = rng.random(len(xs)) < prob
        state.j0[w] = {x for x, f in zip(xs, flags) if f}
    state.clock.append("t_G0")

    tp = state.tp
    ws = list(range(n))
    rest = [a for a in tp.order if a in tp.a0 and a not in tp.a_star]
    for a in rest:
        nless = sorted(tp.n_less(a))
        b_pairs = []
        for w in ws:
            phi_w = state.phi[w]
            ys = [phi_w.get(b) for b in nless]
            if any(y is None for y in ys):
                raise PipelineAbort("embed_a0", "earlier neighbour unembedded",
                                    {"a": a})
            for v in state.j0[w]:
                if v in state.images[w]:
                    continue
                if all(_e(y, v) in state.g0 and _e(y, v) not in state.used
                       for y in ys):
                    b_pairs.append((v, w))
        z_pairs = [(state.phi[w][b], w) for w in ws for b in nless]
        mb = _run_match(state, f"embed_a0:{a}", list(range(n)), ws,
                        b_pairs, z_pairs, rng)
        for v, w in mb.items():
            state.embed(w, a, v, "embed_a0")
        if a in tp.a_star_star and all(
                b in state.phi[0] for b in tp.a_star_star):
            state.clock.append("t_**")
    state.mark("t_0")
    return state


# --- DIGRAPH ---


def _class_pair_probs(state):
    """p^{gg'}_{ii'} = |F'[A^g_i, A^{g'}_{i'}]|/n + p_min, with i' = 0 rows."""
    tp, cfg, n = state.tp, state.cfg, state.n
    counts = {}
    for u, v in tp.f_prime_edges:
        gu, iu = state.group_tag(u)
        gv, iv = state.group_tag(v)
        if gu is None or gv is None:
            continue
        if iu == iv:
            continue
        if iu < iv:
            (gu, iu), (gv, iv) = (gv, iv), (gu, iu)
        key = (gu, iu, gv, iv)     # iu > iv, iv possibly 0
        counts[key] = counts.get(key, 0) + 1
    probs = {}
    istar = tp.i_star
    gs = ("hi", "lo", "no")
    for i in range(1, istar + 1):
        for g in gs:
            for ip in range(0, i):
                gps = ("0",) if ip == 0 else gs
                for gp in gps:
                    probs[(g, i, gp, ip)] = counts.get((g, i, gp, ip), 0) / n + cfg.p_min
    return probs


def _alphas(state):
    tp, n = state.tp, state.n
    alpha = {}
    for i in range(1, tp.i_star + 1):
        layer = tp.layers[i - 1]
        lo = {u for u in layer if state.group.get(u, ("",))[0] == "lo"}
        no = {u for u in layer if state.group.get(u, ("",))[0] == "no"}
        alpha[("lo", i)] = len(lo) / n
        alpha[("no", i)] = len(no) / n
    for (a, i), grp in tp.star_groups.items():
        alpha[("hi", a, i)] = len(grp) / n
    m_i = {}
    for (a, i), mv in tp.m_ai.items():
        m_i[i] = m_i.get(i, 0) + mv
    for i, mv in m_i.items():
        alpha[("hi_i", i)] = state.cfg.big_delta ** 0.2 * mv / n
    alpha["hi"] = state.cfg.big_delta ** 0.2 * tp.m / n
    alpha["0"] = len(tp.a0) / n
    return alpha


def p_ex_prime(state):
    if state.case == "P":
        return (7 / 8 - state.cfg.eta_plus) * state.p_ex
    return state.cfg.p_ex_prime_factor * state.p_ex


def digraph_allocate(state: EmbeddingState):
    tp, cfg, n = state.tp, state.cfg, state.n
    rng = state.rng_for("digraph")
    m = tp.m
    scheme = state.scheme
    state.class_pair_p = _class_pair_probs(state)
    state.alpha = _alphas(state)
    istar = tp.i_star
    p1 = cfg.p1()
    alpha_hi = state.alpha["hi"]

    # steps i-iii: label multigraphs, rainbow matching, weighted 3-graph
    label_vw = {}
    if m > 0 and not scheme.empty:
        edges_ge = []
        for (a, i, j) in scheme.labels_ge:
            xa = state.shifts.get(a, 0)
            for wstar in range(m):
                edges_ge.append(((xa + wstar) % m, wstar, (a, i, j)))
        rb = matching.rainbow_matching(
            matching.LabeledMultigraph(m, m, edges_ge)) if edges_ge else None
        state.rainbow = rb.chosen if rb else []
        for vstar, wstar, lab in state.rainbow:
            label_vw[lab] = (vstar, wstar, "ge")

        tri = []
        tri_labels = []
        for (a, i, j) in scheme.labels_lt:
            xa = state.shifts.get(a, 0)
            for wstar in range(m):
                tri.append(((xa + wstar) % m, m + wstar,
                            2 * m + len(tri_labels)))
            tri_labels.append((a, i, j))
        if tri:
            # vertex space: V* | W* | labels
            uniq = sorted({e for e in tri})
            hh = hypergraph.WeightedHypergraph(
                2 * m + len(tri_labels), uniq, [1.0 / m] * len(uniq), 3)
            rep = hypergraph.nibble_match(hh, [], rng)
            for ei in rep.matched_ids:
                vstar, wsh, labk = hh.edges[ei]
                lab = tri_labels[labk - 2 * m]
                state.nibble_m.append((vstar, wsh - m, lab))
                label_vw[lab] = (vstar, wsh - m, "lt")

    # step iv: U_h partition, h_{aij}, G_1 orientation
    if m > 0:
        perm = [int(x) for x in rng.permutation(n)]
        state.u_parts = [set(perm[k::m]) for k in range(m)]
        state.u_of = {v: h for h, part in enumerate(state.u_parts) for v in part}
        for fam in (scheme.labels_lt, scheme.labels_ge):
            hs = [int(x) for x in rng.permutation(m)]
            for lab, h in zip(fam, hs):
                state.h_assign[lab] = h
    g1_edges = []
    for e in state.host.edges():
        if e in state.used or e in state.g0:
            continue
        if state.order.distance(*e) >= 3 * cfg.d:
            continue
        g1_edges.append(e)
    flips = rng.random(len(g1_edges)) < 0.5
    state.g1_arcs = {(u, v) if f else (v, u) for (u, v), f in zip(g1_edges, flips)}
    in_arcs = {}
    for y, x in state.g1_arcs:
        in_arcs.setdefault(x, []).append(y)

    # step v: D^h_x components and the H*_ai pre-reserve
    p_circ = {"lt": scheme.p_lt, "ge": scheme.p_ge}
    if m > 0 and label_vw:
        pair_lookup = {}           # (y, w) -> list of (circ, label)
        for lab, (vstar, wstar, circ) in label_vw.items():
            a = lab[0]
            ma = state.ma.get(a, {})
            h_lab = state.h_assign[lab]
            for h in range(m):
                vb = state.v_blocks[(vstar + h) % m]
                wb = state.w_blocks[(wstar + h) % m]
                for w in wb:
                    v = ma.get(w)
                    if v is not None and v in vb:
                        pair_lookup.setdefault((v, w), []).append((h, circ, lab))
            for w in state.w0:     # M^0_a copy at h_{aij}
                v = ma.get(w)
                if v is not None and v in state.v0:
                    pair_lookup.setdefault((v, w), []).append((h_lab, circ, lab))
        ge_at = {}
        lt_at = {}
        for (v, w), lst in pair_lookup.items():
            for (h, circ, lab) in lst:
                d = ge_at if circ == "ge" else lt_at
                d.setdefault((h, v), []).append((w, lab))
        for x, ys in in_arcs.items():
            h = state.u_of.get(x)
            if h is None:
                continue
            w_ge, w_lt = {}, {}
            for y in ys:
                for (w, lab) in ge_at.get((h, y), []):
                    if x in state.xbar.get(w, ()):
                        w_ge.setdefault(w, []).append((y, lab))
                for (w, lab) in lt_at.get((h, y), []):
                    if x in state.xbar.get(w, ()):
                        w_lt.setdefault(w, []).append((y, lab))
            nodes = {y for d in (w_ge, w_lt) for lst in d.values() for y, _ in lst}
            if not nodes:
                continue
            parent = {y: y for y in nodes}

            def find(y):
                while parent[y] != y:
                    parent[y] = parent[parent[y]]
                    y = parent[y]
                return y

            for w in set(w_ge) & set(w_lt):
                ys1 = [y for y, _ in w_ge[w]] + [y for y, _ in w_lt[w]]
                for y in ys1[1:]:
                    ra, rb2 = find(ys1[0]), find(y)
                    if ra != rb2:
                        parent[rb2] = ra
            comps = {}
            for y in nodes:
                comps.setdefault(find(y), set()).add(y)
            for comp in comps.values():
                circ = "ge" if rng.random() < p_circ["ge"] else "lt"
                src = w_ge if circ == "ge" else w_lt
                for w, lst in src.items():
                    for y, lab in lst:
                        if y in comp:
                            a, i, _ = lab
                            state.h_star.setdefault((a, i), set()).add((y, x))
                            state.arc_w[(y, x)] = w

    # step vi: per-arc mutually exclusive reserves
    options = [(("G_ex",), 2 * state.p_ex / p1)]
    for (g, i, gp, ip), pv in sorted(state.class_pair_p.items()):
        options.append((("G", g, i, gp, ip), 2 * pv / p1))
    for i in range(1, istar + 1):
        options.append((("G'", i), 2 * cfg.p_max / p1))
    base_sum = sum(p for _, p in options)
    h_prob = {}
    for arc, w in state.arc_w.items():
        h_prob[arc] = 2 * alpha_hi / (p1 * state.pbar[w]) if state.pbar[w] else 0.0
    worst = base_sum + (max(h_prob.values()) if h_prob else 0.0)
    state.record("digraph", "arc_table_sum", worst)
    if worst > 1.0 + 1e-9:
        raise PipelineAbort("digraph", "arc reserve probabilities exceed 1",
                            {"sum": worst})
    cum = np.cumsum([p for _, p in options])
    labels = [lab for lab, _ in options]
    arcs = sorted(state.g1_arcs)
    draws = rng.random(len(arcs))
    hstar_arcs = set(state.arc_w)
    for arc, r in zip(arcs, draws):
        total = base_sum + (h_prob.get(arc, 0.0) if arc in hstar_arcs else 0.0)
        if r >= total:
            continue
        if r >= base_sum:
            # the H option, available only on H*_ai arcs
            state.reserve[arc] = ("H",)
            w = state.arc_w[arc]
            for (a, i), arcset in state.h_star.items():
                if arc in arcset:
                    state.j_hi.setdefault((a, i), set()).add((arc[1], w))
                    break
        else:
            k = int(np.searchsorted(cum, r, side="right"))
            state.reserve[arc] = labels[k]

    # step vii: J' allocation per (x, w)
    pex_p = p_ex_prime(state)
    j_opts = [(("J_ex",), pex_p)]
    for i in range(1, istar + 1):
        j_opts.append((("J_lo", i), state.alpha.get(("lo", i), 0.0)))
        j_opts.append((("J_no", i), state.alpha.get(("no", i), 0.0)))
        j_opts.append((("J'", i), cfg.p_max))
    j_num = [p for _, p in j_opts]
    j_labels = [lab for lab, _ in j_opts]
    hi_x = {}
    for (y, x), w in state.arc_w.items():
        hi_x.setdefault((x, w), 1)
    jhi_pairs = {p for s in state.j_hi.values() for p in s}
    worst_j = 0.0
    for w in range(n):
        for x in sorted(state.xbar[w]):
            if x in state.j0[w] or (x, w) in jhi_pairs:
                continue
            p_xw = state.pbar[w] * p1 - 2 * alpha_hi * hi_x.get((x, w), 0)
            if p_xw <= 0:
                raise PipelineAbort("digraph", "p_xw not positive",
                                    {"x": x, "w": w, "p_xw": p_xw})
            probs = np.array(j_num) / p_xw
            s = float(probs.sum())
            worst_j = max(worst_j, s)
            if s > 1.0 + 1e-9:
                raise PipelineAbort("digraph", "J reserve probabilities exceed 1",
                                    {"sum": s, "x": x, "w": w})
            r = rng.random()
            if r < s:
                k = int(np.searchsorted(np.cumsum(probs), r, side="right"))
                state.j_reserve[(x, w)] = j_labels[k]
    state.record("digraph", "j_table_sum_max", worst_j)

    # step viii: Case P twist split of G_ex
    if state.case == "P":
        for arc, lab in state.reserve.items():
            if lab == ("G_ex",):
                if rng.random() < 7 / 8:
                    state.j0k_ex[arc] = "0"
                else:
                    y, x = arc
                    ypos = state.order.pos[y]
                    xpos = state.order.pos[x]
                    tw = (state.order.vert[(ypos - 1) % n],
                          state.order.vert[(xpos - 1) % n])
                    state.j0k_ex[tw] = "K"
    state.mark("t_1")
    return state


# --- APPROXIMATE DECOMPOSITION ---


def _j_u(state, u):
    """The J reserve feeding vertex u's class."""
    tag = state.group_tag(u)
    if tag[0] == "hi":
        gr = state.group[u]
        return state.j_hi.get((gr[1], gr[2]), set())
    if tag[0] in ("lo", "no"):
        lab = ("J_lo", tag[1]) if tag[0] == "lo" else ("J_no", tag[1])
        return {pw for pw, l in state.j_reserve.items() if l == lab}
    return set()


def build_hi(state: EmbeddingState, i: int):
    """H_i with omega and omega' weights; returns (hypergraph, meta)."""
    tp, n = state.tp, state.n
    layer = sorted(tp.layers[i - 1])
    vid = {}
    edges = []
    weights = []
    meta = []

    def vx(key):
        if key not in vid:
            vid[key] = len(vid)
        return vid[key]

    j_cache = {}
    for u in layer:
        tag = state.group_tag(u)
        if tag[0] is None:
            continue
        if tag[0] == "hi":
            gr = state.group[u]
            a_u = tp.star_groups[(gr[1], gr[2])]
        else:
            layer_set = tp.layers[i - 1]
            a_u = {v for v in layer_set if state.group.get(v, ("",))[0] == tag[0]}
        if tag not in j_cache:
            j_cache[tag] = sorted(_j_u(state, u)) if tag[0] != "hi" else None
        j_u = sorted(_j_u(state, u)) if tag[0] == "hi" else j_cache[tag]
        nless = sorted(tp.n_less(u))
        for (x, w) in j_u:
            if u in state.phi[w] or x in state.images[w]:
                continue
            ok = True
            wprod = 1.0
            arcs = []
            for v in nless:
                y = state.phi[w].get(v)
                if y is None:
                    ok = False
                    break
                gv, iv = state.group_tag(v)
                want = ("G", tag[0], i, gv, iv)
                if state.reserve.get((y, x)) != want or _e(y, x) in state.used:
                    ok = False
                    break
                wprod *= 1.0 / state.class_pair_p[(tag[0], i, gv, iv)]
                arcs.append((y, x))
            if not ok:
                continue
            everts = [vx(("uw", u, w)), vx(("xw", x, w))]
            everts += [vx(("arc",) + arc) for arc in arcs]
            edges.append(tuple(sorted(set(everts))))
            weights.append(wprod / max(1, len(a_u)))
            meta.append((u, w, x, arcs))
    if not edges:
        return None, []
    h = hypergraph.WeightedHypergraph(len(vid), edges, weights, max(2, 2 + 4))
    # omega' normalization
    deg = np.zeros(h.n_verts)
    for e, wt in zip(h.edges, h.omega):
        for v in e:
            deg[v] += wt
    eps_i = state.cfg.eps_ladder[min(i, state.cfg.i_plus) - 1]
    omega_p = []
    for e, wt in zip(h.edges, h.omega):
        q = max(1.0, max(deg[v] for v in e))
        omega_p.append((1 - 0.5 * eps_i) * wt / q)
    hp = hypergraph.WeightedHypergraph(h.n_verts, h.edges, omega_p, h.r)
    state.hi_built.append((i, h, hp, meta))
    return hp, meta


def approx_decomposition(state: EmbeddingState):
    tp, cfg, n = state.tp, state.cfg, state.n
    rng = state.rng_for("approx")
    for i in range(1, tp.i_star + 1):
        state.clock.append(f"t_{i}")
        hp, meta = build_hi(state, i)
        if hp is not None:
            rep = hypergraph.nibble_match(hp, [hypergraph.size_function()], rng,
                                          rounds=cfg.nibble_rounds or None,
                                          bite=cfg.nibble_bite)
            state.record(f"approx_{i}", "nibble_coverage", rep.coverage)
            for ei in rep.matched_ids:
                u, w, x, arcs = meta[ei]
                if u in state.phi[w] or x in state.images[w]:
                    continue
                state.embed(w, u, x, f"approx_{i}")
            instrument(state, i)
        state.clock.append(f"t_{i}+")

        # leftover pass
        jp_lab = ("J'", i)
        jp = {}
        for (x, w), lab in state.j_reserve.items():
            if lab == jp_lab:
                jp.setdefault(w, set()).add(x)
        for a in sorted(tp.layers[i - 1]):
            wa = [w for w in range(n) if a not in state.phi[w]]
            if not wa:
                continue
            va = sorted(int(v) for v in rng.choice(n, size=len(wa), replace=False))
            nless = sorted(tp.n_less(a))
            b_pairs = []
            va_set = set(va)
            for w in wa:
                for v in jp.get(w, ()):
                    if v not in va_set or v in state.images[w]:
                        continue
                    good = True
                    for b in nless:
                        y = state.phi[w].get(b)
                        if (y is None
                                or state.reserve.get((y, v)) != jp_lab
                                and state.reserve.get((v, y)) != jp_lab
                                or _e(y, v) in state.used):
                            good = False
                            break
                    if good:
                        b_pairs.append((v, w))
            z_pairs = [(state.phi[w][b], w) for w in wa for b in nless
                       if b in state.phi[w]]
            mb = _run_match(state, f"approx_{i}:leftover:{a}", va, wa,
                            b_pairs, z_pairs, rng)
            for v, w in mb.items():
                state.embed(w, a, v, f"approx_{i}")
    state.mark("t_approx_done")
    return state


def instrument(state: EmbeddingState, i: int):
    """Observational metrics for the layer-i hypergraph; never gates."""
    rec = [r for r in state.hi_built if r[0] == i]
    if not rec:
        return {}
    _, h, hp, meta = rec[-1]
    deg = np.zeros(h.n_verts)
    degp = np.zeros(hp.n_verts)
    for e, wt, wtp in zip(h.edges, h.omega, hp.omega):
        for v in e:
            deg[v] += wt
            degp[v] += wtp
    codeg = {}
    for e, wt in zip(h.edges, h.omega):
        for k1 in range(len(e)):
            for k2 in range(k1 + 1, len(e)):
                key = (e[k1], e[k2])
                codeg[key] = codeg.get(key, 0.0) + wt
    out = {
        "edges": len(h.edges),
        "omega_deg_max": float(deg.max()) if len(deg) else 0.0,
        "omega_prime_deg_max": float(degp.max()) if len(degp) else 0.0,
        "codegree_max": max(codeg.values()) if codeg else 0.0,
    }
    free_deg = {}
    for u, v in state.host.edges():
        if _e(u, v) not in state.used:
            free_deg[u] = free_deg.get(u, 0) + 1
            free_deg[v] = free_deg.get(v, 0) + 1
    out["free_degree_max"] = max(free_deg.values()) if free_deg else 0
    for k, v in out.items():
        state.record(f"H_{i}", k, v)
    return out


def run_pipeline(state: EmbeddingState):
    """All stages in order; returns state, raising nothing (aborts stored)."""
    try:
        pick_shifts(state)
        high_degrees(state)
        intervals(state)
        embed_a0(state)
        digraph_allocate(state)
        approx_decomposition(state)
        state.mark("pipeline_done")
    except PipelineAbort as exc:
        state.abort = exc
        state.mark(f"aborted:{exc.stage}")
        return state
    state.abort = None
    return state
