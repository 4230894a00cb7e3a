"""Random perfect-matching sampler via the switching chain, plus the
pair-condition diagnostic and the rainbow matching on labeled multigraphs.

MATCH(B, Z) returns a perfect matching of B containing no 4-cycle that
alternates between the matching and Z ("MZMZ-free").  The chain proposes
uniformly random matching-alternating 6-cycle swaps and rejects any swap
whose new edges would close such a 4-cycle, so the count of those cycles
never increases along a run; an explicit repair phase drives it to zero
before mixing.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InfeasibleMatchingError, InputError, StuckError
from .rng import kernel_seed


@dataclass
class BipartiteInstance:
    x_size: int
    y_size: int
    b_edges: set = field(default_factory=set)
    z_edges: set = field(default_factory=set)

    def __post_init__(self):
        self.b_edges = {(int(x), int(y)) for x, y in self.b_edges}
        self.z_edges = {(int(x), int(y)) for x, y in self.z_edges}
        for x, y in self.b_edges | self.z_edges:
            if not (0 <= x < self.x_size and 0 <= y < self.y_size):
                raise InputError(f"edge ({x},{y}) out of range")

    def b_matrix(self):
        m = np.zeros((self.x_size, self.y_size), dtype=np.bool_)
        for x, y in self.b_edges:
            m[x, y] = True
        return m

    def z_matrix(self):
        m = np.zeros((self.x_size, self.y_size), dtype=np.bool_)
        for x, y in self.z_edges:
            m[x, y] = True
        return m

    def density(self):
        return len(self.b_edges) / (self.x_size * self.y_size)

    def z_max_degree(self):
        dx = [0] * self.x_size
        dy = [0] * self.y_size
        for x, y in self.z_edges:
            dx[x] += 1
            dy[y] += 1
        return max(max(dx, default=0), max(dy, default=0))

    @classmethod
    def from_json_obj(cls, obj):
        return cls(int(obj["x_size"]), int(obj["y_size"]),
                   {tuple(e) for e in obj.get("b", [])},
                   {tuple(e) for e in obj.get("z", [])})

    def to_json_obj(self):
        return {"x_size": self.x_size, "y_size": self.y_size,
                "b": sorted(map(list, self.b_edges)),
                "z": sorted(map(list, self.z_edges))}


# --- exact maximum matching (Hopcroft-Karp) ---


def hopcroft_karp(x_size, y_size, adj):
    """Maximum matching; adj maps x -> iterable of y.  Returns (mx, my)."""
    INF = float("inf")
    mx = [-1] * x_size
    my = [-1] * y_size
    adj = [sorted(adj[x]) for x in range(x_size)]

    def bfs():
        dist = [INF] * x_size
        q = deque()
        for x in range(x_size):
            if mx[x] == -1:
                dist[x] = 0
                q.append(x)
        found = False
        while q:
            x = q.popleft()
            for y in adj[x]:
                nx = my[y]
                if nx == -1:
                    found = True
                elif dist[nx] is INF:
                    dist[nx] = dist[x] + 1
                    q.append(nx)
        return dist, found

    def dfs(x, dist):
        for y in adj[x]:
            nx = my[y]
            if nx == -1 or (dist[nx] == dist[x] + 1 and dfs(nx, dist)):
                mx[x] = y
                my[y] = x
                return True
        dist[x] = float("inf")
        return False

    while True:
        dist, found = bfs()
        if not found:
            break
        for x in range(x_size):
            if mx[x] == -1:
                dfs(x, dist)
    return mx, my


def hall_violator(x_size, adj, mx, my):
    """Set S of X-vertices with |N(S)| < |S|, from the final HK layers."""
    free = [x for x in range(x_size) if mx[x] == -1]
    if not free:
        return None
    reach_x = set(free)
    reach_y = set()
    q = deque(free)
    while q:
        x = q.popleft()
        for y in adj[x]:
            if y not in reach_y:
                reach_y.add(y)
                nx = my[y]
                if nx != -1 and nx not in reach_x:
                    reach_x.add(nx)
                    q.append(nx)
    return sorted(reach_x)


def _initial_perfect_matching(inst):
    adj = [[] for _ in range(inst.x_size)]
    for x, y in inst.b_edges:
        adj[x].append(y)
    mx, my = hopcroft_karp(inst.x_size, inst.y_size, adj)
    if -1 in mx:
        raise InfeasibleMatchingError(
            "no perfect matching exists",
            hall_violator=hall_violator(inst.x_size, adj, mx, my),
        )
    return np.asarray(mx, dtype=np.int64)


# --- the MATCH sampler ---


@dataclass
class MatchResult:
    pairs: dict              # x -> y
    accepted_swaps: int
    repair_swaps: int


def default_steps(n, factor=50.0):
    return max(1000, int(factor * n * math.log(max(n, 2))))


def match_sample(inst: BipartiteInstance, rng, steps=None) -> MatchResult:
    """Sample an MZMZ-free perfect matching of B.

    Raises InfeasibleMatchingError (with a Hall violator) when B has no
    perfect matching, StuckError when the repair phase cannot reach zero
    within budget (possible off the super-regular regime).
    """
    if inst.x_size != inst.y_size:
        raise InputError("perfect matching needs equal part sizes")
    n = inst.x_size
    if steps is None:
        steps = default_steps(n)
    match = _initial_perfect_matching(inst)
    badj = inst.b_matrix()
    zadj = inst.z_matrix()
    empty = kernels.no_samples(n)

    repair_swaps = 0
    budget = 20 * default_steps(n)
    spent = 0
    chunk = max(2000, 4 * n)
    while kernels.mzmz_count(match, zadj) > 0:
        if spent >= budget:
            raise StuckError(
                "repair phase failed to reach MZMZ=0 within budget",
                residual=int(kernels.mzmz_count(match, zadj)),
            )
        repair_swaps += kernels.chain_run(
            match, badj, zadj, chunk, kernel_seed(rng), chunk + 1, 1, empty)
        spent += chunk

    accepted = kernels.chain_run(
        match, badj, zadj, int(steps), kernel_seed(rng), int(steps) + 1, 1, empty)
    assert kernels.mzmz_count(match, zadj) == 0
    return MatchResult({x: int(match[x]) for x in range(n)}, int(accepted), repair_swaps)


def sample_matchings(inst: BipartiteInstance, rng, n_samples, thin, burnin=None):
    """Thinned chain samples as an (n_samples, n) int array of y-indices."""
    if inst.x_size != inst.y_size:
        raise InputError("perfect matching needs equal part sizes")
    n = inst.x_size
    res = match_sample(inst, rng, steps=default_steps(n))  # repaired start
    match = np.asarray([res.pairs[x] for x in range(n)], dtype=np.int64)
    badj = inst.b_matrix()
    zadj = inst.z_matrix()
    if burnin is None:
        burnin = 10 * thin
    out = np.zeros((n_samples, n), dtype=np.int32)
    steps = burnin + thin * n_samples
    kernels.chain_run(match, badj, zadj, steps, kernel_seed(rng), burnin, thin, out)
    return out


@dataclass
class MarginalReport:
    n_samples: int
    rows: list               # (x, y, freq, lo, hi, in_band)
    band_fraction: float

    def to_csv(self):
        lines = ["x,y,freq,band_lo,band_hi,in_band"]
        for x, y, f, lo, hi, ok in self.rows:
            lines.append(f"{x},{y},{f:.6f},{lo:.6f},{hi:.6f},{int(ok)}")
        return "\n".join(lines) + "\n"


def match_marginal_report(inst, rng, samples, alpha=0.1, thin=None) -> MarginalReport:
    """Empirical edge marginals against the (1 +- alpha^.98)/(d(B) n) band."""
    n = inst.x_size
    if thin is None:
        thin = max(50, 2 * n)
    draws = sample_matchings(inst, rng, samples, thin)
    counts = np.zeros((n, inst.y_size))
    np.add.at(counts, (np.repeat(np.arange(n), samples), draws.T.ravel()), 1)
    center = 1.0 / (inst.density() * n)
    dev = alpha ** 0.98
    lo, hi = (1 - dev) * center, (1 + dev) * center
    rows = []
    for x, y in sorted(inst.b_edges):
        f = counts[x, y] / samples
        rows.append((x, y, f, lo, hi, lo <= f <= hi))
    frac = sum(r[5] for r in rows) / len(rows) if rows else 1.0
    return MarginalReport(samples, rows, frac)


# --- pair condition (regularity diagnostic) ---


def pair_condition_check(x_size, y_size, b_edges, eps, d):
    """Degree and codegree hypotheses of the pair condition.

    Passes iff every x-degree exceeds (d - eps) m and at most 2 eps m^2
    pairs x, x' have codegree >= (d + eps)^2 m.  Returns
    (ok, bad_degree_vertices, violating_pair_count).
    """
    if x_size != y_size:
        raise InputError("pair condition assumes equal part sizes")
    m = x_size
    nbr = [set() for _ in range(m)]
    for x, y in b_edges:
        nbr[x].add(y)
    bad_deg = [x for x in range(m) if len(nbr[x]) <= (d - eps) * m]
    thresh = (d + eps) ** 2 * m
    violating = 0
    for x in range(m):
        for xp in range(x + 1, m):
            if len(nbr[x] & nbr[xp]) >= thresh:
                violating += 1
    ok = not bad_deg and violating <= 2 * eps * m * m
    return ok, bad_deg, violating


# --- rainbow matching on labeled multigraphs ---


@dataclass
class LabeledMultigraph:
    x_size: int
    y_size: int
    edges: list              # (x, y, label)

    def labels(self):
        return {lab for _, _, lab in self.edges}


@dataclass
class RainbowResult:
    chosen: list             # (x, y, label)
    deficit: int
    soft_bound_ok: bool      # deficit <= m^{0.51}, diagnostic only


def rainbow_matching(mg: LabeledMultigraph) -> RainbowResult:
    """Largest-effort matching using each label and vertex at most once.

    Greedy seeding plus Kuhn-style augmentation that may evict and
    reassign up to the two labels blocking a candidate edge.
    """
    by_label = {}
    for x, y, lab in mg.edges:
        if not (0 <= x < mg.x_size and 0 <= y < mg.y_size):
            raise InputError(f"edge ({x},{y}) out of range")
        by_label.setdefault(lab, []).append((x, y))
    owner_x = {}
    owner_y = {}
    assign = {}

    def place(lab, x, y):
        assign[lab] = (x, y)
        owner_x[x] = lab
        owner_y[y] = lab

    def unplace(lab):
        x, y = assign.pop(lab)
        del owner_x[x]
        del owner_y[y]

    def try_assign(lab, visited):
        for x, y in by_label[lab]:
            blockers = {owner_x.get(x), owner_y.get(y)} - {None}
            if not blockers:
                place(lab, x, y)
                return True
            if blockers & visited:
                continue
            saved = {b: assign[b] for b in blockers}
            for b in blockers:
                unplace(b)
            place(lab, x, y)
            visited |= blockers
            if all(try_assign(b, visited) for b in sorted(blockers)):
                return True
            # roll back
            for b in sorted(blockers):
                if b in assign:
                    unplace(b)
            unplace(lab)
            for b, (bx, by) in saved.items():
                place(b, bx, by)
        return False

    for lab in sorted(by_label):
        try_assign(lab, {lab})

    m = len(by_label)
    chosen = sorted((x, y, lab) for lab, (x, y) in assign.items())
    deficit = m - len(chosen)
    return RainbowResult(chosen, deficit, deficit <= m ** 0.51)
