"""Finite-n stochastic network simulator of the homophilic tie dynamics.

One step runs four phases against a numpy ``Generator``; the order of random
draws is part of the reproducibility contract:

1. formation   ``u = rng.random(n)``; node i wants a similar partner iff
   ``u[i] < f(x_i)`` where x_i is its dissimilar-degree fraction (0.5 when
   isolated). Partners are drawn against the start-of-step graph (see
   ``_draw_partners``) and committed in node-id order; a partner that is
   already adjacent at commit time is skipped.
2. weak ties   ``v = rng.random(n)``; a node whose primary edge was committed
   links to ``sorted(candidates)[int(v[i] * len)]`` among the neighbours of
   its new partner (post-formation graph, excluding itself and its
   neighbours). Committed in node-id order with the same skip rule.
3. rewiring    ``u = rng.random(m)`` over the edge array; an aged similar edge
   is rewired iff ``u[e] < phi * (1 - k_b(age))``. Its far endpoint is
   replaced by ``select_partner(near, DISSIMILAR)``, in edge-array order.
4. decay       ``u = rng.random(m)``; an aged edge survives iff
   ``u[e] < conditional_survival(kernel, age, decay_mode)``.

Edges formed (or rewired) during a step have age 0 and skip phases 3 and 4.
"""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import Mode, SimConfig, WeakTieRule
from .core import EdgeClass, NodeType, survival_table
from .metrics import MetricSeries


class Origin(enum.IntEnum):
    PRIMARY = 0
    SECONDARY = 1
    REWIRED = 2


@dataclass(frozen=True)
class EdgeRecord:
    u: int
    v: int
    birth: int
    cls: EdgeClass
    origin: Origin

    def age(self, t: int) -> int:
        return t - self.birth


@dataclass
class StepStats:
    t: int
    skipped: int = 0          # exhausted candidate sets plus commit collisions
    exhausted: int = 0
    collisions: int = 0
    secondary: int = 0
    rewired: int = 0
    rewire_skipped: int = 0
    edges_before_rewire: int = 0
    edges_after_rewire: int = 0
    decayed: int = 0
    primary_similar: int = 0
    primary_dissimilar: int = 0
    similar_draws: int = 0
    expected_similar: float = 0.0   # sum of f(x_i)
    var_similar: float = 0.0        # sum of f(x_i)(1 - f(x_i))


class NetworkState:
    """Two-type graph with aged, typed edges and its own RNG stream."""

    def __init__(self, types: np.ndarray, rng: np.random.Generator):
        self.n = len(types)
        self.types = np.asarray(types, dtype=np.int8)
        self.rng = rng
        self.t = 0
        self.adj: list[set[int]] = [set() for _ in range(self.n)]
        self.deg = np.zeros(self.n, dtype=np.int64)
        self.deg_d = np.zeros(self.n, dtype=np.int64)
        self.eu = np.zeros(0, dtype=np.int64)
        self.ev = np.zeros(0, dtype=np.int64)
        self.birth = np.zeros(0, dtype=np.int64)
        self.origin = np.zeros(0, dtype=np.int8)
        self.sim = np.zeros(0, dtype=bool)
        self.n_similar = 0
        self.n_dissimilar = 0
        self.pools = [np.flatnonzero(self.types == k) for k in (0, 1)]
        self.last_stats: StepStats | None = None
        self.last_formation: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def m(self) -> int:
        return len(self.eu)

    def node_type(self, i: int) -> NodeType:
        return NodeType(int(self.types[i]))

    def edges(self) -> list[EdgeRecord]:
        return [
            EdgeRecord(
                int(u), int(v), int(b),
                EdgeClass.SIMILAR if s else EdgeClass.DISSIMILAR, Origin(int(o)),
            )
            for u, v, b, s, o in zip(self.eu, self.ev, self.birth, self.sim, self.origin)
        ]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(min(u, v), max(u, v)) for u, v in zip(self.eu.tolist(), self.ev.tolist())}

    def _link(self, i: int, j: int) -> bool:
        self.adj[i].add(j)
        self.adj[j].add(i)
        self.deg[i] += 1
        self.deg[j] += 1
        same = self.types[i] == self.types[j]
        if same:
            self.n_similar += 1
        else:
            self.deg_d[i] += 1
            self.deg_d[j] += 1
            self.n_dissimilar += 1
        return bool(same)

    def _unlink(self, i: int, j: int) -> None:
        self.adj[i].discard(j)
        self.adj[j].discard(i)
        self.deg[i] -= 1
        self.deg[j] -= 1
        if self.types[i] == self.types[j]:
            self.n_similar -= 1
        else:
            self.deg_d[i] -= 1
            self.deg_d[j] -= 1
            self.n_dissimilar -= 1

    def _append(self, us, vs, sims, origin: Origin) -> None:
        k = len(us)
        if not k:
            return
        self.eu = np.concatenate([self.eu, np.asarray(us, dtype=np.int64)])
        self.ev = np.concatenate([self.ev, np.asarray(vs, dtype=np.int64)])
        self.birth = np.concatenate([self.birth, np.full(k, self.t, dtype=np.int64)])
        self.origin = np.concatenate([self.origin, np.full(k, int(origin), dtype=np.int8)])
        self.sim = np.concatenate([self.sim, np.asarray(sims, dtype=bool)])

    def candidate_count(self, i: int, want_similar: bool) -> int:
        ti = int(self.types[i])
        tgt = ti if want_similar else 1 - ti
        linked = self.deg[i] - self.deg_d[i] if want_similar else self.deg_d[i]
        return len(self.pools[tgt]) - int(linked) - (1 if want_similar else 0)

    def check_integrity(self) -> list[str]:
        """Recompute everything from the raw edge arrays; returns violations."""
        problems = []
        seen = set()
        deg = np.zeros(self.n, dtype=np.int64)
        deg_d = np.zeros(self.n, dtype=np.int64)
        n_sim = 0
        for u, v, s, b in zip(self.eu.tolist(), self.ev.tolist(), self.sim.tolist(), self.birth.tolist()):
            if not (0 <= u < self.n and 0 <= v < self.n):
                problems.append(f"edge ({u},{v}) has an invalid endpoint")
                continue
            if u == v:
                problems.append(f"self-loop at {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                problems.append(f"duplicate edge {key}")
            seen.add(key)
            if s != (self.types[u] == self.types[v]):
                problems.append(f"edge {key} class disagrees with endpoint types")
            if self.t - b < 0:
                problems.append(f"edge {key} has negative age")
            deg[u] += 1
            deg[v] += 1
            if s:
                n_sim += 1
            else:
                deg_d[u] += 1
                deg_d[v] += 1
        if n_sim != self.n_similar or self.m - n_sim != self.n_dissimilar:
            problems.append("incremental class counters disagree with edge list")
        if not np.array_equal(deg, self.deg) or not np.array_equal(deg_d, self.deg_d):
            problems.append("incremental degrees disagree with edge list")
        adj_pairs = {(min(i, j), max(i, j)) for i in range(self.n) for j in self.adj[i]}
        if adj_pairs != seen:
            problems.append("adjacency sets disagree with edge list")
        return problems


def make_types(n: int, type_ratio: float = 0.5) -> np.ndarray:
    n_a = int(round(n * type_ratio))
    types = np.ones(n, dtype=np.int8)
    types[:n_a] = 0
    return types


def init_network(n: int, seed: int, type_ratio: float = 0.5) -> NetworkState:
    """Random perfect matching: every node starts with exactly one edge."""
    if n < 4 or n % 2:
        raise ValueError(f"n must be even and >= 4, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    state = NetworkState(make_types(n, type_ratio), rng)
    perm = rng.permutation(n)
    us, vs = perm[0::2], perm[1::2]
    sims = [state._link(int(u), int(v)) for u, v in zip(us, vs)]
    state._append(us, vs, sims, Origin.PRIMARY)
    return state


def select_partner(node: int, target: EdgeClass, state: NetworkState,
                   rng: np.random.Generator | None = None) -> int | None:
    """Uniform non-neighbour of ``node`` with the type implied by ``target``, or None."""
    rng = state.rng if rng is None else rng
    want_similar = EdgeClass(target) is EdgeClass.SIMILAR
    count = state.candidate_count(node, want_similar)
    if count <= 0:
        return None
    ti = int(state.types[node])
    pool = state.pools[ti if want_similar else 1 - ti]
    nbrs = state.adj[node]
    if 2 * count < len(pool):
        cands = [j for j in pool.tolist() if j != node and j not in nbrs]
        return cands[int(rng.random() * len(cands))]
    while True:
        j = int(pool[rng.integers(len(pool))])
        if j != node and j not in nbrs:
            return j


def _draw_partners(state: NetworkState, want_sim: np.ndarray, rng) -> np.ndarray:
    """Partner per node (-1 when exhausted), drawn against the current graph.

    Nodes whose candidates fill under half their type pool draw
    ``rng.random(k)`` once (id order) and index into the sorted candidate
    list. The rest use rejection rounds: one vector ``rng.integers`` call per
    round over the still-pending nodes in id order.
    """
    n = state.n
    types = state.types.astype(np.int64)
    tgt = np.where(want_sim, types, 1 - types)
    pool_size = np.array([len(state.pools[0]), len(state.pools[1])])[tgt]
    linked = np.where(want_sim, state.deg - state.deg_d, state.deg_d)
    count = pool_size - linked - want_sim.astype(np.int64)
    out = np.full(n, -1, dtype=np.int64)

    enum_nodes = np.flatnonzero((count > 0) & (2 * count < pool_size))
    if enum_nodes.size:
        v = rng.random(enum_nodes.size)
        for i, vi in zip(enum_nodes.tolist(), v.tolist()):
            nbrs = state.adj[i]
            cands = [j for j in state.pools[tgt[i]].tolist() if j != i and j not in nbrs]
            out[i] = cands[int(vi * len(cands))]

    pending = np.flatnonzero((count > 0) & (2 * count >= pool_size))
    pools = state.pools
    while pending.size:
        idx = rng.integers(0, pool_size[pending])
        still = []
        for i, k in zip(pending.tolist(), idx.tolist()):
            j = int(pools[tgt[i]][k])
            if j != i and j not in state.adj[i]:
                out[i] = j
            else:
                still.append(i)
        pending = np.asarray(still, dtype=np.int64)
    return out


class _Tables:
    """Survival probabilities per edge kernel, grown on demand."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.size = -1
        self.rows = None
        self._grow(max(cfg.horizon, 1))

    def _grow(self, max_age: int):
        ks = self.cfg.kernels
        mode = self.cfg.decay_mode
        self.rows = np.vstack([
            survival_table(ks.k_s, max_age, mode),
            survival_table(ks.k_d, max_age, mode),
            survival_table(ks.k_b, max_age, mode),
            ks.k_b.table(max_age),
        ])
        self.size = max_age

    def get(self, max_age: int) -> np.ndarray:
        if max_age > self.size:
            self._grow(max(max_age, 2 * self.size))
        return self.rows


def abm_step(state: NetworkState, cfg: SimConfig, tables: _Tables | None = None) -> NetworkState:
    """Advance the network one step in place (and return it)."""
    tables = _Tables(cfg) if tables is None else tables
    rng = state.rng
    n = state.n
    stats = StepStats(t=state.t + 1)
    state.t += 1
    now = state.t

    # 1. formation against the start-of-step snapshot
    deg = state.deg
    x = np.where(deg > 0, state.deg_d / np.maximum(deg, 1), 0.5)
    p = np.asarray(cfg.f(x), dtype=float)
    want_sim = rng.random(n) < p
    state.last_formation = (x, want_sim)
    stats.similar_draws = int(want_sim.sum())
    stats.expected_similar = float(p.sum())
    stats.var_similar = float((p * (1.0 - p)).sum())
    partner = _draw_partners(state, want_sim, rng)
    stats.exhausted = int(np.count_nonzero(partner < 0))
    us, vs, sims = [], [], []
    committed = np.full(n, -1, dtype=np.int64)
    for i, j in enumerate(partner.tolist()):
        if j < 0:
            continue
        if j in state.adj[i]:
            stats.collisions += 1
            continue
        s = state._link(i, j)
        us.append(i)
        vs.append(j)
        sims.append(s)
        committed[i] = j
        if s:
            stats.primary_similar += 1
        else:
            stats.primary_dissimilar += 1
    state._append(us, vs, sims, Origin.PRIMARY)

    # 2. weak ties through the new primary partner
    if cfg.mode is Mode.WEAK_TIES:
        v = rng.random(n)
        strict = cfg.weak_rule is WeakTieRule.STRICT_DISSIMILAR
        picks = []
        for i in np.flatnonzero(committed >= 0).tolist():
            j = int(committed[i])
            nbrs = state.adj[i]
            cands = [k for k in state.adj[j] if k != i and k not in nbrs]
            if strict:
                cands = [k for k in cands if state.types[k] != state.types[i]]
            if not cands:
                continue
            cands.sort()
            picks.append((i, cands[int(v[i] * len(cands))]))
        us, vs, sims = [], [], []
        for i, k in picks:
            if k in state.adj[i]:
                stats.collisions += 1
                continue
            us.append(i)
            vs.append(k)
            sims.append(state._link(i, k))
        stats.secondary = len(us)
        state._append(us, vs, sims, Origin.SECONDARY)

    rows = tables.get(now)

    # 3. algorithmic rewiring of aged similar edges
    stats.edges_before_rewire = state.m
    if cfg.mode is Mode.BIAS and cfg.phi > 0.0 and state.m:
        ages = now - state.birth
        u = rng.random(state.m)
        prob = cfg.phi * (1.0 - rows[3][ages])
        hit = np.flatnonzero(state.sim & (ages >= 1) & (u < prob))
        for e in hit.tolist():
            near, far = int(state.eu[e]), int(state.ev[e])
            w = select_partner(near, EdgeClass.DISSIMILAR, state, rng)
            if w is None:
                stats.rewire_skipped += 1
                continue
            state._unlink(near, far)
            state._link(near, w)
            state.ev[e] = w
            state.birth[e] = now
            state.origin[e] = int(Origin.REWIRED)
            state.sim[e] = False
            stats.rewired += 1

    stats.edges_after_rewire = state.m

    # 4. decay of aged edges
    if state.m:
        ages = now - state.birth
        kernel = np.where(state.sim, 0, np.where(state.origin == int(Origin.REWIRED), 2, 1))
        surv = rows[kernel, ages]
        u = rng.random(state.m)
        keep = (ages == 0) | (u < surv)
        gone = np.flatnonzero(~keep)
        for e in gone.tolist():
            state._unlink(int(state.eu[e]), int(state.ev[e]))
        stats.decayed = len(gone)
        if len(gone):
            state.eu = state.eu[keep]
            state.ev = state.ev[keep]
            state.birth = state.birth[keep]
            state.origin = state.origin[keep]
            state.sim = state.sim[keep]

    stats.skipped = stats.exhausted + stats.collisions
    state.last_stats = stats
    return state


@dataclass
class ReplicaResult:
    series: MetricSeries
    stats: list[StepStats] = field(default_factory=list)


def _x_hat(state: NetworkState) -> float:
    total = state.n_similar + state.n_dissimilar
    return state.n_dissimilar / total if total else 0.0


def run_replica(cfg: SimConfig, replica: int, check: bool = False) -> ReplicaResult:
    """One replica with seed ``cfg.replica_seed(replica)``; rows for t = 0..horizon."""
    state = init_network(cfg.n, cfg.replica_seed(replica), cfg.type_ratio)
    tables = _Tables(cfg)
    T = cfg.horizon
    t = np.arange(T + 1)
    xh = np.empty(T + 1)
    md = np.empty(T + 1)
    ns = np.empty(T + 1, dtype=np.int64)
    nd = np.empty(T + 1, dtype=np.int64)
    sk = np.zeros(T + 1, dtype=np.int64)
    rw = np.zeros(T + 1, dtype=np.int64)
    stats = []

    def record(k):
        xh[k] = _x_hat(state)
        md[k] = 2.0 * state.m / state.n
        ns[k] = state.n_similar
        nd[k] = state.n_dissimilar

    record(0)
    for k in range(1, T + 1):
        abm_step(state, cfg, tables)
        if check:
            problems = state.check_integrity()
            if problems:
                raise AssertionError(f"replica {replica} step {k}: {problems[:3]}")
        record(k)
        sk[k] = state.last_stats.skipped
        rw[k] = state.last_stats.rewired
        stats.append(state.last_stats)
    series = MetricSeries(t, xh, md, ns, nd, provenance=replica, skipped=sk, rewired=rw)
    return ReplicaResult(series, stats)


def _replica_job(args):
    cfg, r, check = args
    return run_replica(cfg, r, check)


def run_abm(cfg: SimConfig, workers: int = 1, check: bool = False) -> list[ReplicaResult]:
    """All replicas of ``cfg``, ordered by replica index regardless of scheduling."""
    jobs = [(cfg, r, check) for r in range(cfg.replicas)]
    if workers <= 1 or len(jobs) == 1:
        return [_replica_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replica_job, jobs))
