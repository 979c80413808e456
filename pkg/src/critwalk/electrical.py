"""Unit-conductance electrical networks on finite trees.

Main algorithms are tree recursions (series/parallel reduction, Thevenin
reduction, subtree sizes). Each has a dense linear-algebra oracle
(``oracle_*``) used to validate small instances.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend, rng
from .analytics import AnalyticProfile

ORACLE_MAX_STATES = 2000


class NetworkError(ValueError):
    pass


@dataclass
class FiniteNetwork:
    """A finite tree with unit edge conductances, plus an optional source and target set."""

    n: int
    edges: list[tuple[int, int]]
    source: int | None = None
    targets: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise NetworkError("network needs at least one vertex")
        self.adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n) or u == v:
                raise NetworkError(f"bad edge ({u}, {v})")
            self.adj[u].append(v)
            self.adj[v].append(u)
        if len(self.edges) != self.n - 1 or len(self._order(0)[0]) != self.n:
            raise NetworkError("edges do not form a connected tree")
        self.targets = frozenset(self.targets)
        if self.source is not None and self.source in self.targets:
            raise NetworkError("source must not be a target")

    def _order(self, root: int) -> tuple[list[int], list[int]]:
        """BFS order from ``root`` and parent pointers (-1 at the root)."""
        parent = [-2] * self.n
        parent[root] = -1
        order = [root]
        for u in order:
            for w in self.adj[u]:
                if parent[w] == -2:
                    parent[w] = u
                    order.append(w)
        return order, parent

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    def distances(self, v: int) -> np.ndarray:
        order, parent = self._order(v)
        d = np.zeros(self.n, dtype=np.int64)
        for u in order[1:]:
            d[u] = d[parent[u]] + 1
        return d

    @classmethod
    def from_parents(cls, parent, source=None, targets=()) -> "FiniteNetwork":
        edges = [(int(p), i) for i, p in enumerate(parent) if p >= 0]
        return cls(len(parent), edges, source, frozenset(targets))

    @classmethod
    def line(cls, n_edges: int, **kw) -> "FiniteNetwork":
        return cls(n_edges + 1, [(i, i + 1) for i in range(n_edges)], **kw)

    @classmethod
    def star(cls, leaves: int, **kw) -> "FiniteNetwork":
        return cls(leaves + 1, [(0, i) for i in range(1, leaves + 1)], **kw)

    @classmethod
    def random(cls, n: int, gen: np.random.Generator, n_targets: int | None = None) -> "FiniteNetwork":
        """Random recursive tree on ``n >= 2`` vertices with a random source and target set."""
        parent = [-1] + [int(gen.integers(0, i)) for i in range(1, n)]
        source = int(gen.integers(0, n))
        others = [v for v in range(n) if v != source]
        k = n_targets if n_targets is not None else int(gen.integers(1, min(5, len(others)) + 1))
        targets = gen.choice(others, size=k, replace=False)
        return cls.from_parents(parent, source, {int(t) for t in targets})

    @classmethod
    def from_csv(cls, text: str, source=None, targets=()) -> "FiniteNetwork":
        """Edge list ``u,v`` per line; a non-numeric first line is taken as a header."""
        rows = [r for r in csv.reader(io.StringIO(text)) if r and r[0].strip()]
        if rows and not rows[0][0].strip().lstrip("-").isdigit():
            rows = rows[1:]
        edges = [(int(r[0]), int(r[1])) for r in rows]
        n = 1 + max((max(e) for e in edges), default=0)
        return cls(n, edges, source, frozenset(targets))

    def without_edges(self, removed) -> "FiniteNetwork":
        """The source's component after deleting ``removed`` edges, relabelled."""
        cut = {frozenset(e) for e in removed}
        keep = [e for e in self.edges if frozenset(e) not in cut]
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in keep:
            adj[u].append(v)
            adj[v].append(u)
        src = 0 if self.source is None else self.source
        seen, stack = {src}, [src]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        label = {v: i for i, v in enumerate(sorted(seen))}
        return FiniteNetwork(len(label), [(label[u], label[v]) for u, v in keep if u in seen],
                             label[src], frozenset(label[t] for t in self.targets if t in seen))


def _resolve(net: FiniteNetwork, source, targets):
    source = net.source if source is None else source
    targets = net.targets if targets is None else frozenset(targets)
    if source is None or not targets:
        raise NetworkError("need a source and a non-empty target set")
    if source in targets:
        raise NetworkError("source must not be a target")
    return source, targets


def effective_resistance(net: FiniteNetwork, source=None, targets=None) -> float:
    """Resistance between ``source`` and the (shorted) target set by series/parallel reduction."""
    source, targets = _resolve(net, source, targets)
    order, parent = net._order(source)
    # r[u]: resistance from u down to the targets inside its subtree (inf if none)
    r = [math.inf] * net.n
    for u in reversed(order):
        if u in targets:
            r[u] = 0.0
            continue
        g = math.fsum(1.0 / (1.0 + r[c]) for c in net.adj[u] if c != parent[u] and r[c] < math.inf)
        r[u] = 1.0 / g if g > 0 else math.inf
    if r[source] == math.inf:
        raise NetworkError("no target reachable from the source")
    return r[source]


def effective_conductance(net: FiniteNetwork, source=None, targets=None) -> float:
    return 1.0 / effective_resistance(net, source, targets)


def hitting_probability(net: FiniteNetwork, A, B, x: int) -> float:
    """``P_x(hit A before B)`` by Thevenin reduction of the tree rooted at ``x``."""
    A, B = frozenset(A), frozenset(B)
    if A & B:
        raise NetworkError("A and B overlap")
    if x in A or x in B:
        raise NetworkError("start vertex must lie outside A and B")
    order, parent = net._order(x)
    # (g, vlt): conductance from u to the boundary in its subtree, and the Thevenin voltage
    g = [0.0] * net.n
    vlt = [0.0] * net.n
    fixed = [False] * net.n
    for u in reversed(order):
        if u in A or u in B:
            fixed[u], vlt[u] = True, 1.0 if u in A else 0.0
            continue
        gs, num = [], []
        for c in net.adj[u]:
            if c == parent[u]:
                continue
            gc = 1.0 if fixed[c] else g[c] / (1.0 + g[c])
            if gc > 0:
                gs.append(gc)
                num.append(gc * vlt[c])
        g[u] = math.fsum(gs)
        vlt[u] = math.fsum(num) / g[u] if g[u] > 0 else 0.0
    if g[x] == 0:
        raise NetworkError("neither A nor B is reachable from the start vertex")
    return vlt[x]


def separated(net: FiniteNetwork, A, B, x: int) -> bool:
    """True if A and B sit in different components of the tree with ``x`` removed."""
    order, parent = net._order(x)
    branch = [-1] * net.n
    for u in order[1:]:
        branch[u] = u if parent[u] == x else branch[parent[u]]
    return not ({branch[a] for a in A} & {branch[b] for b in B})


def hitting_probability_conductance(net: FiniteNetwork, A, B, x: int) -> float:
    """``C(x, A) / (C(x, A) + C(x, B))``; exact when no excursion from ``x`` can reach both sets."""
    if not separated(net, A, B, x):
        raise NetworkError("closed form needs A and B in different branches at x")
    ca = effective_conductance(net, x, A)
    cb = effective_conductance(net, x, B)
    return ca / (ca + cb)


def subtree_sizes(net: FiniteNetwork, root: int) -> tuple[np.ndarray, list[int], list[int]]:
    order, parent = net._order(root)
    size = np.ones(net.n, dtype=np.int64)
    for u in reversed(order[1:]):
        size[parent[u]] += size[u]
    return size, order, parent


def hitting_times_to(net: FiniteNetwork, v: int) -> np.ndarray:
    """``E^w[H_v]`` for every ``w``: crossing into the parent from ``c`` takes ``2|T_c| - 1`` on average."""
    size, order, parent = subtree_sizes(net, v)
    h = np.zeros(net.n)
    for u in order[1:]:
        h[u] = h[parent[u]] + 2 * size[u] - 1
    return h


def expected_return_time(net: FiniteNetwork, v: int) -> float:
    """``E^v[H_v^+] = 1 / π(v) = 2(|T| - 1) / deg(v)``."""
    if net.n == 1:
        raise NetworkError("a single vertex has no return time")
    return 2.0 * (net.n - 1) / net.degree(v)


def second_moment_return_time(net: FiniteNetwork, v: int) -> float:
    """``E^v[(H_v^+)^2] = π(v)^{-1} (2 Σ_w π(w) E^w[H_v] + 1)``."""
    h = hitting_times_to(net, v)
    pi = np.array([net.degree(w) for w in range(net.n)], dtype=np.float64) / (2.0 * (net.n - 1))
    return (2.0 * math.fsum(pi * h) + 1.0) / pi[v]


def commute_time(net: FiniteNetwork, v: int, w: int) -> float:
    """``E^w[H_v] + E^v[H_w] = 2(|T| - 1) d(v, w)``."""
    if v == w:
        raise NetworkError("commute time needs distinct vertices")
    return 2.0 * (net.n - 1) * float(net.distances(v)[w])


# ---------------------------------------------------------------- oracles

def _check_size(net: FiniteNetwork):
    if net.n > ORACLE_MAX_STATES:
        raise NetworkError(f"dense oracle limited to {ORACLE_MAX_STATES} states, got {net.n}")


def transition_matrix(net: FiniteNetwork) -> np.ndarray:
    _check_size(net)
    P = np.zeros((net.n, net.n))
    for u in range(net.n):
        for w in net.adj[u]:
            P[u, w] = 1.0 / net.degree(u)
    return P


def laplacian(net: FiniteNetwork) -> np.ndarray:
    _check_size(net)
    Lap = np.zeros((net.n, net.n))
    for u, v in net.edges:
        Lap[u, u] += 1
        Lap[v, v] += 1
        Lap[u, v] -= 1
        Lap[v, u] -= 1
    return Lap


def oracle_effective_resistance(net: FiniteNetwork, source=None, targets=None) -> float:
    """Ground the targets, inject unit current at the source, read off its potential."""
    source, targets = _resolve(net, source, targets)
    free = [u for u in range(net.n) if u not in targets]
    Lap = laplacian(net)[np.ix_(free, free)]
    b = np.zeros(len(free))
    b[free.index(source)] = 1.0
    return float(np.linalg.solve(Lap, b)[free.index(source)])


def oracle_hitting_probability(net: FiniteNetwork, A, B) -> np.ndarray:
    """Harmonic function equal to 1 on A and 0 on B, for every start vertex."""
    A, B = frozenset(A), frozenset(B)
    P = transition_matrix(net)
    free = [u for u in range(net.n) if u not in A and u not in B]
    h = np.zeros(net.n)
    h[list(A)] = 1.0
    M = np.eye(len(free)) - P[np.ix_(free, free)]
    rhs = P[np.ix_(free, list(A))].sum(axis=1)
    h[free] = np.linalg.solve(M, rhs)
    return h


def oracle_hitting_moments(net: FiniteNetwork, v: int) -> tuple[np.ndarray, np.ndarray]:
    """First and second moments of ``H_v`` from every start by two linear solves."""
    P = transition_matrix(net)
    free = [u for u in range(net.n) if u != v]
    Q = P[np.ix_(free, free)]
    M = np.eye(len(free)) - Q
    m1 = np.zeros(net.n)
    m2 = np.zeros(net.n)
    m1[free] = np.linalg.solve(M, np.ones(len(free)))
    # E[(1 + H)^2] = 1 + 2 E[H] + E[H^2] one step later
    m2[free] = np.linalg.solve(M, 1.0 + 2.0 * Q @ m1[free])
    return m1, m2


def oracle_return_moments(net: FiniteNetwork, v: int) -> tuple[float, float]:
    P = transition_matrix(net)
    m1, m2 = oracle_hitting_moments(net, v)
    first = 1.0 + P[v] @ m1
    second = 1.0 + 2.0 * P[v] @ m1 + P[v] @ m2
    return float(first), float(second)


def oracle_commute_time(net: FiniteNetwork, v: int, w: int) -> float:
    return float(oracle_hitting_moments(net, v)[0][w] + oracle_hitting_moments(net, w)[0][v])


# ------------------------------------------------------ infinite backbone

def truncated_resistance(tree, depth: int, max_vertices: int = 5_000_000) -> float:
    """Resistance from the root to the backbone vertices at ``depth`` (bushes are dead ends)."""
    level = [0]
    levels = [level]
    total = 1
    for _ in range(depth):
        level = [c for v in level for c in tree.backbone_children(v)]
        total += len(level)
        if total > max_vertices:
            raise NetworkError(f"backbone to depth {depth} exceeds {max_vertices} vertices")
        levels.append(level)
    r = {v: 0.0 for v in levels[-1]}
    for lev in reversed(levels[:-1]):
        for v in lev:
            kids = tree.backbone_children(v)
            r[v] = 1.0 / math.fsum(1.0 / (1.0 + r[c]) for c in kids)
    return r[0]


def infinite_resistance(tree, start_depth: int = 4, tol: float = 1e-6,
                        max_vertices: int = 5_000_000) -> tuple[float, int, bool]:
    """Doubling truncation depth until ``|R_n - R_2n| < tol``.

    Returns ``(R, depth, converged)``; stops unconverged at the vertex budget.
    """
    n = start_depth
    prev = truncated_resistance(tree, n, max_vertices)
    while True:
        try:
            cur = truncated_resistance(tree, 2 * n, max_vertices)
        except NetworkError:
            return prev, n, False
        if abs(cur - prev) < tol:
            return cur, 2 * n, True
        n, prev = 2 * n, cur


# --------------------------------------------------------------- trap time

def expected_trap_time(prof: AnalyticProfile) -> float:
    """Leading term ``2 / (1 - μ*)`` of the mean trap return time given a non-empty trap; 0 at q = 0."""
    if prof.q == 0.0:
        return 0.0
    return 2.0 / (1.0 - prof.mu_star)


def trap_time_given_size(prof: AnalyticProfile) -> float:
    """Exact ``E[H^trap | U != 0]``.

    A non-empty trap with bushes ``T_1..T_U`` has ``1 + Σ|T_i|`` vertices and
    root degree ``U``, so its mean return time is ``2 Σ|T_i| / U`` and the
    average over bushes is ``2 E|T*| = 2 / (1 - μ*)`` for every ``U``.
    """
    return expected_trap_time(prof)


def mc_trap_time(prof: AnalyticProfile, n_samples: int, master_seed: int = 0,
                 per_tree: int = 2000, max_steps: int = 10**9, backend: str | None = None) -> np.ndarray:
    """Return times of walks confined to non-empty traps met along a backbone ray.

    Backbone vertices along a ray carry independent traps, so one tree yields
    many samples; a fresh tree is started every ``per_tree`` samples.
    """
    from .tree import LazyTree

    if prof.q == 0.0:
        return np.zeros(n_samples)
    kernel = _backend.get(backend)
    out = np.empty(n_samples)
    i = replica = 0
    while i < n_samples:
        tree = LazyTree(prof, master_seed=master_seed, replica=replica, backend=backend)
        key = rng.derive_key(master_seed, replica, rng.AUX)
        arena, v, got = tree.arena, 0, 0
        while got < per_tree and i < n_samples:
            arena.ready(v)
            if arena.get("tr_n", v) > 0:
                t = kernel.trap_excursion(arena, v, key, got << 32, max_steps)
                if t < 0:
                    raise NetworkError(f"trap excursion exceeded {max_steps} steps")
                out[i] = t
                i += 1
                got += 1
            v = arena.get("bb_first", v)
        replica += 1
    return out
