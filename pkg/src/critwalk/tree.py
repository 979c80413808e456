"""Survival-conditioned percolated Galton-Watson trees, grown lazily.

The infinite cluster is built as a backbone (vertices with an infinite line
of descent, offspring PGF ``f̂``) decorated with finite bushes: every backbone
vertex with ``δ`` backbone children gets ``U`` extra edges, each leading to an
independent ``f*``-tree. Backbone vertices are expanded only when needed;
bushes are generated whole when their anchor is first reached.

``rejection_sample_tree`` and ``generation_sizes_by_rejection`` build the
same law the slow way (plain percolated GW trees, discarding the ones that
die out) and serve as the oracle for the decomposition.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend, rng
from .analytics import AnalyticProfile, AnalyticsError, trap_count_law
from .embedding import StepLaw

BACKBONE, TRAP = 1, 0
DEFAULT_TRAP_CAP = 10_000_000

TrapOverflow = _backend.TrapOverflow
KernelError = _backend.KernelError


def level_length(eps: float, L: float) -> int:
    """``floor(L / eps)``, robust to the rounding in ``p - p_c`` (at least 1)."""
    if eps <= 0:
        raise AnalyticsError("levels are defined only above criticality")
    return max(1, math.floor(L / eps + 1e-9))


def _cdf(weights) -> np.ndarray:
    c = np.cumsum(np.asarray(weights, dtype=np.float64))
    c[-1] = 1.0  # catch-all for the rounding in the last partial sum
    return c


@functools.lru_cache(maxsize=64)
def sampling_tables(prof: AnalyticProfile) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse-CDF tables for ``f̂``, ``f*`` and the bush-count law (one row per ``δ``)."""
    fhat, fstar = np.asarray(prof.fhat), np.asarray(prof.fstar)
    if fhat.size == 0:
        raise AnalyticsError("backbone undefined at criticality (p <= p_c)")
    n = prof.percolated.delta_max
    ulaw = np.zeros((n + 1, n + 1))
    for delta in range(n + 1):
        row = np.zeros(n + 1)
        try:
            probs = trap_count_law(prof, delta).probs
        except AnalyticsError:
            probs = (1.0,)  # unreachable δ; any valid row will do
        row[: len(probs)] = probs
        ulaw[delta] = _cdf(row)
    out = (_cdf(fhat), _cdf(fstar), ulaw)
    for a in out:
        a.flags.writeable = False  # shared through the cache
    return out


@dataclass(frozen=True)
class Vertex:
    id: int
    parent: int | None
    depth: int
    is_backbone: bool
    backbone_children: int | None
    trap_root_of: int | None
    position: tuple[int, ...]


@dataclass(frozen=True)
class TrapSummary:
    """The trap at a backbone vertex: the vertex itself plus its bushes."""

    trap_id: int
    root_backbone_vertex: int
    total_size: int
    depth: int
    u_count: int


class LazyTree:
    """Lazily grown infinite cluster for one replica.

    Single-writer: exactly one walk may run on a tree (see ``walker.run``).
    """

    def __init__(self, prof: AnalyticProfile, L: float = 1.0, step_law: StepLaw | None = None,
                 master_seed: int = 0, replica: int = 0, trap_cap: int = DEFAULT_TRAP_CAP,
                 backend: str | None = None):
        if not prof.supercritical:
            raise AnalyticsError(f"p={prof.p} is not above p_c={prof.p_c}")
        self.profile = prof
        self.L = float(L)
        self.level_len = level_length(prof.eps, L)
        self.step_law = step_law or StepLaw("srw", 1)
        self.master_seed = int(master_seed)
        self.replica = int(replica)
        self.kernel = _backend.get(backend)
        fh, fs, ul = sampling_tables(prof)
        self.arena = self.kernel.Arena(
            fh, fs, ul, self.step_law.d, self.step_law.family_code,
            rng.derive_key(master_seed, replica, rng.TREE),
            rng.derive_key(master_seed, replica, rng.EMBED),
            int(trap_cap),
        )
        self.walked = False

    @property
    def n_vertices(self) -> int:
        return self.arena.n_vertices

    def _get(self, name: str, v: int) -> int:
        return int(self.arena.get(name, v))

    def is_backbone(self, v: int) -> bool:
        return self._get("kind", v) == BACKBONE

    def depth(self, v: int) -> int:
        return self._get("depth", v)

    def parent(self, v: int) -> int:
        return self._get("parent", v)

    def position(self, v: int) -> tuple[int, ...]:
        return tuple(int(x) for x in self.arena.position(v))

    def backbone_children(self, v: int) -> list[int]:
        """Backbone children of ``v``, sampling them first if necessary."""
        if self._get("bb_n", v) < 0:
            self.grow_backbone_child_count(v)
        first, k = self._get("bb_first", v), self._get("bb_n", v)
        return list(range(first, first + k))

    def children(self, v: int) -> list[int]:
        """All children (backbone first, then bush roots / trap offspring)."""
        self.arena.ready(v)
        out = self.backbone_children(v) if self.is_backbone(v) else []
        first, k = self._get("tr_first", v), self._get("tr_n", v)
        return out + list(range(first, first + k))

    def grow_backbone_child_count(self, v: int) -> int:
        """Draw the number of backbone children of ``v`` from ``f̂`` and create them."""
        return int(self.arena.expand_backbone(v))

    def attach_traps(self, v: int) -> TrapSummary:
        """Hang the bushes on backbone vertex ``v`` (its children must be sampled)."""
        self.arena.attach_traps(v)
        return self.trap_summary(v)

    def trap_summary(self, v: int) -> TrapSummary:
        size = self._get("trap_size", v)
        start = self._get("tr_first", v)
        # bush vertices occupy a contiguous id range in BFS order, so the last is deepest
        deepest = self.depth(start + size - 1) - self.depth(v) if size else 0
        return TrapSummary(v, v, size + 1, deepest, self._get("tr_n", v))

    def vertex(self, v: int) -> Vertex:
        anchor = None
        if not self.is_backbone(v):
            w = v
            while not self.is_backbone(w):
                w = self.parent(w)
            anchor = w
        p = self.parent(v)
        bb = self._get("bb_n", v)
        return Vertex(v, None if p < 0 else p, self.depth(v), self.is_backbone(v),
                      None if bb < 0 else bb, anchor, self.position(v))

    def level_of(self, v: int) -> int | None:
        """Index ``m`` of the L-level containing ``v``, or None."""
        if not self.is_backbone(v):
            return None
        m, r = divmod(self.depth(v), self.level_len)
        return m if r == 0 else None

    def members_of_level(self, m: int, limit: int = 1_000_000) -> list[int]:
        """All backbone vertices at depth ``m * level_len`` (materialising them)."""
        target = m * self.level_len
        out, stack = [], [0]
        while stack:
            w = stack.pop()
            if self.depth(w) == target:
                out.append(w)
                if len(out) > limit:
                    raise KernelError(f"level {m} has more than {limit} members")
                continue
            stack.extend(reversed(self.backbone_children(w)))
        return sorted(out)

    def level_one_size(self, cap: int = 2) -> int:
        """``|G_[1]|`` of the root, counting no further than ``cap``."""
        count, stack = 0, [0]
        while stack and count < cap:
            w = stack.pop()
            if self.depth(w) == self.level_len:
                count += 1
                continue
            stack.extend(self.backbone_children(w))
        return count

    def snapshot(self, limit: int = 100_000) -> list[dict]:
        """Rows ``(id, parent, depth, is_backbone)`` of the materialised vertices."""
        n = min(self.n_vertices, limit)
        arr = self.arena.arrays()
        return [{"id": i, "parent": int(arr["parent"][i]), "depth": int(arr["depth"][i]),
                 "is_backbone": int(arr["kind"][i])} for i in range(n)]

    def snapshot_csv(self, limit: int = 100_000) -> str:
        lines = ["id,parent,depth,is_backbone"]
        lines += [f"{r['id']},{r['parent']},{r['depth']},{r['is_backbone']}" for r in self.snapshot(limit)]
        return "\n".join(lines) + "\n"

    def snapshot_json(self, limit: int = 100_000) -> str:
        return json.dumps(self.snapshot(limit))


def generation_sizes_lazy(prof: AnalyticProfile, n_samples: int, master_seed: int = 0,
                          depth: int = 2, backend: str | None = None) -> np.ndarray:
    """Generation sizes ``Z_1..Z_depth`` of independent trees from the backbone+bush construction."""
    out = np.zeros((n_samples, depth), dtype=np.int64)
    for i in range(n_samples):
        t = LazyTree(prof, master_seed=master_seed, replica=i, backend=backend)
        gen = [0]
        for k in range(depth):
            gen = [c for v in gen for c in t.children(v)]
            out[i, k] = len(gen)
    return out


@dataclass
class FiniteTree:
    """Explicit finite tree: ``parent[i]`` and ``depth[i]`` per vertex, root 0."""

    parent: list[int] = field(default_factory=lambda: [-1])
    depth: list[int] = field(default_factory=lambda: [0])

    def generation_sizes(self) -> np.ndarray:
        return np.bincount(np.asarray(self.depth))


def rejection_sample_tree(prof: AnalyticProfile, depth_cap: int, gen: np.random.Generator,
                          max_vertices: int = 1_000_000) -> FiniteTree | None:
    """A percolated GW tree grown to ``depth_cap``; None (rejected) if it dies first."""
    if depth_cap < 1:
        raise ValueError("depth_cap must be at least 1")
    probs = np.asarray(prof.percolated.probs)
    t = FiniteTree()
    frontier = [0]
    for d in range(1, depth_cap + 1):
        counts = gen.choice(len(probs), size=len(frontier), p=probs)
        nxt = []
        for v, k in zip(frontier, counts):
            for _ in range(int(k)):
                t.parent.append(v)
                t.depth.append(d)
                nxt.append(len(t.parent) - 1)
        if not nxt:
            return None
        if len(t.parent) > max_vertices:
            raise KernelError(f"rejection tree exceeded {max_vertices} vertices")
        frontier = nxt
    return t


def generation_sizes_by_rejection(prof: AnalyticProfile, n_samples: int, gen: np.random.Generator,
                                  depth_cap: int = 60, keep: int = 2, pop_cap: int = 2000,
                                  batch: int = 200_000, max_attempts: int | None = None) -> tuple[np.ndarray, float]:
    """``(Z_1..Z_keep)`` of plain percolated GW trees that survive to ``depth_cap``.

    Vectorised over trees: a generation of size ``z`` has ``multinomial(z, p)``
    offspring counts. Once a population exceeds ``pop_cap`` it is treated as
    surviving (its extinction probability is at most ``q**pop_cap``).
    Returns the accepted samples and the acceptance rate over all attempts;
    with ``max_attempts`` set it may stop early with fewer samples.
    """
    probs = np.asarray(prof.percolated.probs)
    ks = np.arange(len(probs))
    kept: list[np.ndarray] = []
    n_kept = attempts = 0
    while n_kept < n_samples and (max_attempts is None or attempts < max_attempts):
        z = np.ones(batch, dtype=np.int64)
        sizes = np.zeros((batch, keep), dtype=np.int64)
        for d in range(1, depth_cap + 1):
            live = (z > 0) & (z <= pop_cap)
            z[live] = gen.multinomial(z[live], probs) @ ks
            if d <= keep:
                sizes[:, d - 1] = z
        ok = z > 0
        attempts += batch
        kept.append(sizes[ok])
        n_kept += int(ok.sum())
    if not kept:
        return np.zeros((0, keep), dtype=np.int64), 0.0
    return np.concatenate(kept)[:n_samples], n_kept / attempts
