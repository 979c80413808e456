"""Pure-Python reference kernel.

Mirrors ``_ckernel.pyx`` operation for operation (same draw counters, same
vertex numbering, same DFS order) so that both backends yield identical
trees and walks. Used when the compiled extension is unavailable and as the
oracle in the backend-equivalence tests.
"""

from __future__ import annotations

import numpy as np

from .rng import splitmix64

BACKBONE = 1
TRAP = 0

_M64 = (1 << 64) - 1
_TWO_M53 = 1.0 / (1 << 53)


class KernelError(RuntimeError):
    pass


class TrapOverflow(KernelError):
    """A single trap outgrew the configured vertex cap."""

    def __init__(self, vertex: int, partial_size: int, cap: int):
        super().__init__(
            f"trap at vertex {vertex} exceeded cap {cap} (partial size {partial_size}); "
            "p is too close to p_c for this cap"
        )
        self.vertex = vertex
        self.partial_size = partial_size
        self.cap = cap


def _uniform(key: int, ctr: int) -> float:
    return (splitmix64(key, ctr) >> 11) * _TWO_M53


def _sample(cdf, u: float) -> int:
    k = 0
    last = len(cdf) - 1
    while k < last and u >= cdf[k]:
        k += 1
    return k


class Arena:
    """Append-only vertex store of a lazily grown survival-conditioned tree.

    Children of a vertex occupy contiguous id ranges: backbone children at
    ``bb_first[v] : bb_first[v] + bb_n[v]`` and bush roots (for backbone
    vertices) or offspring (for trap vertices) at ``tr_first[v] : + tr_n[v]``.
    ``bb_n == -1`` / ``tr_n == -1`` mean "not sampled yet".
    """

    backend = "python"

    def __init__(self, fhat_cdf, fstar_cdf, ulaw_cdf, d: int, family: int,
                 tree_key: int, embed_key: int, trap_cap: int):
        self.fhat_cdf = [float(x) for x in fhat_cdf]
        self.fstar_cdf = [float(x) for x in fstar_cdf]
        self.ulaw_cdf = [[float(x) for x in row] for row in np.asarray(ulaw_cdf)]
        self.d = int(d)
        self.family = int(family)
        self.tree_key = int(tree_key) & _M64
        self.embed_key = int(embed_key) & _M64
        self.trap_cap = int(trap_cap)
        self.parent: list[int] = []
        self.depth: list[int] = []
        self.kind: list[int] = []
        self.bb_first: list[int] = []
        self.bb_n: list[int] = []
        self.tr_first: list[int] = []
        self.tr_n: list[int] = []
        self.pos: list[int] = []
        self.first_visit: list[int] = []
        self.last_visit: list[int] = []
        self.trap_size: list[int] = []
        self._new_vertex(-1, BACKBONE)

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    def _new_vertex(self, parent: int, kind: int) -> int:
        v = len(self.parent)
        d = self.d
        self.parent.append(parent)
        self.kind.append(kind)
        self.bb_first.append(-1)
        self.bb_n.append(-1 if kind == BACKBONE else 0)
        self.tr_first.append(-1)
        self.tr_n.append(-1)
        self.first_visit.append(-1)
        self.last_visit.append(-1)
        self.trap_size.append(0)
        if parent < 0:
            self.depth.append(0)
            self.pos.extend([0] * d)
            return v
        self.depth.append(self.depth[parent] + 1)
        base = parent * d
        step = [0] * d
        if self.family == 0:
            r = ((splitmix64(self.embed_key, v * d) >> 32) * (2 * d)) >> 32
            step[r >> 1] = 1 if (r & 1) == 0 else -1
        else:
            for i in range(d):
                step[i] = (((splitmix64(self.embed_key, v * d + i) >> 32) * 3) >> 32) - 1
        self.pos.extend(self.pos[base + i] + step[i] for i in range(d))
        return v

    def expand_backbone(self, v: int) -> int:
        if self.kind[v] != BACKBONE:
            raise KernelError(f"vertex {v} is not on the backbone")
        if self.bb_n[v] >= 0:
            raise KernelError(f"backbone vertex {v} already expanded")
        k = _sample(self.fhat_cdf, _uniform(self.tree_key, 4 * v))
        first = len(self.parent)
        for _ in range(k):
            self._new_vertex(v, BACKBONE)
        self.bb_first[v] = first
        self.bb_n[v] = k
        return k

    def attach_traps(self, v: int) -> int:
        """Hang the bushes on backbone vertex ``v``; returns the number of trap vertices."""
        if self.kind[v] != BACKBONE or self.bb_n[v] < 0:
            raise KernelError(f"vertex {v} needs its backbone children before traps")
        if self.tr_n[v] >= 0:
            raise KernelError(f"traps at vertex {v} already attached")
        row = self.ulaw_cdf[self.bb_n[v]]
        u = _sample(row, _uniform(self.tree_key, 4 * v + 1))
        start = len(self.parent)
        for _ in range(u):
            self._new_vertex(v, TRAP)
        self.tr_first[v] = start
        self.tr_n[v] = u
        i = start
        fstar = self.fstar_cdf
        while i < len(self.parent):
            k = _sample(fstar, _uniform(self.tree_key, 4 * i))
            self.tr_first[i] = len(self.parent)
            self.tr_n[i] = k
            for _ in range(k):
                self._new_vertex(i, TRAP)
            if len(self.parent) - start > self.trap_cap:
                raise TrapOverflow(v, len(self.parent) - start, self.trap_cap)
            i += 1
        self.trap_size[v] = len(self.parent) - start
        return self.trap_size[v]

    def ready(self, v: int) -> None:
        if self.kind[v] == BACKBONE:
            if self.bb_n[v] < 0:
                self.expand_backbone(v)
            if self.tr_n[v] < 0:
                self.attach_traps(v)

    def degree(self, v: int) -> int:
        return (self.parent[v] >= 0) + max(self.bb_n[v], 0) + self.tr_n[v]

    def neighbor(self, v: int, i: int) -> int:
        if self.parent[v] >= 0:
            if i == 0:
                return self.parent[v]
            i -= 1
        nb = max(self.bb_n[v], 0)
        if i < nb:
            return self.bb_first[v] + i
        return self.tr_first[v] + (i - nb)

    def sib_flag(self, u: int, level_len: int) -> tuple[int, int]:
        """0 if ``u`` is the only backbone vertex one level below its L-ancestor, else 1."""
        anc = u
        for _ in range(level_len):
            anc = self.parent[anc]
        target = self.depth[anc] + level_len
        count = 0
        stack = [anc]
        while stack:
            w = stack.pop()
            if self.depth[w] == target:
                count += 1
                if count >= 2:
                    break
                continue
            if self.bb_n[w] < 0:
                self.expand_backbone(w)
            first = self.bb_first[w]
            stack.extend(range(first, first + self.bb_n[w]))
        return (0 if count == 1 else 1), anc

    def get(self, name: str, v: int) -> int:
        if not 0 <= v < len(self.parent):
            raise IndexError(f"vertex {v} not materialised")
        return getattr(self, name)[v]

    def position(self, v: int) -> tuple[int, ...]:
        return tuple(self.pos[v * self.d:(v + 1) * self.d])

    def arrays(self) -> dict[str, np.ndarray]:
        out = {name: np.asarray(getattr(self, name), dtype=np.int64)
               for name in ("parent", "bb_first", "bb_n", "tr_first", "tr_n",
                            "first_visit", "last_visit", "trap_size")}
        out["depth"] = np.asarray(self.depth, dtype=np.int32)
        out["kind"] = np.asarray(self.kind, dtype=np.int8)
        out["pos"] = np.asarray(self.pos, dtype=np.int64).reshape(-1, self.d)
        return out


def walk(arena: Arena, walk_key: int, horizon: int, level_len: int,
         store_depths: bool = True, stride: int = 0, snap_times=None) -> dict:
    """Run ``horizon`` simple-random-walk steps from the root, growing the tree on demand."""
    walk_key &= _M64
    snaps = [] if snap_times is None else [int(t) for t in snap_times]
    snap_out = [-1] * len(snaps)
    si = 0
    depths = np.zeros(horizon + 1, dtype=np.int32) if store_depths else None
    stride_out = []
    eta_t, eta_v, eta_anc, sib = [0], [0], [-1], [-1]
    parent, depth, kind, bb_n = arena.parent, arena.depth, arena.kind, arena.bb_n
    bb_first, tr_first, tr_n = arena.bb_first, arena.tr_first, arena.tr_n
    first_visit, last_visit = arena.first_visit, arena.last_visit

    v = 0
    arena.ready(0)
    if first_visit[0] < 0:
        first_visit[0] = 0
    last_visit[0] = 0
    while si < len(snaps) and snaps[si] == 0:
        snap_out[si] = 0
        si += 1
    if stride > 0:
        stride_out.append(0)
    next_level_depth = level_len
    for n in range(1, horizon + 1):
        hp = 1 if parent[v] >= 0 else 0
        nb = bb_n[v] if bb_n[v] > 0 else 0
        deg = hp + nb + tr_n[v]
        i = ((splitmix64(walk_key, n) >> 32) * deg) >> 32
        if hp:
            if i == 0:
                w = parent[v]
            else:
                i -= 1
                w = bb_first[v] + i if i < nb else tr_first[v] + (i - nb)
        else:
            w = bb_first[v] + i if i < nb else tr_first[v] + (i - nb)
        if first_visit[w] < 0:
            first_visit[w] = n
            if kind[w] == BACKBONE:
                arena.ready(w)
                if depth[w] == next_level_depth:
                    flag, anc = arena.sib_flag(w, level_len)
                    eta_t.append(n)
                    eta_v.append(w)
                    eta_anc.append(anc)
                    sib.append(flag)
                    next_level_depth += level_len
        last_visit[w] = n
        v = w
        if depths is not None:
            depths[n] = depth[w]
        if stride > 0 and n % stride == 0:
            stride_out.append(w)
        while si < len(snaps) and snaps[si] == n:
            snap_out[si] = w
            si += 1
    return {
        "depths": depths,
        "eta_t": np.asarray(eta_t, dtype=np.int64),
        "eta_v": np.asarray(eta_v, dtype=np.int64),
        "eta_anc": np.asarray(eta_anc, dtype=np.int64),
        "sib": np.asarray(sib, dtype=np.int8),
        "stride_v": np.asarray(stride_out, dtype=np.int64),
        "snap_v": np.asarray(snap_out, dtype=np.int64),
        "final_vertex": v,
    }


def scan_regenerations(depths, eta_t, sib, level_len: int):
    """Regeneration times from the stored depth path and L-level first-hit data.

    Returns ``(taus, levels)``. Returns to the previous L-generation are
    detected up to the end of ``depths`` only; the caller censors the tail.
    """
    depths = np.asarray(depths)
    horizon = len(depths) - 1
    # suffix minimum answers "does the path ever reach depth <= t after n" in O(1)
    sufmin = np.minimum.accumulate(depths[::-1])[::-1]
    nlev = len(eta_t)
    taus, levels = [], []
    m_lo = 1
    while True:
        m = m_lo
        while m < nlev and sib[m] != 0:
            m += 1
        if m >= nlev:
            break
        s = int(eta_t[m])
        target = (m - 1) * level_len
        if s >= horizon or sufmin[s + 1] > target:
            taus.append(s)
            levels.append(m)
            m_lo = m + 1
            continue
        r = s + 1
        while depths[r] != target:
            r += 1
        n_hi = m
        while n_hi + 1 < nlev and eta_t[n_hi + 1] < r:
            n_hi += 1
        m_lo = n_hi + 2
    return np.asarray(taus, dtype=np.int64), np.asarray(levels, dtype=np.int64)


def trap_excursion(arena: Arena, v: int, key: int, ctr0: int, max_steps: int) -> int:
    """Return time to ``v`` of a walk started at ``v`` and confined to its trap; 0 if no trap."""
    if arena.tr_n[v] <= 0:
        return 0
    key &= _M64
    n = 0
    w = v
    while True:
        if w == v:
            deg = arena.tr_n[v]
            i = ((splitmix64(key, ctr0 + n) >> 32) * deg) >> 32
            w = arena.tr_first[v] + i
        else:
            deg = 1 + arena.tr_n[w]
            i = ((splitmix64(key, ctr0 + n) >> 32) * deg) >> 32
            w = arena.parent[w] if i == 0 else arena.tr_first[w] + i - 1
        n += 1
        if w == v:
            return n
        if n >= max_steps:
            return -n
