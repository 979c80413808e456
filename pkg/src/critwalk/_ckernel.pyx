# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel: arena growth, random walk, regeneration scan.

Operation-for-operation twin of ``_kernel_py``; any change here must be
mirrored there (the equivalence tests compare both bit for bit).
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int8_t, int32_t, int64_t, uint64_t
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memset

from ._kernel_py import KernelError, TrapOverflow

cnp.import_array()

DEF BACKBONE = 1
DEF TRAP = 0
DEF ERR_NOMEM = -1
DEF ERR_OVERFLOW = -2
DEF ERR_STATE = -3


cdef inline uint64_t splitmix(uint64_t key, uint64_t ctr) noexcept nogil:
    cdef uint64_t z = key + (ctr + 1) * <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double unif(uint64_t key, uint64_t ctr) noexcept nogil:
    return <double>(splitmix(key, ctr) >> 11) * (1.0 / 9007199254740992.0)


cdef inline int64_t below(uint64_t key, uint64_t ctr, int64_t n) noexcept nogil:
    return <int64_t>(((splitmix(key, ctr) >> 32) * <uint64_t>n) >> 32)


cdef inline int sample_cdf(const double* cdf, int n, double u) noexcept nogil:
    cdef int k = 0
    while k < n - 1 and u >= cdf[k]:
        k += 1
    return k


cdef struct ArenaData:
    int64_t n
    int64_t cap
    int64_t* parent
    int32_t* depth
    int8_t* kind
    int64_t* bb_first
    int32_t* bb_n
    int64_t* tr_first
    int32_t* tr_n
    int64_t* pos
    int64_t* first_visit
    int64_t* last_visit
    int64_t* trap_size
    int d
    int family
    uint64_t tree_key
    uint64_t embed_key
    int64_t trap_cap
    double* fhat_cdf
    int n_fhat
    double* fstar_cdf
    int n_fstar
    double* ulaw_cdf
    int n_u
    int64_t* stack
    int64_t stack_cap
    int64_t overflow_size


cdef int arena_grow(ArenaData* a) noexcept nogil:
    cdef int64_t cap = a.cap * 2
    cdef void* p
    p = realloc(a.parent, cap * sizeof(int64_t))
    if p == NULL: return ERR_NOMEM
    a.parent = <int64_t*>p
    p = realloc(a.depth, cap * sizeof(int32_t))
    if p == NULL: return ERR_NOMEM
    a.depth = <int32_t*>p
    p = realloc(a.kind, cap * sizeof(int8_t))
    if p == NULL: return ERR_NOMEM
    a.kind = <int8_t*>p
    p = realloc(a.bb_first, cap * sizeof(int64_t))
    if p == NULL: return ERR_NOMEM
    a.bb_first = <int64_t*>p
    p = realloc(a.bb_n, cap * sizeof(int32_t))
    if p == NULL: return ERR_NOMEM
    a.bb_n = <int32_t*>p
    p = realloc(a.tr_first, cap * sizeof(int64_t))
    if p == NULL: return ERR_NOMEM
    a.tr_first = <int64_t*>p
    p = realloc(a.tr_n, cap * sizeof(int32_t))
    if p == NULL: return ERR_NOMEM
    a.tr_n = <int32_t*>p
    p = realloc(a.pos, cap * a.d * sizeof(int64_t))
    if p == NULL: return ERR_NOMEM
    a.pos = <int64_t*>p
    p = realloc(a.first_visit, cap * sizeof(int64_t))
    if p == NULL: return ERR_NOMEM
    a.first_visit = <int64_t*>p
    p = realloc(a.last_visit, cap * sizeof(int64_t))
    if p == NULL: return ERR_NOMEM
    a.last_visit = <int64_t*>p
    p = realloc(a.trap_size, cap * sizeof(int64_t))
    if p == NULL: return ERR_NOMEM
    a.trap_size = <int64_t*>p
    a.cap = cap
    return 0


cdef int64_t new_vertex(ArenaData* a, int64_t parent, int8_t kind) noexcept nogil:
    cdef int64_t v = a.n
    cdef int d = a.d
    cdef int i
    cdef int64_t r
    if v >= a.cap:
        if arena_grow(a) != 0:
            return ERR_NOMEM
    a.parent[v] = parent
    a.kind[v] = kind
    a.bb_first[v] = -1
    a.bb_n[v] = -1 if kind == BACKBONE else 0
    a.tr_first[v] = -1
    a.tr_n[v] = -1
    a.first_visit[v] = -1
    a.last_visit[v] = -1
    a.trap_size[v] = 0
    a.n = v + 1
    if parent < 0:
        a.depth[v] = 0
        for i in range(d):
            a.pos[v * d + i] = 0
        return v
    a.depth[v] = a.depth[parent] + 1
    for i in range(d):
        a.pos[v * d + i] = a.pos[parent * d + i]
    if a.family == 0:
        r = below(a.embed_key, <uint64_t>(v * d), 2 * d)
        if (r & 1) == 0:
            a.pos[v * d + (r >> 1)] += 1
        else:
            a.pos[v * d + (r >> 1)] -= 1
    else:
        for i in range(d):
            a.pos[v * d + i] += below(a.embed_key, <uint64_t>(v * d + i), 3) - 1
    return v


cdef int expand_backbone(ArenaData* a, int64_t v) noexcept nogil:
    cdef int k, j
    cdef int64_t first
    if a.kind[v] != BACKBONE or a.bb_n[v] >= 0:
        return ERR_STATE
    k = sample_cdf(a.fhat_cdf, a.n_fhat, unif(a.tree_key, <uint64_t>(4 * v)))
    first = a.n
    for j in range(k):
        if new_vertex(a, v, BACKBONE) < 0:
            return ERR_NOMEM
    a.bb_first[v] = first
    a.bb_n[v] = k
    return k


cdef int64_t attach_traps(ArenaData* a, int64_t v) noexcept nogil:
    cdef int u, k, j
    cdef int64_t start, i
    if a.kind[v] != BACKBONE or a.bb_n[v] < 0 or a.tr_n[v] >= 0:
        return ERR_STATE
    u = sample_cdf(a.ulaw_cdf + a.bb_n[v] * a.n_u, a.n_u, unif(a.tree_key, <uint64_t>(4 * v + 1)))
    start = a.n
    for j in range(u):
        if new_vertex(a, v, TRAP) < 0:
            return ERR_NOMEM
    a.tr_first[v] = start
    a.tr_n[v] = u
    i = start
    while i < a.n:
        k = sample_cdf(a.fstar_cdf, a.n_fstar, unif(a.tree_key, <uint64_t>(4 * i)))
        a.tr_first[i] = a.n
        a.tr_n[i] = k
        for j in range(k):
            if new_vertex(a, i, TRAP) < 0:
                return ERR_NOMEM
        if a.n - start > a.trap_cap:
            a.overflow_size = a.n - start
            return ERR_OVERFLOW
        i += 1
    a.trap_size[v] = a.n - start
    return a.trap_size[v]


cdef int ready(ArenaData* a, int64_t v) noexcept nogil:
    cdef int64_t rc
    if a.kind[v] == BACKBONE:
        if a.bb_n[v] < 0:
            rc = expand_backbone(a, v)
            if rc < 0:
                return <int>rc
        if a.tr_n[v] < 0:
            rc = attach_traps(a, v)
            if rc < 0:
                return <int>rc
    return 0


cdef int sib_flag(ArenaData* a, int64_t u, int64_t level_len, int64_t* anc_out) noexcept nogil:
    """Returns 0/1 flag, or a negative error code."""
    cdef int64_t anc = u
    cdef int64_t i, w, first, top, target, need
    cdef int count = 0
    cdef int rc
    cdef void* p
    for i in range(level_len):
        anc = a.parent[anc]
    anc_out[0] = anc
    target = a.depth[anc] + level_len
    top = 0
    a.stack[top] = anc
    top = 1
    while top > 0:
        top -= 1
        w = a.stack[top]
        if a.depth[w] == target:
            count += 1
            if count >= 2:
                break
            continue
        if a.bb_n[w] < 0:
            rc = expand_backbone(a, w)
            if rc < 0:
                return rc
        need = top + a.bb_n[w]
        if need > a.stack_cap:
            p = realloc(a.stack, 2 * need * sizeof(int64_t))
            if p == NULL:
                return ERR_NOMEM
            a.stack = <int64_t*>p
            a.stack_cap = 2 * need
        first = a.bb_first[w]
        for i in range(a.bb_n[w]):
            a.stack[top] = first + i
            top += 1
    return 0 if count == 1 else 1


cdef class Arena:
    """Compiled twin of ``_kernel_py.Arena``."""

    cdef ArenaData a
    cdef public str backend

    def __cinit__(self, fhat_cdf, fstar_cdf, ulaw_cdf, int d, int family,
                  tree_key, embed_key, trap_cap):
        cdef cnp.ndarray[double, ndim=1] fh = np.ascontiguousarray(fhat_cdf, dtype=np.float64)
        cdef cnp.ndarray[double, ndim=1] fs = np.ascontiguousarray(fstar_cdf, dtype=np.float64)
        cdef cnp.ndarray[double, ndim=2] ul = np.ascontiguousarray(ulaw_cdf, dtype=np.float64)
        cdef int i
        memset(&self.a, 0, sizeof(ArenaData))
        self.backend = "compiled"
        self.a.d = d
        self.a.family = family
        self.a.tree_key = <uint64_t>(int(tree_key) & 0xFFFFFFFFFFFFFFFF)
        self.a.embed_key = <uint64_t>(int(embed_key) & 0xFFFFFFFFFFFFFFFF)
        self.a.trap_cap = trap_cap
        self.a.n_fhat = fh.shape[0]
        self.a.n_fstar = fs.shape[0]
        self.a.n_u = ul.shape[1]
        self.a.fhat_cdf = <double*>malloc(fh.shape[0] * sizeof(double))
        self.a.fstar_cdf = <double*>malloc(fs.shape[0] * sizeof(double))
        self.a.ulaw_cdf = <double*>malloc(ul.shape[0] * ul.shape[1] * sizeof(double))
        self.a.stack_cap = 1024
        self.a.stack = <int64_t*>malloc(self.a.stack_cap * sizeof(int64_t))
        if not (self.a.fhat_cdf and self.a.fstar_cdf and self.a.ulaw_cdf and self.a.stack):
            raise MemoryError()
        for i in range(fh.shape[0]):
            self.a.fhat_cdf[i] = fh[i]
        for i in range(fs.shape[0]):
            self.a.fstar_cdf[i] = fs[i]
        for i in range(ul.shape[0] * ul.shape[1]):
            self.a.ulaw_cdf[i] = ul[i // ul.shape[1], i % ul.shape[1]]
        self.a.cap = 1
        if arena_grow(&self.a) != 0:
            raise MemoryError()
        if new_vertex(&self.a, -1, BACKBONE) < 0:
            raise MemoryError()

    def __dealloc__(self):
        free(self.a.parent); free(self.a.depth); free(self.a.kind)
        free(self.a.bb_first); free(self.a.bb_n); free(self.a.tr_first)
        free(self.a.tr_n); free(self.a.pos); free(self.a.first_visit)
        free(self.a.last_visit); free(self.a.trap_size)
        free(self.a.fhat_cdf); free(self.a.fstar_cdf); free(self.a.ulaw_cdf)
        free(self.a.stack)

    cdef int _check(self, int64_t rc, int64_t v) except -1:
        if rc == ERR_NOMEM:
            raise MemoryError("arena allocation failed")
        if rc == ERR_OVERFLOW:
            raise TrapOverflow(v, self.a.overflow_size, self.a.trap_cap)
        if rc == ERR_STATE:
            raise KernelError(f"vertex {v} is in the wrong state for this operation")
        return 0

    cdef int _bounds(self, int64_t v) except -1:
        if v < 0 or v >= self.a.n:
            raise IndexError(f"vertex {v} not materialised")
        return 0

    @property
    def n_vertices(self):
        return self.a.n

    @property
    def d(self):
        return self.a.d

    @property
    def trap_cap(self):
        return self.a.trap_cap

    def expand_backbone(self, int64_t v):
        self._bounds(v)
        if self.a.kind[v] != BACKBONE:
            raise KernelError(f"vertex {v} is not on the backbone")
        if self.a.bb_n[v] >= 0:
            raise KernelError(f"backbone vertex {v} already expanded")
        rc = expand_backbone(&self.a, v)
        self._check(rc, v)
        return rc

    def attach_traps(self, int64_t v):
        self._bounds(v)
        if self.a.kind[v] != BACKBONE or self.a.bb_n[v] < 0:
            raise KernelError(f"vertex {v} needs its backbone children before traps")
        if self.a.tr_n[v] >= 0:
            raise KernelError(f"traps at vertex {v} already attached")
        rc = attach_traps(&self.a, v)
        self._check(rc, v)
        return rc

    def ready(self, int64_t v):
        self._bounds(v)
        self._check(ready(&self.a, v), v)

    def degree(self, int64_t v):
        self._bounds(v)
        return (self.a.parent[v] >= 0) + max(self.a.bb_n[v], 0) + self.a.tr_n[v]

    def neighbor(self, int64_t v, int64_t i):
        self._bounds(v)
        if self.a.parent[v] >= 0:
            if i == 0:
                return self.a.parent[v]
            i -= 1
        nb = max(self.a.bb_n[v], 0)
        if i < nb:
            return self.a.bb_first[v] + i
        return self.a.tr_first[v] + (i - nb)

    def sib_flag(self, int64_t u, int64_t level_len):
        cdef int64_t anc = -1
        self._bounds(u)
        rc = sib_flag(&self.a, u, level_len, &anc)
        self._check(rc, u)
        return rc, anc

    def position(self, int64_t v):
        self._bounds(v)
        return tuple(self.a.pos[v * self.a.d + i] for i in range(self.a.d))

    def _array(self, name):
        cdef int64_t n = self.a.n
        cdef int64_t i
        cdef cnp.ndarray[int64_t, ndim=1] out64
        cdef cnp.ndarray[int32_t, ndim=1] out32
        cdef cnp.ndarray[int8_t, ndim=1] out8
        if name == "depth":
            out32 = np.empty(n, dtype=np.int32)
            for i in range(n): out32[i] = self.a.depth[i]
            return out32
        if name == "kind":
            out8 = np.empty(n, dtype=np.int8)
            for i in range(n): out8[i] = self.a.kind[i]
            return out8
        if name == "pos":
            out64 = np.empty(n * self.a.d, dtype=np.int64)
            for i in range(n * self.a.d): out64[i] = self.a.pos[i]
            return out64.reshape(-1, self.a.d)
        out64 = np.empty(n, dtype=np.int64)
        if name == "parent":
            for i in range(n): out64[i] = self.a.parent[i]
        elif name == "bb_first":
            for i in range(n): out64[i] = self.a.bb_first[i]
        elif name == "bb_n":
            for i in range(n): out64[i] = self.a.bb_n[i]
        elif name == "tr_first":
            for i in range(n): out64[i] = self.a.tr_first[i]
        elif name == "tr_n":
            for i in range(n): out64[i] = self.a.tr_n[i]
        elif name == "first_visit":
            for i in range(n): out64[i] = self.a.first_visit[i]
        elif name == "last_visit":
            for i in range(n): out64[i] = self.a.last_visit[i]
        elif name == "trap_size":
            for i in range(n): out64[i] = self.a.trap_size[i]
        else:
            raise KeyError(name)
        return out64

    def arrays(self):
        return {name: self._array(name) for name in (
            "parent", "depth", "kind", "bb_first", "bb_n", "tr_first", "tr_n",
            "pos", "first_visit", "last_visit", "trap_size")}

    # scalar accessors used by the Python-level tree API
    def get(self, str name, int64_t v):
        self._bounds(v)
        if name == "parent": return self.a.parent[v]
        if name == "depth": return self.a.depth[v]
        if name == "kind": return self.a.kind[v]
        if name == "bb_first": return self.a.bb_first[v]
        if name == "bb_n": return self.a.bb_n[v]
        if name == "tr_first": return self.a.tr_first[v]
        if name == "tr_n": return self.a.tr_n[v]
        if name == "first_visit": return self.a.first_visit[v]
        if name == "last_visit": return self.a.last_visit[v]
        if name == "trap_size": return self.a.trap_size[v]
        raise KeyError(name)


cdef int64_t walk_loop(ArenaData* a, uint64_t walk_key, int64_t horizon, int64_t level_len,
                       int32_t* depths, int64_t stride, int64_t* stride_out,
                       const int64_t* snaps, int64_t n_snaps, int64_t* snap_out,
                       int64_t* eta_t, int64_t* eta_v, int64_t* eta_anc, int8_t* sib,
                       int64_t* n_levels, int64_t* final_v, int64_t* err_v) noexcept nogil:
    cdef int64_t v = 0, w, n, i, deg, nb, hp, anc
    cdef int64_t si = 0, nst = 0, nlev = 1
    cdef int64_t next_level_depth = level_len
    cdef int rc
    rc = ready(a, 0)
    if rc < 0:
        err_v[0] = 0
        return rc
    if a.first_visit[0] < 0:
        a.first_visit[0] = 0
    a.last_visit[0] = 0
    if depths != NULL:
        depths[0] = 0
    while si < n_snaps and snaps[si] == 0:
        snap_out[si] = 0
        si += 1
    if stride > 0:
        stride_out[0] = 0
        nst = 1
    eta_t[0] = 0; eta_v[0] = 0; eta_anc[0] = -1; sib[0] = -1
    for n in range(1, horizon + 1):
        hp = 1 if a.parent[v] >= 0 else 0
        nb = a.bb_n[v] if a.bb_n[v] > 0 else 0
        deg = hp + nb + a.tr_n[v]
        i = below(walk_key, <uint64_t>n, deg)
        if hp:
            if i == 0:
                w = a.parent[v]
            else:
                i -= 1
                w = a.bb_first[v] + i if i < nb else a.tr_first[v] + (i - nb)
        else:
            w = a.bb_first[v] + i if i < nb else a.tr_first[v] + (i - nb)
        if a.first_visit[w] < 0:
            a.first_visit[w] = n
            if a.kind[w] == BACKBONE:
                rc = ready(a, w)
                if rc < 0:
                    err_v[0] = w
                    final_v[0] = v
                    n_levels[0] = nlev
                    return rc
                if a.depth[w] == next_level_depth:
                    rc = sib_flag(a, w, level_len, &anc)
                    if rc < 0:
                        err_v[0] = w
                        final_v[0] = v
                        n_levels[0] = nlev
                        return rc
                    eta_t[nlev] = n; eta_v[nlev] = w; eta_anc[nlev] = anc
                    sib[nlev] = <int8_t>rc
                    nlev += 1
                    next_level_depth += level_len
        a.last_visit[w] = n
        v = w
        if depths != NULL:
            depths[n] = a.depth[w]
        if stride > 0 and n % stride == 0:
            stride_out[nst] = w
            nst += 1
        while si < n_snaps and snaps[si] == n:
            snap_out[si] = w
            si += 1
    n_levels[0] = nlev
    final_v[0] = v
    return 0


def walk(Arena arena, walk_key, int64_t horizon, int64_t level_len,
         bint store_depths=True, int64_t stride=0, snap_times=None):
    cdef uint64_t key = <uint64_t>(int(walk_key) & 0xFFFFFFFFFFFFFFFF)
    cdef int64_t max_levels = horizon // level_len + 2
    cdef cnp.ndarray[int32_t, ndim=1] depths = np.zeros(horizon + 1 if store_depths else 1, dtype=np.int32)
    cdef cnp.ndarray[int64_t, ndim=1] stride_out = np.zeros(horizon // stride + 1 if stride > 0 else 1, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] snaps = np.ascontiguousarray(
        [] if snap_times is None else snap_times, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] snap_out = np.full(max(snaps.shape[0], 1), -1, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] eta_t = np.zeros(max_levels, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] eta_v = np.zeros(max_levels, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] eta_anc = np.zeros(max_levels, dtype=np.int64)
    cdef cnp.ndarray[int8_t, ndim=1] sib = np.zeros(max_levels, dtype=np.int8)
    cdef int64_t n_levels = 0, final_v = 0, err_v = -1, n_snaps = snaps.shape[0]
    cdef int32_t* dptr = &depths[0] if store_depths else NULL
    cdef int64_t rc
    with nogil:
        rc = walk_loop(&arena.a, key, horizon, level_len, dptr, stride, &stride_out[0],
                       &snaps[0] if n_snaps > 0 else NULL, n_snaps, &snap_out[0],
                       &eta_t[0], &eta_v[0], &eta_anc[0], &sib[0],
                       &n_levels, &final_v, &err_v)
    arena._check(rc, err_v)
    return {
        "depths": depths if store_depths else None,
        "eta_t": eta_t[:n_levels].copy(),
        "eta_v": eta_v[:n_levels].copy(),
        "eta_anc": eta_anc[:n_levels].copy(),
        "sib": sib[:n_levels].copy(),
        "stride_v": stride_out[: (horizon // stride + 1 if stride > 0 else 0)].copy(),
        "snap_v": snap_out[:n_snaps].copy(),
        "final_vertex": final_v,
    }


def scan_regenerations(depths_in, eta_t_in, sib_in, int64_t level_len):
    cdef cnp.ndarray[int32_t, ndim=1] depths = np.ascontiguousarray(depths_in, dtype=np.int32)
    cdef cnp.ndarray[int64_t, ndim=1] eta_t = np.ascontiguousarray(eta_t_in, dtype=np.int64)
    cdef cnp.ndarray[int8_t, ndim=1] sib = np.ascontiguousarray(sib_in, dtype=np.int8)
    cdef int64_t horizon = depths.shape[0] - 1
    cdef int64_t nlev = eta_t.shape[0]
    cdef cnp.ndarray[int32_t, ndim=1] sufmin = np.empty(horizon + 1, dtype=np.int32)
    cdef cnp.ndarray[int64_t, ndim=1] taus = np.empty(max(nlev, 1), dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] levels = np.empty(max(nlev, 1), dtype=np.int64)
    cdef int64_t k = 0, m, m_lo = 1, s, target, r, n_hi, i
    with nogil:
        sufmin[horizon] = depths[horizon]
        i = horizon - 1
        while i >= 0:
            sufmin[i] = depths[i] if depths[i] < sufmin[i + 1] else sufmin[i + 1]
            i -= 1
        while True:
            m = m_lo
            while m < nlev and sib[m] != 0:
                m += 1
            if m >= nlev:
                break
            s = eta_t[m]
            target = (m - 1) * level_len
            if s >= horizon or sufmin[s + 1] > target:
                taus[k] = s
                levels[k] = m
                k += 1
                m_lo = m + 1
                continue
            r = s + 1
            while depths[r] != target:
                r += 1
            n_hi = m
            while n_hi + 1 < nlev and eta_t[n_hi + 1] < r:
                n_hi += 1
            m_lo = n_hi + 2
    return taus[:k].copy(), levels[:k].copy()


def trap_excursion(Arena arena, v, key, ctr0, max_steps):
    cdef ArenaData* a = &arena.a
    cdef int64_t vv = v, w = v, n = 0, i, deg, mx = max_steps
    cdef uint64_t k = <uint64_t>(int(key) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t c0 = <uint64_t>int(ctr0)
    arena._bounds(vv)
    if a.tr_n[vv] <= 0:
        return 0
    with nogil:
        while True:
            if w == vv:
                deg = a.tr_n[vv]
                i = below(k, c0 + <uint64_t>n, deg)
                w = a.tr_first[vv] + i
            else:
                deg = 1 + a.tr_n[w]
                i = below(k, c0 + <uint64_t>n, deg)
                w = a.parent[w] if i == 0 else a.tr_first[w] + i - 1
            n += 1
            if w == vv or n >= mx:
                break
    return n if w == vv else -n
