"""Simple random walk on a lazy cluster and its regeneration structure.

The hot loop lives in the kernel (``walk``). On the first visit to a backbone
vertex at depth ``m * level_len`` the kernel records the hitting time
``eta_m``, the vertex, its L-ancestor and the sibling flag ``sib`` (0 iff the
vertex is the only backbone descendant of its L-ancestor one level down).
Regeneration times are then read off the stored depth path:

* candidate levels ``M`` are those with ``sib == 0``;
* a candidate at time ``S = eta_M`` fails if the walk later returns to depth
  ``(M - 1) * level_len``; the next candidate must then lie at least two
  levels above the last level reached before that return;
* a candidate that never returns is a regeneration, and the search restarts
  one level above it.

"Never" can only be checked up to the horizon, so regenerations inside the
final ``tail_buffer`` steps are marked censored and left out of estimators.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng
from .tree import BACKBONE, LazyTree


class WalkError(RuntimeError):
    pass


class InsufficientRegenerations(WalkError):
    def __init__(self, count: int, needed: int):
        super().__init__(f"need at least {needed} uncensored regenerations, found {count}")
        self.count = count
        self.needed = needed


@dataclass
class WalkState:
    """Position of a step-by-step walk (the slow path used for inspection and tests)."""

    vertex: int = 0
    n: int = 0
    depth: int = 0


def step(tree: LazyTree, state: WalkState, walk_key: int) -> WalkState:
    """One uniform-neighbour move; uses the same draw as the kernel's step ``n + 1``.

    Vertex ids, and hence the tree's random draws, follow the order in which
    vertices are created. The kernel also grows backbone vertices when it
    checks L-siblings, so a replay matches ``run`` step for step on the tree
    that ``run`` grew, not on a fresh one.
    """
    a = tree.arena
    a.ready(state.vertex)
    n = state.n + 1
    i = rng.below(walk_key, n, a.degree(state.vertex))
    w = int(a.neighbor(state.vertex, i))
    a.ready(w)
    return WalkState(w, n, tree.depth(w))


@dataclass
class WalkRecord:
    """Summary of one walk.

    ``depths[n]`` is ``|X_n|`` for every step. ``eta_*`` and ``sib`` are indexed
    by L-level (level 0 is the root at time 0). ``stride_positions[j]`` is
    ``φ(X_{j * stride})``.
    """

    tree: LazyTree
    horizon: int
    level_len: int
    depths: np.ndarray | None
    eta_t: np.ndarray
    eta_v: np.ndarray
    eta_anc: np.ndarray
    sib: np.ndarray
    eta_positions: np.ndarray
    stride: int
    stride_positions: np.ndarray
    snap_times: np.ndarray
    snap_positions: np.ndarray
    final_vertex: int
    final_depth: int
    final_position: np.ndarray

    @property
    def eps(self) -> float:
        return self.tree.profile.eps


def run(tree: LazyTree, horizon: int, stride: int = 64, snap_times=None,
        store_depths: bool = True) -> WalkRecord:
    """Walk ``horizon`` steps from the root of a fresh tree."""
    if horizon < 0:
        raise WalkError("horizon must be non-negative")
    if tree.walked:
        raise WalkError("a tree carries visit times of one walk only; build a new tree")
    tree.walked = True
    snaps = np.asarray([] if snap_times is None else snap_times, dtype=np.int64)
    if snaps.size and (np.any(np.diff(snaps) < 0) or snaps[0] < 0 or snaps[-1] > horizon):
        raise WalkError("snap_times must be sorted and within [0, horizon]")
    key = rng.derive_key(tree.master_seed, tree.replica, rng.WALK)
    out = tree.kernel.walk(tree.arena, key, int(horizon), tree.level_len,
                           bool(store_depths), int(stride), snaps)
    arr = tree.arena.arrays()
    pos, depth = arr["pos"], arr["depth"]
    v = int(out["final_vertex"])
    return WalkRecord(
        tree=tree,
        horizon=int(horizon),
        level_len=tree.level_len,
        depths=out["depths"],
        eta_t=out["eta_t"],
        eta_v=out["eta_v"],
        eta_anc=out["eta_anc"],
        sib=out["sib"],
        eta_positions=pos[out["eta_v"]],
        stride=int(stride),
        stride_positions=pos[out["stride_v"]] if stride > 0 else np.zeros((0, tree.step_law.d), np.int64),
        snap_times=snaps,
        snap_positions=pos[out["snap_v"]] if snaps.size else np.zeros((0, tree.step_law.d), np.int64),
        final_vertex=v,
        final_depth=int(depth[v]),
        final_position=pos[v].copy(),
    )


@dataclass(frozen=True)
class RegenerationRecord:
    k: int
    tau: int
    lam: int
    pi: int
    depth_at_tau: int
    position_at_tau: tuple[int, ...]
    censored: bool


def default_tail_buffer(horizon: int, eps: float) -> int:
    return int(round(max(0.1 * horizon, 10.0 * eps**-3)))


def detect_regenerations(record: WalkRecord, tail_buffer: int | None = None) -> list[RegenerationRecord]:
    """All regeneration times seen within the horizon, censored ones flagged."""
    if record.depths is None:
        raise WalkError("regeneration detection needs the stored depth path")
    if tail_buffer is None:
        tail_buffer = default_tail_buffer(record.horizon, record.eps)
    taus, levels = record.tree.kernel.scan_regenerations(
        record.depths, record.eta_t, record.sib, record.level_len)
    first_visit = record.tree.arena.arrays()["first_visit"]
    cutoff = record.horizon - tail_buffer
    out = []
    for k, (tau, lam) in enumerate(zip(taus.tolist(), levels.tolist()), start=1):
        out.append(RegenerationRecord(
            k=k,
            tau=tau,
            lam=lam,
            pi=int(first_visit[record.eta_anc[lam]]),
            depth_at_tau=int(record.depths[tau]),
            position_at_tau=tuple(int(x) for x in record.eta_positions[lam]),
            censored=tau > cutoff,
        ))
    return out


def uncensored(regs: list[RegenerationRecord]) -> list[RegenerationRecord]:
    return [r for r in regs if not r.censored]


def _count_level_below(tree: LazyTree, anc: int, cap: int = 2) -> int:
    target = tree.depth(anc) + tree.level_len
    count, stack = 0, [anc]
    while stack and count < cap:
        w = stack.pop()
        if tree.depth(w) == target:
            count += 1
            continue
        stack.extend(tree.backbone_children(w))
    return count


def verify_regenerations(record: WalkRecord, regs: list[RegenerationRecord],
                         tail_buffer: int | None = None) -> list[str]:
    """Independent re-check of every uncensored regeneration; returns a list of violations."""
    if tail_buffer is None:
        tail_buffer = default_tail_buffer(record.horizon, record.eps)
    tree, depths, ell = record.tree, record.depths, record.level_len
    end = record.horizon - tail_buffer
    problems = []
    prev_tau = prev_lam = -1
    for r in uncensored(regs):
        v = int(record.eta_v[r.lam])
        anc = v
        for _ in range(ell):
            anc = tree.parent(anc)
        if r.depth_at_tau != r.lam * ell or tree.depth(v) != r.lam * ell:
            problems.append(f"k={r.k}: X_tau not on L-level {r.lam}")
        if _count_level_below(tree, anc) != 1:
            problems.append(f"k={r.k}: X_tau has L-siblings")
        after = depths[r.tau + 1: end + 1]
        if after.size and after.min() <= (r.lam - 1) * ell:
            problems.append(f"k={r.k}: walk returns to depth {(r.lam - 1) * ell}")
        if not r.pi < r.tau:
            problems.append(f"k={r.k}: pi={r.pi} not before tau={r.tau}")
        if r.tau <= prev_tau or r.lam <= prev_lam:
            problems.append(f"k={r.k}: regeneration times not increasing")
        w = tree.parent(v)
        while w != anc:
            # the backbone between the L-ancestor and X_tau is a bare line
            if len(tree.backbone_children(w)) != 1:
                problems.append(f"k={r.k}: backbone furcates between pi and tau")
                break
            w = tree.parent(w)
        prev_tau, prev_lam = r.tau, r.lam
    return problems


@dataclass
class BBTRecord:
    """Backbone trace of the walk during one regeneration interval."""

    k: int
    size: int
    max_displacement: float


def backbone_trace(record: WalkRecord, regs: list[RegenerationRecord],
                   displacements: bool = True) -> list[BBTRecord]:
    """``|BBT_k|`` and its maximal distance from ``φ(X_{τ_k})`` for consecutive uncensored pairs.

    A backbone vertex counts for interval ``[τ_k, τ_{k+1}]`` when it is
    first visited by ``τ_{k+1}`` and last visited at or after ``τ_k``.
    """
    arr = record.tree.arena.arrays()
    mask = (arr["kind"] == BACKBONE) & (arr["first_visit"] >= 0)
    first, last, pos = arr["first_visit"][mask], arr["last_visit"][mask], arr["pos"][mask]
    # last >= first, so every vertex last seen before τ_k was also first seen before τ_{k+1}
    first_sorted, last_sorted = np.sort(first), np.sort(last)
    ok = uncensored(regs)
    out = []
    for a, b in zip(ok, ok[1:]):
        size = int(np.searchsorted(first_sorted, b.tau, "right") - np.searchsorted(last_sorted, a.tau, "left"))
        far = math.nan
        if displacements:
            sel = (first <= b.tau) & (last >= a.tau)
            disp = pos[sel] - np.asarray(a.position_at_tau)
            far = float(np.sqrt((disp.astype(np.float64) ** 2).sum(axis=1)).max()) if disp.size else 0.0
        out.append(BBTRecord(a.k, size, far))
    return out


def trap_displacements(tree: LazyTree) -> np.ndarray:
    """Per non-empty materialised trap, ``max ‖φ(w) - φ(anchor)‖`` over its vertices."""
    arr = tree.arena.arrays()
    anchors = np.flatnonzero((arr["kind"] == BACKBONE) & (arr["trap_size"] > 0))
    out = np.empty(anchors.size)
    for j, v in enumerate(anchors):
        start = arr["tr_first"][v]
        block = arr["pos"][start:start + arr["trap_size"][v]] - arr["pos"][v]
        out[j] = np.sqrt((block.astype(np.float64) ** 2).sum(axis=1)).max()
    return out


@dataclass
class GapSummary:
    n_gaps: int
    scaled_dist_mean: float
    scaled_dist_var: float
    scaled_dist_m2: float
    scaled_time_mean: float
    scaled_time_var: float
    scaled_time_quantiles: dict
    autocorr: dict
    ks_statistic: float
    ks_pvalue: float
    speed_ratio: float
    gaps_time: np.ndarray = field(repr=False)
    gaps_dist: np.ndarray = field(repr=False)


def gaps(regs: list[RegenerationRecord]) -> tuple[np.ndarray, np.ndarray]:
    """``(τ_{k+1} - τ_k, |X_{τ_{k+1}}| - |X_{τ_k}|)`` over uncensored ``k >= 1``."""
    ok = uncensored(regs)
    t = np.array([b.tau - a.tau for a, b in zip(ok, ok[1:])], dtype=np.int64)
    d = np.array([b.depth_at_tau - a.depth_at_tau for a, b in zip(ok, ok[1:])], dtype=np.int64)
    return t, d


def lag_correlations(series: list[np.ndarray], lags=(1, 2, 3)) -> dict:
    """Pooled lag-j autocorrelation; pairs are formed within each series only."""
    allv = np.concatenate([s.astype(np.float64) for s in series]) if series else np.zeros(0)
    mu, var = allv.mean(), allv.var()
    out = {}
    for j in lags:
        prods = [((s[:-j] - mu) * (s[j:] - mu)) for s in series if len(s) > j]
        pairs = np.concatenate(prods) if prods else np.zeros(0)
        out[j] = float(pairs.mean() / var) if pairs.size and var > 0 else math.nan
        out[f"n{j}"] = int(pairs.size)
    return out


def regeneration_statistics(runs: list[list[RegenerationRecord]], eps: float,
                            min_regenerations: int = 2) -> GapSummary:
    """Gap moments, lag 1-3 autocorrelations and a first-half / second-half KS test.

    The KS test compares the gaps from the first half of every run with those
    from the second half.

    ``runs`` holds one regeneration list per independent walk. Distances are
    scaled by ``eps`` and times by ``eps**3``.
    """
    per = [gaps(r) for r in runs]
    n_regs = sum(len(uncensored(r)) for r in runs)
    if n_regs < min_regenerations or sum(len(t) for t, _ in per) == 0:
        raise InsufficientRegenerations(n_regs, min_regenerations)
    t = np.concatenate([t for t, _ in per]).astype(np.float64)
    d = np.concatenate([d for _, d in per]).astype(np.float64)
    st, sd = t * eps**3, d * eps
    early = np.concatenate([x[: len(x) // 2] for x, _ in per]).astype(np.float64) * eps**3
    late = np.concatenate([x[len(x) // 2:] for x, _ in per]).astype(np.float64) * eps**3
    ks = stats.ks_2samp(early, late) if early.size and late.size else None
    return GapSummary(
        n_gaps=len(st),
        scaled_dist_mean=float(sd.mean()),
        scaled_dist_var=float(sd.var(ddof=1)) if len(sd) > 1 else math.nan,
        scaled_dist_m2=float((sd**2).mean()),
        scaled_time_mean=float(st.mean()),
        scaled_time_var=float(st.var(ddof=1)) if len(st) > 1 else math.nan,
        scaled_time_quantiles={q: float(np.quantile(st, q)) for q in (0.1, 0.5, 0.9)},
        autocorr=lag_correlations([x for x, _ in per if len(x)]),
        ks_statistic=float(ks.statistic) if ks else math.nan,
        ks_pvalue=float(ks.pvalue) if ks else math.nan,
        speed_ratio=float(d.sum() / t.sum()),
        gaps_time=t,
        gaps_dist=d,
    )


def depth_csv(record: WalkRecord, stride: int = 64) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "depth"])
    for n in range(0, record.horizon + 1, stride):
        w.writerow([n, int(record.depths[n])])
    return buf.getvalue()


def regeneration_csv(regs: list[RegenerationRecord], d: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "tau", "lambda", "pi", "depth"] + [f"x{i + 1}" for i in range(d)] + ["censored"])
    for r in regs:
        w.writerow([r.k, r.tau, r.lam, r.pi, r.depth_at_tau, *r.position_at_tau, int(r.censored)])
    return buf.getvalue()
