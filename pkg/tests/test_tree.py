import json
import math

import numpy as np
import pytest
from scipy import stats

from critwalk import analytics, tree as treemod
from critwalk.tree import LazyTree, TrapOverflow, level_length

import oracles


def chi2_pvalue(counts, probs, min_expected=5.0):
    """Goodness of fit with sparse categories pooled into one cell."""
    counts, probs = np.asarray(counts, float), np.asarray(probs, float)
    exp = counts.sum() * probs
    big = exp >= min_expected
    obs = np.append(counts[big], counts[~big].sum())
    ex = np.append(exp[big], exp[~big].sum())
    keep = ex > 0
    return stats.chisquare(obs[keep], ex[keep] * obs[keep].sum() / ex[keep].sum()).pvalue


def test_level_length():
    assert level_length(0.1, 1.0) == 10
    assert level_length(0.6 - 0.5, 1.0) == 10  # eps slightly below 0.1 in floating point
    assert level_length(0.3, 0.1) == 1
    with pytest.raises(analytics.AnalyticsError):
        level_length(0.0, 1.0)


def test_first_generation_matches_conditioned_law(mix13):
    prof = analytics.profile(mix13, 0.7)
    z = treemod.generation_sizes_lazy(prof, 20_000, master_seed=3, depth=1)[:, 0]
    want = oracles.conditioned_first_generation(mix13.probs, 0.7)
    counts = np.bincount(z, minlength=len(want))
    assert counts[0] == 0
    assert chi2_pvalue(counts, want) > 1e-3


def test_backbone_counts_follow_fhat(prof06):
    t = LazyTree(prof06, master_seed=11)
    counts = np.zeros(3, int)
    frontier = [0]
    while counts.sum() < 20_000:
        nxt = []
        for v in frontier:
            kids = t.backbone_children(v)
            counts[len(kids)] += 1
            nxt.extend(kids)
        frontier = nxt[:2000]
    assert counts[0] == 0
    assert chi2_pvalue(counts, prof06.fhat) > 1e-3


def test_bush_counts_follow_trap_law(mix13):
    prof = analytics.profile(mix13, 0.8)
    by_delta = {d: [] for d in (1, 2, 3)}
    for r in range(40):
        t = LazyTree(prof, master_seed=5, replica=r)
        v = 0
        for _ in range(300):
            t.arena.ready(v)
            by_delta[len(t.backbone_children(v))].append(t.trap_summary(v).u_count)
            v = t.backbone_children(v)[0]
    for d, us in by_delta.items():
        if len(us) < 200:
            continue
        law = analytics.trap_count_law(prof, d).probs
        if len(law) == 1:
            assert set(us) == {0}
            continue
        assert chi2_pvalue(np.bincount(us, minlength=len(law)), law) > 1e-3


def test_mean_bush_size_matches_exact_value(prof06):
    from critwalk.experiments import expected_trap_size, trap_sizes

    sizes = trap_sizes(prof06, 40_000, master_seed=1)
    want = expected_trap_size(prof06)
    se = sizes.std() / math.sqrt(len(sizes))
    assert abs(sizes.mean() - want) < 4 * se


def test_level_one_single_member_probability(prof06):
    # |G_[1]| = 1 needs one backbone child at each of level_len generations
    from critwalk.experiments import level_one_statistics

    st = level_one_statistics(prof06, 1.0, 4000, master_seed=2)
    assert st["level_len"] == 10
    assert math.isclose(st["p_single_exact"], 0.8**10, rel_tol=1e-12)
    assert abs(st["p_single"] - st["p_single_exact"]) < 4 * st["p_single_se"]
    assert abs(st["mean_size"] / st["mean_size_exact"] - 1) < 0.1


def test_lazy_tree_structure(prof06):
    t = LazyTree(prof06, master_seed=9)
    assert t.is_backbone(0) and t.depth(0) == 0 and t.level_of(0) == 0
    kids = t.children(0)
    for c in kids:
        assert t.parent(c) == 0 and t.depth(c) == 1
    assert t.backbone_children(0) == kids[: len(t.backbone_children(0))]
    members = t.members_of_level(1)
    assert all(t.depth(v) == 10 and t.level_of(v) == 1 for v in members)
    assert len(members) == t.level_one_size(cap=10**6)
    info = t.vertex(kids[-1])
    assert info.parent == 0 and info.depth == 1


def test_trap_vertices_are_finite_and_anchored(prof06):
    t = LazyTree(prof06, master_seed=9)
    v = 0
    for _ in range(50):
        t.arena.ready(v)
        v = t.backbone_children(v)[0]
    arr = t.arena.arrays()
    traps = np.flatnonzero(arr["kind"] == treemod.TRAP)
    for w in traps[:500]:
        info = t.vertex(int(w))
        assert not info.is_backbone
        assert t.is_backbone(info.trap_root_of)
        assert t.depth(int(w)) > t.depth(info.trap_root_of)


def test_trap_overflow_reports_partial_size(backend, mix13):
    prof = analytics.profile(mix13, 0.51)  # mean bush size near 50
    t = LazyTree(prof, master_seed=0, trap_cap=3, backend=backend)
    with pytest.raises(TrapOverflow) as info:
        v = 0
        for _ in range(10_000):
            t.arena.ready(v)
            v = t.backbone_children(v)[0]
    assert info.value.cap == 3 and info.value.partial_size > 3


def test_not_supercritical_is_rejected(binary):
    with pytest.raises(analytics.AnalyticsError):
        LazyTree(analytics.profile(binary, 0.5))


def test_seeded_trees_are_reproducible(prof06, backend):
    def grow(seed):
        t = LazyTree(prof06, master_seed=seed, replica=2, backend=backend)
        v = 0
        for _ in range(200):
            t.arena.ready(v)
            v = t.backbone_children(v)[-1]
        return t.arena.arrays()

    a, b, c = grow(1), grow(1), grow(2)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    assert len(a["parent"]) != len(c["parent"]) or not np.array_equal(a["parent"], c["parent"])


def test_snapshot_formats(prof06):
    t = LazyTree(prof06)
    t.children(0)
    rows = t.snapshot()
    assert rows[0] == {"id": 0, "parent": -1, "depth": 0, "is_backbone": 1}
    assert json.loads(t.snapshot_json()) == rows
    lines = t.snapshot_csv().splitlines()
    assert lines[0] == "id,parent,depth,is_backbone" and len(lines) == len(rows) + 1


def test_rejection_sampler(prof06, binary, gen):
    assert treemod.rejection_sample_tree(analytics.profile(binary, 0.3), 200, gen) is None
    ft = None
    while ft is None:
        ft = treemod.rejection_sample_tree(prof06, 8, gen)
    assert ft.generation_sizes().size == 9
    samples, acc = treemod.generation_sizes_by_rejection(prof06, 20_000, gen, depth_cap=60)
    assert samples.shape == (20_000, 2) and samples.min() >= 1
    assert abs(acc - 5 / 9) < 0.02
    _, acc_sub = treemod.generation_sizes_by_rejection(analytics.profile(binary, 0.45), 10, gen,
                                                       depth_cap=200, batch=20_000, max_attempts=20_000)
    assert acc_sub < 0.01


def test_lazy_and_rejection_agree_on_first_generations(prof06, gen):
    from critwalk.experiments import contingency_test

    lazy = treemod.generation_sizes_lazy(prof06, 10_000, master_seed=8)
    rej, _ = treemod.generation_sizes_by_rejection(prof06, 10_000, gen)
    assert contingency_test(lazy, rej)[1] > 1e-3
