import numpy as np
import pytest
from hypothesis import given, strategies as st

from critwalk.embedding import (EmbeddingError, StepLaw, embed_on_demand, embed_path,
                                sample_step, sample_steps)
from critwalk.tree import LazyTree

families = st.sampled_from(["srw", "cube_uniform"])


def test_validation():
    with pytest.raises(EmbeddingError, match="known: cube_uniform, srw"):
        StepLaw("gaussian", 2)
    with pytest.raises(EmbeddingError):
        StepLaw("srw", 0)
    with pytest.raises(EmbeddingError):
        StepLaw.from_dict({"family": "srw", "d": 2, "params": {"sigma": 1}})
    law = StepLaw.from_dict({"family": "cube_uniform", "d": 3})
    assert StepLaw.from_dict(law.to_dict()) == law


@given(families, st.integers(1, 4), st.integers(0, 2**63 - 1), st.integers(0, 10**6))
def test_steps_have_support_radius_one(family, d, key, v):
    law = StepLaw(family, d)
    s = sample_step(law, key, v)
    assert s.shape == (d,)
    assert np.abs(s).max() <= law.support_radius
    if family == "srw":
        assert np.abs(s).sum() == 1


@given(families, st.integers(1, 4), st.integers(0, 2**63 - 1))
def test_vectorised_matches_scalar(family, d, key):
    law = StepLaw(family, d)
    vs = np.arange(0, 40) * 7919
    np.testing.assert_array_equal(sample_steps(law, key, vs), [sample_step(law, key, v) for v in vs])


@pytest.mark.parametrize("family,d", [("srw", 1), ("srw", 2), ("srw", 3), ("cube_uniform", 2)])
def test_empirical_moments(family, d):
    law = StepLaw(family, d)
    steps = sample_steps(law, 2024, np.arange(200_000)).astype(float)
    n = len(steps)
    assert np.all(np.abs(steps.mean(axis=0)) < 4 * np.sqrt(np.diag(law.covariance) / n))
    cov = steps.T @ steps / n
    np.testing.assert_allclose(cov, law.covariance, atol=0.01)


def test_embed_path_is_cumulative():
    law = StepLaw("srw", 2)
    path = embed_path(law, 3, 100)
    assert path.shape == (101, 2)
    assert np.all(path[0] == 0)
    assert np.all(np.abs(np.diff(path, axis=0)).sum(axis=1) == 1)


def test_tree_positions_sum_edge_steps(prof06):
    law = StepLaw("cube_uniform", 3)
    t = LazyTree(prof06, step_law=law, master_seed=4)
    v = 0
    for _ in range(30):
        t.arena.ready(v)
        v = t.backbone_children(v)[-1]
    for w in range(1, t.n_vertices):
        step = np.subtract(t.position(w), t.position(t.parent(w)))
        assert np.abs(step).max() <= 1
    assert embed_on_demand(t, v) == t.position(v)
    with pytest.raises(EmbeddingError):
        embed_on_demand(t, t.n_vertices + 5)
