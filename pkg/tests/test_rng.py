import numpy as np
from hypothesis import given, strategies as st

from critwalk import rng

u64 = st.integers(0, 2**64 - 1)


def reference_splitmix(state):
    """Textbook SplitMix64: advance the state by the golden gamma, then finalise."""
    state = (state + 0x9E3779B97F4A7C15) % 2**64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
    return state, z ^ (z >> 31)


def test_first_outputs_of_seed_zero():
    # published SplitMix64 outputs for seed 0
    assert rng.splitmix64(0, 0) == 0xE220A8397B1DCDAF
    assert rng.splitmix64(0, 1) == 0x6E789E6AA1B965F4
    assert rng.splitmix64(0, 2) == 0x06C45D188009454F


@given(u64, st.integers(0, 1000))
def test_counter_matches_sequential_generator(key, n):
    state = key
    for _ in range(n + 1):
        state, out = reference_splitmix(state)
    assert rng.splitmix64(key, n) == out


@given(u64, st.lists(st.integers(0, 2**40), min_size=1, max_size=50))
def test_vectorised_matches_scalar(key, counters):
    got = rng.splitmix64_array(key, counters)
    assert [int(x) for x in got] == [rng.splitmix64(key, c) for c in counters]
    np.testing.assert_array_equal(rng.uniforms(key, counters), [rng.uniform(key, c) for c in counters])
    np.testing.assert_array_equal(rng.belows(key, counters, 7), [rng.below(key, c, 7) for c in counters])


@given(u64, st.integers(0, 2**40), st.integers(1, 1000))
def test_ranges(key, c, n):
    assert 0.0 <= rng.uniform(key, c) < 1.0
    assert 0 <= rng.below(key, c, n) < n


def test_derived_keys_are_distinct_and_stable():
    keys = {rng.derive_key(7, r, s) for r in range(50) for s in (rng.TREE, rng.WALK, rng.EMBED, rng.AUX)}
    assert len(keys) == 200
    assert rng.derive_key(7, 3, rng.WALK) == rng.derive_key(7, 3, rng.WALK)
    assert rng.derive_key(7, 3, rng.WALK) != rng.derive_key(8, 3, rng.WALK)


def test_uniforms_look_uniform():
    from scipy import stats

    u = rng.uniforms(rng.derive_key(1, 0, rng.AUX), np.arange(200_000))
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    counts = np.bincount(rng.belows(99, np.arange(60_000), 6), minlength=6)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_stream_is_sequential():
    s = rng.Stream(5)
    assert [s.random() for _ in range(3)] == [rng.uniform(5, c) for c in range(3)]
    assert s.below(10) == rng.below(5, 3, 10)
