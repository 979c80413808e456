"""Counter-based random streams.

Every random draw is ``splitmix64(key, counter)``: the SplitMix64 finaliser
applied to ``key + (counter + 1) * GOLDEN``. Keys come from
``numpy.random.SeedSequence(master_seed, spawn_key=(replica, stream))``, so a
stream is fully identified by ``(master_seed, replica_id, stream_id)`` and any
draw can be recomputed from its counter alone. The compiled kernel uses the
same arithmetic, so both backends produce identical sample paths.

Counter layout per stream:

* ``TREE``  -- ``4*v`` offspring count of vertex ``v``; ``4*v + 1`` its bush count.
* ``EMBED`` -- ``v*d + i`` coordinate draw ``i`` of the step on the edge above ``v``.
* ``WALK``  -- ``n`` neighbour choice at step ``n``; other uses pick their own base.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
TWO_M53 = 1.0 / (1 << 53)

TREE, WALK, EMBED, AUX = 0, 1, 2, 3


def derive_key(master_seed: int, replica: int, stream: int) -> int:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(replica), int(stream)))
    return int(seq.generate_state(1, np.uint64)[0])


def splitmix64(key: int, counter: int) -> int:
    z = (int(key) + (int(counter) + 1) * GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def uniform(key: int, counter: int) -> float:
    return (splitmix64(key, counter) >> 11) * TWO_M53


def below(key: int, counter: int, n: int) -> int:
    """Integer in ``[0, n)`` by multiply-shift on the high 32 bits."""
    return ((splitmix64(key, counter) >> 32) * n) >> 32


def splitmix64_array(key: int, counters) -> np.ndarray:
    """Vectorised ``splitmix64`` (uint64 wrap-around is the intended arithmetic)."""
    with np.errstate(over="ignore"):
        c = np.asarray(counters, dtype=np.uint64)
        z = np.uint64(key) + (c + np.uint64(1)) * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def uniforms(key: int, counters) -> np.ndarray:
    """Vectorised ``uniform`` over an array of counters."""
    return (splitmix64_array(key, counters) >> np.uint64(11)).astype(np.float64) * TWO_M53


def belows(key: int, counters, n: int) -> np.ndarray:
    """Vectorised ``below``."""
    hi = splitmix64_array(key, counters) >> np.uint64(32)
    return ((hi * np.uint64(n)) >> np.uint64(32)).astype(np.int64)


class Stream:
    """Sequential view of one counter-based stream (for non-hot-path sampling)."""

    def __init__(self, key: int, start: int = 0):
        self.key = key
        self.counter = start

    def random(self) -> float:
        u = uniform(self.key, self.counter)
        self.counter += 1
        return u

    def below(self, n: int) -> int:
        r = below(self.key, self.counter, n)
        self.counter += 1
        return r

    def numpy(self) -> np.random.Generator:
        """A numpy Generator seeded from this stream, for vectorised bulk sampling."""
        seed = [self.key & 0xFFFFFFFF, self.key >> 32, self.counter & 0xFFFFFFFF]
        self.counter += 1
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
