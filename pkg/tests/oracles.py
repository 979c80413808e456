"""Independent reference computations used by the tests.

Everything here is written from first principles with mpmath at high
precision or by brute-force enumeration, sharing no code with the package.
"""

from itertools import product

import mpmath as mp

mp.mp.dps = 60


def extinction(probs, p):
    """Smallest root of ``f_p(s) = s`` on [0, 1] by bisection at 60 digits."""
    c = percolated(probs, p)

    def g(s):
        return mp.fsum(ck * s**k for k, ck in enumerate(c)) - s

    mean = mp.fsum(k * ck for k, ck in enumerate(c))
    if mean <= 1:
        return mp.mpf(1)
    lo, hi = mp.mpf(0), mp.mpf(1) - mp.mpf(10) ** -40
    # g(0) >= 0 and g < 0 just below 1 when supercritical; shrink hi until the sign flips
    while g(hi) >= 0:
        hi = (lo + hi) / 2
    for _ in range(400):
        mid = (lo + hi) / 2
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def percolated(probs, p):
    """Thinned law by direct binomial expansion, renormalised to total mass exactly 1.

    Float inputs can miss unit mass by an ulp; near criticality that would move
    the root of ``f(s) = s`` by ``1e-16 / (m_1 - 1)``.
    """
    p = mp.mpf(p)
    total = mp.fsum(mp.mpf(c) for c in probs)
    probs = [mp.mpf(c) / total for c in probs]
    n = len(probs) - 1
    out = [mp.mpf(0)] * (n + 1)
    for k, ck in enumerate(probs):
        for j in range(k + 1):
            out[j] += ck * mp.binomial(k, j) * p**j * (1 - p) ** (k - j)
    return out


def lpp_speed(probs, p):
    """Literal LPP sum at 60 digits (its cancellation is harmless at this precision)."""
    c = percolated(probs, p)
    q = extinction(probs, p)
    return mp.fsum((k - 1) * ck * (1 - q ** (k + 1)) / ((k + 1) * (1 - q * q)) for k, ck in enumerate(c))


def conditioned_first_generation(probs, p):
    """``P(Z_1 = k | survival) = c_k (1 - q^k) / (1 - q)``."""
    c = percolated(probs, p)
    q = extinction(probs, p)
    return [float(ck * (1 - q**k) / (1 - q)) for k, ck in enumerate(c)]


def backbone_and_bush_laws(probs, p):
    """Enumerate child survival patterns to get the backbone count and bush count laws.

    A vertex with ``k`` children, each surviving independently with
    probability ``1 - q``; conditioned on at least one survivor this gives
    ``(δ, U)`` jointly.
    """
    c = percolated(probs, p)
    q = extinction(probs, p)
    x = 1 - q
    joint = {}
    for k, ck in enumerate(c):
        for pattern in product((0, 1), repeat=k):
            delta = sum(pattern)
            if delta == 0:
                continue
            w = ck * x**delta * q ** (k - delta)
            joint[(delta, k - delta)] = joint.get((delta, k - delta), 0) + w / x
    return joint


def chain_return_moments(adj, v, n_terms=4000):
    """First two moments of the return time to ``v`` by summing the exact first-return law."""
    n = len(adj)
    P = mp.zeros(n, n)
    for u in range(n):
        for w in adj[u]:
            P[u, w] = mp.mpf(1) / len(adj[u])
    dist = mp.zeros(1, n)
    for w in adj[v]:
        dist[0, w] = P[v, w]
    m1 = m2 = mp.mpf(0)
    for t in range(1, n_terms + 1):
        ret = dist[0, v]
        m1 += t * ret
        m2 += t * t * ret
        dist[0, v] = 0
        dist = dist * P
    return m1, m2
