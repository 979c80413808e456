"""Exact generating-function computations for percolated Galton-Watson trees.

Every probability generating function is held as a dense coefficient vector of
length ``Δ + 1``; derivatives and compositions are done on the coefficients.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SUM_TOL = 1e-12
FIXED_POINT_TOL = 1e-13


class AnalyticsError(ValueError):
    """Raised for invalid laws or out-of-domain parameters."""


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution ``probs[k] = P(xi = k)``."""

    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(x) for x in self.probs)
        if not probs:
            raise AnalyticsError("empty probability vector")
        if any(not math.isfinite(x) or x < 0.0 or x > 1.0 for x in probs):
            raise AnalyticsError(f"entries must lie in [0, 1]: {probs}")
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOL:
            raise AnalyticsError(f"probabilities sum to {total!r}, not 1")
        # trim trailing zeros so delta_max is the last index with positive mass
        last = max(k for k, x in enumerate(probs) if x > 0.0)
        object.__setattr__(self, "probs", probs[: last + 1])

    @property
    def delta_max(self) -> int:
        return len(self.probs) - 1

    @property
    def coeffs(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @property
    def mean(self) -> float:
        return self.factorial_moment(1)

    def factorial_moment(self, k: int) -> float:
        """``E[xi (xi-1) ... (xi-k+1)]``, i.e. ``f^{(k)}(1)``."""
        return math.fsum(
            x * math.perm(j, k) for j, x in enumerate(self.probs) if j >= k
        )

    def pgf(self, s: float) -> float:
        return _horner(self.probs, s)

    def derivative(self, s: float, order: int = 1) -> float:
        return _horner(_derive(self.probs, order), s)

    def to_json(self) -> str:
        return json.dumps(list(self.probs))

    @classmethod
    def from_json(cls, text: str) -> "OffspringLaw":
        data = json.loads(text)
        if not isinstance(data, list):
            raise AnalyticsError("offspring law JSON must be an array")
        return cls(tuple(data))

    @classmethod
    def point_mass(cls, k: int) -> "OffspringLaw":
        return cls(tuple([0.0] * k + [1.0]))


NAMED_LAWS = {
    "binary": OffspringLaw((0.0, 0.0, 1.0)),
    "mix13": OffspringLaw((0.0, 0.5, 0.0, 0.5)),
    "bin3": OffspringLaw(tuple(math.comb(3, k) * (2 / 3) ** k * (1 / 3) ** (3 - k) for k in range(4))),
}


def named_law(name: str) -> OffspringLaw:
    """Resolve a named base law, or parse a JSON array of probabilities."""
    if name in NAMED_LAWS:
        return NAMED_LAWS[name]
    if name.lstrip().startswith("["):
        return OffspringLaw.from_json(name)
    raise AnalyticsError(f"unknown base law {name!r}; known: {sorted(NAMED_LAWS)}")


def _horner(coeffs: Sequence[float], s: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * s + c
    return acc


def _derive(coeffs: Sequence[float], order: int) -> list[float]:
    out = list(coeffs)
    for _ in range(order):
        out = [k * out[k] for k in range(1, len(out))] or [0.0]
    return out


def percolate(base: OffspringLaw, p: float) -> OffspringLaw:
    """Law of the number of retained children when each edge survives w.p. ``p``."""
    if not 0.0 <= p <= 1.0:
        raise AnalyticsError(f"percolation parameter must be in [0, 1], got {p}")
    if p == 1.0:
        return base
    if p == 0.0:
        return OffspringLaw.point_mass(0)
    n = base.delta_max
    out = [0.0] * (n + 1)
    for k, pk in enumerate(base.probs):
        if pk == 0.0:
            continue
        for j in range(k + 1):
            out[j] += pk * math.comb(k, j) * p**j * (1.0 - p) ** (k - j)
    return OffspringLaw(tuple(out))


def _deflated_fixed_point(moments: Sequence[float], x: float) -> float:
    """``(1 - f(1-x) - x) / x`` expanded in factorial moments (no cancellation at x=0)."""
    acc = moments[1] - 1.0
    for j in range(2, len(moments)):
        acc -= (-1.0) ** j * moments[j] * x ** (j - 1) / math.factorial(j)
    return acc


def solve_extinction(law: OffspringLaw) -> tuple[float, float]:
    """Return ``(q, 1 - q)`` for the smallest fixed point ``q`` of the PGF.

    The survival probability ``x = 1 - q`` is found as the largest root in (0, 1]
    of the deflated equation, which keeps full relative precision as the law
    approaches criticality. When ``q < 1/2`` it is refined separately on the
    PGF itself so that a tiny ``q`` keeps its relative precision too.
    """
    moments = [law.factorial_moment(j) for j in range(law.delta_max + 1)]
    if law.delta_max < 1 or moments[1] <= 1.0:
        return 1.0, 0.0
    if law.probs[0] == 0.0:
        return 0.0, 1.0
    lo, hi = 0.0, 1.0  # h(lo) > 0 >= h(hi)
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _deflated_fixed_point(moments, mid) > 0.0:
            lo = mid
        else:
            hi = mid
    # bisection runs to adjacent floats, so no Newton polish is needed
    x = hi if abs(_deflated_fixed_point(moments, hi)) <= abs(_deflated_fixed_point(moments, lo)) else lo
    q = 1.0 - x
    if q < 0.5:
        # far from criticality: refine q itself, where floats keep full relative precision near 0
        lo, hi = 0.0, 1.0 - 0.5 * x  # f(s) > s below q and f(s) < s on (q, 1)
        while True:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if _horner(law.probs, mid) > mid:
                lo = mid
            else:
                hi = mid
        q = hi if abs(_horner(law.probs, hi) - hi) <= abs(_horner(law.probs, lo) - lo) else lo
    return q, x


def extinction_probability(law: OffspringLaw) -> float:
    return solve_extinction(law)[0]


@dataclass(frozen=True)
class AnalyticProfile:
    """Exact quantities of the base law percolated at ``p``.

    JSON keys (``to_dict``): ``p, p_c, eps, supercritical, q, one_minus_q, mu_p,
    mu_star, fp_prime_0, v, kappa, base, percolated, factorial_moments, fhat, fstar``.
    """

    base: OffspringLaw
    p: float
    p_c: float
    percolated: OffspringLaw
    q: float
    one_minus_q: float
    mu_p: float
    mu_star: float
    factorial_moments: tuple[float, ...]
    v: float
    kappa: float
    fhat: tuple[float, ...] = field(default=())
    fstar: tuple[float, ...] = field(default=())

    @property
    def eps(self) -> float:
        return self.p - self.p_c

    @property
    def supercritical(self) -> bool:
        return self.p > self.p_c

    @property
    def fp_prime_0(self) -> float:
        return self.percolated.derivative(0.0)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "p_c": self.p_c,
            "eps": self.eps,
            "supercritical": self.supercritical,
            "q": self.q,
            "one_minus_q": self.one_minus_q,
            "mu_p": self.mu_p,
            "mu_star": self.mu_star,
            "fp_prime_0": self.fp_prime_0,
            "v": self.v,
            "kappa": self.kappa,
            "base": list(self.base.probs),
            "percolated": list(self.percolated.probs),
            "factorial_moments": list(self.factorial_moments),
            "fhat": list(self.fhat),
            "fstar": list(self.fstar),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def profile(base: OffspringLaw, p: float) -> AnalyticProfile:
    """Compute every exact quantity at percolation parameter ``p``."""
    if base.mean <= 1.0:
        raise AnalyticsError(f"base law must be supercritical, mean = {base.mean}")
    perc = percolate(base, p)
    q, x = solve_extinction(perc)
    p_c = 1.0 / base.mean
    moments = tuple(perc.factorial_moment(k) for k in range(perc.delta_max + 1))
    fhat: tuple[float, ...] = ()
    fstar: tuple[float, ...] = ()
    if p > p_c:
        fhat, fstar = _dual_coefficients(perc, q, x)
    try:
        kap = kappa(base)
    except AnalyticsError:
        kap = math.nan
    prof = AnalyticProfile(
        base=base,
        p=p,
        p_c=p_c,
        percolated=perc,
        q=q,
        one_minus_q=x,
        mu_p=perc.mean,
        mu_star=perc.derivative(q),
        factorial_moments=moments,
        v=0.0,
        kappa=kap,
        fhat=fhat,
        fstar=fstar,
    )
    return dataclasses.replace(prof, v=lpp_speed(prof))


def _dual_coefficients(perc: OffspringLaw, q: float, x: float):
    n = perc.delta_max
    c = perc.probs
    fhat = [0.0] * (n + 1)
    for j in range(1, n + 1):
        fhat[j] = math.fsum(
            c[k] * math.comb(k, j) * q ** (k - j) * x ** (j - 1) for k in range(j, n + 1)
        )
    if q == 0.0:
        fstar = [1.0] + [0.0] * n  # degenerate: no finite bushes exist
    else:
        fstar = [c[j] * q ** (j - 1) if j else c[0] / q for j in range(n + 1)]
    return tuple(fhat), tuple(fstar)


def dual_generating_functions(prof: AnalyticProfile) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of the backbone PGF ``f̂`` and the trap-bush PGF ``f*``."""
    if not prof.supercritical:
        raise AnalyticsError("backbone undefined at criticality (p <= p_c)")
    return np.asarray(prof.fhat), np.asarray(prof.fstar)


def trap_count_law(prof: AnalyticProfile, delta: int) -> OffspringLaw:
    """Law of the number of bushes hung on a backbone vertex with ``delta`` backbone children.

    ``E[s^U] = f_p^{(delta)}(q s) / f_p^{(delta)}(q)``.
    """
    if not prof.supercritical:
        raise AnalyticsError("trap law requires p > p_c")
    c = prof.percolated.probs
    n = prof.percolated.delta_max
    if delta < 0 or delta > n:
        raise AnalyticsError(f"delta={delta} exceeds the degree {n} of f_p")
    q = prof.q
    if q == 0.0:
        return OffspringLaw.point_mass(0)
    weights = [c[delta + u] * math.perm(delta + u, delta) * q**u for u in range(n - delta + 1)]
    total = math.fsum(weights)
    if total <= 0.0:
        raise AnalyticsError(f"f_p^({delta})(q) vanishes; delta={delta} has zero probability")
    return OffspringLaw(tuple(w / total for w in weights))


def lpp_speed(prof: AnalyticProfile) -> float:
    """Effective speed from the Lyons-Pemantle-Peres series, 0 when ``p <= p_c``.

    The sum over ``k`` is regrouped in powers of ``x = 1 - q`` and the
    fixed-point identity absorbs the two O(eps) terms, so the O(eps^2) result
    is free of catastrophic cancellation.
    """
    if not prof.supercritical:
        return 0.0
    x = prof.one_minus_q
    c = prof.percolated.probs
    n = prof.percolated.delta_max
    m = prof.factorial_moments
    terms = [(-1.0) ** j * m[j] * x ** (j - 1) / math.factorial(j) for j in range(3, n + 1)]
    for j in range(2, n + 1):
        cj = math.fsum(
            c[k] * (k - 1) / (k + 1) * math.comb(k + 1, j + 1) for k in range(j, n + 1)
        )
        terms.append((-x) ** j * cj)
    return math.fsum(terms) / (2.0 - x)


def lpp_speed_direct(prof: AnalyticProfile) -> float:
    """Literal finite sum ``Σ (k-1)/(k+1) p_k (1-q^{k+1}) / (1-q^2)``; loses accuracy near p_c."""
    if not prof.supercritical:
        return 0.0
    q = prof.q
    return math.fsum(
        (k - 1) / (k + 1) * pk * (1.0 - q ** (k + 1)) / (1.0 - q * q)
        for k, pk in enumerate(prof.percolated.probs)
    )


def kappa(law: OffspringLaw) -> float:
    m1, m2 = law.factorial_moment(1), law.factorial_moment(2)
    if m1 <= 1.0:
        raise AnalyticsError("kappa requires a supercritical law")
    if m2 == 0.0:
        raise AnalyticsError("kappa undefined: second factorial moment is zero")
    return m1**4 / (3.0 * m2)


REPORT_COLUMNS = (
    "p", "eps", "q", "one_minus_q_ratio", "mu_star_ratio", "fhat2_ratio",
    "v", "v_over_eps2", "kappa",
)


def asymptotic_report(base: OffspringLaw, p_grid: Iterable[float]) -> list[dict]:
    """Exact values against their leading-order near-critical predictions."""
    m1, m2 = base.factorial_moment(1), base.factorial_moment(2)
    kap = kappa(base)
    rows = []
    for p in p_grid:
        prof = profile(base, p)
        if not prof.supercritical:
            raise AnalyticsError(f"grid point p={p} is not supercritical")
        eps = prof.eps
        fhat2 = 2.0 * prof.fhat[2] if len(prof.fhat) > 2 else 0.0
        rows.append({
            "p": p,
            "eps": eps,
            "q": prof.q,
            "one_minus_q_ratio": prof.one_minus_q / (2.0 * m1**3 / m2 * eps),
            "mu_star_ratio": prof.mu_star / (1.0 - m1 * eps),
            "fhat2_ratio": fhat2 / (2.0 * m1 * eps),
            "v": prof.v,
            "v_over_eps2": prof.v / eps**2,
            "kappa": kap,
        })
    return rows


def kappa_convergence_table(base: OffspringLaw, eps_grid: Iterable[float]) -> list[dict]:
    kap = kappa(base)
    p_c = 1.0 / base.mean
    rows = []
    for eps in eps_grid:
        prof = profile(base, p_c + eps)
        eps_eff = prof.eps
        v_over = prof.v / eps_eff**2
        rows.append({"eps": eps_eff, "v": prof.v, "v_over_eps2": v_over, "ratio": v_over / kap})
    return rows


def rows_to_csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in columns})
    return buf.getvalue()
