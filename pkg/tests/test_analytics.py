import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critwalk import analytics
from critwalk.analytics import AnalyticsError, OffspringLaw

import oracles


def laws(max_degree=6):
    """Supercritical offspring laws with finite support."""
    return (st.lists(st.floats(0.0, 1.0), min_size=3, max_size=max_degree + 1)
            .filter(lambda w: sum(w) > 0.1)
            .map(lambda w: OffspringLaw(tuple(x / sum(w) for x in w)))
            .filter(lambda law: law.mean > 1.05))


# -------------------------------------------------- offspring laws

def test_offspring_law_validation():
    with pytest.raises(AnalyticsError):
        OffspringLaw((0.5, 0.6))
    with pytest.raises(AnalyticsError):
        OffspringLaw((-0.1, 1.1))
    with pytest.raises(AnalyticsError):
        analytics.named_law("ternary-ish")


def test_json_round_trip(mix13):
    assert OffspringLaw.from_json(mix13.to_json()) == mix13
    assert analytics.named_law("[0, 0.5, 0, 0.5]") == mix13


def test_factorial_moments_binary(binary):
    assert binary.factorial_moment(1) == 2.0
    assert binary.factorial_moment(2) == 2.0
    assert binary.factorial_moment(3) == 0.0


def test_percolate_matches_binomial_thinning(mix13):
    got = analytics.percolate(mix13, 0.7).probs
    want = [float(x) for x in oracles.percolated(mix13.probs, 0.7)]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(laws(), st.floats(0.05, 1.0))
def test_percolate_is_a_pgf_composition(law, p):
    perc = analytics.percolate(law, p)
    assert math.isclose(sum(perc.probs), 1.0, abs_tol=1e-12)
    assert math.isclose(perc.mean, p * law.mean, rel_tol=1e-12)
    for s in (0.0, 0.3, 0.9):
        assert math.isclose(perc.pgf(s), law.pgf(1 - p + p * s), rel_tol=1e-12, abs_tol=1e-15)


# -------------------------------------------------- extinction

def test_binary_extinction_closed_form(binary):
    # f_p(s) = (1 - p + p s)^2 has the roots 1 and ((1 - p) / p)^2
    prof = analytics.profile(binary, 0.6)
    assert abs(prof.q - 4 / 9) <= 1e-12
    assert abs(prof.one_minus_q - 5 / 9) <= 1e-12
    assert analytics.profile(binary, 1.0).q == 0.0
    assert analytics.profile(binary, 0.5).q == 1.0
    assert analytics.profile(binary, 0.3).q == 1.0


@pytest.mark.parametrize("name,p", [("binary", 0.500001), ("mix13", 0.5 + 1e-5), ("bin3", 0.8), ("mix13", 0.9)])
def test_extinction_matches_high_precision(name, p):
    law = analytics.named_law(name)
    prof = analytics.profile(law, p)
    want = oracles.extinction(law.probs, p)
    assert abs(prof.one_minus_q - float(1 - want)) <= 1e-12 * float(1 - want)


@settings(max_examples=60, deadline=None)
@given(laws(), st.floats(0.0, 1.0))
def test_extinction_is_a_fixed_point(law, p):
    prof = analytics.profile(law, max(p, 1e-3))
    perc = prof.percolated
    assert 0.0 <= prof.q <= 1.0
    if prof.supercritical:
        assert abs(perc.pgf(prof.q) - prof.q) <= 1e-12
        assert prof.mu_star < 1.0
    else:
        assert prof.q == 1.0


# -------------------------------------------------- duality

def test_backbone_and_bush_laws_match_enumeration(mix13):
    prof = analytics.profile(mix13, 0.8)
    joint = oracles.backbone_and_bush_laws(mix13.probs, 0.8)
    fhat = [0.0] * 4
    for (delta, _), w in joint.items():
        fhat[delta] += float(w)
    np.testing.assert_allclose(prof.fhat, fhat, atol=1e-14)
    for delta in (1, 2, 3):
        row = {u: float(w) for (d, u), w in joint.items() if d == delta}
        total = sum(row.values())
        law = analytics.trap_count_law(prof, delta)
        for u, pu in enumerate(law.probs):
            assert abs(pu - row.get(u, 0.0) / total) <= 1e-14


def test_bush_law_is_subcritical_percolated_law_at_q(prof06):
    # f*(s) = f_p(q s) / q
    fstar = OffspringLaw(prof06.fstar)
    for s in (0.0, 0.4, 1.0):
        assert math.isclose(fstar.pgf(s), prof06.percolated.pgf(prof06.q * s) / prof06.q, rel_tol=1e-13)
    assert math.isclose(fstar.mean, prof06.mu_star, rel_tol=1e-13)


@settings(max_examples=60, deadline=None)
@given(laws(), st.floats(0.1, 1.0))
def test_dual_laws_are_probability_vectors(law, p):
    prof = analytics.profile(law, p)
    if not prof.supercritical:
        with pytest.raises(AnalyticsError):
            analytics.dual_generating_functions(prof)
        return
    fhat, fstar = analytics.dual_generating_functions(prof)
    assert fhat[0] == 0.0
    assert math.isclose(fhat.sum(), 1.0, abs_tol=1e-12)
    assert math.isclose(fstar.sum(), 1.0, abs_tol=1e-12)
    assert np.all(fhat >= 0) and np.all(fstar >= 0)
    # the backbone has single-child probability f_p'(q)
    assert math.isclose(fhat[1], prof.mu_star, rel_tol=1e-9, abs_tol=1e-15)


def test_trap_law_errors(prof06, binary):
    with pytest.raises(AnalyticsError):
        analytics.trap_count_law(prof06, 5)
    with pytest.raises(AnalyticsError):
        analytics.trap_count_law(analytics.profile(binary, 0.4), 1)
    assert analytics.trap_count_law(analytics.profile(binary, 1.0), 2).probs == (1.0,)


# -------------------------------------------------- speed

def test_binary_speed_closed_form(binary):
    # v = 8 eps^2 / (3 (1 + 4 eps^2)) for the binary base
    assert math.isclose(analytics.profile(binary, 0.6).v, 1 / 39, rel_tol=1e-9)
    assert abs(analytics.profile(binary, 1.0).v - 1 / 3) <= 1e-12
    assert math.isclose(analytics.profile(binary, 0.51).v, 8e-4 / (3 * 1.0004), rel_tol=1e-9)
    assert analytics.profile(binary, 0.45).v == 0.0


@pytest.mark.parametrize("name", ["binary", "mix13", "bin3"])
@pytest.mark.parametrize("eps", [0.3, 1e-2, 1e-4, 1e-6])
def test_speed_matches_high_precision_sum(name, eps):
    law = analytics.named_law(name)
    p = 1 / law.mean + eps
    if p > 1:
        pytest.skip("p above 1")
    prof = analytics.profile(law, p)
    want = float(oracles.lpp_speed(law.probs, prof.p))
    assert math.isclose(prof.v, want, rel_tol=1e-9)


def test_direct_sum_agrees_away_from_criticality(mix13):
    prof = analytics.profile(mix13, 0.8)
    assert math.isclose(analytics.lpp_speed_direct(prof), prof.v, rel_tol=1e-12)


def test_kappa_values(binary, mix13):
    assert math.isclose(analytics.kappa(binary), 8 / 3, rel_tol=1e-15)
    assert math.isclose(analytics.kappa(mix13), 16 / 9, rel_tol=1e-15)
    with pytest.raises(AnalyticsError):
        analytics.kappa(OffspringLaw((0.5, 0.0, 0.5)))


@settings(max_examples=40, deadline=None)
@given(laws(), st.floats(0.05, 1.0))
def test_speed_is_in_unit_interval_and_monotone(law, p):
    v1 = analytics.profile(law, p).v
    v2 = analytics.profile(law, min(1.0, p + 0.05)).v
    assert 0.0 <= v1 <= 1.0
    assert v2 >= v1 - 1e-15


def test_kappa_table_rows(binary):
    rows = analytics.kappa_convergence_table(binary, [1e-1, 1e-3])
    assert [round(r["eps"], 12) for r in rows] == [0.1, 0.001]
    assert math.isclose(rows[0]["ratio"], 1 / 1.04, rel_tol=1e-9)


def test_asymptotic_report_ratios_approach_one(mix13):
    rows = analytics.asymptotic_report(mix13, [0.5 + 1e-4])
    r = rows[0]
    for key in ("one_minus_q_ratio", "mu_star_ratio", "fhat2_ratio"):
        assert abs(r[key] - 1) < 1e-2
    csv = analytics.rows_to_csv(rows, analytics.REPORT_COLUMNS)
    assert csv.splitlines()[0] == ",".join(analytics.REPORT_COLUMNS)


def test_profile_json_keys(prof06):
    d = prof06.to_dict()
    for k in ("p", "p_c", "eps", "q", "one_minus_q", "mu_p", "mu_star", "v", "kappa", "fhat", "fstar"):
        assert k in d
