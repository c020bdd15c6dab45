import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spagwas import (
    Dataset,
    GenotypeCounts,
    LatticePmf,
    exact_intercept_pmf,
    fit_null,
    normal_pvalue,
    reflect,
    two_sided_pvalue,
)
from spagwas.pvalue import ExactTails, pvalue_from_tails

from conftest import brute_force_score_pmf


def test_reflection_examples():
    assert reflect(4.5) == pytest.approx(-4.5, abs=1e-12)
    assert reflect(1.9) == pytest.approx(-2.1, abs=1e-12)
    assert reflect(-1.9) == pytest.approx(2.1, abs=1e-12)
    assert reflect(4.5 + 1e-15) == pytest.approx(-4.5, abs=1e-12)
    with pytest.raises(ValueError):
        reflect(0.0)


@settings(max_examples=200)
@given(st.floats(-1e4, 1e4).filter(lambda u: abs(u) > 1e-6))
def test_reflection_properties(u):
    r = reflect(u)
    # on the same step-1 lattice, opposite side, at least as far out, within one step of -u
    assert (u - r) == pytest.approx(round(u - r), abs=1e-6)
    assert math.copysign(1.0, r) == -math.copysign(1.0, u)
    assert abs(r) >= abs(u) - 1e-9
    assert abs(r + u) < 1.0 + 1e-9


def test_one_sided_when_reflection_leaves_support():
    # support -1.1, -0.1, ..., 2.9
    pmf = LatticePmf(-1.1, np.array([0.4, 0.3, 0.15, 0.1, 0.05]))
    rep = pvalue_from_tails(ExactTails(pmf, "exact_intercept"), 1.9, pmf.lower, pmf.upper, "exact_intercept")
    assert rep.u_inv == pytest.approx(-2.1)
    assert rep.sided == "one"
    assert rep.p_two_sided == pytest.approx(0.15)


def test_two_sided_sums_both_tails():
    pmf = LatticePmf(-4.5, np.full(10, 0.1))
    rep = pvalue_from_tails(ExactTails(pmf, "exact_intercept"), 3.5, pmf.lower, pmf.upper, "exact_intercept")
    assert rep.sided == "two"
    assert rep.p_two_sided == pytest.approx(0.4)
    rep = pvalue_from_tails(ExactTails(pmf, "exact_intercept"), -3.5, pmf.lower, pmf.upper, "exact_intercept")
    assert rep.p_two_sided == pytest.approx(0.4)


def brute_force_pvalue(law, u):
    r = reflect(u)
    if u > 0:
        return sum(p for x, p in law.items() if x >= u - 1e-9 or x <= r + 1e-9)
    return sum(p for x, p in law.items() if x <= u + 1e-9 or x >= r - 1e-9)


@pytest.mark.parametrize("counts, v", [
    (GenotypeCounts(6, 3, 1), 4),
    (GenotypeCounts(8, 2, 0), 3),
    (GenotypeCounts(4, 4, 2), 5),
])
def test_exact_pvalue_matches_enumeration(counts, v):
    n = counts.n
    y = np.r_[np.ones(v), np.zeros(n - v)]
    fit = fit_null(Dataset(y, np.ones((n, 1))))
    g = counts.genotype()
    law = brute_force_score_pmf(g, np.zeros(n), [v])
    for u in exact_intercept_pmf(counts, v).support:
        if abs(u) < 1e-9:
            continue
        rep = two_sided_pvalue("exact_intercept", fit, g, u=float(u))
        assert rep.p_two_sided == pytest.approx(min(brute_force_pvalue(law, u), 1.0), abs=1e-12)


def test_exact_binary_covariate_pvalue():
    g = np.array([0, 0, 1, 2, 0, 1, 0, 0, 1, 1, 0, 2])
    x = np.r_[np.zeros(6), np.ones(6)]
    y = np.array([1, 0, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0], dtype=float)
    fit = fit_null(Dataset(y, np.column_stack([np.ones(12), x])))
    rep = two_sided_pvalue("exact_binary", fit, g)
    law = brute_force_score_pmf(g, x, [2, 3])
    assert rep.p_two_sided == pytest.approx(brute_force_pvalue(law, rep.u), abs=1e-12)
    with pytest.raises(ValueError):
        two_sided_pvalue("exact_intercept", fit, g)


def test_zero_score_gives_one():
    n = 10
    y = np.r_[np.ones(5), np.zeros(5)]
    fit = fit_null(Dataset(y, np.ones((n, 1))))
    g = np.array([1, 0, 0, 0, 0, 1, 0, 0, 0, 0])
    for m in ("normal", "dspa_cc", "espa_cc", "espa", "exact_intercept"):
        rep = two_sided_pvalue(m, fit, g)
        assert rep.p_two_sided == 1.0


def test_normal_pvalue_formula():
    rng = np.random.default_rng(5)
    n = 300
    y = (rng.random(n) < 0.2).astype(float)
    fit = fit_null(Dataset(y, np.ones((n, 1))))
    g = rng.binomial(2, 0.1, n)
    rep = normal_pvalue(fit, g)
    mu = y.mean()
    var = mu * (1 - mu) * np.sum((g - g.mean()) ** 2)
    z = abs(g @ (y - mu)) / math.sqrt(var)
    assert rep.p_two_sided == pytest.approx(math.erfc(z / math.sqrt(2)), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["dspa_cc", "espa_cc", "espa", "fast_spa", "fast_dspa_cc"]))
def test_pvalues_are_probabilities(seed, method):
    rng = np.random.default_rng(seed)
    n = 200
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = (rng.random(n) < 0.1).astype(float)
    y[:2] = (1, 0)
    fit = fit_null(Dataset(y, X))
    g = rng.binomial(2, 0.05, n)
    if g.sum() == 0:
        g[0] = 1
    rep = two_sided_pvalue(method, fit, g)
    assert 0.0 < rep.p_two_sided <= 1.0


def test_continuous_espa_uses_normal_near_center():
    n = 400
    y = np.r_[np.ones(40), np.zeros(n - 40)]
    fit = fit_null(Dataset(y, np.ones((n, 1))))
    g = np.zeros(n, dtype=int)
    g[[0, 1, 101, 102, 103, 104, 105, 106, 107, 108]] = 1
    rep = two_sided_pvalue("espa", fit, g)
    assert "normal_region" in rep.flags
    assert rep.p_two_sided == pytest.approx(normal_pvalue(fit, g).p_two_sided, rel=1e-12)
