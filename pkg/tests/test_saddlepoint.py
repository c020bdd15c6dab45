import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize
from scipy.stats import norm

from spagwas import (
    Dataset,
    EfficientCgf,
    GenotypeCounts,
    JointCgf,
    dspa_cc_survival,
    espa_survival,
    exact_intercept_pmf,
    fit_null,
    left_tail,
    two_sided_pvalue,
)
from spagwas.evaluate import intercept_fit
from spagwas.saddlepoint import bn_tail, lr_tail_diagnostic, solve_double, solve_single, tail_evaluator

from conftest import random_design


def oracle_dspa_cc(fit, g, u):
    """Double saddlepoint tail written out directly and solved with ``fsolve``."""
    Z = np.column_stack([fit.X, g]).astype(float)
    mu = fit.mu_hat
    target = np.r_[np.zeros(fit.d), u - 0.5]

    def K(t):
        eta = Z @ t
        return np.sum(np.log(1 - mu + mu * np.exp(eta)) - mu * eta)

    def grad(t):
        p = mu * np.exp(Z @ t) / (1 - mu + mu * np.exp(Z @ t))
        return Z.T @ (p - mu)

    def hess(t):
        p = mu * np.exp(Z @ t) / (1 - mu + mu * np.exp(Z @ t))
        return (Z * (p * (1 - p))[:, None]).T @ Z

    t = optimize.fsolve(lambda s: grad(s) - target, np.zeros(fit.d + 1), fprime=hess, xtol=1e-13)
    tg = t[-1]
    w = math.copysign(math.sqrt(2 * (tg * (u - 0.5) - K(t))), tg)
    v = 2 * math.sinh(tg / 2) * math.sqrt(np.linalg.det(hess(t)) / np.linalg.det(fit.xtwx))
    return norm.sf(w + math.log(v / w) / w)


def test_bn_tail_reduces_to_normal():
    assert bn_tail(1.2816, 1.2816) == pytest.approx(0.1, abs=1e-4)
    assert bn_tail(-0.7, -0.7) == pytest.approx(norm.sf(-0.7), abs=1e-15)
    assert bn_tail(-0.7, -0.7) > 0.5


@pytest.mark.parametrize("w, v", [(1.9, 2.5), (3.4, 5.2), (4.7, 7.8), (2.0, 1.6), (-1.5, -1.2)])
def test_bn_tail_agrees_with_lugannani_rice(w, v):
    # both expansions share the first-order correction in (v - w)
    assert bn_tail(w, v) == pytest.approx(lr_tail_diagnostic(w, v), rel=0.05)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_solve_double_residual(seed):
    rng = np.random.default_rng(seed)
    y, X = random_design(rng, 50, 2)
    fit = fit_null(Dataset(y, X))
    g = rng.binomial(2, 0.3, 50)
    cgf = JointCgf.from_fit(fit, g)
    sd = math.sqrt(cgf.value_grad_hess(np.zeros(3))[2][-1, -1])
    for target in (-1.5 * sd, 0.5 * sd, 2.0 * sd):
        sol = solve_double(cgf, target)
        resid = cgf.value_grad_hess(sol.t_hat)[1] - np.r_[0.0, 0.0, target]
        assert np.max(np.abs(resid)) <= 1e-10


def test_solve_single_zero_and_residual():
    rng = np.random.default_rng(4)
    cgf = EfficientCgf(rng.uniform(0.05, 0.4, 60), rng.standard_normal(60))
    assert solve_single(cgf, 0.0).t_hat[0] == pytest.approx(0.0, abs=1e-12)
    for target in (-3.0, 1.0, 5.0):
        t = solve_single(cgf, target).t_hat[0]
        assert abs(cgf.value_deriv1_deriv2(t)[1] - target) <= 1e-12 * (1 + abs(target))


@pytest.mark.parametrize("seed, u", [(0, 2.3), (1, 3.1), (2, -1.7)])
def test_dspa_cc_matches_oracle_with_covariates(seed, u):
    rng = np.random.default_rng(seed)
    y, X = random_design(rng, 80, 2)
    fit = fit_null(Dataset(y, X))
    g = rng.binomial(2, 0.15, 80)
    got = dspa_cc_survival(fit, g, u)
    assert got.survival == pytest.approx(oracle_dspa_cc(fit, g, u), rel=1e-8)


@pytest.mark.parametrize("u", [2.4, 4.4, 6.4])
def test_dspa_cc_matches_oracle_intercept(u):
    counts = GenotypeCounts(980, 20, 0)
    fit = intercept_fit(1000, 30)
    got = dspa_cc_survival(fit, counts.genotype(), u).survival
    assert got == pytest.approx(oracle_dspa_cc(fit, counts.genotype(), u), rel=1e-8)
    # and the approximation is accurate against the exact tail
    assert got == pytest.approx(exact_intercept_pmf(counts, 30).sf(u), rel=0.05)


def test_five_observation_dspa_cc_within_ten_percent():
    counts = GenotypeCounts(3, 2, 0)
    pmf = exact_intercept_pmf(counts, 2)
    fit = intercept_fit(5, 2)
    for u in pmf.support:
        exact = pmf.sf(u)
        assert dspa_cc_survival(fit, counts.genotype(), float(u)).survival == pytest.approx(exact, rel=0.10)


def oracle_espa_cc(fit, g, u):
    """Single saddlepoint tail of the efficient score, solved with ``brentq``."""
    mu = fit.mu_hat
    gt = g - fit.X @ np.linalg.solve(fit.X.T @ (fit.w_hat[:, None] * fit.X), fit.X.T @ (fit.w_hat * g))
    K = lambda t: np.sum(np.log(1 - mu + mu * np.exp(t * gt)) - mu * t * gt)
    tilt = lambda t: mu * np.exp(t * gt) / (1 - mu + mu * np.exp(t * gt))
    t = optimize.brentq(lambda s: gt @ (tilt(s) - mu) - (u - 0.5), -50, 50, xtol=1e-14)
    p = tilt(t)
    w = math.copysign(math.sqrt(2 * (t * (u - 0.5) - K(t))), t)
    v = 2 * math.sinh(t / 2) * math.sqrt(np.sum(gt**2 * p * (1 - p)))
    return norm.sf(w + math.log(v / w) / w)


def test_five_observation_espa_cc():
    counts = GenotypeCounts(3, 2, 0)
    fit = intercept_fit(5, 2)
    g = counts.genotype().astype(float)
    got = [espa_survival(fit, g, u, corrected=True).survival for u in (0.2, 1.2)]
    assert got == pytest.approx([oracle_espa_cc(fit, g, 0.2), oracle_espa_cc(fit, g, 1.2)], rel=1e-9)
    # the unconditional CGF misses the far tail by about 29% here (exact 0.1)
    assert got[1] == pytest.approx(0.0714, abs=1e-4)


def test_survival_monotone_across_support():
    counts = GenotypeCounts(903, 95, 2)
    pmf = exact_intercept_pmf(counts, 50)
    fit = intercept_fit(1000, 50)
    for method in ("dspa_cc", "espa_cc"):
        ev = tail_evaluator(method, fit, counts.genotype())
        s = np.array([ev.survival(float(u)).survival for u in pmf.support])
        assert np.all(np.diff(s) <= 1e-15)
        assert s[0] == 1.0


def test_near_mean_fallback_is_continuous():
    counts = GenotypeCounts(180, 20, 0)
    fit = intercept_fit(200, 40)
    ev = tail_evaluator("dspa_cc", fit, counts.genotype())
    # u - 1/2 hits the mean exactly for u = 0.5
    mid = ev.survival(0.5)
    assert mid.fallback_used
    assert ev.survival(0.5 - 1e-3).survival == pytest.approx(mid.survival, abs=1e-3)
    assert ev.survival(0.5 + 1e-3).survival == pytest.approx(mid.survival, abs=1e-3)


def test_beyond_support_is_boundary():
    counts = GenotypeCounts(980, 20, 0)
    fit = intercept_fit(1000, 10)
    for method in ("dspa_cc", "espa_cc"):
        ev = tail_evaluator(method, fit, counts.genotype())
        above = ev.survival(10.8)
        assert above.survival == 0.0 and above.boundary
        assert ev.survival(-0.2).survival == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.sampled_from(["dspa_cc", "espa_cc"]))
def test_left_tail_is_complement_of_shifted_survival(k, method):
    counts = GenotypeCounts(980, 20, 0)
    fit = intercept_fit(1000, 30)
    u = exact_intercept_pmf(counts, 30).support[k]
    ev = tail_evaluator(method, fit, counts.genotype())
    assert left_tail(method, fit, counts.genotype(), float(u)) == pytest.approx(
        1.0 - ev.survival(float(u) + 1.0).survival, abs=1e-12)


def test_espa_smaller_than_espa_cc_for_rare_variant():
    n = 2000
    y = np.zeros(n)
    y[:20] = 1
    fit = fit_null(Dataset(y, np.ones((n, 1))))
    g = np.zeros(n, dtype=int)
    g[:2] = 1
    g[20:22] = 1
    p_espa = two_sided_pvalue("espa", fit, g).p_two_sided
    p_cc = two_sided_pvalue("espa_cc", fit, g).p_two_sided
    assert p_espa < p_cc
    assert p_cc == pytest.approx(two_sided_pvalue("exact_intercept", fit, g).p_two_sided, rel=0.1)
