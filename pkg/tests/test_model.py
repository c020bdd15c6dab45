import numpy as np
import pytest
from scipy import optimize
from scipy.special import expit

from spagwas import (
    Dataset,
    FitError,
    SeparationError,
    conditional_variance,
    efficient_genotype,
    fit_null,
    score_statistic,
)
from spagwas.model import check_genotype, score_context

from conftest import random_design


def test_intercept_fit_is_case_fraction():
    y = np.array([1, 1, 0, 0, 0], dtype=float)
    fit = fit_null(Dataset(y, np.ones((5, 1))))
    np.testing.assert_allclose(fit.mu_hat, 0.4, atol=1e-12)
    np.testing.assert_allclose(fit.xtwx, [[1.2]], atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fit_matches_direct_likelihood_maximisation(seed):
    rng = np.random.default_rng(seed)
    y, X = random_design(rng, 200, 4)
    fit = fit_null(Dataset(y, X))

    def nll(b):
        eta = X @ b
        return -np.sum(y * eta - np.logaddexp(0.0, eta))

    ref = optimize.minimize(nll, np.zeros(4), jac=lambda b: -X.T @ (y - expit(X @ b)),
                            method="BFGS", options={"gtol": 1e-10})
    np.testing.assert_allclose(fit.beta_hat, ref.x, atol=1e-6)
    assert np.max(np.abs(fit.X.T @ (y - fit.mu_hat))) <= 1e-8 * len(y)


def test_constant_response_is_separation():
    with pytest.raises(SeparationError):
        fit_null(Dataset(np.zeros(10), np.ones((10, 1))))


def test_complete_separation_detected():
    x = np.arange(20, dtype=float)
    y = (x >= 10).astype(float)
    with pytest.raises(FitError):
        fit_null(Dataset(y, np.column_stack([np.ones(20), x])))


def test_rank_deficient_design_rejected():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(30)
    y = (rng.random(30) < 0.5).astype(float)
    with pytest.raises(FitError):
        fit_null(Dataset(y, np.column_stack([np.ones(30), x, 2 * x])))


@pytest.mark.parametrize("y, X, msg", [
    (np.array([0, 1, 2.0]), np.ones((3, 1)), "binary"),
    (np.array([0, 1, 0.0]), np.ones((2, 1)), "matching"),
    (np.array([0, 1, 0.0]), np.full((3, 1), 2.0), "intercept"),
])
def test_dataset_validation(y, X, msg):
    with pytest.raises(ValueError, match=msg):
        Dataset(y, X)


@pytest.mark.parametrize("g", [[0, 1, 0.5], [0, 3, 1], [0, -1, 1]])
def test_genotype_must_be_hard_calls(g):
    with pytest.raises(ValueError):
        check_genotype(np.array(g), 3)


def test_conditional_variance_five_observations():
    y = np.array([1, 1, 0, 0, 0], dtype=float)
    fit = fit_null(Dataset(y, np.ones((5, 1))))
    g = np.array([0, 0, 0, 1, 1])
    # g'Wg - (g'W1)^2 / 1'W1 = 0.48 - 0.192
    assert conditional_variance(fit, g) == pytest.approx(0.288, abs=1e-12)
    assert score_statistic(fit, g) == pytest.approx(-0.8, abs=1e-12)


def test_efficient_genotype_is_w_orthogonal(covariate_fit):
    rng = np.random.default_rng(7)
    g = rng.binomial(2, 0.3, covariate_fit.n)
    gt = efficient_genotype(covariate_fit, g)
    np.testing.assert_allclose(covariate_fit.X.T @ (covariate_fit.w_hat * gt), 0.0, atol=1e-10)
    assert float(np.sum(covariate_fit.w_hat * gt**2)) == pytest.approx(
        conditional_variance(covariate_fit, g), rel=1e-10)


def test_constant_genotype_has_zero_variance(covariate_fit):
    g = np.ones(covariate_fit.n, dtype=int)
    assert conditional_variance(covariate_fit, g) == 0.0
    assert not score_context(covariate_fit, g).testable
