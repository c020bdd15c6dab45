import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spagwas import EfficientCgf, JointCgf, MarginalCgf, conditional_variance, efficient_genotype
from spagwas.cgf import log_mgf_terms


def random_joint(seed, n=40, d=3):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.02, 0.6, n)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, d - 1))])
    g = rng.binomial(2, 0.2, n)
    t = rng.uniform(-1.5, 1.5, d + 1)
    return JointCgf(mu, X, g), t


def central_grad_hess(cgf, t, h=1e-5):
    k = len(t)
    grad = np.empty(k)
    hess = np.empty((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        grad[i] = (cgf.value(t + e) - cgf.value(t - e)) / (2 * h)
        hess[i] = (cgf.value_grad_hess(t + e)[1] - cgf.value_grad_hess(t - e)[1]) / (2 * h)
    return grad, hess


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_joint_derivatives_match_finite_differences(seed):
    cgf, t = random_joint(seed)
    k, grad, hess = cgf.value_grad_hess(t)
    fd_grad, fd_hess = central_grad_hess(cgf, t)
    assert k == pytest.approx(cgf.value(t), abs=1e-12)
    np.testing.assert_allclose(grad, fd_grad, atol=1e-6)
    np.testing.assert_allclose(hess, fd_hess, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_joint_hessian_positive_semidefinite(seed):
    cgf, t = random_joint(seed)
    assert np.linalg.eigvalsh(cgf.value_grad_hess(t)[2])[0] >= -1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_marginal_is_joint_at_zero_interest(seed):
    cgf, t = random_joint(seed)
    marg = cgf.marginal()
    tb = t[: cgf.d]
    full = cgf.value_grad_hess(np.append(tb, 0.0))
    k, grad, hess = marg.value_grad_hess(tb)
    assert k == pytest.approx(full[0], abs=1e-12)
    np.testing.assert_allclose(grad, full[1][: cgf.d], atol=1e-12)
    np.testing.assert_allclose(hess, full[2][: cgf.d, : cgf.d], atol=1e-12)


def test_values_at_origin(covariate_fit):
    g = np.random.default_rng(1).binomial(2, 0.3, covariate_fit.n)
    cgf = JointCgf.from_fit(covariate_fit, g)
    k, grad, hess = cgf.value_grad_hess(np.zeros(cgf.dim))
    assert k == 0.0
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)
    np.testing.assert_allclose(hess[:-1, :-1], covariate_fit.xtwx, atol=1e-12)
    np.testing.assert_allclose(MarginalCgf.from_fit(covariate_fit).value_grad_hess(np.zeros(3))[2],
                               covariate_fit.xtwx, atol=1e-12)


def test_efficient_cgf_variance_and_range(covariate_fit):
    g = np.random.default_rng(2).binomial(2, 0.3, covariate_fit.n)
    cgf = EfficientCgf.from_fit(covariate_fit, g)
    k, k1, k2 = cgf.value_deriv1_deriv2(0.0)
    assert (k, k1) == (0.0, pytest.approx(0.0, abs=1e-10))
    assert k2 == pytest.approx(conditional_variance(covariate_fit, g), rel=1e-10)
    gt = efficient_genotype(covariate_fit, g)
    lo, hi = cgf.deriv_range()
    assert lo < 0 < hi
    assert cgf.value_deriv1_deriv2(1e5)[1] == pytest.approx(hi, rel=1e-9)
    assert hi == pytest.approx(gt[gt > 0].sum() - gt @ covariate_fit.mu_hat, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30), st.integers(0, 10**6))
def test_efficient_derivatives_match_finite_differences(t, seed):
    rng = np.random.default_rng(seed)
    cgf = EfficientCgf(rng.uniform(0.01, 0.5, 30), rng.standard_normal(30) * 0.3)
    h = 1e-5
    _, k1, k2 = cgf.value_deriv1_deriv2(t)
    assert k1 == pytest.approx((cgf.value(t + h) - cgf.value(t - h)) / (2 * h), abs=1e-6)
    assert k2 == pytest.approx((cgf.value_deriv1_deriv2(t + h)[1] - cgf.value_deriv1_deriv2(t - h)[1])
                               / (2 * h), abs=1e-6)


@pytest.mark.parametrize("eta", [-800.0, -5.0, -1e-8, 0.0, 1e-8, 3.0, 800.0])
@pytest.mark.parametrize("mu", [1e-6, 0.01, 0.5, 0.99])
def test_log_mgf_terms_stable(eta, mu):
    got = float(log_mgf_terms(np.array([eta]), mu)[0])
    if abs(eta) < 50:
        assert got == pytest.approx(np.log(1 - mu + mu * np.exp(eta)), rel=1e-12, abs=1e-15)
    elif eta > 0:
        assert got == pytest.approx(eta + np.log(mu), rel=1e-12)
    else:
        assert got == pytest.approx(np.log1p(-mu), rel=1e-12)
