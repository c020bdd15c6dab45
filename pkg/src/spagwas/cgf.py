"""Cumulant generating functions of the logistic score vector under the null.

With ``Y_i ~ Bernoulli(mu_i)`` and linear statistic ``sum_i (Y_i - mu_i) z_i``::

    K(t)  = sum_i log(1 - mu_i + mu_i exp(t'z_i)) - mu_i t'z_i
    dK(t) = sum_i (p_i(t) - mu_i) z_i
    H(t)  = sum_i p_i(t) (1 - p_i(t)) z_i z_i'

where ``p_i(t) = expit(t'z_i + logit mu_i)`` is the exponentially tilted mean.
All sums are numpy reductions, which use pairwise summation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

from .model import NullFit, efficient_genotype


def log_mgf_terms(eta: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """``log(1 - mu + mu e^eta)`` elementwise without overflow.

    With ``m = max(eta, 0)`` this is ``m + log1p(mu expm1(eta - m) + (1 - mu) expm1(-m))``:
    for ``eta <= 0`` it reduces to ``log1p(mu expm1(eta))`` and for ``eta > 0`` to
    ``eta + log1p((1 - mu) expm1(-eta))``, so no exponential argument is positive.
    """
    eta = np.asarray(eta, dtype=float)
    m = np.maximum(eta, 0.0)
    return m + np.log1p(mu * np.expm1(eta - m) + (1.0 - mu) * np.expm1(-m))


class _LinearBernoulliCgf:
    """CGF of ``Z'(Y - mu)`` for a fixed n x k matrix ``Z``."""

    def __init__(self, mu: np.ndarray, Z: np.ndarray):
        self.mu = np.asarray(mu, dtype=float)
        Z = np.asarray(Z, dtype=float)
        self.Z = Z[:, None] if Z.ndim == 1 else Z
        self._logit_mu = logit(self.mu)
        self._zmu = self.Z.T @ self.mu

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def value(self, t) -> float:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        eta = self.Z @ t
        return float(np.sum(log_mgf_terms(eta, self.mu)) - t @ self._zmu)

    def value_grad_hess(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        eta = self.Z @ t
        k = float(np.sum(log_mgf_terms(eta, self.mu)) - t @ self._zmu)
        p = expit(eta + self._logit_mu)
        grad = self.Z.T @ (p - self.mu)
        hess = (self.Z * (p * (1.0 - p))[:, None]).T @ self.Z
        return k, grad, hess


class JointCgf(_LinearBernoulliCgf):
    """Joint CGF of ``(U_beta, U_gamma)`` with ``z_i = (x_i', g_i)'``; dimension d+1."""

    def __init__(self, mu: np.ndarray, X: np.ndarray, g: np.ndarray):
        X = np.asarray(X, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        super().__init__(mu, np.column_stack([X, np.asarray(g, dtype=float)]))
        self.d = X.shape[1]

    @classmethod
    def from_fit(cls, fit: NullFit, g) -> JointCgf:
        return cls(fit.mu_hat, fit.X, g)

    def marginal(self) -> MarginalCgf:
        return MarginalCgf(self.mu, self.Z[:, : self.d])


class MarginalCgf(_LinearBernoulliCgf):
    """CGF of the nuisance score ``U_beta = X'(Y - mu)``; equals ``JointCgf`` at ``t_gamma = 0``."""

    def __init__(self, mu: np.ndarray, X: np.ndarray):
        super().__init__(mu, X)

    @classmethod
    def from_fit(cls, fit: NullFit) -> MarginalCgf:
        return cls(fit.mu_hat, fit.X)


class EfficientCgf:
    """Univariate CGF of the efficient score ``g_tilde'(Y - mu_hat)``."""

    def __init__(self, mu: np.ndarray, g_tilde: np.ndarray):
        self.mu = np.asarray(mu, dtype=float)
        self.g_tilde = np.asarray(g_tilde, dtype=float)
        self._logit_mu = logit(self.mu)
        self._gmu = float(self.g_tilde @ self.mu)

    @classmethod
    def from_fit(cls, fit: NullFit, g) -> EfficientCgf:
        return cls(fit.mu_hat, efficient_genotype(fit, g))

    def value(self, t: float) -> float:
        return float(np.sum(log_mgf_terms(self.g_tilde * t, self.mu)) - t * self._gmu)

    def value_deriv1_deriv2(self, t: float):
        eta = self.g_tilde * t
        k = float(np.sum(log_mgf_terms(eta, self.mu)) - t * self._gmu)
        p = expit(eta + self._logit_mu)
        k1 = float(self.g_tilde @ (p - self.mu))
        k2 = float(np.sum(self.g_tilde**2 * p * (1.0 - p)))
        return k, k1, k2

    def deriv_range(self) -> tuple[float, float]:
        """Open interval of attainable values of ``K'(t)``."""
        gt = self.g_tilde
        lo = float(np.sum(gt[gt < 0])) - self._gmu
        hi = float(np.sum(gt[gt > 0])) - self._gmu
        return lo, hi


def joint_value_grad_hess(cgf: JointCgf, t):
    return cgf.value_grad_hess(t)


def marginal_value_grad_hess(cgf: MarginalCgf, t_beta):
    return cgf.value_grad_hess(t_beta)


def efficient_value_deriv1_deriv2(cgf: EfficientCgf, t: float):
    return cgf.value_deriv1_deriv2(t)
