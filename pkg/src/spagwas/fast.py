"""Carrier-restricted CGFs: fastDSPA-CC and fastSPA.

Individuals with ``g_i = 0`` contribute to the joint CGF only through the
nuisance block. Their part is replaced by the normal CGF
``0.5 t_beta' V* t_beta`` with ``V* = X'WX - X_c' W_c X_c`` (``c`` = carriers),
so per-variant work is proportional to the number of carriers ``m``. The
nuisance marginal becomes fully quadratic, ``0.5 t_beta' X'WX t_beta``.

fastSPA applies the same idea to the efficient score: non-carriers have
``g_tilde_i = -x_i' b`` with ``b = (X'WX)^{-1} X_c' W_c g_c`` and their summed
variance is obtained without touching them, as
``g_tilde' W g_tilde - sum_c w_i g_tilde_i^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cgf import EfficientCgf, _LinearBernoulliCgf
from .model import NullFit, check_genotype, conditional_variance
from .saddlepoint import DoubleSaddlepoint, SingleSaddlepoint, TailResult

PSD_TOL = 1e-8


@dataclass(frozen=True)
class CarrierPartition:
    """Carrier rows of one variant and the covariance split of ``U_beta``.

    Attributes
    ----------
    carriers : indices with ``g_i > 0`` (length ``m``)
    cov_total : ``X'WX`` over all individuals
    cov_carrier : ``X_c' W_c X_c``
    cov_noncarrier : ``cov_total - cov_carrier`` (exactly zero when ``m = n``)
    """

    carriers: np.ndarray
    n: int
    cov_total: np.ndarray
    cov_carrier: np.ndarray
    cov_noncarrier: np.ndarray

    @property
    def m(self) -> int:
        return len(self.carriers)

    @property
    def has_noncarriers(self) -> bool:
        return self.m < self.n

    @classmethod
    def from_fit(cls, fit: NullFit, g) -> CarrierPartition:
        g = check_genotype(g, fit.n)
        idx = np.flatnonzero(g > 0)
        Xc = fit.X[idx]
        cov_c = (Xc * fit.w_hat[idx, None]).T @ Xc
        if len(idx) == fit.n:
            cov_nc = np.zeros_like(cov_c)
        else:
            cov_nc = fit.xtwx - cov_c
            lam_min = float(np.linalg.eigvalsh(cov_nc)[0])
            if lam_min < -PSD_TOL * float(np.trace(fit.xtwx)):
                raise ValueError(f"non-carrier covariance is not PSD (min eigenvalue {lam_min:.3g})")
        return cls(idx, fit.n, fit.xtwx, cov_c, cov_nc)


class FastJointCgf(_LinearBernoulliCgf):
    """Carrier terms of the joint CGF plus ``0.5 t_beta' V* t_beta``."""

    def __init__(self, fit: NullFit, g, partition: CarrierPartition | None = None):
        g = check_genotype(g, fit.n).astype(float)
        self.partition = CarrierPartition.from_fit(fit, g) if partition is None else partition
        idx = self.partition.carriers
        super().__init__(fit.mu_hat[idx], np.column_stack([fit.X[idx], g[idx]]))
        self.d = fit.d
        self._quad = self.partition.cov_noncarrier

    def value(self, t) -> float:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tb = t[: self.d]
        return super().value(t) + 0.5 * float(tb @ self._quad @ tb)

    def value_grad_hess(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k, grad, hess = super().value_grad_hess(t)
        tb = t[: self.d]
        qt = self._quad @ tb
        grad[: self.d] += qt
        hess[: self.d, : self.d] += self._quad
        return k + 0.5 * float(tb @ qt), grad, hess


class FastMarginalCgf:
    """Fully quadratic nuisance CGF ``0.5 t' X'WX t``."""

    def __init__(self, cov_total: np.ndarray):
        self.cov = np.asarray(cov_total, dtype=float)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def value(self, t) -> float:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return 0.5 * float(t @ self.cov @ t)

    def value_grad_hess(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ct = self.cov @ t
        return 0.5 * float(t @ ct), ct, self.cov.copy()


class FastEfficientCgf(EfficientCgf):
    """Efficient-score CGF over carriers plus a normal term for the non-carriers."""

    def __init__(self, mu_carrier: np.ndarray, g_tilde_carrier: np.ndarray, var_noncarrier: float):
        super().__init__(mu_carrier, g_tilde_carrier)
        self.var_noncarrier = max(float(var_noncarrier), 0.0)

    @classmethod
    def from_fit(cls, fit: NullFit, g) -> FastEfficientCgf:
        g = check_genotype(g, fit.n).astype(float)
        idx = np.flatnonzero(g > 0)
        Xc, gc, wc = fit.X[idx], g[idx], fit.w_hat[idx]
        b = fit.solve_xtwx(Xc.T @ (wc * gc))
        gt_c = gc - Xc @ b
        if len(idx) == fit.n:
            var_nc = 0.0
        else:
            var_nc = conditional_variance(fit, g) - float(np.sum(wc * gt_c**2))
        return cls(fit.mu_hat[idx], gt_c, var_nc)

    def value(self, t: float) -> float:
        return super().value(t) + 0.5 * self.var_noncarrier * t * t

    def value_deriv1_deriv2(self, t: float):
        k, k1, k2 = super().value_deriv1_deriv2(t)
        s = self.var_noncarrier
        return k + 0.5 * s * t * t, k1 + s * t, k2 + s

    def deriv_range(self) -> tuple[float, float]:
        if self.var_noncarrier > 0.0:
            return -np.inf, np.inf
        return super().deriv_range()


def fast_joint_cgf(partition: CarrierPartition, fit: NullFit, g, t):
    """``(value, gradient, hessian)`` of the carrier-restricted joint CGF at ``t``."""
    return FastJointCgf(fit, g, partition).value_grad_hess(t)


def fast_marginal_cgf(partition: CarrierPartition, t_beta):
    """``(value, gradient, hessian)`` of the quadratic nuisance CGF at ``t_beta``."""
    return FastMarginalCgf(partition.cov_total).value_grad_hess(t_beta)


def fast_double_saddlepoint(fit: NullFit, g, partition: CarrierPartition | None = None) -> DoubleSaddlepoint:
    joint = FastJointCgf(fit, g, partition)
    part = joint.partition
    attainable = None
    if part.has_noncarriers and float(np.linalg.eigvalsh(part.cov_noncarrier)[0]) > 0.0:
        # the normal block absorbs any nuisance constraint, leaving the carrier envelope
        gc = joint.Z[:, -1]
        attainable = (-float(gc @ joint.mu), float(gc @ (1.0 - joint.mu)))
    return DoubleSaddlepoint(fit, g, joint=joint, logdet_marginal=fit.logdet_xtwx,
                             attainable=attainable, method="fast_dspa_cc")


def fast_single_saddlepoint(fit: NullFit, g) -> SingleSaddlepoint:
    ev = SingleSaddlepoint(fit, g, corrected=False, cgf=FastEfficientCgf.from_fit(fit, g))
    ev.method = "fast_spa"
    return ev


def tail_evaluator(method: str, fit: NullFit, g):
    if method == "fast_dspa_cc":
        return fast_double_saddlepoint(fit, g)
    if method == "fast_spa":
        return fast_single_saddlepoint(fit, g)
    raise ValueError(f"unknown fast method {method!r}")


def fast_dspa_cc_survival(nullfit: NullFit, g, u: float, partition: CarrierPartition | None = None) -> TailResult:
    return fast_double_saddlepoint(nullfit, g, partition).survival(u)


def fast_spa_survival(nullfit: NullFit, g, u: float) -> TailResult:
    return fast_single_saddlepoint(nullfit, g).survival(u)
