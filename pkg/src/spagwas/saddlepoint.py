"""Saddlepoint tail approximations for the conditional score.

Three right-tail approximations ``S(u) = P(U >= u | U_beta = 0)`` are provided:

* ``dspa_cc``  double saddlepoint on the joint CGF of ``(U_beta, U_gamma)`` with the
  second continuity correction,
* ``espa_cc``  single saddlepoint on the efficient score CGF with the same correction,
* ``espa``     single saddlepoint on the efficient score CGF treating it as continuous.

All of them go through the Barndorff-Nielsen formula ``1 - Phi(r)`` with
``r = w + log(v/w)/w`` (equivalently ``w - log(w/v)/w``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.special import ndtr
from scipy.stats import norm

from .cgf import EfficientCgf, JointCgf
from .exact import binary_covariate_column, conditional_support, relaxed_support
from .model import NullFit, UntestableVariantError, check_genotype, efficient_genotype

DOUBLE_MAX_ITER = 100
SINGLE_MAX_ITER = 200
NEAR_ZERO = 1e-4
NEAR_BAND = 1e-3
T_DIVERGED = 1e3
MAX_STEP = 2.0
BOUNDARY_SHRINK = 1e-8


class SaddlepointError(RuntimeError):
    """The saddlepoint equation could not be solved."""


class OutOfRangeError(SaddlepointError):
    """Target lies outside the attainable range of the CGF gradient."""


@dataclass(frozen=True)
class SaddleSolution:
    t_hat: np.ndarray
    converged: bool
    iterations: int
    residual: float


@dataclass(frozen=True)
class TailResult:
    """Approximate ``P(U >= u)`` and its complement ``P(U < u)``.

    ``cdf`` is computed directly (not as ``1 - survival``) so that small left
    tails keep full relative precision.
    """

    survival: float
    cdf: float
    w: float
    v: float
    method: str
    fallback_used: bool = False
    boundary: bool = False


def _boundary(method: str, above: bool) -> TailResult:
    # above=True: u beyond the top of the support
    if above:
        return TailResult(0.0, 1.0, math.nan, math.nan, method, boundary=True)
    return TailResult(1.0, 0.0, math.nan, math.nan, method, boundary=True)


def bn_tail(w: float, v: float) -> float:
    """Barndorff-Nielsen survival approximation ``1 - Phi(w + log(v/w)/w)``.

    This is the sign that agrees with the Lugannani-Rice expansion
    ``1 - Phi(w) + phi(w) (1/v - 1/w)`` to first order in ``v - w``.
    """
    return bn_tail_pair(w, v)[0]


def bn_tail_pair(w: float, v: float) -> tuple[float, float]:
    r = w + math.log(v / w) / w
    return float(ndtr(-r)), float(ndtr(r))


def lr_tail_diagnostic(w: float, v: float) -> float:
    """Lugannani-Rice survival ``1 - Phi(w) + phi(w) (1/v - 1/w)``.

    Not clamped; values outside [0, 1] expose the breakdown of this formula.
    Never used for reported p-values.
    """
    return float(norm.sf(w) + norm.pdf(w) * (1.0 / v - 1.0 / w))


def _polish(cgf, b, t, hess, r, res, it) -> SaddleSolution:
    # one full Newton step from a converged point; kept only if it helps
    try:
        t_new = t - linalg.cho_solve(linalg.cho_factor(hess), r)
    except linalg.LinAlgError:
        return SaddleSolution(t, True, it, res)
    res_new = float(np.max(np.abs(cgf.value_grad_hess(t_new)[1] - b)))
    if res_new < res:
        return SaddleSolution(t_new, True, it + 1, res_new)
    return SaddleSolution(t, True, it, res)


def solve_double(cgf: JointCgf, target_u_adj: float, tol: float | None = None) -> SaddleSolution:
    """Solve ``grad K(t) = (0, ..., 0, target)`` by damped Newton from ``t = 0``.

    Newton steps are halved until the convex objective ``K(t) - t'b`` decreases,
    which makes the iteration globally convergent whenever a root exists.
    """
    k = cgf.dim
    b = np.zeros(k)
    b[-1] = target_u_adj
    if tol is None:
        tol = 1e-10 * (1.0 + abs(target_u_adj))
    t = np.zeros(k)
    val, grad, hess = cgf.value_grad_hess(t)
    phi = val - t @ b
    for it in range(DOUBLE_MAX_ITER + 1):
        r = grad - b
        res = float(np.max(np.abs(r)))
        if res <= tol:
            return _polish(cgf, b, t, hess, r, res, it)
        if it == DOUBLE_MAX_ITER:
            break
        try:
            step = linalg.cho_solve(linalg.cho_factor(hess), r)
        except linalg.LinAlgError:
            step = np.linalg.lstsq(hess, r, rcond=None)[0]
        big = float(np.max(np.abs(step)))
        if big > MAX_STEP:
            # far from the root the quadratic model is useless; cap the step
            step *= MAX_STEP / big
        slope = float(r @ step)
        lam = 1.0
        flat = 1e-13 * (1.0 + abs(phi))
        for _ in range(60):
            t_new = t - lam * step
            val_n, grad_n, hess_n = cgf.value_grad_hess(t_new)
            phi_new = val_n - t_new @ b
            if phi_new <= phi - 1e-4 * lam * slope:
                break
            # phi is flat to rounding near the root; fall back to the residual
            if phi_new <= phi + flat and np.max(np.abs(grad_n - b)) < res:
                break
            lam *= 0.5
        else:
            raise SaddlepointError(f"line search failed (residual {res:.3g})")
        t = t_new
        if np.max(np.abs(t)) > T_DIVERGED:
            raise OutOfRangeError(f"saddlepoint diverged for target {target_u_adj}")
        val, grad, hess, phi = val_n, grad_n, hess_n, phi_new
    raise SaddlepointError(f"no convergence after {DOUBLE_MAX_ITER} iterations (residual {res:.3g})")


def solve_single(cgf, target: float, tol: float | None = None) -> SaddleSolution:
    """Solve ``K'(t) = target`` by Newton's method safeguarded with a bisection bracket."""
    if tol is None:
        tol = 1e-12 * (1.0 + abs(target))
    lo_r, hi_r = cgf.deriv_range()
    if not lo_r < target < hi_r:
        raise OutOfRangeError(f"target {target} outside ({lo_r}, {hi_r})")

    def f(t):
        _, k1, k2 = cgf.value_deriv1_deriv2(t)
        return k1 - target, k2

    r, k2 = f(0.0)
    if abs(r) <= tol:
        return SaddleSolution(np.zeros(1), True, 0, abs(r))
    # K' is increasing: walk away from 0 until the sign of K' - target flips
    direction = 1.0 if r < 0 else -1.0
    near, far = 0.0, direction
    for _ in range(40):
        if (f(far)[0] > 0) == (direction > 0):
            break
        near, far = far, 2.0 * far
    else:
        raise OutOfRangeError(f"could not bracket target {target}")
    a, b = min(near, far), max(near, far)
    t = near
    for it in range(1, SINGLE_MAX_ITER + 1):
        if r < 0:
            a = t
        else:
            b = t
        t_new = t - r / k2 if k2 > 0 else math.nan
        if not (a < t_new < b):
            t_new = 0.5 * (a + b)
        t = t_new
        r, k2 = f(t)
        if abs(r) <= tol or (b - a) <= 4e-16 * (1.0 + abs(t)):
            return SaddleSolution(np.array([t]), True, it, abs(r))
    raise SaddlepointError(f"no convergence after {SINGLE_MAX_ITER} iterations")


def _normal_fallback(z: float, method: str, w: float = math.nan, v: float = math.nan) -> TailResult:
    return TailResult(float(ndtr(-z)), float(ndtr(z)), w, v, method, fallback_used=True)


def _interpolated_tail(evaluate, target: float, h: float, z: float, method: str) -> TailResult:
    """Linear interpolation across the removable singularity at ``t = 0``.

    The plain normal limit drops the skewness term, so it jumps against the
    saddlepoint values on either side; interpolating from ``target = -h, +h``
    keeps the tail continuous.
    """
    a, b = evaluate(-h), evaluate(h)
    if a.fallback_used or b.fallback_used or a.boundary or b.boundary:
        return _normal_fallback(z, method)
    lam = (target + h) / (2.0 * h)
    sf = a.survival + lam * (b.survival - a.survival)
    cdf = a.cdf + lam * (b.cdf - a.cdf)
    return TailResult(sf, cdf, math.nan, math.nan, method, fallback_used=True)


def _near_band(var: float) -> float:
    # |t| ~ h / var and |w| ~ h / sd both stay clear of NEAR_ZERO
    return NEAR_BAND * max(var, math.sqrt(var))


def _tail_from_wv(w: float, v: float, t: float, z: float, method: str) -> TailResult:
    if abs(t) < NEAR_ZERO or abs(w) < NEAR_ZERO or not (v / w > 0):
        return _normal_fallback(z, method, w, v)
    sf, cdf = bn_tail_pair(w, v)
    return TailResult(min(max(sf, 0.0), 1.0), min(max(cdf, 0.0), 1.0), w, v, method)


def _on_support(u: float, lower: float, upper: float) -> int:
    """-1 at or below the support minimum, +1 above the maximum, else 0."""
    eps = 1e-9 * (1.0 + abs(u))
    if u <= lower + eps:
        return -1
    if u > upper + eps:
        return 1
    return 0


class DoubleSaddlepoint:
    """DSPA-CC right tails for one variant.

    ``joint`` and ``logdet_marginal`` may be supplied to substitute an approximate
    joint CGF (see :mod:`spagwas.fast`); ``attainable`` is then the range of the
    score component of its gradient on ``{grad_beta K = 0}``.
    """

    method = "dspa_cc"

    def __init__(self, fit: NullFit, g, joint=None, logdet_marginal: float | None = None,
                 support: tuple[float, float] | None = None,
                 attainable: tuple[float, float] | None = None, method: str | None = None):
        if method is not None:
            self.method = method
        self.fit = fit
        self.g = check_genotype(g, fit.n).astype(float)
        self.joint = JointCgf.from_fit(fit, self.g) if joint is None else joint
        self.logdet_marginal = fit.logdet_xtwx if logdet_marginal is None else logdet_marginal
        gt = efficient_genotype(fit, self.g)
        self.var = float(np.sum(gt * gt * fit.w_hat))
        if self.var <= 1e-12 * max(1.0, float(self.g @ (fit.w_hat * self.g))):
            raise UntestableVariantError("conditional variance is zero")
        self.lower, self.upper = conditional_support(fit, self.g) if support is None else support
        if attainable is None and (fit.intercept_only or binary_covariate_column(fit.X) is not None):
            # the LP optimum is integral here, so the attainable range is the lattice support
            attainable = (self.lower, self.upper)
        self._relaxed = attainable

    def _relaxed_support(self):
        if self._relaxed is None:
            self._relaxed = relaxed_support(self.fit, self.g)
        return self._relaxed

    def _outside(self, target: float, lo: float, hi: float) -> TailResult | None:
        eps = 1e-9 * (1.0 + abs(target))
        if target <= lo + eps:
            return _boundary(self.method, False)
        if target >= hi - eps:
            return _boundary(self.method, True)
        return None

    def solve(self, u: float) -> SaddleSolution:
        return solve_double(self.joint, u - 0.5)

    def survival(self, u: float) -> TailResult:
        side = _on_support(u, self.lower, self.upper)
        if side:
            return _boundary(self.method, side > 0)
        target = u - 0.5
        if self._relaxed is not None:
            out = self._outside(target, *self._relaxed)
            if out is not None:
                return out
        h = _near_band(self.var)
        if abs(target) < h:
            return _interpolated_tail(self._evaluate, target, h, target / math.sqrt(self.var), self.method)
        return self._evaluate(target)

    def _evaluate(self, target: float) -> TailResult:
        try:
            sol = solve_double(self.joint, target)
        except SaddlepointError:
            # only now pay for the LP that tells whether the target is attainable
            out = self._outside(target, *self._relaxed_support())
            if out is not None:
                return out
            raise
        t = sol.t_hat
        tg = float(t[-1])
        kval, _, hess = self.joint.value_grad_hess(t)
        w2 = 2.0 * (tg * target - kval)
        w = math.copysign(math.sqrt(max(w2, 0.0)), tg)
        sign, logdet = np.linalg.slogdet(hess)
        if sign <= 0:
            raise SaddlepointError("Hessian at the saddlepoint is not positive definite")
        v = 2.0 * math.sinh(tg / 2.0) * math.exp(0.5 * (logdet - self.logdet_marginal))
        return _tail_from_wv(w, v, tg, target / math.sqrt(self.var), self.method)


class SingleSaddlepoint:
    """ESPA (``corrected=False``) or ESPA-CC (``corrected=True``) right tails for one variant."""

    def __init__(self, fit: NullFit, g, corrected: bool, cgf=None,
                 support: tuple[float, float] | None = None):
        self.fit = fit
        self.g = check_genotype(g, fit.n).astype(float)
        self.corrected = corrected
        self.method = "espa_cc" if corrected else "espa"
        self.continuous = not corrected
        self.cgf = EfficientCgf.from_fit(fit, self.g) if cgf is None else cgf
        self.var = self.cgf.value_deriv1_deriv2(0.0)[2]
        if self.var <= 1e-12 * max(1.0, float(self.g @ (fit.w_hat * self.g))):
            raise UntestableVariantError("conditional variance is zero")
        self.lower, self.upper = conditional_support(fit, self.g) if support is None else support

    def survival(self, u: float) -> TailResult:
        # the continuous version is bounded only by the range of K'
        side = _on_support(u, self.lower, self.upper) if self.corrected else 0
        if side:
            return _boundary(self.method, side > 0)
        target = u - 0.5 if self.corrected else u
        lo, hi = self.cgf.deriv_range()
        eps = 1e-9 * (1.0 + abs(target))
        if target <= lo + eps:
            return _boundary(self.method, False)
        on_edge = False
        if target >= hi - eps:
            if self.corrected or target > hi + eps:
                return _boundary(self.method, True)
            # continuous version at the top of its range: evaluate just inside it
            target = hi - BOUNDARY_SHRINK * (hi - lo)
            on_edge = True
        h = _near_band(self.var)
        if abs(target) < h:
            return _interpolated_tail(self._evaluate, target, h, target / math.sqrt(self.var), self.method)
        res = self._evaluate(target)
        if on_edge:
            res = replace(res, boundary=True)
        return res

    def _evaluate(self, target: float) -> TailResult:
        sol = solve_single(self.cgf, target)
        t = float(sol.t_hat[0])
        kval, _, k2 = self.cgf.value_deriv1_deriv2(t)
        w2 = 2.0 * (t * target - kval)
        w = math.copysign(math.sqrt(max(w2, 0.0)), t)
        if self.corrected:
            v = 2.0 * math.sinh(t / 2.0) * math.sqrt(k2)
        else:
            v = t * math.sqrt(k2)
        return _tail_from_wv(w, v, t, target / math.sqrt(self.var), self.method)


def tail_evaluator(method: str, fit: NullFit, g):
    """Build the per-variant right-tail evaluator for a saddlepoint method name."""
    if method == "dspa_cc":
        return DoubleSaddlepoint(fit, g)
    if method == "espa_cc":
        return SingleSaddlepoint(fit, g, corrected=True)
    if method == "espa":
        return SingleSaddlepoint(fit, g, corrected=False)
    if method in ("fast_dspa_cc", "fast_spa"):
        from . import fast

        return fast.tail_evaluator(method, fit, g)
    raise ValueError(f"unknown saddlepoint method {method!r}")


def dspa_cc_survival(nullfit: NullFit, g, u: float) -> TailResult:
    return DoubleSaddlepoint(nullfit, g).survival(u)


def espa_survival(nullfit: NullFit, g, u: float, corrected: bool) -> TailResult:
    return SingleSaddlepoint(nullfit, g, corrected).survival(u)


def left_tail(method: str, nullfit: NullFit, g, u: float) -> float:
    """``P(U <= u)`` on the step-1 lattice, i.e. the complement of ``S(u + 1)``."""
    return tail_evaluator(method, nullfit, g).survival(u + 1.0).cdf
