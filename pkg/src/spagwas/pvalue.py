"""Two-sided p-values for lattice score statistics.

For an observed score ``u > 0`` the two-sided p-value is
``P(U >= u) + P(U <= u_inv)`` where ``u_inv`` is the lattice point closest to
``-u`` that is at least as far from zero; mirrored for ``u < 0``. When ``u_inv``
falls outside the support only the observed tail is used.

The continuous approximations (``espa``, ``fast_spa``) follow the SPA-test
convention instead: the normal p-value when ``|u| / sd < NORMAL_CUTOFF``,
otherwise ``S(|u|) + P(U <= -|u|)`` from the continuous CGF tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .exact import (
    GenotypeCounts,
    LatticePmf,
    binary_covariate_column,
    conditional_support,
    exact_binary_covariate_pmf,
    exact_intercept_pmf,
)
from .model import NullFit, UntestableVariantError, check_genotype, conditional_variance, score_statistic
from .saddlepoint import TailResult, tail_evaluator

METHODS = (
    "normal",
    "espa",
    "espa_cc",
    "dspa_cc",
    "fast_spa",
    "fast_dspa_cc",
    "exact_intercept",
    "exact_binary",
)
SADDLEPOINT_METHODS = ("espa", "espa_cc", "dspa_cc", "fast_spa", "fast_dspa_cc")
SMALLEST_P = float(np.nextafter(0.0, 1.0))
_EPS = 1e-9
NORMAL_CUTOFF = 2.0


@dataclass
class PvalueReport:
    method: str
    p_two_sided: float
    sided: str
    u: float
    u_inv: float | None
    flags: list[str] = field(default_factory=list)


def reflect(u: float) -> float:
    """Closest lattice point to ``-u`` lying at least as far from zero as ``u``.

    ``u - sign(u) * ceil(2|u|)``; ``2|u|`` is snapped to the nearest integer when it is
    within rounding noise of one so that e.g. ``u = 4.5`` maps to ``-4.5``.
    """
    if u == 0:
        raise ValueError("reflection is undefined at u = 0")
    a = 2.0 * abs(u)
    r = round(a)
    c = r if abs(a - r) <= _EPS * (1.0 + a) else math.ceil(a)
    return u - math.copysign(c, u)


class ExactTails:
    """Adapter exposing an exact lattice pmf through the ``survival(u)`` interface."""

    def __init__(self, pmf: LatticePmf, method: str):
        self.pmf = pmf
        self.method = method
        self.lower, self.upper = pmf.lower, pmf.upper
        sf = np.cumsum(pmf.probs[::-1])[::-1]
        cdf = np.cumsum(pmf.probs)
        self._sf = np.minimum(sf, 1.0)
        self._cdf = np.minimum(cdf, 1.0)

    def survival(self, u: float) -> TailResult:
        k = math.ceil(u - self.pmf.offset - _EPS * (1.0 + abs(u)))
        if k <= 0:
            sf, below = 1.0, 0.0
        elif k >= len(self._sf):
            sf, below = 0.0, 1.0
        else:
            sf, below = float(self._sf[k]), float(self._cdf[k - 1])
        return TailResult(sf, below, math.nan, math.nan, self.method)


def exact_pmf_for_fit(fit: NullFit, g) -> tuple[LatticePmf, str]:
    """Exact conditional pmf when the design is intercept-only or intercept plus a binary covariate."""
    g = check_genotype(g, fit.n)
    if fit.intercept_only:
        return exact_intercept_pmf(GenotypeCounts.from_genotype(g), fit.n_cases), "exact_intercept"
    x = binary_covariate_column(fit.X)
    if x is None:
        raise ValueError("exact test needs an intercept-only or intercept + binary covariate design")
    c0 = GenotypeCounts.from_genotype(g[~x])
    c1 = GenotypeCounts.from_genotype(g[x])
    v0 = int(round(fit.y[~x].sum()))
    v1 = int(round(fit.y[x].sum()))
    return exact_binary_covariate_pmf(c0, c1, v0, v1), "exact_binary"


def tails_for(method: str, fit: NullFit, g):
    """Per-variant tail evaluator for ``method`` (anything but ``normal``)."""
    if method in SADDLEPOINT_METHODS:
        return tail_evaluator(method, fit, g)
    if method in ("exact_intercept", "exact_binary"):
        pmf, kind = exact_pmf_for_fit(fit, g)
        if kind != method:
            raise ValueError(f"{method} does not match the design (use {kind})")
        return ExactTails(pmf, method)
    raise ValueError(f"unknown method {method!r}")


def _collect_flags(results, flags: list[str]) -> None:
    for r in results:
        if r is not None:
            if r.fallback_used and "fallback" not in flags:
                flags.append("fallback")
            if r.boundary and "boundary" not in flags:
                flags.append("boundary")


def _finish(method: str, p: float, sided: str, u: float, u_inv, flags: list[str]) -> PvalueReport:
    if p > 1.0:
        p = 1.0
    if not p > 0.0:
        p = SMALLEST_P
        flags.append("clamped")
    return PvalueReport(method, float(p), sided, u, u_inv, flags)


def continuous_pvalue(tails, u: float, method: str) -> PvalueReport:
    """SPA-test style two-sided p-value for a continuous tail evaluator with a ``var`` attribute."""
    flags: list[str] = []
    a = abs(u)
    if a <= _EPS * (1.0 + a):
        return PvalueReport(method, 1.0, "two", u, None, ["u_zero"])
    z = a / math.sqrt(tails.var)
    if z < NORMAL_CUTOFF:
        return _finish(method, float(2.0 * norm.sf(z)), "two", u, -u, ["normal_region"])
    upper, lower = tails.survival(a), tails.survival(-a)
    _collect_flags((upper, lower), flags)
    return _finish(method, upper.survival + lower.cdf, "two", u, -u, flags)


def pvalue_from_tails(tails, u: float, lower: float, upper: float, method: str) -> PvalueReport:
    """Two-sided p-value from any object with a ``survival(u) -> TailResult`` method."""
    if getattr(tails, "continuous", False):
        return continuous_pvalue(tails, u, method)
    flags: list[str] = []
    eps = _EPS * (1.0 + abs(u))
    if abs(u) <= eps:
        return PvalueReport(method, 1.0, "two", u, None, ["u_zero"])
    u_inv = reflect(u)
    if u > 0:
        own = tails.survival(u)
        p = own.survival
        if u_inv < lower - eps:
            other, sided = None, "one"
        else:
            other, sided = tails.survival(u_inv + 1.0), "two"
            p += other.cdf
    else:
        own = tails.survival(u + 1.0)
        p = own.cdf
        if u_inv > upper + eps:
            other, sided = None, "one"
        else:
            other, sided = tails.survival(u_inv), "two"
            p += other.survival
    _collect_flags((own, other), flags)
    return _finish(method, p, sided, u, u_inv, flags)


def two_sided_pvalue(method: str, nullfit: NullFit, g, u: float | None = None,
                     support: tuple[float, float] | None = None) -> PvalueReport:
    """Two-sided p-value of the observed score for ``method``.

    ``u`` defaults to the observed score of ``g`` and ``support`` to
    :func:`spagwas.exact.conditional_support`.
    """
    if u is None:
        u = score_statistic(nullfit, g)
    if method == "normal":
        return normal_pvalue(nullfit, g, u)
    if support is None:
        support = conditional_support(nullfit, g)
    tails = tails_for(method, nullfit, g)
    return pvalue_from_tails(tails, u, support[0], support[1], method)


def normal_pvalue(nullfit: NullFit, g, u: float | None = None) -> PvalueReport:
    """Uncorrected normal approximation ``2 (1 - Phi(|u| / sqrt(F)))``."""
    if u is None:
        u = score_statistic(nullfit, g)
    var = conditional_variance(nullfit, g)
    if var <= 0.0:
        raise UntestableVariantError("conditional variance is zero")
    p = float(2.0 * norm.sf(abs(u) / math.sqrt(var)))
    flags = []
    if not p > 0.0:
        p = SMALLEST_P
        flags.append("clamped")
    return PvalueReport("normal", min(p, 1.0), "two", u, None, flags)


def lattice_pvalues(tails, support: np.ndarray, lower: float, upper: float, method: str) -> np.ndarray:
    """Two-sided p-values at every point of ``support``, reusing tail evaluations."""
    cache: dict[float, TailResult] = {}

    class _Cached:
        continuous = getattr(tails, "continuous", False)
        var = getattr(tails, "var", None)

        def survival(self, x):
            key = round(x, 9)
            if key not in cache:
                cache[key] = tails.survival(x)
            return cache[key]

    cached = _Cached()
    return np.array([pvalue_from_tails(cached, float(u), lower, upper, method).p_two_sided for u in support])
