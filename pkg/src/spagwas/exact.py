"""Exact conditional null distributions of the score and its support.

For the intercept model the score given ``sum(Y) = v`` is a sum of trivariate
hypergeometric probabilities; with one binary covariate it is the convolution
of two such stratum distributions.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaln

from .model import NullFit, check_genotype

LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class GenotypeCounts:
    """Numbers of individuals carrying 0, 1 and 2 minor alleles."""

    n0: int
    n1: int
    n2: int

    def __post_init__(self):
        if min(self.n0, self.n1, self.n2) < 0:
            raise ValueError("genotype counts must be non-negative")

    @property
    def n(self) -> int:
        return self.n0 + self.n1 + self.n2

    @property
    def allele_count(self) -> int:
        return self.n1 + 2 * self.n2

    @classmethod
    def from_genotype(cls, g) -> GenotypeCounts:
        g = np.asarray(g).astype(int)
        return cls(int(np.sum(g == 0)), int(np.sum(g == 1)), int(np.sum(g == 2)))

    def genotype(self) -> np.ndarray:
        """A genotype vector with these counts (sorted)."""
        return np.repeat(np.array([0, 1, 2], dtype=np.uint8), [self.n0, self.n1, self.n2])


@dataclass(frozen=True)
class LatticePmf:
    """Distribution on ``offset + k``, ``k = 0 .. len(probs) - 1``."""

    offset: float
    probs: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.offset + np.arange(len(self.probs))

    @property
    def lower(self) -> float:
        return self.offset

    @property
    def upper(self) -> float:
        return self.offset + len(self.probs) - 1

    def mean(self) -> float:
        return float(self.probs @ self.support)

    def var(self) -> float:
        x = self.support - self.mean()
        return float(self.probs @ (x * x))

    def index(self, u: float) -> int:
        """Lattice index of ``u``; raises if ``u`` is off the lattice."""
        k = (u - self.offset)
        kr = round(k)
        if abs(k - kr) > LATTICE_TOL * (1.0 + abs(u)):
            raise ValueError(f"{u} is not on the lattice with offset {self.offset}")
        return int(kr)

    def sf(self, u: float) -> float:
        """``P(U >= u)`` for any real ``u``."""
        k = math.ceil(u - self.offset - LATTICE_TOL * (1.0 + abs(u)))
        if k <= 0:
            return 1.0
        if k >= len(self.probs):
            return 0.0
        return float(np.sum(self.probs[k:]))

    def cdf(self, u: float) -> float:
        """``P(U <= u)`` for any real ``u``."""
        k = math.floor(u - self.offset + LATTICE_TOL * (1.0 + abs(u)))
        if k < 0:
            return 0.0
        if k >= len(self.probs) - 1:
            return 1.0
        return float(np.sum(self.probs[: k + 1]))


def _log_comb(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def _stratum_allele_pmf(counts: GenotypeCounts, v: int, exact: bool = False):
    """Distribution of ``V1 + 2 V2`` given ``V0 + V1 + V2 = v``.

    Returns ``(smin, probs)`` with ``probs[j] = P(V1 + 2 V2 = smin + j)``.
    Results are cached, so ``probs`` is read-only.
    """
    return _stratum_allele_pmf_cached(counts.n0, counts.n1, counts.n2, v, exact)


@functools.lru_cache(maxsize=4096)
def _stratum_allele_pmf_cached(n0: int, n1: int, n2: int, v: int, exact: bool):
    n = n0 + n1 + n2
    if not 0 <= v <= n:
        raise ValueError(f"case count {v} outside [0, {n}]")
    k = np.arange(n2 + 1)[:, None]  # V2
    j = np.arange(n1 + 1)[None, :]  # V1
    v0 = v - j - k
    ok = (v0 >= 0) & (v0 <= n0)
    s = (j + 2 * k)[ok]
    smin, smax = int(s.min()), int(s.max())
    if exact:
        total = math.comb(n, v)
        acc = [Fraction(0)] * (smax - smin + 1)
        for kk, jj in zip(*np.nonzero(ok)):
            c = math.comb(n0, int(v0[kk, jj])) * math.comb(n1, int(jj)) * math.comb(n2, int(kk))
            acc[int(jj + 2 * kk) - smin] += Fraction(c, total)
        probs = np.array([float(a) for a in acc])
        probs.flags.writeable = False
        return smin, probs
    vv = np.broadcast_to(v0, ok.shape)[ok]
    jj = np.broadcast_to(j, ok.shape)[ok]
    kk = np.broadcast_to(k, ok.shape)[ok]
    logp = _log_comb(n0, vv) + _log_comb(n1, jj) + _log_comb(n2, kk) - _log_comb(n, v)
    probs = np.zeros(smax - smin + 1)
    np.add.at(probs, s - smin, np.exp(logp))
    # remove the O(n eps) drift of the log-gamma route
    probs /= probs.sum()
    probs.flags.writeable = False
    return smin, probs


def exact_intercept_pmf(counts: GenotypeCounts, v: int, exact: bool = False) -> LatticePmf:
    """Exact law of ``U = V1 + 2 V2 - (n1 + 2 n2) v/n`` given ``sum(Y) = v``.

    ``exact=True`` evaluates with rational arithmetic (slow; for checking).
    """
    n = counts.n
    if not 0 < v < n:
        raise ValueError(f"need 0 < v < n, got v={v}, n={n}")
    smin, probs = _stratum_allele_pmf(counts, v, exact=exact)
    return LatticePmf(smin - counts.allele_count * v / n, probs)


def exact_binary_covariate_pmf(
    counts0: GenotypeCounts,
    counts1: GenotypeCounts,
    v_group0: int,
    v_group1: int,
    exact: bool = False,
) -> LatticePmf:
    """Exact law of the score for the model with intercept and one binary covariate.

    ``counts0``/``v_group0`` describe the stratum with covariate 0, ``counts1``/``v_group1``
    the stratum with covariate 1. An empty stratum contributes a point mass at 0.
    """
    parts = []
    for counts, v in ((counts0, v_group0), (counts1, v_group1)):
        if counts.n == 0:
            if v != 0:
                raise ValueError("non-zero case count in an empty stratum")
            continue
        if not 0 <= v <= counts.n:
            raise ValueError(f"case count {v} outside [0, {counts.n}]")
        smin, probs = _stratum_allele_pmf(counts, v, exact=exact)
        parts.append((smin - counts.allele_count * v / counts.n, probs))
    if not parts:
        raise ValueError("both strata are empty")
    offset, probs = parts[0]
    for off, p in parts[1:]:
        offset += off
        probs = np.convolve(probs, p)
    return LatticePmf(offset, probs / probs.sum())


def binary_covariate_column(X: np.ndarray) -> np.ndarray | None:
    """Return the 0/1 covariate if ``X = [1, x]`` with binary ``x``, else None."""
    if X.shape[1] != 2:
        return None
    x = X[:, 1]
    if np.all((x == 0) | (x == 1)):
        return x.astype(bool)
    return None


def conditional_support(fit: NullFit, g) -> tuple[float, float]:
    """Smallest and largest value of ``g'(y - mu_hat)`` compatible with ``X'(y - mu_hat) = 0``.

    Exact for the intercept model and the intercept plus binary covariate model
    (greedy allocation of cases within each stratum). For other designs the
    unconstrained envelope ``[-g'mu_hat, g'(1 - mu_hat)]`` is returned.
    """
    g = check_genotype(g, fit.n).astype(float)
    gmu = float(g @ fit.mu_hat)
    if fit.intercept_only:
        strata = [np.ones(fit.n, dtype=bool)]
    else:
        x = binary_covariate_column(fit.X)
        if x is None:
            return -gmu, float(g.sum()) - gmu
        strata = [~x, x]
    lo = hi = 0.0
    for s in strata:
        gs = np.sort(g[s])
        v = int(round(fit.y[s].sum()))
        lo += gs[:v].sum()
        hi += gs[len(gs) - v:].sum() if v else 0.0
    return float(lo) - gmu, float(hi) - gmu


def relaxed_support(fit: NullFit, g) -> tuple[float, float]:
    """Range of ``g'(y - mu_hat)`` over ``0 <= y <= 1`` with ``X'(y - mu_hat) = 0``.

    This linear-programming relaxation is the closure of the attainable range of
    the double saddlepoint equation's score component.
    """
    g = np.asarray(g, dtype=float)
    X, mu = fit.X, fit.mu_hat
    b_eq = X.T @ mu
    gmu = float(g @ mu)
    out = []
    for sign in (1.0, -1.0):
        res = linprog(sign * g, A_eq=X.T, b_eq=b_eq, bounds=(0.0, 1.0), method="highs")
        if res.status != 0:
            raise RuntimeError(f"support LP failed: {res.message}")
        out.append(sign * res.fun - gmu)
    return out[0], out[1]
