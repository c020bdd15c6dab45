"""Conditional and overall type I error of the score tests.

Intercept model (exact): for every case count ``v`` the rejection region of a
method is found by grid searches from both ends of the conditional support,
and its exact conditional probability is computed from the exact lattice pmf.
Weighting by ``Binomial(n, mu)`` gives the overall error.

Models with nuisance covariates: Monte Carlo with the case/control labels held
fixed, covariates drawn conditionally on the labels and genotypes drawn
independently (the null).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import optimize, stats
from scipy.special import expit, gammaln

from .exact import GenotypeCounts, LatticePmf, exact_intercept_pmf
from .model import Dataset, FitError, NullFit, UntestableVariantError, fit_null, score_statistic
from .pvalue import METHODS, ExactTails, lattice_pvalues, two_sided_pvalue
from .saddlepoint import SaddlepointError, tail_evaluator

EVAL_METHODS = ("exact", "normal", "espa", "espa_cc", "dspa_cc")


@dataclass(frozen=True)
class RejectionRegion:
    """Reject when ``u <= c_lower`` or ``u >= c_upper`` (``None`` means that side is empty)."""

    c_lower: float | None
    c_upper: float | None
    alpha: float
    method: str
    conditional_error: float

    @property
    def empty(self) -> bool:
        return self.c_lower is None and self.c_upper is None


def intercept_fit(n: int, v: int) -> NullFit:
    """Null fit of the intercept model with ``v`` cases out of ``n`` (``mu_hat = v/n``)."""
    y = np.zeros(n)
    y[:v] = 1.0
    return fit_null(Dataset(y, np.ones((n, 1))))


def lattice_pvalues_intercept(counts: GenotypeCounts, v: int, method: str,
                              pmf: LatticePmf | None = None) -> tuple[LatticePmf, np.ndarray]:
    """Exact pmf and the method's two-sided p-value at each point of its support."""
    if pmf is None:
        pmf = exact_intercept_pmf(counts, v)
    support = pmf.support
    if method == "exact":
        tails = ExactTails(pmf, "exact_intercept")
        return pmf, lattice_pvalues(tails, support, pmf.lower, pmf.upper, "exact_intercept")
    if method == "normal":
        mu = v / counts.n
        g = counts.genotype().astype(float)
        var = mu * (1.0 - mu) * float(np.sum((g - g.mean()) ** 2))
        p = 2.0 * stats.norm.sf(np.abs(support) / math.sqrt(var))
        p[np.abs(support) <= 1e-9] = 1.0
        return pmf, p
    fit = intercept_fit(counts.n, v)
    tails = tail_evaluator(method, fit, counts.genotype())
    return pmf, lattice_pvalues(tails, support, pmf.lower, pmf.upper, method)


def region_from_pvalues(support: np.ndarray, probs: np.ndarray, pvals: np.ndarray,
                        alpha: float, method: str) -> RejectionRegion:
    """Grid search inwards from each end of the support while ``p <= alpha``."""
    m = len(support)
    i = 0
    while i < m and pvals[i] <= alpha:
        i += 1
    j = m - 1
    while j >= 0 and pvals[j] <= alpha:
        j -= 1
    if i > j:
        return RejectionRegion(float(support[-1]), float(support[0]), alpha, method, 1.0)
    err = float(np.sum(probs[:i]) + np.sum(probs[j + 1:]))
    c_lower = float(support[i - 1]) if i > 0 else None
    c_upper = float(support[j + 1]) if j < m - 1 else None
    return RejectionRegion(c_lower, c_upper, alpha, method, err)


def conditional_rejection_region(counts: GenotypeCounts, v: int, alpha: float, method: str) -> RejectionRegion:
    """Rejection region and its exact conditional type I error given ``sum(Y) = v``."""
    if not 0 < v < counts.n:
        raise ValueError(f"need 0 < v < n, got {v}")
    pmf, p = lattice_pvalues_intercept(counts, v, method)
    return region_from_pvalues(pmf.support, pmf.probs, p, alpha, method)


def conditional_errors(counts: GenotypeCounts, alphas, method: str, vs=None) -> dict[float, np.ndarray]:
    """Conditional type I error for every ``v`` (default ``1 .. n-1``) at several levels.

    P-values are computed once per ``v`` and reused for all ``alphas``.
    """
    alphas = list(alphas)
    vs = np.arange(1, counts.n) if vs is None else np.asarray(vs)
    out = {a: np.zeros(len(vs)) for a in alphas}
    for k, v in enumerate(vs):
        pmf, p = lattice_pvalues_intercept(counts, int(v), method)
        for a in alphas:
            out[a][k] = region_from_pvalues(pmf.support, pmf.probs, p, a, method).conditional_error
    return out


def binomial_log_pmf(n: int, mu: float, vs: np.ndarray) -> np.ndarray:
    vs = np.asarray(vs, dtype=float)
    return (gammaln(n + 1.0) - gammaln(vs + 1.0) - gammaln(n - vs + 1.0)
            + vs * math.log(mu) + (n - vs) * math.log1p(-mu))


@dataclass
class ErrorProfile:
    """Conditional and overall type I error of one method at one level."""

    method: str
    alpha: float
    n: int
    vs: np.ndarray
    conditional: np.ndarray
    mu_grid: np.ndarray
    overall: np.ndarray
    invalid_prob: np.ndarray
    invalid_v: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def invalid_fraction(self) -> float:
        return len(self.invalid_v) / len(self.vs)


def profile_from_conditional(method: str, alpha: float, n: int, vs: np.ndarray, cond: np.ndarray,
                             mu_grid) -> ErrorProfile:
    mu_grid = np.asarray(mu_grid, dtype=float)
    invalid = cond > alpha
    overall = np.empty(len(mu_grid))
    inval = np.empty(len(mu_grid))
    for k, mu in enumerate(mu_grid):
        w = np.exp(binomial_log_pmf(n, mu, vs))
        overall[k] = float(w @ cond)
        inval[k] = float(np.sum(w[invalid]))
    return ErrorProfile(method, alpha, n, np.asarray(vs), cond, mu_grid, overall, inval,
                        np.asarray(vs)[invalid])


def error_profile(counts: GenotypeCounts, alpha: float, method: str, mu_grid=None) -> ErrorProfile:
    """Overall error and invalidity probability over ``mu_grid`` (default 199 points in (0.005, 0.995))."""
    if mu_grid is None:
        mu_grid = default_mu_grid()
    vs = np.arange(1, counts.n)
    cond = conditional_errors(counts, [alpha], method, vs)[alpha]
    return profile_from_conditional(method, alpha, counts.n, vs, cond, mu_grid)


def error_profiles(counts: GenotypeCounts, alphas, method: str, mu_grid=None) -> list[ErrorProfile]:
    """Like :func:`error_profile` for several levels sharing one pass over ``v``."""
    if mu_grid is None:
        mu_grid = default_mu_grid()
    vs = np.arange(1, counts.n)
    cond = conditional_errors(counts, alphas, method, vs)
    return [profile_from_conditional(method, a, counts.n, vs, cond[a], mu_grid) for a in alphas]


def default_mu_grid() -> np.ndarray:
    return np.linspace(0.005, 0.995, 199)


def write_conditional_csv(path, profiles: list[ErrorProfile]):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["v", "conditional_error", "method", "alpha"])
        for pr in profiles:
            for v, e in zip(pr.vs, pr.conditional):
                wr.writerow([int(v), f"{e:.10g}", pr.method, f"{pr.alpha:g}"])


def write_overall_csv(path, profiles: list[ErrorProfile]):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mu", "overall_error", "invalid_prob", "method", "alpha"])
        for pr in profiles:
            for mu, e, q in zip(pr.mu_grid, pr.overall, pr.invalid_prob):
                wr.writerow([f"{mu:.6g}", f"{e:.10g}", f"{q:.10g}", pr.method, f"{pr.alpha:g}"])


# --- Monte Carlo with nuisance covariates ------------------------------------

PREVALENCE_NODES = 64
SIM_DESIGN_COLUMNS = 3  # intercept, x1 ~ Bernoulli(0.5), x2 ~ N(0, 1)
CHUNK = 500


def prevalence(beta0: float, nodes: int = PREVALENCE_NODES) -> float:
    """``P(Y = 1)`` for ``logit P(Y=1|x) = beta0 + x1 + x2`` averaged over the covariate law."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    return float(0.5 * np.sum(w * (expit(beta0 + x) + expit(beta0 + 1.0 + x))))


def solve_intercept_for_prevalence(target: float, nodes: int = PREVALENCE_NODES,
                                   bracket: tuple[float, float] = (-30.0, 30.0)) -> float:
    """Intercept giving population prevalence ``target`` (Gauss-Hermite + bisection)."""
    if not 0.0 < target < 1.0:
        raise ValueError("prevalence must lie in (0, 1)")
    return float(optimize.bisect(lambda b: prevalence(b, nodes) - target, *bracket, xtol=1e-12))


class CovariateSampler:
    """Draw ``(x1, x2)`` given the response.

    ``x1 | y`` is a two-point law; ``x2 | (x1, y)`` has density proportional to
    ``phi(x2) P(y | x1, x2)`` and is drawn by rejection from the standard normal,
    accepting with probability ``P(y | x1, x2) <= 1``.
    """

    def __init__(self, beta0: float, nodes: int = PREVALENCE_NODES):
        self.beta0 = beta0
        x, w = np.polynomial.hermite_e.hermegauss(nodes)
        w = w / math.sqrt(2.0 * math.pi)
        # P(Y = 1 | x1) for x1 = 0, 1
        p_case = np.array([np.sum(w * expit(beta0 + x)), np.sum(w * expit(beta0 + 1.0 + x))])
        prev = 0.5 * p_case.sum()
        self._p_case = p_case
        self.prevalence = float(prev)
        self.p_x1_case = float(0.5 * p_case[1] / prev)
        self.p_x1_control = float(0.5 * (1.0 - p_case[1]) / (1.0 - prev))
        self.proposals = 0
        self.accepted = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else math.nan

    def _draw_x2(self, case: bool, x1: float, size: int, rng: np.random.Generator) -> np.ndarray:
        # acceptance probability is P(y | x1); propose batches sized to it and keep the
        # first accepted draw per individual (same law as one proposal at a time)
        p_y = self._p_case[int(x1)] if case else 1.0 - self._p_case[int(x1)]
        k = int(min(max(math.ceil(2.0 / p_y), 1), 4096))
        out = np.empty(size)
        todo = np.arange(size)
        while todo.size:
            z = rng.standard_normal((todo.size, k))
            p1 = expit(self.beta0 + x1 + z)
            acc = rng.random((todo.size, k)) < (p1 if case else 1.0 - p1)
            hit = acc.any(axis=1)
            first = np.argmax(acc, axis=1)
            out[todo[hit]] = z[hit, first[hit]]
            # draws after the first acceptance are discarded unseen
            self.proposals += int(np.sum(np.where(hit, first + 1, k)))
            self.accepted += int(hit.sum())
            todo = todo[~hit]
        return out

    def sample(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Design matrix ``[1, x1, x2]`` for the fixed response ``y``."""
        y = np.asarray(y, dtype=bool)
        n = y.shape[0]
        x1 = np.where(y, rng.random(n) < self.p_x1_case, rng.random(n) < self.p_x1_control).astype(float)
        x2 = np.empty(n)
        for yv in (False, True):
            for xv in (0.0, 1.0):
                idx = np.flatnonzero((y == yv) & (x1 == xv))
                if idx.size:
                    x2[idx] = self._draw_x2(yv, xv, idx.size, rng)
        return np.column_stack([np.ones(n), x1, x2])


@dataclass(frozen=True)
class SimulationConfig:
    """Conditional-on-cases type I error experiment.

    ``beta0`` defaults to the intercept matching ``prevalence``.
    """

    n: int = 2000
    cases: int = 40
    maf: float = 0.05
    alpha: float = 1e-3
    replicates: int = 100_000
    methods: tuple[str, ...] = ("dspa_cc", "espa_cc", "espa")
    seed: int = 20240601
    prevalence: float = 0.01
    beta0: float | None = None
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.cases < self.n:
            raise ValueError(f"need 0 < cases < n, got cases={self.cases}, n={self.n}")
        if not 0.0 < self.maf <= 0.5:
            raise ValueError(f"MAF must lie in (0, 0.5], got {self.maf}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.replicates < 1 or self.workers < 1:
            raise ValueError("replicates and workers must be positive")
        unknown = set(self.methods) - set(METHODS) - {"normal"}
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, values: dict) -> SimulationConfig:
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            if key == "methods":
                kw[key] = tuple(m.strip() for m in str(raw).split(",") if m.strip())
            elif key in ("n", "cases", "replicates", "seed", "workers"):
                kw[key] = int(raw)
            elif key == "beta0" and str(raw).lower() in ("", "none"):
                kw[key] = None
            else:
                kw[key] = float(raw)
        return cls(**kw)

    @classmethod
    def from_text(cls, text: str) -> SimulationConfig:
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
        return cls.from_mapping(values)

    @classmethod
    def from_file(cls, path) -> SimulationConfig:
        with open(path) as fh:
            return cls.from_text(fh.read())

    def resolved_beta0(self) -> float:
        return solve_intercept_for_prevalence(self.prevalence) if self.beta0 is None else self.beta0


@dataclass
class MethodRate:
    method: str
    rejections: int
    tests: int
    rate: float
    ci_low: float
    ci_high: float


@dataclass
class SimulationResult:
    config: SimulationConfig
    beta0: float
    rates: dict[str, MethodRate]
    replicates_done: int
    fit_failures: int
    untestable: int
    errors: dict[str, int]
    acceptance_rate: float


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def _simulate_chunk(args):
    config, beta0, seed_seq, reps = args
    rng = np.random.default_rng(seed_seq)
    sampler = CovariateSampler(beta0)
    y = np.zeros(config.n)
    y[: config.cases] = 1.0
    rej = {m: 0 for m in config.methods}
    errs = {m: 0 for m in config.methods}
    fit_fail = untestable = done = 0
    for _ in range(reps):
        X = sampler.sample(y, rng)
        g = rng.binomial(2, config.maf, config.n).astype(np.uint8)
        try:
            fit = fit_null(Dataset(y, X))
        except FitError:
            fit_fail += 1
            continue
        done += 1
        if np.all(g == g[0]):
            untestable += 1
            continue
        u = score_statistic(fit, g)
        for m in config.methods:
            try:
                p = two_sided_pvalue(m, fit, g, u).p_two_sided
            except UntestableVariantError:
                untestable += 1
                break
            except SaddlepointError:
                errs[m] += 1
                continue
            if p <= config.alpha:
                rej[m] += 1
    return rej, errs, fit_fail, untestable, done, sampler.proposals, sampler.accepted


def simulate_conditional_t1e(config: SimulationConfig) -> SimulationResult:
    """Empirical type I error given the case/control labels, with Clopper-Pearson intervals.

    Replicates are split into fixed chunks, each with its own substream spawned
    from ``config.seed``, so results do not depend on ``config.workers``.
    Replicates whose null fit fails are not counted; monomorphic draws count as
    non-rejections.
    """
    beta0 = config.resolved_beta0()
    sizes = [CHUNK] * (config.replicates // CHUNK)
    if config.replicates % CHUNK:
        sizes.append(config.replicates % CHUNK)
    seeds = np.random.SeedSequence(config.seed).spawn(len(sizes))
    jobs = [(config, beta0, s, r) for s, r in zip(seeds, sizes)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            parts = list(ex.map(_simulate_chunk, jobs))
    else:
        parts = [_simulate_chunk(j) for j in jobs]
    rej = {m: 0 for m in config.methods}
    errs = {m: 0 for m in config.methods}
    fit_fail = untestable = done = proposals = accepted = 0
    for r, e, ff, un, dn, pr, ac in parts:
        for m in config.methods:
            rej[m] += r[m]
            errs[m] += e[m]
        fit_fail += ff
        untestable += un
        done += dn
        proposals += pr
        accepted += ac
    rates = {}
    for m in config.methods:
        tests = done - errs[m]
        lo, hi = clopper_pearson(rej[m], tests) if tests else (math.nan, math.nan)
        rates[m] = MethodRate(m, rej[m], tests, rej[m] / tests if tests else math.nan, lo, hi)
    return SimulationResult(config, beta0, rates, done, fit_fail, untestable, errs,
                            accepted / proposals if proposals else math.nan)


def write_simulation_csv(path, result: SimulationResult):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "alpha", "rejections", "tests", "rate", "ci_low", "ci_high"])
        for r in result.rates.values():
            wr.writerow([r.method, f"{result.config.alpha:g}", r.rejections, r.tests,
                         f"{r.rate:.6g}", f"{r.ci_low:.6g}", f"{r.ci_high:.6g}"])
