"""Data model, restricted null fit and score quantities for the logistic GWAS score test.

The null model ``logit(mu_i) = x_i' beta`` is fitted once per dataset and the
resulting :class:`NullFit` is shared by every per-variant test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

MAX_ITER = 50
SEPARATION_EPS = 1e-12


class FitError(RuntimeError):
    """Base class for null-model fitting failures."""


class ConvergenceError(FitError):
    pass


class SeparationError(FitError):
    pass


class UntestableVariantError(ValueError):
    """Raised for variants whose conditional score variance is zero (e.g. monomorphic)."""


@dataclass(frozen=True)
class Dataset:
    """Binary response ``y``, design ``X`` (first column all ones) and genotype ``g``.

    ``g`` may be omitted when only the null fit is needed.
    """

    y: np.ndarray
    X: np.ndarray
    g: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError("y must be a vector and X an n x d matrix with matching rows")
        n, d = X.shape
        if n < d or d < 1:
            raise ValueError(f"need n >= d >= 1, got n={n}, d={d}")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("y must be binary (0/1)")
        if not np.allclose(X[:, 0], 1.0):
            raise ValueError("first column of X must be the intercept (all ones)")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if self.g is not None:
            object.__setattr__(self, "g", check_genotype(self.g, n))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def check_genotype(g, n: int) -> np.ndarray:
    """Validate a hard-call genotype vector and return it as ``uint8``."""
    g = np.asarray(g)
    if g.shape != (n,):
        raise ValueError(f"genotype length {g.shape} does not match n={n}")
    gf = g.astype(float)
    if not np.all(np.isin(gf, (0.0, 1.0, 2.0))):
        raise ValueError("genotypes must be hard calls in {0, 1, 2}")
    return gf.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class NullFit:
    """Restricted maximum likelihood fit under ``gamma = 0``.

    Attributes
    ----------
    beta_hat : (d,) array
    mu_hat : (n,) fitted probabilities, strictly inside (0, 1)
    w_hat : (n,) weights ``mu_hat * (1 - mu_hat)``
    xtwx : (d, d) Fisher information ``X' W X`` of the nuisance block
    xtwx_factor : Cholesky factor of ``xtwx`` as returned by ``scipy.linalg.cho_factor``
    """

    X: np.ndarray
    y: np.ndarray
    beta_hat: np.ndarray
    mu_hat: np.ndarray
    w_hat: np.ndarray
    xtwx: np.ndarray
    xtwx_factor: tuple = field(repr=False)
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.mu_hat.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_cases(self) -> int:
        return int(round(self.y.sum()))

    @property
    def intercept_only(self) -> bool:
        return self.d == 1

    @property
    def logdet_xtwx(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.xtwx_factor[0]))))

    def solve_xtwx(self, b: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.xtwx_factor, b)


def _cholesky(a: np.ndarray):
    try:
        return linalg.cho_factor(a, lower=False, check_finite=True)
    except linalg.LinAlgError as exc:
        raise FitError("X'WX is not positive definite (rank-deficient design?)") from exc


def fit_null(dataset: Dataset, tol: float | None = None, max_iter: int = MAX_ITER) -> NullFit:
    """Fit the covariate-only logistic model by IRLS with step-halving.

    Convergence is declared when ``max |X'(y - mu)| <= tol`` (default ``1e-8 * n``).
    Raises :class:`SeparationError` if a fitted probability leaves
    ``(1e-12, 1 - 1e-12)`` and :class:`ConvergenceError` after ``max_iter`` iterations.
    """
    X, y = dataset.X, dataset.y
    n, d = X.shape
    if tol is None:
        tol = 1e-8 * n
    ybar = y.mean()
    if ybar == 0.0 or ybar == 1.0:
        raise SeparationError("response is constant; the null model has no finite MLE")
    if np.linalg.matrix_rank(X) < d:
        raise FitError("design matrix X is not of full column rank")

    def loglik(eta):
        # sum y*eta - log(1 + e^eta), overflow safe
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    beta = np.zeros(d)
    beta[0] = np.log(ybar / (1.0 - ybar))
    eta = X @ beta
    ll = loglik(eta)
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        score = X.T @ (y - mu)
        if np.max(np.abs(score)) <= tol:
            break
        w = mu * (1.0 - mu)
        info = (X * w[:, None]).T @ X
        step = linalg.cho_solve(_cholesky(info), score)
        for _ in range(30):
            eta_new = X @ (beta + step)
            ll_new = loglik(eta_new)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            step = 0.5 * step
        beta = beta + step
        eta = eta_new
        ll = ll_new
    else:
        mu = expit(eta)
        if np.max(np.abs(X.T @ (y - mu))) > tol:
            raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")
        it = max_iter

    mu = expit(eta)
    if np.any(mu <= SEPARATION_EPS) or np.any(mu >= 1.0 - SEPARATION_EPS):
        raise SeparationError("fitted probabilities hit 0 or 1 (quasi-complete separation)")
    w = mu * (1.0 - mu)
    xtwx = (X * w[:, None]).T @ X
    return NullFit(
        X=X,
        y=y,
        beta_hat=beta,
        mu_hat=mu,
        w_hat=w,
        xtwx=xtwx,
        xtwx_factor=_cholesky(xtwx),
        iterations=it,
    )


def score_statistic(fit: NullFit, g) -> float:
    """Observed score ``g'(y - mu_hat)``."""
    g = check_genotype(g, fit.n).astype(float)
    return float(g @ (fit.y - fit.mu_hat))


def efficient_genotype(fit: NullFit, g) -> np.ndarray:
    """Project ``g`` onto the W-orthogonal complement of the columns of X.

    ``g_tilde = g - X (X'WX)^{-1} X'W g``
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (fit.n,):
        raise ValueError("genotype length does not match the fit")
    coef = fit.solve_xtwx(fit.X.T @ (fit.w_hat * g))
    return g - fit.X @ coef


def conditional_variance(fit: NullFit, g) -> float:
    """Variance of the score given ``U_beta = 0`` in the normal limit.

    ``g'Wg - g'WX (X'WX)^{-1} X'Wg``, evaluated with the fitted weights.
    """
    g = np.asarray(g, dtype=float)
    wg = fit.w_hat * g
    xtwg = fit.X.T @ wg
    val = float(g @ wg - xtwg @ fit.solve_xtwx(xtwg))
    scale = float(g @ wg)
    # cancellation can leave a tiny negative number for constant g
    if val < 1e-12 * max(scale, 1.0):
        return 0.0
    return val


@dataclass(frozen=True)
class ScoreContext:
    """Per-variant score quantities shared by the tail methods."""

    u: float
    g: np.ndarray
    g_tilde: np.ndarray
    var_cond: float
    lower: float
    upper: float

    @property
    def testable(self) -> bool:
        return self.var_cond > 0.0


def score_context(fit: NullFit, g) -> ScoreContext:
    """Collect the observed score, efficient genotype, variance and support bounds."""
    from .exact import conditional_support

    g = check_genotype(g, fit.n)
    gt = efficient_genotype(fit, g)
    var = float(np.sum(gt * gt * fit.w_hat))
    if conditional_variance(fit, g) == 0.0:
        var = 0.0
    lower, upper = conditional_support(fit, g)
    return ScoreContext(
        u=score_statistic(fit, g),
        g=g,
        g_tilde=gt,
        var_cond=var,
        lower=lower,
        upper=upper,
    )
