import itertools
from collections import defaultdict

import numpy as np
import pytest

from spagwas import Dataset, fit_null


def brute_force_score_pmf(g, strata, cases):
    """Law of ``sum_i g_i (Y_i - v_s / n_s)`` with ``Y`` uniform over all responses
    having ``cases[s]`` ones in stratum ``s``.

    Under the null the response is uniform given the sufficient statistic, so this
    is the conditional distribution of the score by direct enumeration.
    Returns a dict ``{rounded u: probability}``.
    """
    g = np.asarray(g, dtype=float)
    strata = np.asarray(strata)
    per_stratum = []
    for s, v in zip(np.unique(strata), cases):
        gs = g[strata == s]
        mu = v / len(gs)
        vals = defaultdict(int)
        for idx in itertools.combinations(range(len(gs)), v):
            vals[round(float(gs[list(idx)].sum() - mu * gs.sum()), 9)] += 1
        total = sum(vals.values())
        per_stratum.append({k: c / total for k, c in vals.items()})
    out = {0.0: 1.0}
    for dist in per_stratum:
        nxt = defaultdict(float)
        for a, pa in out.items():
            for b, pb in dist.items():
                nxt[round(a + b, 9)] += pa * pb
        out = dict(nxt)
    return out


def random_design(rng, n, d):
    """Response and design with an intercept and ``d - 1`` standard normal covariates."""
    X = np.column_stack([np.ones(n), rng.standard_normal((n, d - 1))])
    eta = -1.0 + X[:, 1:].sum(axis=1) * 0.5
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    y[:2] = (1.0, 0.0)
    return y, X


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def covariate_fit(rng):
    y, X = random_design(rng, 60, 3)
    return fit_null(Dataset(y, X))
