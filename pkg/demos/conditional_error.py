"""
Conditional type I error in the intercept model
===============================================

For each number of cases v, find every method's rejection region on the
exact lattice and compute its exact probability. A method is conditionally
invalid at v when that probability exceeds alpha. Only every 25th v is used
to keep this quick; the acceptance suite runs all 999.
"""

import numpy as np

from spagwas import GenotypeCounts
from spagwas.evaluate import conditional_errors, default_mu_grid, profile_from_conditional

counts = GenotypeCounts(980, 20, 0)
vs = np.arange(1, counts.n, 25)
alphas = [0.05, 5e-5]

for method in ("exact", "normal", "espa", "espa_cc", "dspa_cc"):
    cond = conditional_errors(counts, alphas, method, vs)
    for a in alphas:
        prof = profile_from_conditional(method, a, counts.n, vs, cond[a], default_mu_grid())
        worst = prof.overall.max() / a
        print(f"{method:8s} alpha={a:<6g} invalid at {len(prof.invalid_v):3d}/{len(vs)} v, "
              f"max overall error / alpha = {worst:.2f}")
