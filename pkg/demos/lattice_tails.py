"""
Exact and approximate tails of a rare-variant score
===================================================

1000 individuals, 20 heterozygous carriers, 30 cases. The score given the
number of cases lives on a step-1 lattice; compare its exact right tail with
the continuity-corrected saddlepoint tails and the normal approximation.
"""

import math

import numpy as np
from scipy.stats import norm

from spagwas import GenotypeCounts, exact_intercept_pmf
from spagwas.evaluate import intercept_fit
from spagwas.saddlepoint import tail_evaluator

counts = GenotypeCounts(980, 20, 0)
v = 30
pmf = exact_intercept_pmf(counts, v)
print(f"support [{pmf.lower:.2f}, {pmf.upper:.2f}], mean {pmf.mean():.2e}, variance {pmf.var():.4f}")

# one null fit serves every method
fit = intercept_fit(counts.n, v)
g = counts.genotype()
tails = {m: tail_evaluator(m, fit, g) for m in ("dspa_cc", "espa_cc", "espa")}
sd = math.sqrt(fit.w_hat[0] * np.sum((g - g.mean()) ** 2))

print(f"{'u':>7} {'exact':>10} {'dspa_cc':>10} {'espa_cc':>10} {'espa':>10} {'normal':>10}")
for u in pmf.support[pmf.support > 0][:10]:
    row = [pmf.sf(u)] + [tails[m].survival(u).survival for m in tails] + [norm.sf(u / sd)]
    print(f"{u:7.2f} " + " ".join(f"{x:10.3e}" for x in row))

# the corrected approximations stay within a few percent far out in the tail,
# the continuous ones are off by a factor that grows with u
