"""
Type I error given the case/control labels
==========================================

Labels are fixed (2% cases); covariates are drawn given the labels and the
genotype independently of everything, so every rejection is a false one. A
short run of 2000 replicates at alpha = 0.01; the acceptance suite runs 1e5 at
alpha = 1e-3.
"""

from spagwas.evaluate import SimulationConfig, simulate_conditional_t1e, solve_intercept_for_prevalence

print(f"intercept for 1% prevalence: {solve_intercept_for_prevalence(0.01):.4f}")
cfg = SimulationConfig(n=2000, cases=40, maf=0.05, alpha=0.01, replicates=2000, seed=11)
res = simulate_conditional_t1e(cfg)
print(f"rejection sampling acceptance rate {res.acceptance_rate:.3f}")
for r in res.rates.values():
    print(f"{r.method:8s} {r.rejections:4d}/{r.tests}  rate {r.rate:.4f}  95% CI [{r.ci_low:.4f}, {r.ci_high:.4f}]")
