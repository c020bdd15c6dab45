"""
Two-stage scan on synthetic files
=================================

Writes a phenotype table and a genotype matrix in the command line's text
formats, with one truly associated rare variant, then runs

    spagwas gwas --pheno pheno.tsv --geno geno.tsv --out results.tsv

The normal approximation screens at 5e-5; survivors get the saddlepoint tests.
"""

import pathlib
import tempfile

import numpy as np
from scipy.special import expit

from spagwas.cli import main

rng = np.random.default_rng(7)
n, n_var = 3000, 40
age = rng.normal(0, 1, n)
sex = rng.integers(0, 2, n)
maf = rng.uniform(0.002, 0.3, n_var)
G = rng.binomial(2, maf[:, None], (n_var, n))
eta = -4.0 + 0.3 * age + 0.2 * sex + 1.5 * G[0]  # variant 0 is causal
y = (rng.random(n) < expit(eta)).astype(int)
print(f"{y.sum()} cases out of {n}")

work = pathlib.Path(tempfile.mkdtemp())
ids = [f"s{i}" for i in range(n)]
with open(work / "pheno.tsv", "w") as fh:
    fh.write("ID\ty\tage\tsex\n")
    for i in range(n):
        fh.write(f"{ids[i]}\t{y[i]}\t{age[i]:.4f}\t{sex[i]}\n")
with open(work / "geno.tsv", "w") as fh:
    fh.write("ID\tCHR\tPOS\t" + "\t".join(ids) + "\n")
    for j in range(n_var):
        fh.write(f"rs{j}\t1\t{1000 + j}\t" + "\t".join(map(str, G[j])) + "\n")

main(["gwas", "--pheno", str(work / "pheno.tsv"), "--geno", str(work / "geno.tsv"),
      "--methods", "dspa_cc,espa_cc,espa,fast_dspa_cc,fast_spa", "--out", str(work / "results.tsv")])
print((work / "results.tsv").read_text().splitlines()[0])
for line in (work / "results.tsv").read_text().splitlines()[1:6]:
    print(line)
