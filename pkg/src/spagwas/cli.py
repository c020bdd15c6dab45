"""Command line entry point: ``spagwas {gwas,exact-pmf,error-profile,simulate}``.

Input formats for ``gwas``
--------------------------
Phenotype file: tab-separated with a header. Column 1 is the sample ID, column 2
the 0/1 phenotype, any further columns numeric covariates. An intercept is added.

Genotype file: tab-separated, variant-major. The header is
``ID  CHR  POS  <sample IDs...>``; each row is a variant ID, chromosome,
position and one hard call per sample in ``{0, 1, 2, NA}``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .evaluate import (
    EVAL_METHODS,
    SimulationConfig,
    default_mu_grid,
    error_profiles,
    simulate_conditional_t1e,
    write_conditional_csv,
    write_overall_csv,
    write_simulation_csv,
)
from .exact import GenotypeCounts, exact_intercept_pmf
from .model import Dataset, FitError, NullFit, UntestableVariantError, conditional_variance, fit_null, score_statistic
from .pvalue import METHODS, ExactTails, normal_pvalue, pvalue_from_tails, two_sided_pvalue
from .saddlepoint import SaddlepointError

log = logging.getLogger("spagwas")

THREADS_ENV = "SPAGWAS_THREADS"
DEFAULT_METHODS = ("dspa_cc", "espa_cc")
REFINED_METHODS = tuple(m for m in METHODS if m != "normal")


class InputError(ValueError):
    """Malformed input file; the message carries the file name and line number."""


@dataclass(frozen=True)
class RunConfig:
    pheno: str
    geno: str
    out: str
    methods: tuple[str, ...] = DEFAULT_METHODS
    alpha_screen: float = 5e-5
    alpha_report: float = 5e-8
    min_mac: int = 1
    min_maf: float = 0.0
    na_policy: str = "drop"
    threads: int = 1
    screen: bool = True

    def __post_init__(self):
        for name in ("alpha_screen", "alpha_report"):
            a = getattr(self, name)
            if not 0.0 < a < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {a}")
        if self.alpha_screen < self.alpha_report:
            raise ValueError("alpha_screen must be >= alpha_report")
        bad = [m for m in self.methods if m not in REFINED_METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {', '.join(REFINED_METHODS)}")
        if self.na_policy not in ("drop", "impute"):
            raise ValueError("na_policy must be 'drop' or 'impute'")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


# --- parsing -----------------------------------------------------------------

def read_phenotypes(path: str) -> tuple[list[str], np.ndarray, np.ndarray, list[str]]:
    """Return sample IDs, 0/1 response, design matrix with intercept and covariate names."""
    ids, ys, rows = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if len(header) < 2:
            raise InputError(f"{path}:1: need at least ID and phenotype columns")
        ncol = len(header)
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != ncol:
                raise InputError(f"{path}:{lineno}: expected {ncol} fields, got {len(rec)}")
            ids.append(rec[0])
            if rec[1] not in ("0", "1"):
                raise InputError(f"{path}:{lineno}: phenotype must be 0 or 1, got {rec[1]!r}")
            ys.append(float(rec[1]))
            try:
                rows.append([float(c) for c in rec[2:]])
            except ValueError:
                raise InputError(f"{path}:{lineno}: covariates must be numeric") from None
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate sample IDs")
    if not ids:
        raise InputError(f"{path}: no samples")
    cov = np.array(rows, dtype=float).reshape(len(ids), ncol - 2)
    X = np.column_stack([np.ones(len(ids)), cov])
    return ids, np.array(ys), X, header[2:]


@dataclass
class Variant:
    vid: str
    chrom: str
    pos: str
    g: np.ndarray | None
    n_missing: int = 0


def read_genotypes(path: str, sample_ids: list[str]):
    """Yield :class:`Variant` rows with genotypes reordered to ``sample_ids``.

    Missing calls are returned as 255 in a ``uint8`` vector.
    """
    fh = open(path, newline="")
    try:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if len(header) < 4:
            raise InputError(f"{path}:1: need ID, CHR, POS and at least one sample column")
        geno_ids = header[3:]
        missing = sorted(set(sample_ids) - set(geno_ids))
        extra = sorted(set(geno_ids) - set(sample_ids))
        if missing or extra or len(set(geno_ids)) != len(geno_ids):
            msg = [f"{path}: sample IDs do not match the phenotype file"]
            if missing:
                msg.append(f"absent from genotypes: {', '.join(missing[:20])}")
            if extra:
                msg.append(f"absent from phenotypes: {', '.join(extra[:20])}")
            if len(set(geno_ids)) != len(geno_ids):
                msg.append("duplicate sample IDs in genotype header")
            raise InputError("; ".join(msg))
        order = np.array([geno_ids.index(s) for s in sample_ids]) if geno_ids != sample_ids else None
        ncol = len(header)
        lut = {"0": 0, "1": 1, "2": 2, "NA": 255}
        for lineno, rec in enumerate(reader, 2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != ncol:
                raise InputError(f"{path}:{lineno}: expected {ncol} fields, got {len(rec)}")
            try:
                g = np.array([lut[c] for c in rec[3:]], dtype=np.uint8)
            except KeyError as exc:
                bad = exc.args[0]
                try:
                    float(bad)
                except ValueError:
                    raise InputError(f"{path}:{lineno}: invalid genotype {bad!r}") from None
                raise InputError(f"{path}:{lineno}: dosage {bad!r} is not a hard call; "
                                 "round to the most likely count before testing") from None
            if order is not None:
                g = g[order]
            yield Variant(rec[0], rec[1], rec[2], g, int(np.sum(g == 255)))
    finally:
        fh.close()


# --- per-variant work --------------------------------------------------------

@dataclass
class VariantResult:
    vid: str
    chrom: str
    pos: str
    mac: int | None = None
    maf: float | None = None
    u: float | None = None
    variance: float | None = None
    pvalues: dict[str, float | None] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    filter: str = "PASS"


def _prepare_genotype(var: Variant, policy: str) -> tuple[np.ndarray | None, str | None]:
    g = var.g
    if var.n_missing:
        if policy == "drop":
            return None, "missing"
        obs = g[g != 255]
        if obs.size == 0:
            return None, "missing"
        mode = int(np.argmax(np.bincount(obs, minlength=3)))
        g = np.where(g == 255, mode, g).astype(np.uint8)
    return g, None


def analyze_variant(fit: NullFit, var: Variant, cfg: RunConfig) -> VariantResult:
    res = VariantResult(var.vid, var.chrom, var.pos)
    g, reason = _prepare_genotype(var, cfg.na_policy)
    if var.n_missing and g is not None:
        res.flags.append(f"imputed:{var.n_missing}")
    if g is None:
        res.filter = reason
        return res
    ac = int(g.sum(dtype=np.int64))
    mac = min(ac, 2 * fit.n - ac)
    res.mac = mac
    res.maf = mac / (2.0 * fit.n)
    if mac == 0 or np.all(g == g[0]):
        res.filter = "untestable"
        return res
    if mac < cfg.min_mac:
        res.filter = "min_mac"
        return res
    if res.maf < cfg.min_maf:
        res.filter = "min_maf"
        return res
    var_c = conditional_variance(fit, g)
    if var_c <= 0.0:
        res.filter = "untestable"
        return res
    u = score_statistic(fit, g)
    res.u, res.variance = u, var_c
    p_norm = normal_pvalue(fit, g, u).p_two_sided
    res.pvalues["normal"] = p_norm
    if cfg.screen and p_norm >= cfg.alpha_screen:
        res.flags.append("screened_out")
        return res
    for m in cfg.methods:
        try:
            rep = two_sided_pvalue(m, fit, g, u)
        except (SaddlepointError, UntestableVariantError, ValueError) as exc:
            log.warning("variant %s, method %s: %s", var.vid, m, exc)
            res.pvalues[m] = None
            res.flags.append(f"{m}:failed")
            continue
        res.pvalues[m] = rep.p_two_sided
        if rep.sided == "one":
            res.flags.append(f"{m}:one_sided")
        res.flags.extend(f"{m}:{f}" for f in rep.flags)
    return res


def _test_chunk(args):
    fit, variants, cfg = args
    return [analyze_variant(fit, v, cfg) for v in variants]


def _chunks(iterable, size):
    buf = []
    for item in iterable:
        buf.append(item)
        if len(buf) == size:
            yield buf
            buf = []
    if buf:
        yield buf


def fmt_p(p: float | None) -> str:
    return "NA" if p is None else f"{p:.3e}"


def _fmt_num(x, spec):
    return "NA" if x is None else format(x, spec)


def output_columns(cfg: RunConfig) -> list[str]:
    return (["variant_id", "chrom", "pos", "mac", "maf", "u", "variance", "p_normal"]
            + [f"p_{m}" for m in cfg.methods] + ["significant", "flags", "filter"])


def format_row(res: VariantResult, cfg: RunConfig) -> list[str]:
    refined = [res.pvalues.get(m) for m in cfg.methods]
    lead = refined[0] if refined else None
    sig = "NA" if lead is None else ("1" if lead <= cfg.alpha_report else "0")
    return ([res.vid, res.chrom, res.pos, _fmt_num(res.mac, "d"), _fmt_num(res.maf, ".6g"),
             _fmt_num(res.u, ".6g"), _fmt_num(res.variance, ".6g"), fmt_p(res.pvalues.get("normal"))]
            + [fmt_p(p) for p in refined] + [sig, ";".join(res.flags) or ".", res.filter])


def run_gwas(cfg: RunConfig) -> int:
    """Two-stage scan: normal screen at ``alpha_screen``, refined methods on the survivors."""
    ids, y, X, _ = read_phenotypes(cfg.pheno)
    fit = fit_null(Dataset(y, X))
    log.info("null model: n=%d, d=%d, cases=%d, IRLS iterations=%d", fit.n, fit.d, fit.n_cases, fit.iterations)
    n_rows = 0
    with open(cfg.out, "w", newline="") as fh:
        wr = csv.writer(fh, delimiter="\t", lineterminator="\n")
        wr.writerow(output_columns(cfg))
        chunks = _chunks(read_genotypes(cfg.geno, ids), 64)
        if cfg.threads > 1:
            with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
                # map preserves input order, so output is independent of scheduling
                for rows in ex.map(_test_chunk, ((fit, c, cfg) for c in chunks)):
                    for r in rows:
                        wr.writerow(format_row(r, cfg))
                        n_rows += 1
        else:
            for c in chunks:
                for r in _test_chunk((fit, c, cfg)):
                    wr.writerow(format_row(r, cfg))
                    n_rows += 1
    if n_rows == 0:
        log.warning("no variants in %s", cfg.geno)
    return 0


# --- other subcommands -------------------------------------------------------

def _parse_counts(text: str) -> GenotypeCounts:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("counts must be n0,n1,n2")
    return GenotypeCounts(*(int(p) for p in parts))


def emit_lattice_pmf(counts: GenotypeCounts, v: int, out, mark: float | None = None) -> None:
    """Write ``u, probability, lower, upper, marked`` rows of the exact intercept-model pmf.

    With ``mark`` the rows in the two-sided p-value set of that observation are marked 1.
    """
    pmf = exact_intercept_pmf(counts, v)
    marked = np.zeros(len(pmf.probs), dtype=int)
    if mark is not None:
        rep = pvalue_from_tails(ExactTails(pmf, "exact_intercept"), mark, pmf.lower, pmf.upper, "exact_intercept")
        tol = 1e-9 * (1.0 + abs(mark))
        sup = pmf.support
        if mark > 0:
            marked |= sup >= mark - tol
            if rep.sided == "two":
                marked |= sup <= rep.u_inv + tol
        elif mark < 0:
            marked |= sup <= mark + tol
            if rep.sided == "two":
                marked |= sup >= rep.u_inv - tol
        else:
            marked[:] = 1
    wr = csv.writer(out, lineterminator="\n")
    wr.writerow(["u", "probability", "lower", "upper", "marked"])
    for u, p, mk in zip(pmf.support, pmf.probs, marked):
        wr.writerow([f"{u:.10g}", f"{p:.17g}", f"{pmf.lower:.10g}", f"{pmf.upper:.10g}", int(mk)])


def _env_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(int(raw), 1)
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spagwas", description="Saddlepoint score tests for binary-trait GWAS.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gwas", help="two-stage association scan")
    g.add_argument("--pheno", required=True)
    g.add_argument("--geno", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--methods", default=",".join(DEFAULT_METHODS),
                   help=f"comma-separated, from {','.join(REFINED_METHODS)}")
    g.add_argument("--alpha-screen", type=float, default=5e-5)
    g.add_argument("--alpha-report", type=float, default=5e-8)
    g.add_argument("--no-screen", action="store_true", help="run the refined methods on every variant")
    g.add_argument("--min-mac", type=int, default=1)
    g.add_argument("--min-maf", type=float, default=0.0)
    g.add_argument("--na-policy", choices=("drop", "impute"), default="drop")
    g.add_argument("--threads", type=int, default=None, help=f"default: ${THREADS_ENV} or 1")

    e = sub.add_parser("exact-pmf", help="exact intercept-model pmf of the score")
    e.add_argument("--counts", type=_parse_counts, required=True, help="n0,n1,n2")
    e.add_argument("--cases", type=int, required=True)
    e.add_argument("--mark", type=float, default=None, help="observed score whose p-value set is marked")
    e.add_argument("--out", default="-")

    p = sub.add_parser("error-profile", help="conditional and overall type I error, intercept model")
    p.add_argument("--counts", type=_parse_counts, required=True, help="n0,n1,n2")
    p.add_argument("--alpha", default="0.05,5e-5")
    p.add_argument("--methods", default=",".join(EVAL_METHODS))
    p.add_argument("--out", required=True, help="prefix; writes <out>_conditional.csv and <out>_overall.csv")

    s = sub.add_parser("simulate", help="conditional type I error by simulation")
    s.add_argument("--config", help="key = value file (n, cases, maf, alpha, replicates, methods, ...)")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=None, help=f"default: ${THREADS_ENV} or 1")
    s.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "gwas":
            cfg = RunConfig(
                pheno=args.pheno, geno=args.geno, out=args.out,
                methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()),
                alpha_screen=args.alpha_screen, alpha_report=args.alpha_report,
                min_mac=args.min_mac, min_maf=args.min_maf, na_policy=args.na_policy,
                threads=args.threads or _env_threads(), screen=not args.no_screen,
            )
            return run_gwas(cfg)
        if args.command == "exact-pmf":
            if args.out == "-":
                emit_lattice_pmf(args.counts, args.cases, sys.stdout, args.mark)
            else:
                with open(args.out, "w", newline="") as fh:
                    emit_lattice_pmf(args.counts, args.cases, fh, args.mark)
            return 0
        if args.command == "error-profile":
            alphas = [float(a) for a in args.alpha.split(",")]
            profiles = []
            for m in (m.strip() for m in args.methods.split(",")):
                if m not in EVAL_METHODS:
                    raise ValueError(f"unknown method {m!r}; choose from {', '.join(EVAL_METHODS)}")
                profiles.extend(error_profiles(args.counts, alphas, m, default_mu_grid()))
            write_conditional_csv(f"{args.out}_conditional.csv", profiles)
            write_overall_csv(f"{args.out}_overall.csv", profiles)
            for pr in profiles:
                log.info("%s alpha=%g invalid fraction %.3f", pr.method, pr.alpha, pr.invalid_fraction)
            return 0
        if args.command == "simulate":
            base = SimulationConfig.from_file(args.config) if args.config else SimulationConfig()
            over = {}
            if args.seed is not None:
                over["seed"] = args.seed
            threads = args.threads or _env_threads()
            if threads > 1 or args.threads is not None:
                over["workers"] = threads
            if over:
                base = SimulationConfig(**{**base.__dict__, **over})
            result = simulate_conditional_t1e(base)
            write_simulation_csv(args.out, result)
            return 0
    except (InputError, FitError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
