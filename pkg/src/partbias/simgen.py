"""Forward simulation.

Two engines:

* ``simulate_mvn`` draws the four orthogonal components ``G_x, G_w, eps_x,
  eps_w`` (one ``G_w``/``eps_w`` per phenotype) and applies the
  liability-threshold selection.  ``empirical_sample_quantities`` turns a
  cohort into the sample moments that the closed forms in ``model``
  describe, with Monte-Carlo standard errors.
* ``simulate_snp_cohort`` builds genotypes, standardised SNP effects and
  phenotypes, selects participants and keeps an independent random
  population sample for the participation GWAS.  ``gwas_on_selected`` and
  ``participation_gwas`` produce summary statistics for ``ldsc``.
"""
from __future__ import annotations

import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model
from .jackknife import jackknife_se
from .ldsc import LdScores, SumStats
from .model import PairParams, ParticipationParams, PhenotypeParams
from .truncnorm import as_context, std_normal_quantile

MEMORY_ENV = "PARTBIAS_MEMORY_BUDGET"
DEFAULT_MEMORY_BUDGET = 2 * 1024**3
CHUNK_SNPS = 256


class MemoryBudgetError(RuntimeError):
    pass


def _phenotypes(params):
    if isinstance(params, PairParams):
        return [params.y1, params.y2]
    if isinstance(params, PhenotypeParams):
        return [params]
    raise TypeError(f"expected PhenotypeParams or PairParams, got {type(params).__name__}")


def component_covariances(part: ParticipationParams, params):
    """Covariance matrices of (G_x, G_y...) and (eps_x, eps_y...)."""
    ys = _phenotypes(params)
    if isinstance(params, PairParams):
        rg, re_ = params.genetic_corr(), params.environmental_corr()
    else:
        y = ys[0]
        rg = np.array([[1.0, y.rho_g], [y.rho_g, 1.0]])
        re_ = np.array([[1.0, y.rho_e], [y.rho_e, 1.0]])
    h = np.array([part.h2_x] + [y.h2_y for y in ys])
    cg = rg * np.sqrt(np.outer(h, h))
    ce = re_ * np.sqrt(np.outer(1.0 - h, 1.0 - h))
    return cg, ce


def _sqrt_psd(c):
    vals, vecs = np.linalg.eigh(c)
    if vals.min() < model.PSD_TOL:
        raise ValueError("covariance matrix is not positive semidefinite")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _reparam_ab(part, ys):
    a = np.array([y.rho_g * math.sqrt(y.h2_y / part.h2_x) for y in ys])
    b = np.array([y.rho_e * math.sqrt((1.0 - y.h2_y) / (1.0 - part.h2_x)) for y in ys])
    return a, b


@dataclass
class MvnCohort:
    gx: np.ndarray
    ex: np.ndarray
    gw: np.ndarray  # (n, k)
    ew: np.ndarray  # (n, k)
    x: np.ndarray
    y: np.ndarray  # (n, k)
    selected: np.ndarray
    a: np.ndarray
    b: np.ndarray
    alpha: float

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def n_traits(self) -> int:
        return self.y.shape[1]


def simulate_mvn(part: ParticipationParams, params, sel, n: int, seed: int) -> MvnCohort:
    sel = as_context(sel)
    if n < 1:
        raise ValueError("n must be at least 1")
    ys = _phenotypes(params)
    cg, ce = component_covariances(part, params)
    sg, se = _sqrt_psd(cg), _sqrt_psd(ce)
    rng = np.random.default_rng(seed)
    k = len(ys) + 1
    g = rng.standard_normal((n, k)) @ sg
    e = rng.standard_normal((n, k)) @ se
    a, b = _reparam_ab(part, ys)
    gx, ex = g[:, 0], e[:, 0]
    x = gx + ex
    return MvnCohort(
        gx=gx,
        ex=ex,
        gw=g[:, 1:] - np.outer(gx, a),
        ew=e[:, 1:] - np.outer(ex, b),
        x=x,
        y=g[:, 1:] + e[:, 1:],
        selected=x > sel.t_alpha,
        a=a,
        b=b,
        alpha=sel.alpha,
    )


@dataclass
class EmpiricalQuantities:
    """Selected-sample moments with jackknife Monte-Carlo standard errors."""

    values: dict
    se: dict
    n_selected: int

    def __getitem__(self, key):
        return self.values[key]


def _empirical_names(k):
    names = ["var_x", "cov_gx_ex", "var_gx"]
    for i in range(1, k + 1):
        names += [f"var_y{i}", f"h2_y{i}", f"rho_g{i}", f"a_prime{i}", f"delta{i}"]
    if k == 2:
        names.append("varphi_g")
    return names


def _empirical_from_moments(pooled, k):
    # layout: [cross-product matrix of V among selected (D*D), n_all, sum y_i over all rows]
    D = 4 + 2 * k  # 1, gx, ex, x, gw_1..k, y_1..k
    M = pooled[: D * D].reshape(D, D)
    n_all = pooled[D * D]
    ysum_all = pooled[D * D + 1 :]
    ns = M[0, 0]
    if ns < 2:
        raise ValueError("fewer than 2 selected rows")
    mean = M[0] / ns
    C = M / ns - np.outer(mean, mean)
    GX, EX, X = 1, 2, 3
    gw = [4 + i for i in range(k)]
    yi = [4 + k + i for i in range(k)]
    out = [C[X, X], C[GX, EX], C[GX, GX]]
    coefs = []
    for i in range(k):
        p = [GX, gw[i]]
        cpp = C[np.ix_(p, p)]
        c = np.linalg.pinv(cpp) @ C[p, yi[i]]
        coefs.append((p, c))
        gvar = c @ cpp @ c
        vy = C[yi[i], yi[i]]
        cov_gx = C[GX, p] @ c
        rho_g = cov_gx / math.sqrt(C[GX, GX] * gvar) if gvar > 0 else math.nan
        delta = (mean[yi[i]] - ysum_all[i] / n_all) / math.sqrt(vy)
        out += [vy, gvar / vy, rho_g, c[0], delta]
    if k == 2:
        (p1, c1), (p2, c2) = coefs
        cov12 = c1 @ C[np.ix_(p1, p2)] @ c2
        v1 = c1 @ C[np.ix_(p1, p1)] @ c1
        v2 = c2 @ C[np.ix_(p2, p2)] @ c2
        out.append(cov12 / math.sqrt(v1 * v2))
    return np.array(out)


def empirical_sample_quantities(cohort: MvnCohort, n_groups: int = 50) -> EmpiricalQuantities:
    """Sample moments among selected rows, what an unadjusted analysis sees.

    The genetic predictor is the regression of Y on ``(G_x, G_w)`` within the
    selected rows.  Standard errors come from a delete-one-group jackknife
    over ``n_groups`` contiguous groups of (i.i.d.) rows.
    """
    k = cohort.n_traits
    s = cohort.selected
    if s.sum() < 2:
        raise ValueError("fewer than 2 selected rows")
    V = np.column_stack(
        [np.ones(cohort.n), cohort.gx, cohort.ex, cohort.x, cohort.gw, cohort.y]
    )
    bounds = np.linspace(0, cohort.n, n_groups + 1).astype(np.int64)
    stats = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        Vs = V[lo:hi][s[lo:hi]]
        stats.append(
            np.concatenate([(Vs.T @ Vs).ravel(), [hi - lo], cohort.y[lo:hi].sum(axis=0)])
        )
    res = jackknife_se(np.array(stats), lambda p: _empirical_from_moments(p, k))
    names = _empirical_names(k)
    return EmpiricalQuantities(
        values=dict(zip(names, res.estimate.tolist())),
        se=dict(zip(names, res.se.tolist())),
        n_selected=int(s.sum()),
    )


def simulate_binary_liability(h2_liab: float, prevalence: float, n: int, seed: int):
    """Binary trait from a liability threshold; returns ``(cases, genetic_value)``."""
    rng = np.random.default_rng(seed)
    g = math.sqrt(h2_liab) * rng.standard_normal(n)
    liab = g + math.sqrt(1.0 - h2_liab) * rng.standard_normal(n)
    return (liab > std_normal_quantile(1.0 - prevalence)).astype(np.int8), g


# --- SNP-level cohorts -------------------------------------------------------


def memory_budget() -> int:
    raw = os.environ.get(MEMORY_ENV)
    if not raw:
        return DEFAULT_MEMORY_BUDGET
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([kKmMgG]?)[bB]?\s*", raw)
    if not m:
        raise ValueError(f"cannot parse {MEMORY_ENV}={raw!r}")
    scale = {"": 1, "k": 1024, "m": 1024**2, "g": 1024**3}[m.group(2).lower()]
    return int(float(m.group(1)) * scale)


@dataclass
class SnpCohort:
    part: ParticipationParams
    params: object
    alpha: float
    snp: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    freqs: np.ndarray
    betas: np.ndarray  # (m, 1 + k): column 0 is participation
    genotypes: np.ndarray  # (n, m) int8
    g: np.ndarray  # (n, 1 + k)
    e: np.ndarray
    selected: np.ndarray
    ref_genotypes: np.ndarray  # (n_ref, m) independent population sample
    ref_g: np.ndarray
    ref_e: np.ndarray
    ld: LdScores
    trait_names: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.snp)

    @property
    def n(self) -> int:
        return self.genotypes.shape[0]

    @property
    def x(self):
        return self.g[:, 0] + self.e[:, 0]

    @property
    def y(self):
        return self.g[:, 1:] + self.e[:, 1:]

    @property
    def ref_x(self):
        return self.ref_g[:, 0] + self.ref_e[:, 0]

    @property
    def ref_y(self):
        return self.ref_g[:, 1:] + self.ref_e[:, 1:]

    @property
    def n_traits(self) -> int:
        return self.g.shape[1] - 1


def _effects(rng, m, cg):
    """Standardised per-SNP effects whose cross-products equal ``cg`` exactly."""
    K = cg.shape[0]
    raw = rng.standard_normal((m, K))
    if m >= K:
        vals, vecs = np.linalg.eigh(raw.T @ raw)
        q = raw @ (vecs / np.sqrt(vals)) @ vecs.T
        return q @ _sqrt_psd(cg)
    scale = np.sqrt(np.diag(cg) / np.sum(raw**2, axis=0))
    return raw * scale


def _genotype_chunk(seed_seq, n, p, ld_block, ld_rho):
    rng = np.random.default_rng(seed_seq)
    if ld_block is None:
        u = rng.random((n, len(p)), dtype=np.float32)
        p32 = p.astype(np.float32)
        return (u < 1.0 - (1.0 - p32) ** 2).view(np.int8) + (u < p32 * p32).view(np.int8)
    thr = std_normal_quantile(p)
    out = np.zeros((n, len(p)), dtype=np.int8)
    for hap in range(2):
        z = None
        for j in range(len(p)):
            r = ld_rho[j]
            eps = rng.standard_normal(n)
            z = eps if (z is None or j % ld_block == 0) else r * z + math.sqrt(1.0 - r * r) * eps
            out[:, j] += (z < thr[j]).view(np.int8)
    return out


def _generate(seed_seq, n, freqs, betas, ld_block, ld_rho, threads):
    """Genotypes chunk by chunk; each chunk has its own RNG stream."""
    m = len(freqs)
    starts = list(range(0, m, CHUNK_SNPS))
    # block boundaries must not straddle chunks in LD mode
    if ld_block is not None and CHUNK_SNPS % ld_block:
        raise ValueError(f"ld_block must divide {CHUNK_SNPS}")
    seeds = seed_seq.spawn(len(starts))
    geno = np.empty((n, m), dtype=np.int8)

    def work(i):
        lo = starts[i]
        hi = min(lo + CHUNK_SNPS, m)
        p = freqs[lo:hi]
        gc = _genotype_chunk(seeds[i], n, p, ld_block, None if ld_rho is None else ld_rho[lo:hi])
        geno[:, lo:hi] = gc
        # sum_j (g_j - 2 p_j) w_j with w_j = beta_j / sd_j
        w = betas[lo:hi] / np.sqrt(2.0 * p * (1.0 - p))[:, None]
        return (gc.astype(np.float32) @ w.astype(np.float32)).astype(float) - 2.0 * p @ w

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(starts))))
    else:
        parts = [work(i) for i in range(len(starts))]
    g = np.zeros((n, betas.shape[1]))
    for contrib in parts:  # fixed summation order
        g += contrib
    return geno, g


def _ld_scores_from(geno, ld_block):
    m = geno.shape[1]
    if ld_block is None:
        return np.ones(m)
    n = geno.shape[0]
    ell = np.empty(m)
    for lo in range(0, m, ld_block):
        blk = geno[:, lo : lo + ld_block].astype(float)
        r = np.corrcoef(blk, rowvar=False)
        r2 = r * r
        r2_adj = r2 - (1.0 - r2) / (n - 2)
        np.fill_diagonal(r2_adj, 1.0)
        ell[lo : lo + ld_block] = r2_adj.sum(axis=1)
    return ell


def simulate_snp_cohort(
    part: ParticipationParams,
    params,
    sel,
    n: int,
    m: int,
    seed: int,
    n_ref: int | None = None,
    freq_range=(0.05, 0.95),
    ld_block: int | None = None,
    threads: int = 1,
    trait_names=None,
) -> SnpCohort:
    """Genotypes, infinitesimal effects and phenotypes for ``n`` invited people.

    ``n_ref`` people from the same population (default ``n``) form the
    independent sample for the participation GWAS.  With ``ld_block`` set,
    SNPs come in consecutive blocks of correlated haplotypes and LD scores
    are estimated from the reference sample.
    """
    sel = as_context(sel)
    n_ref = n if n_ref is None else int(n_ref)
    if n < 2 or m < 1 or n_ref < 2:
        raise ValueError("need n >= 2, n_ref >= 2 and m >= 1")
    need = (n + n_ref) * m + 8 * CHUNK_SNPS * max(n, n_ref) * 3
    budget = memory_budget()
    if need > budget:
        raise MemoryBudgetError(
            f"simulation needs about {need / 1024**2:.0f} MiB, budget is "
            f"{budget / 1024**2:.0f} MiB (override with {MEMORY_ENV})"
        )
    ys = _phenotypes(params)
    cg, ce = component_covariances(part, params)
    root = np.random.SeedSequence(seed)
    s_freq, s_eff, s_ld, s_geno, s_env, s_ref_geno, s_ref_env = root.spawn(7)
    lo, hi = freq_range
    freqs = np.random.default_rng(s_freq).uniform(lo, hi, m)
    betas = _effects(np.random.default_rng(s_eff), m, cg)
    ld_rho = None
    if ld_block is not None:
        ld_rho = np.repeat(
            np.random.default_rng(s_ld).uniform(0.2, 0.9, -(-m // ld_block)), ld_block
        )[:m]
    geno, g = _generate(s_geno, n, freqs, betas, ld_block, ld_rho, threads)
    e = np.random.default_rng(s_env).standard_normal((n, len(ys) + 1)) @ _sqrt_psd(ce)
    ref_geno, ref_g = _generate(s_ref_geno, n_ref, freqs, betas, ld_block, ld_rho, threads)
    ref_e = np.random.default_rng(s_ref_env).standard_normal((n_ref, len(ys) + 1)) @ _sqrt_psd(ce)
    snp = np.array([f"rs{j + 1}" for j in range(m)])
    x = g[:, 0] + e[:, 0]
    names = list(trait_names) if trait_names else [f"Y{i + 1}" for i in range(len(ys))]
    return SnpCohort(
        part=part,
        params=params,
        alpha=sel.alpha,
        snp=snp,
        a1=np.full(m, "A"),
        a2=np.full(m, "G"),
        freqs=freqs,
        betas=betas,
        genotypes=geno,
        g=g,
        e=e,
        selected=x > sel.t_alpha,
        ref_genotypes=ref_geno,
        ref_g=ref_g,
        ref_e=ref_e,
        ld=LdScores(snp, _ld_scores_from(ref_geno, ld_block)),
        trait_names=names,
    )


@dataclass
class GwasResult:
    stats: SumStats
    monomorphic: np.ndarray


def gwas(genotypes, phenotype, snp, a1, a2, trait: str, rows=None) -> GwasResult:
    """Marginal association per SNP: ``z = sqrt(N) * corr(dosage, phenotype)``.

    Dosage counts allele ``a1``.  Monomorphic SNPs get ``z = 0`` and are
    flagged.
    """
    y = np.asarray(phenotype, dtype=float)
    if rows is not None:
        y = y[rows]
    N = len(y)
    if N < 2:
        raise ValueError("need at least 2 rows for a GWAS")
    yc = y - y.mean()
    sy = math.sqrt(yc @ yc)
    m = genotypes.shape[1]
    z = np.zeros(m)
    mono = np.zeros(m, dtype=bool)
    for lo in range(0, m, CHUNK_SNPS):
        blk = genotypes[rows, lo : lo + CHUNK_SNPS] if rows is not None else genotypes[:, lo : lo + CHUNK_SNPS]
        blk = blk.astype(np.float32)
        blk -= blk.mean(axis=0, dtype=float).astype(np.float32)
        ss = np.einsum("ij,ij->j", blk, blk, dtype=float)
        cov = (blk.T @ yc.astype(np.float32)).astype(float)
        ok = ss > 0
        r = np.zeros(len(ss))
        if sy > 0:
            r[ok] = cov[ok] / np.sqrt(ss[ok]) / sy
        z[lo : lo + CHUNK_SNPS] = math.sqrt(N) * r
        mono[lo : lo + CHUNK_SNPS] = ~ok
    return GwasResult(SumStats(trait, snp, a1, a2, np.full(m, float(N)), z), mono)


def gwas_on_selected(cohort: SnpCohort) -> list[GwasResult]:
    rows = np.flatnonzero(cohort.selected)
    if len(rows) < 2:
        raise ValueError("fewer than 2 selected rows")
    y = cohort.y
    return [
        gwas(cohort.genotypes, y[:, i], cohort.snp, cohort.a1, cohort.a2, name, rows=rows)
        for i, name in enumerate(cohort.trait_names)
    ]


def participation_gwas(cohort: SnpCohort, trait: str = "participation") -> GwasResult:
    """GWAS of the liability in the random population sample.

    Stands in for the externally supplied participation summary statistics.
    """
    return gwas(cohort.ref_genotypes, cohort.ref_x, cohort.snp, cohort.a1, cohort.a2, trait)


def observed_mean_shifts(cohort: SnpCohort) -> np.ndarray:
    """Participant-minus-reference means in participant-SD units."""
    ys = cohort.y[cohort.selected]
    return (ys.mean(axis=0) - cohort.ref_y.mean(axis=0)) / ys.std(axis=0, ddof=1)


def truth(part: ParticipationParams, params, sel) -> dict:
    """Population parameters and the apparent values the forward model predicts."""
    sel = as_context(sel)
    out = {"alpha": sel.alpha, "xi": sel.xi, "h2_x": part.h2_x}
    for i, y in enumerate(_phenotypes(params), start=1):
        out.update(
            {
                f"h2_y{i}": y.h2_y,
                f"rho_g{i}": y.rho_g,
                f"rho_e{i}": y.rho_e,
                f"rho{i}": y.rho(part),
                f"h2_y{i}_pb": model.apparent_h2(part, y, sel),
                f"rho_g{i}_pb": model.apparent_participation_gcor(part, y, sel)
                if model.apparent_h2(part, y, sel) > 0
                else math.nan,
                f"delta{i}": model.mean_shift(y, part, sel),
            }
        )
    if isinstance(params, PairParams):
        out["varphi_g"] = params.varphi_g
        out["varphi_e"] = params.varphi_e
        out["varphi_g_pb"] = model.apparent_pair_gcor(part, params, sel)
    return out
