"""From summary statistics and mean shifts to original and adjusted estimates.

Every LD score regression shares one block partition, so a single
delete-one-block jackknife over the stacked block statistics yields standard
errors for all original and adjusted quantities at once.  The participation
heritability input and the mean shifts are held fixed inside the jackknife;
their external uncertainty can be added by the delta method.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .adjust import SampleEstimates, adjust_pair, adjust_phenotype
from .jackknife import jackknife_se
from .ldsc import DEFAULT_BLOCKS, LdScores, SumStats, ldsc_gcov, ldsc_h2, stack_block_stats
from .truncnorm import as_context


@dataclass
class EstimateRow:
    phenotype: str
    estimate_type: str
    original: float
    adjusted: float
    se_original: float = math.nan
    se_adjusted: float = math.nan
    warning: str = ""

    @property
    def p_original(self) -> float:
        return two_sided_p(self.original, self.se_original)

    @property
    def p_adjusted(self) -> float:
        return two_sided_p(self.adjusted, self.se_adjusted)


@dataclass
class AnalysisResult:
    rows: list
    alpha: float
    h2_x: float
    n_blocks: int = 0
    h2_x_ldsc: float = math.nan
    notes: list = field(default_factory=list)

    def get(self, phenotype, estimate_type) -> EstimateRow:
        for r in self.rows:
            if r.phenotype == phenotype and r.estimate_type == estimate_type:
                return r
        raise KeyError((phenotype, estimate_type))

    def pair_rows(self):
        return [r for r in self.rows if r.estimate_type == "varphi_g"]


def two_sided_p(est, se) -> float:
    if not (math.isfinite(est) and math.isfinite(se)) or se <= 0:
        return math.nan
    return float(2.0 * sps.norm.sf(abs(est / se)))


def pair_name(a: str, b: str) -> str:
    return f"{a}|{b}"


def _phenotype_values(h, rg, delta, h2x, sel):
    est = SampleEstimates(h, rg, delta)
    adj = adjust_phenotype(est, h2x, sel)
    return adj, est


def adjust_estimates(table, h2_x, alpha, pairs=None):
    """Adjust precomputed unadjusted estimates (no standard errors).

    ``table`` maps phenotype -> dict with keys ``h2``, ``rho_g``, ``delta``
    and optionally ``h2_se``, ``rho_g_se``; ``pairs`` maps ``(a, b)`` to an
    unadjusted genetic correlation.
    """
    sel = as_context(alpha)
    rows = []
    ests = {}
    for name, rec in table.items():
        if rec.get("delta") is None:
            raise ValueError(f"{name}: mean shift is required")
        adj, est = _phenotype_values(rec["h2"], rec["rho_g"], rec["delta"], h2_x, sel)
        ests[name] = est
        warn = adj.warning
        rows += [
            EstimateRow(name, "h2", est.h2_y_hat, adj.h2_y_tilde, rec.get("h2_se", math.nan), math.nan, warn),
            EstimateRow(name, "rho_g", est.rho_g_hat, adj.rho_g_tilde, rec.get("rho_g_se", math.nan), math.nan, warn),
            EstimateRow(name, "rho_e", math.nan, adj.rho_e_tilde, math.nan, math.nan, warn),
        ]
    for (a, b), phi in (pairs or {}).items():
        val, warn = adjust_pair(ests[a], ests[b], phi, h2_x, sel)
        rows.append(EstimateRow(pair_name(a, b), "varphi_g", float(phi), val, warning=warn))
    return AnalysisResult(rows=rows, alpha=sel.alpha, h2_x=float(h2_x))


def analyze_sumstats(
    participation: SumStats,
    traits: list,
    deltas: dict,
    alpha,
    h2_x: float,
    ld: LdScores | None = None,
    n_blocks: int = DEFAULT_BLOCKS,
    h2_intercept: float | None = None,
    gcov_intercept: float | None = None,
    pair_intercepts: dict | None = None,
    include_pairs: bool = True,
    h2_x_se: float | None = None,
    delta_se: dict | None = None,
) -> AnalysisResult:
    """Unadjusted LDSC estimates, their adjusted counterparts and jackknife SEs.

    ``gcov_intercept`` applies to participation-vs-trait regressions (0 when
    the participation GWAS sample does not overlap the participants);
    ``pair_intercepts`` maps ``(a, b)`` to a fixed cross-trait intercept.  A
    pair that needs a fixed intercept but has none is skipped with a note.
    """
    sel = as_context(alpha)
    names = [t.trait for t in traits]
    if len(set(names)) != len(names):
        raise ValueError("duplicate phenotype names")
    missing = [n for n in names if deltas.get(n) is None]
    if missing:
        raise ValueError(f"mean shift missing for: {', '.join(missing)}")
    if ld is None:
        ld = LdScores.identity(participation.snp)
    notes = []

    fits = [ldsc_h2(participation, ld, n_blocks=n_blocks, intercept=h2_intercept)]
    for t in traits:
        fits.append(ldsc_h2(t, ld, n_blocks=n_blocks, intercept=h2_intercept))
    for t in traits:
        fits.append(
            ldsc_gcov(participation, t, ld, n_blocks=n_blocks, intercept=gcov_intercept,
                      h2_intercept=h2_intercept).gcov
        )
    pairs = []
    if include_pairs:
        pair_intercepts = pair_intercepts or {}
        for (i, a), (j, b) in itertools.combinations(enumerate(traits), 2):
            icpt = pair_intercepts.get((a.trait, b.trait), pair_intercepts.get((b.trait, a.trait)))
            try:
                f = ldsc_gcov(a, b, ld, n_blocks=n_blocks, intercept=icpt, h2_intercept=h2_intercept).gcov
            except np.linalg.LinAlgError as exc:
                notes.append(f"pair {pair_name(a.trait, b.trait)} skipped: {exc}")
                continue
            pairs.append((i, j))
            fits.append(f)

    k = len(traits)
    d = [float(deltas[n]) for n in names]

    def chain(pooled, h2x=h2_x, dvec=d):
        h2x_ldsc = fits[0].solve(pooled[0])[0]
        h = [fits[1 + i].solve(pooled[1 + i])[0] for i in range(k)]
        g = [fits[1 + k + i].solve(pooled[1 + k + i])[0] for i in range(k)]
        out = [h2x_ldsc]
        ests = []
        for i in range(k):
            denom = h2x_ldsc * h[i]
            rg = g[i] / math.sqrt(denom) if denom > 0 else math.nan
            if math.isfinite(rg):
                adj, est = _phenotype_values(h[i], rg, dvec[i], h2x, sel)
                ests.append(est)
                out += [h[i], rg, adj.h2_y_tilde, adj.rho_g_tilde, adj.rho_e_tilde]
            else:
                ests.append(None)
                out += [h[i], math.nan, math.nan, math.nan, math.nan]
        for p, (i, j) in enumerate(pairs):
            gij = fits[1 + 2 * k + p].solve(pooled[1 + 2 * k + p])[0]
            denom = h[i] * h[j]
            phi = gij / math.sqrt(denom) if denom > 0 else math.nan
            if ests[i] is None or ests[j] is None or not math.isfinite(phi):
                out += [phi, math.nan]
            else:
                out += [phi, adjust_pair(ests[i], ests[j], phi, h2x, sel)[0]]
        return np.array(out)

    stacked = stack_block_stats(*fits)
    jk = jackknife_se(stacked, chain)
    est, se = jk.estimate, jk.se.copy()

    # optional delta-method terms for inputs held fixed inside the jackknife
    total = stacked.sum(axis=0)
    if h2_x_se:
        step = 1e-6
        grad = (chain(total, h2x=h2_x + step) - chain(total, h2x=h2_x - step)) / (2 * step)
        se = np.sqrt(se**2 + (grad * h2_x_se) ** 2)
    if delta_se:
        for i, name in enumerate(names):
            sd = delta_se.get(name)
            if not sd:
                continue
            step = 1e-6
            up, dn = list(d), list(d)
            up[i] += step
            dn[i] -= step
            grad = (chain(total, dvec=up) - chain(total, dvec=dn)) / (2 * step)
            se = np.sqrt(se**2 + (grad * sd) ** 2)

    # warnings come from the full-data evaluation
    warn = {}
    for i, name in enumerate(names):
        rg = est[1 + 5 * i + 1]
        if math.isfinite(rg):
            warn[name] = _phenotype_values(est[1 + 5 * i], rg, d[i], h2_x, sel)[0].warning
        else:
            warn[name] = "gcor_undefined"

    rows = []
    for i, name in enumerate(names):
        b = 1 + 5 * i
        rows += [
            EstimateRow(name, "h2", est[b], est[b + 2], se[b], se[b + 2], warn[name]),
            EstimateRow(name, "rho_g", est[b + 1], est[b + 3], se[b + 1], se[b + 3], warn[name]),
            EstimateRow(name, "rho_e", math.nan, est[b + 4], math.nan, se[b + 4], warn[name]),
        ]
    base = 1 + 5 * k
    for p, (i, j) in enumerate(pairs):
        phi, phi_adj = est[base + 2 * p], est[base + 2 * p + 1]
        w = "gcor_out_of_range" if math.isfinite(phi_adj) and abs(phi_adj) > 1 else ""
        rows.append(
            EstimateRow(pair_name(names[i], names[j]), "varphi_g", phi, phi_adj,
                        se[base + 2 * p], se[base + 2 * p + 1], w)
        )
    return AnalysisResult(
        rows=rows,
        alpha=sel.alpha,
        h2_x=float(h2_x),
        n_blocks=stacked.shape[0],
        h2_x_ldsc=float(est[0]),
        notes=notes,
    )
