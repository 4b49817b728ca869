"""LD score regression at desk scale.

Heritability: regress ``z**2`` on ``N * l / M``.  Genetic covariance:
regress ``z1 * z2`` on ``sqrt(N1 * N2) * l / M``.  Each regression is a
weighted least-squares fit whose sufficient statistics are accumulated per
contiguous SNP block, so the delete-one-block jackknife can be applied to
anything built from the slopes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .jackknife import JackknifeResult, block_labels, jackknife_se


DEFAULT_BLOCKS = 200
_N_STATS = 5  # sum w, wx, wx^2, wy, wxy


class AlleleMismatchError(ValueError):
    pass


@dataclass
class SumStats:
    trait: str
    snp: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    n: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.snp = np.asarray(self.snp, dtype=str)
        self.a1 = np.char.upper(np.asarray(self.a1, dtype=str))
        self.a2 = np.char.upper(np.asarray(self.a2, dtype=str))
        self.n = np.asarray(self.n, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        k = len(self.snp)
        if not all(len(v) == k for v in (self.a1, self.a2, self.n, self.z)):
            raise ValueError(f"{self.trait}: summary-statistic columns differ in length")
        if not np.all(np.isfinite(self.z)):
            raise ValueError(f"{self.trait}: non-finite z-scores")
        if np.any(self.n < 2):
            raise ValueError(f"{self.trait}: sample sizes must be at least 2")
        if len(np.unique(self.snp)) != k:
            raise ValueError(f"{self.trait}: duplicate SNP identifiers")

    def __len__(self):
        return len(self.snp)

    def flipped(self) -> "SumStats":
        """Same statistics reported for the other allele."""
        return SumStats(self.trait, self.snp, self.a2, self.a1, self.n, -self.z)


@dataclass
class LdScores:
    snp: np.ndarray
    ld: np.ndarray

    def __post_init__(self):
        self.snp = np.asarray(self.snp, dtype=str)
        self.ld = np.asarray(self.ld, dtype=float)
        if len(self.snp) != len(self.ld):
            raise ValueError("LD score columns differ in length")
        if len(np.unique(self.snp)) != len(self.snp):
            raise ValueError("duplicate SNP identifiers in LD scores")
        if not np.all(np.isfinite(self.ld)):
            raise ValueError("non-finite LD scores")

    @classmethod
    def identity(cls, snp):
        """Independent SNPs: every LD score is 1."""
        return cls(snp=np.asarray(snp, dtype=str), ld=np.ones(len(snp)))


def _index_in(reference: np.ndarray, query: np.ndarray, what: str) -> np.ndarray:
    pos = {s: i for i, s in enumerate(query)}
    try:
        return np.array([pos[s] for s in reference], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"SNP {exc.args[0]} in LD scores is missing from {what}") from None


def align(ld: LdScores, *stats: SumStats):
    """Reorder summary statistics to LD-score order and harmonise alleles.

    Alleles of every trait are matched to the first trait; swapped pairs have
    their z-score negated.  Returns ``(ld_values, [(n, z), ...])``.
    """
    if not stats:
        raise ValueError("no summary statistics given")
    ref = stats[0]
    out = []
    ref_idx = _index_in(ld.snp, ref.snp, ref.trait)
    ra1, ra2 = ref.a1[ref_idx], ref.a2[ref_idx]
    for s in stats:
        idx = ref_idx if s is ref else _index_in(ld.snp, s.snp, s.trait)
        a1, a2, z = s.a1[idx], s.a2[idx], s.z[idx]
        same = (a1 == ra1) & (a2 == ra2)
        swap = (a1 == ra2) & (a2 == ra1)
        bad = ~(same | swap)
        if np.any(bad):
            snps = ", ".join(ld.snp[bad][:20])
            raise AlleleMismatchError(
                f"{s.trait}: alleles cannot be matched to {ref.trait} at {int(bad.sum())} SNP(s): {snps}"
            )
        out.append((s.n[idx], np.where(swap & ~same, -z, z)))
    return ld.ld, out


def _block_sums(labels, n_blocks, w, x, y):
    stats = np.zeros((n_blocks, _N_STATS))
    for col, v in enumerate((w, w * x, w * x * x, w * y, w * x * y)):
        stats[:, col] = np.bincount(labels, weights=v, minlength=n_blocks)
    return stats


def _solve(pooled, intercept):
    sw, swx, swxx, swy, swxy = pooled
    if intercept is None:
        det = sw * swxx - swx * swx
        if not det > 1e-12 * max(sw * swxx, 1e-300):
            raise np.linalg.LinAlgError(
                "regressor has no variance; fix the intercept for this LD structure"
            )
        slope = (sw * swxy - swx * swy) / det
        return slope, (swy - slope * swx) / sw
    return (swxy - intercept * swx) / swxx, float(intercept)


@dataclass
class LdscFit:
    """One weighted LD score regression with per-block sufficient statistics."""

    intercept_fixed: float | None
    block_stats: np.ndarray
    labels: np.ndarray = field(repr=False)
    estimate: float = np.nan
    intercept: float = np.nan
    jackknife: JackknifeResult | None = None

    def solve(self, pooled):
        return _solve(pooled, self.intercept_fixed)

    @property
    def se(self) -> float:
        return float(self.jackknife.se[0])

    @property
    def intercept_se(self) -> float:
        return float(self.jackknife.se[1]) if self.intercept_fixed is None else 0.0

    @property
    def n_blocks(self) -> int:
        return self.block_stats.shape[0]

    def per_block_values(self) -> np.ndarray:
        """Leave-one-block-out slope estimates."""
        return self.jackknife.leave_one_out[:, 0]


def _finish(fit: LdscFit) -> LdscFit:
    fit.jackknife = jackknife_se(fit.block_stats, lambda p: np.array(fit.solve(p)))
    fit.estimate, fit.intercept = (float(v) for v in fit.jackknife.estimate)
    return fit


def _regress(x, y, weight_fn, labels, n_blocks, intercept, n_iter=2):
    # step 0: unweighted fit to seed the heteroskedasticity weights
    w = np.ones_like(x)
    slope, _ = _solve(_block_sums(labels, n_blocks, w, x, y).sum(axis=0), intercept)
    for _ in range(n_iter):
        w = weight_fn(slope)
        slope, _ = _solve(_block_sums(labels, n_blocks, w, x, y).sum(axis=0), intercept)
    w = weight_fn(slope)
    return _block_sums(labels, n_blocks, w, x, y)


def _check_blocks(m_snps, n_blocks):
    if m_snps < n_blocks:
        raise ValueError(f"only {m_snps} SNPs for {n_blocks} jackknife blocks")


def ldsc_h2(
    stats: SumStats,
    ld: LdScores | None = None,
    m: float | None = None,
    n_blocks: int = DEFAULT_BLOCKS,
    intercept: float | None = None,
) -> LdscFit:
    """Heritability from one set of summary statistics.

    ``intercept=None`` estimates it freely; pass 1.0 to constrain it, which
    is required when every SNP has the same ``N * l`` (e.g. independent SNPs).
    """
    if ld is None:
        ld = LdScores.identity(stats.snp)
    ell, [(n, z)] = align(ld, stats)
    _check_blocks(len(ell), n_blocks)
    m = float(len(ell) if m is None else m)
    labels = block_labels(len(ell), n_blocks)
    x = n * ell / m
    y = z * z

    def weights(h2):
        h2 = min(max(h2, 0.0), 1.0)
        return 1.0 / (1.0 + n * ell * h2 / m) ** 2

    block_stats = _regress(x, y, weights, labels, n_blocks, intercept)
    fit = LdscFit(intercept_fixed=intercept, block_stats=block_stats, labels=labels)
    return _finish(fit)


@dataclass
class GcovFit:
    gcov: LdscFit
    h2_1: LdscFit
    h2_2: LdscFit
    jackknife: JackknifeResult

    @property
    def estimate(self) -> float:
        return self.gcov.estimate

    @property
    def gcor(self) -> float:
        return float(self.jackknife.estimate[0])

    @property
    def gcor_se(self) -> float:
        return float(self.jackknife.se[0])

    @property
    def se(self) -> float:
        return self.gcov.se


def stack_block_stats(*fits: LdscFit) -> np.ndarray:
    """Block statistics of several fits as one ``(B, k, 5)`` array."""
    B = {f.n_blocks for f in fits}
    if len(B) != 1:
        raise ValueError("fits use different jackknife block counts")
    return np.stack([f.block_stats for f in fits], axis=1)


def ldsc_gcov(
    stats1: SumStats,
    stats2: SumStats,
    ld: LdScores | None = None,
    m: float | None = None,
    n_blocks: int = DEFAULT_BLOCKS,
    intercept: float | None = None,
    h2_intercept: float | None = None,
) -> GcovFit:
    """Genetic covariance and correlation of two traits.

    ``intercept`` is the cross-trait intercept (0 for non-overlapping
    samples); ``h2_intercept`` constrains the two single-trait fits.
    """
    if ld is None:
        ld = LdScores.identity(stats1.snp)
    ell, [(n1, z1), (n2, z2)] = align(ld, stats1, stats2)
    _check_blocks(len(ell), n_blocks)
    m = float(len(ell) if m is None else m)
    labels = block_labels(len(ell), n_blocks)

    def h2_fit(n, z):
        x = n * ell / m

        def weights(h2):
            h2 = min(max(h2, 0.0), 1.0)
            return 1.0 / (1.0 + n * ell * h2 / m) ** 2

        stats = _regress(x, z * z, weights, labels, n_blocks, h2_intercept)
        return _finish(LdscFit(h2_intercept, stats, labels))

    f1, f2 = h2_fit(n1, z1), h2_fit(n2, z2)
    h1 = min(max(f1.estimate, 0.0), 1.0)
    h2 = min(max(f2.estimate, 0.0), 1.0)
    nn = np.sqrt(n1 * n2)
    x = nn * ell / m

    def weights(g):
        g = min(max(g, -1.0), 1.0)
        var = (1.0 + n1 * ell * h1 / m) * (1.0 + n2 * ell * h2 / m) + (nn * ell * g / m) ** 2
        return 1.0 / var

    stats = _regress(x, z1 * z2, weights, labels, n_blocks, intercept)
    fg = _finish(LdscFit(intercept, stats, labels))

    def gcor(pooled):
        g, _ = fg.solve(pooled[0])
        a, _ = f1.solve(pooled[1])
        b, _ = f2.solve(pooled[2])
        return g / np.sqrt(a * b)

    jk = jackknife_se(stack_block_stats(fg, f1, f2), gcor)
    return GcovFit(gcov=fg, h2_1=f1, h2_2=f2, jackknife=jk)
