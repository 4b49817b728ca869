"""scikit-learn style front ends.

The functional API in the other modules does the work; these classes give it
the familiar ``fit`` / ``transform`` / ``predict`` / ``get_params`` shape so
the pieces drop into pipelines and parameter sweeps.  Hyper-parameters are
stored untouched in ``__init__`` and validated in ``fit``.
"""
from __future__ import annotations

import math
import numbers

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import dataio
from .analysis import AnalysisResult, adjust_estimates, analyze_sumstats
from .ldsc import DEFAULT_BLOCKS, LdScores, SumStats, ldsc_h2
from .truncnorm import check_alpha


def check_fraction(name, value, lo=0.0, hi=1.0, lo_open=True, hi_open=True) -> float:
    """Validate a scalar in an interval; returns it as float."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    v = float(value)
    ok_lo = v > lo if lo_open else v >= lo
    ok_hi = v < hi if hi_open else v <= hi
    if not (math.isfinite(v) and ok_lo and ok_hi):
        lb, rb = "(" if lo_open else "[", ")" if hi_open else "]"
        raise ValueError(f"{name} must lie in {lb}{lo}, {hi}{rb}, got {value!r}")
    return v


def check_blocks(n_blocks) -> int:
    if isinstance(n_blocks, bool) or not isinstance(n_blocks, numbers.Integral) or n_blocks < 2:
        raise ValueError(f"n_blocks must be an integer >= 2, got {n_blocks!r}")
    return int(n_blocks)


def check_sumstats(obj, name="summary statistics") -> SumStats:
    if not isinstance(obj, SumStats):
        raise TypeError(f"{name} must be a SumStats instance, got {type(obj).__name__}")
    return obj


def check_column(values, name="values", allow_nan=True) -> np.ndarray:
    arr = check_array(
        np.asarray(values, dtype=float).reshape(-1, 1),
        ensure_all_finite="allow-nan" if allow_nan else True,
        ensure_min_samples=2,
    )
    return arr.ravel()


class RankInverseNormalTransformer(TransformerMixin, BaseEstimator):
    """Column-wise Blom rank-based inverse normal transform.

    Stateless: ``fit`` only records the number of columns.  Pass ``strata``
    to ``transform`` to rank within groups.
    """

    def fit(self, X, y=None):
        X = check_array(X, ensure_all_finite="allow-nan", ensure_min_samples=2)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, strata=None):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, ensure_all_finite="allow-nan", ensure_min_samples=2)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return np.column_stack([dataio.rank_inverse_normal(X[:, j], strata) for j in range(X.shape[1])])

    def fit_transform(self, X, y=None, strata=None):
        return self.fit(X).transform(X, strata=strata)


class CovariateResidualizer(RegressorMixin, BaseEstimator):
    """Least squares of a phenotype on an intercept plus covariates.

    ``fit(C, y)`` stores the coefficients, ``predict(C)`` returns fitted
    values and ``residuals(C, y)`` what is left over.
    """

    def __init__(self, covariate_names=None):
        self.covariate_names = covariate_names

    def fit(self, C, y):
        C = check_array(C, ensure_min_samples=2)
        y = check_column(y, "y", allow_nan=False)
        if len(y) != len(C):
            raise ValueError("C and y differ in length")
        names = self.covariate_names
        # the functional helper raises with the collinear column names
        resid = dataio.residualize(y, C, names)
        X = np.column_stack([np.ones(len(C)), C])
        self.coef_, *_ = np.linalg.lstsq(X, y - resid, rcond=None)
        self.intercept_ = float(self.coef_[0])
        self.n_features_in_ = C.shape[1]
        return self

    def predict(self, C):
        check_is_fitted(self, "coef_")
        C = check_array(C)
        return self.coef_[0] + C @ self.coef_[1:]

    def residuals(self, C, y):
        return check_column(y, "y", allow_nan=False) - self.predict(C)


class LDScoreRegression(BaseEstimator):
    """Heritability by LD score regression with a block jackknife SE."""

    def __init__(self, n_blocks=DEFAULT_BLOCKS, intercept=None, m=None):
        self.n_blocks = n_blocks
        self.intercept = intercept
        self.m = m

    def fit(self, sumstats: SumStats, ld: LdScores | None = None):
        check_sumstats(sumstats)
        fit = ldsc_h2(sumstats, ld, m=self.m, n_blocks=check_blocks(self.n_blocks), intercept=self.intercept)
        self.fit_ = fit
        self.h2_ = fit.estimate
        self.h2_se_ = fit.se
        self.intercept_ = fit.intercept
        return self

    def predict(self, n, ld):
        """Expected chi-square for sample sizes ``n`` and LD scores ``ld``."""
        check_is_fitted(self, "h2_")
        m = self.fit_.labels.shape[0] if self.m is None else self.m
        return self.intercept_ + np.asarray(n, float) * np.asarray(ld, float) * self.h2_ / m


class ParticipationBiasAdjuster(BaseEstimator):
    """Adjust heritability and genetic correlations for participation bias.

    ``fit`` runs LD score regression on summary statistics from participants
    and stores the original and adjusted estimates in ``result_``.
    ``transform`` applies the same adjustment to a table of precomputed
    unadjusted estimates.
    """

    def __init__(
        self,
        alpha=1.0,
        h2x=None,
        n_blocks=DEFAULT_BLOCKS,
        h2_intercept=None,
        gcov_intercept=None,
        pair_intercepts=None,
        include_pairs=True,
        h2x_se=None,
    ):
        self.alpha = alpha
        self.h2x = h2x
        self.n_blocks = n_blocks
        self.h2_intercept = h2_intercept
        self.gcov_intercept = gcov_intercept
        self.pair_intercepts = pair_intercepts
        self.include_pairs = include_pairs
        self.h2x_se = h2x_se

    def _validate(self):
        if self.h2x is None:
            raise ValueError("h2x (participation heritability) must be supplied; there is no default")
        check_fraction("h2x", self.h2x)
        check_alpha(self.alpha)
        check_blocks(self.n_blocks)

    def fit(self, participation: SumStats, traits, deltas, ld: LdScores | None = None, delta_se=None):
        self._validate()
        check_sumstats(participation, "participation summary statistics")
        traits = [check_sumstats(t, f"trait {i}") for i, t in enumerate(traits)]
        if not traits:
            raise ValueError("at least one trait is required")
        self.result_: AnalysisResult = analyze_sumstats(
            participation,
            traits,
            dict(deltas),
            self.alpha,
            self.h2x,
            ld=ld,
            n_blocks=self.n_blocks,
            h2_intercept=self.h2_intercept,
            gcov_intercept=self.gcov_intercept,
            pair_intercepts=self.pair_intercepts,
            include_pairs=self.include_pairs,
            h2_x_se=self.h2x_se,
            delta_se=delta_se,
        )
        return self

    def transform(self, table, pairs=None) -> AnalysisResult:
        """Adjust precomputed estimates; see :func:`analysis.adjust_estimates`."""
        self._validate()
        return adjust_estimates(table, self.h2x, self.alpha, pairs)

    def fit_transform(self, participation, traits, deltas, ld=None, delta_se=None) -> AnalysisResult:
        return self.fit(participation, traits, deltas, ld, delta_se).result_
