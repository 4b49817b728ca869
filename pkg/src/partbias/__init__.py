"""Participation-bias adjustment of heritability and genetic correlation estimates."""

__version__ = "0.1.0"

from .adjust import AdjustedEstimates, SampleEstimates, adjust_pair, adjust_phenotype, rho_from_delta
from .analysis import AnalysisResult, EstimateRow, adjust_estimates, analyze_sumstats
from .model import (
    DegenerateSelectionError,
    PairParams,
    ParticipationParams,
    PhenotypeParams,
    apparent_h2,
    apparent_pair_gcor,
    apparent_participation_gcor,
    mean_shift,
)
from .truncnorm import SelectionContext, make_selection_context
