"""Invert the participation-bias formulas.

Inputs are what a standard analysis of participants produces (heritability,
genetic correlation with participation, pairwise genetic correlation),
together with the observed mean shift of each phenotype, the participation
rate and an external estimate of the participation heritability ``h2_x``.
Outputs are population-scale estimates.

Out-of-range adjusted values are returned as computed; ``warning`` carries a
short flag so callers can decide how to display them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import DegenerateSelectionError
from .truncnorm import as_context, std_normal_pdf, std_normal_quantile


@dataclass
class SampleEstimates:
    """Unadjusted estimates for one phenotype."""

    h2_y_hat: float
    rho_g_hat: float
    delta_hat: float
    warning: str = ""

    def __post_init__(self):
        for name in ("h2_y_hat", "rho_g_hat", "delta_hat"):
            value = getattr(self, name)
            if value is None:
                raise ValueError(f"{name} is required")
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            setattr(self, name, value)
        flags = [self.warning] if self.warning else []
        # noisy upstream estimators can leave the valid range; flag, don't reject
        if self.h2_y_hat < 0.0:
            flags.append("negative_h2_input")
        elif self.h2_y_hat > 1.0:
            flags.append("h2_input_above_one")
        if abs(self.rho_g_hat) > 1.0:
            flags.append("gcor_input_out_of_range")
        self.warning = ";".join(flags)


@dataclass
class AdjustedEstimates:
    h2_y_tilde: float
    rho_g_tilde: float
    rho_e_tilde: float
    rho_G_tilde: float
    rho_hat: float
    warning: str = ""
    se: dict = field(default_factory=dict)


def _check_h2x(h2_x_hat, sel):
    h2_x_hat = float(h2_x_hat)
    if not (0.0 < h2_x_hat < 1.0):
        raise ValueError(f"h2_x_hat must lie strictly inside (0, 1), got {h2_x_hat!r}")
    one_minus_xh = 1.0 - sel.xi * h2_x_hat
    if one_minus_xh <= 0.0:
        raise DegenerateSelectionError(f"degenerate selection: 1 - xi*h2_x = {one_minus_xh:g}")
    return h2_x_hat, one_minus_xh


def rho_from_delta(delta_hat, alpha) -> float:
    """Phenotypic correlation with participation implied by a mean shift.

    Exact inverse of ``model.mean_shift``.
    """
    sel = as_context(alpha)
    delta_hat = float(delta_hat)
    if sel.no_selection:
        if delta_hat != 0.0:
            raise ValueError("a non-zero mean shift is impossible without selection")
        return 0.0
    ad = sel.alpha * delta_hat
    dens = sel.density
    return ad / math.sqrt(sel.xi * ad * ad + dens * dens)


def sample_participation_gcov(rho_g_hat, h2_x_hat, h2_y_hat, sel) -> float:
    """Unadjusted Cov(G_x, G_y) in sample-standardised units of Y."""
    sel = as_context(sel)
    h2_x_hat, one_minus_xh = _check_h2x(h2_x_hat, sel)
    # a tiny negative h2 from a noisy upstream estimator is treated as zero
    h2y = max(float(h2_y_hat), 0.0)
    return float(rho_g_hat) * math.sqrt(one_minus_xh * h2_x_hat * h2y)


def adjust_participation_gcov(rho_g_hat, h2_x_hat, h2_y_hat, rho_hat, sel) -> float:
    sel = as_context(sel)
    rho_G_hat = sample_participation_gcov(rho_g_hat, h2_x_hat, h2_y_hat, sel)
    xi = sel.xi
    return math.sqrt(1.0 - xi * rho_hat * rho_hat) * rho_G_hat + xi * rho_hat * float(h2_x_hat)


def adjust_h2(h2_y_hat, rho_hat, rho_G_tilde, h2_x_hat, sel) -> float:
    sel = as_context(sel)
    h2_x_hat, one_minus_xh = _check_h2x(h2_x_hat, sel)
    xi = sel.xi
    r2 = rho_hat * rho_hat
    resid = rho_G_tilde - xi * rho_hat * h2_x_hat
    return (
        float(h2_y_hat) * (1.0 - xi * r2)
        + 2.0 * xi * rho_hat * rho_G_tilde
        - xi * xi * r2 * h2_x_hat
        - xi / one_minus_xh * resid * resid
    )


def adjust_participation_gcor(rho_G_tilde, h2_x_hat, h2_y_tilde) -> float:
    denom = float(h2_x_hat) * float(h2_y_tilde)
    if denom <= 0.0:
        raise DegenerateSelectionError(
            "adjusted genetic correlation undefined: h2_x * adjusted h2_y <= 0"
        )
    return rho_G_tilde / math.sqrt(denom)


def adjust_rho_e(rho_hat, rho_G_tilde, h2_x_hat, h2_y_tilde) -> float:
    denom = (1.0 - float(h2_x_hat)) * (1.0 - float(h2_y_tilde))
    if denom <= 0.0:
        raise DegenerateSelectionError(
            "adjusted non-genetic correlation undefined: (1 - h2_x)(1 - h2_y) <= 0"
        )
    return (rho_hat - rho_G_tilde) / math.sqrt(denom)


def adjust_pair_gcov(
    est1: SampleEstimates, est2: SampleEstimates, varphi_g_hat, h2_x_hat, sel, sample_gcov=False
) -> float:
    """Adjusted genetic covariance of two phenotypes.

    Both phenotypes need their own mean shift; there is no default.  The
    participation covariances entering the correction are the adjusted ones,
    which makes this the exact inverse of ``model.apparent_pair_gcov`` (with
    one phenotype used twice it reduces to ``adjust_h2``).  ``sample_gcov=True``
    plugs in the unadjusted covariances instead; that variant is only
    approximate.
    """
    sel = as_context(sel)
    h2_x_hat, one_minus_xh = _check_h2x(h2_x_hat, sel)
    xi = sel.xi
    r1 = rho_from_delta(est1.delta_hat, sel)
    r2 = rho_from_delta(est2.delta_hat, sel)
    if sample_gcov:
        rG1 = sample_participation_gcov(est1.rho_g_hat, h2_x_hat, est1.h2_y_hat, sel)
        rG2 = sample_participation_gcov(est2.rho_g_hat, h2_x_hat, est2.h2_y_hat, sel)
    else:
        rG1 = adjust_participation_gcov(est1.rho_g_hat, h2_x_hat, est1.h2_y_hat, r1, sel)
        rG2 = adjust_participation_gcov(est2.rho_g_hat, h2_x_hat, est2.h2_y_hat, r2, sel)
    phi_G_hat = float(varphi_g_hat) * math.sqrt(
        max(est1.h2_y_hat, 0.0) * max(est2.h2_y_hat, 0.0)
    )
    return (
        math.sqrt((1.0 - xi * r1 * r1) * (1.0 - xi * r2 * r2)) * phi_G_hat
        + xi * (r1 * rG2 + r2 * rG1)
        - xi * xi * r1 * r2 * h2_x_hat
        - xi / one_minus_xh * (rG1 - xi * r1 * h2_x_hat) * (rG2 - xi * r2 * h2_x_hat)
    )


def adjust_pair_gcor(varphi_G_tilde, h2_y1_tilde, h2_y2_tilde) -> float:
    denom = float(h2_y1_tilde) * float(h2_y2_tilde)
    if denom <= 0.0:
        raise DegenerateSelectionError(
            "adjusted pairwise genetic correlation undefined: adjusted h2 product <= 0"
        )
    return varphi_G_tilde / math.sqrt(denom)


def _range_flags(h2, rho_g=None):
    flags = []
    if not (0.0 <= h2 <= 1.0):
        flags.append("h2_out_of_range")
    if rho_g is not None and abs(rho_g) > 1.0:
        flags.append("gcor_out_of_range")
    return flags


def adjust_phenotype(est: SampleEstimates, h2_x_hat, sel) -> AdjustedEstimates:
    """Run the whole single-phenotype chain: mean shift -> rho -> rho_G -> h2 -> rho_g, rho_e."""
    sel = as_context(sel)
    rho_hat = rho_from_delta(est.delta_hat, sel)
    rho_G_tilde = adjust_participation_gcov(est.rho_g_hat, h2_x_hat, est.h2_y_hat, rho_hat, sel)
    h2_tilde = adjust_h2(est.h2_y_hat, rho_hat, rho_G_tilde, h2_x_hat, sel)
    flags = [est.warning] if est.warning else []
    if sel.no_selection:
        # nothing to undo; skip the round trip through rho_G so values stay bit-identical
        h2_tilde = est.h2_y_hat
    if sel.no_selection and h2_tilde > 0.0:
        rho_g_tilde = est.rho_g_hat
    elif h2_tilde > 0.0:
        rho_g_tilde = adjust_participation_gcor(rho_G_tilde, h2_x_hat, h2_tilde)
    else:
        rho_g_tilde = math.nan
        flags.append("gcor_undefined")
    rho_e_tilde = (
        adjust_rho_e(rho_hat, rho_G_tilde, h2_x_hat, h2_tilde) if h2_tilde < 1.0 else math.nan
    )
    flags += _range_flags(h2_tilde, rho_g_tilde if math.isfinite(rho_g_tilde) else None)
    if math.isfinite(rho_e_tilde) and abs(rho_e_tilde) > 1.0:
        flags.append("rho_e_out_of_range")
    return AdjustedEstimates(
        h2_y_tilde=h2_tilde,
        rho_g_tilde=rho_g_tilde,
        rho_e_tilde=rho_e_tilde,
        rho_G_tilde=rho_G_tilde,
        rho_hat=rho_hat,
        warning=";".join(f for f in flags if f),
    )


def adjust_pair(est1: SampleEstimates, est2: SampleEstimates, varphi_g_hat, h2_x_hat, sel, sample_gcov=False):
    """Adjusted pairwise genetic correlation; returns ``(varphi_g_tilde, warning)``."""
    sel = as_context(sel)
    a1 = adjust_phenotype(est1, h2_x_hat, sel)
    a2 = adjust_phenotype(est2, h2_x_hat, sel)
    phi_G = adjust_pair_gcov(est1, est2, varphi_g_hat, h2_x_hat, sel, sample_gcov)
    if a1.h2_y_tilde <= 0.0 or a2.h2_y_tilde <= 0.0:
        return math.nan, "gcor_undefined"
    if sel.no_selection:
        phi = float(varphi_g_hat)
        return phi, ("gcor_out_of_range" if abs(phi) > 1.0 else "")
    phi = adjust_pair_gcor(phi_G, a1.h2_y_tilde, a2.h2_y_tilde)
    return phi, ("gcor_out_of_range" if abs(phi) > 1.0 else "")


def observed_to_liability_h2(h2_obs, sample_prevalence, population_prevalence) -> float:
    """Convert observed-scale heritability of a binary trait to the liability scale."""
    P = float(sample_prevalence)
    K = float(population_prevalence)
    for name, v in (("sample_prevalence", P), ("population_prevalence", K)):
        if not (0.0 < v < 1.0):
            raise ValueError(f"{name} must lie strictly inside (0, 1), got {v!r}")
    z = std_normal_pdf(std_normal_quantile(1.0 - K))
    return float(h2_obs) * K * K * (1.0 - K) ** 2 / (P * (1.0 - P) * z * z)

