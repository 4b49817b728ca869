"""Population-scale parameterisation and the forward ("apparent") bias formulas.

All quantities are on the population-standardised scale: ``X`` and each
phenotype have mean 0 and variance 1 in the invited population.  The
functions here answer: what would an analysis that ignores participation
estimate from the participants alone?
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .truncnorm import SelectionContext, as_context

PSD_TOL = -1e-10


class DegenerateSelectionError(ValueError):
    """Selection leaves a variance at or below zero."""


def _check_unit(name, value, lo=-1.0, hi=1.0):
    value = float(value)
    if not (lo <= value <= hi) or math.isnan(value):
        raise ValueError(f"{name} must lie in [{lo}, {hi}], got {value!r}")
    return value


@dataclass(frozen=True)
class ParticipationParams:
    h2_x: float

    def __post_init__(self):
        h2 = float(self.h2_x)
        if not (0.0 < h2 < 1.0):
            raise ValueError(f"h2_x must lie strictly inside (0, 1), got {h2!r}")
        object.__setattr__(self, "h2_x", h2)


@dataclass(frozen=True)
class PhenotypeParams:
    h2_y: float
    rho_g: float = 0.0
    rho_e: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "h2_y", _check_unit("h2_y", self.h2_y, 0.0, 1.0))
        object.__setattr__(self, "rho_g", _check_unit("rho_g", self.rho_g))
        object.__setattr__(self, "rho_e", _check_unit("rho_e", self.rho_e))

    def rho_G(self, part: ParticipationParams) -> float:
        """Cov(G_x, G_y)."""
        return self.rho_g * math.sqrt(part.h2_x * self.h2_y)

    def rho_E(self, part: ParticipationParams) -> float:
        """Cov(eps_x, eps_y)."""
        return self.rho_e * math.sqrt((1.0 - part.h2_x) * (1.0 - self.h2_y))

    def rho(self, part: ParticipationParams) -> float:
        """Phenotypic correlation of X and Y."""
        return self.rho_G(part) + self.rho_E(part)


def _psd(corr) -> bool:
    return float(np.linalg.eigvalsh(np.asarray(corr, dtype=float)).min()) >= PSD_TOL


@dataclass(frozen=True)
class PairParams:
    """Two phenotypes plus their genetic and non-genetic correlation.

    The 3x3 correlation matrices of ``(G_x, G_y1, G_y2)`` and
    ``(eps_x, eps_y1, eps_y2)`` must both be positive semidefinite.
    """

    y1: PhenotypeParams
    y2: PhenotypeParams
    varphi_g: float = 0.0
    varphi_e: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "varphi_g", _check_unit("varphi_g", self.varphi_g))
        object.__setattr__(self, "varphi_e", _check_unit("varphi_e", self.varphi_e))
        if not _psd(self.genetic_corr()):
            raise ValueError("genetic correlation structure is not positive semidefinite")
        if not _psd(self.environmental_corr()):
            raise ValueError(
                "non-genetic correlation structure is not positive semidefinite"
            )

    def genetic_corr(self) -> np.ndarray:
        g1, g2 = self.y1.rho_g, self.y2.rho_g
        return np.array([[1.0, g1, g2], [g1, 1.0, self.varphi_g], [g2, self.varphi_g, 1.0]])

    def environmental_corr(self) -> np.ndarray:
        e1, e2 = self.y1.rho_e, self.y2.rho_e
        return np.array([[1.0, e1, e2], [e1, 1.0, self.varphi_e], [e2, self.varphi_e, 1.0]])

    @property
    def varphi_G(self) -> float:
        return self.varphi_g * math.sqrt(self.y1.h2_y * self.y2.h2_y)

    @property
    def varphi_E(self) -> float:
        return self.varphi_e * math.sqrt((1.0 - self.y1.h2_y) * (1.0 - self.y2.h2_y))


def is_psd_pair(y1, y2, varphi_g, varphi_e) -> bool:
    """Whether the pair would pass PairParams validation, without raising."""
    try:
        PairParams(y1, y2, varphi_g, varphi_e)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class ReparamCoeffs:
    a: float
    b: float
    a_prime: float
    var_Gw: float
    var_ew: float


def _denominators(part, rho, sel):
    one_minus_xh = 1.0 - sel.xi * part.h2_x
    one_minus_xr = 1.0 - sel.xi * rho * rho
    if one_minus_xh <= 0.0 or one_minus_xr <= 0.0:
        raise DegenerateSelectionError(
            f"degenerate selection: 1 - xi*h2_x = {one_minus_xh:g}, "
            f"1 - xi*rho^2 = {one_minus_xr:g}"
        )
    return one_minus_xh, one_minus_xr


def apparent_gvar(part: ParticipationParams, y: PhenotypeParams, sel) -> float:
    """Variance of the sample genetic component a'G_x + G_w (population units)."""
    sel = as_context(sel)
    xi = sel.xi
    rG, rE = y.rho_G(part), y.rho_E(part)
    one_minus_xh, _ = _denominators(part, rG + rE, sel)
    return y.h2_y - xi * rG * (rG + 2.0 * rE) + xi * xi * part.h2_x * rE * rE / one_minus_xh


def apparent_h2(part: ParticipationParams, y: PhenotypeParams, sel) -> float:
    """Heritability an unadjusted analysis of participants would estimate."""
    sel = as_context(sel)
    rho = y.rho(part)
    _, one_minus_xr = _denominators(part, rho, sel)
    return apparent_gvar(part, y, sel) / one_minus_xr


def apparent_pair_gcov(part: ParticipationParams, pair: PairParams, sel) -> float:
    """Cov(G'_y1, G'_y2 | selected), population units."""
    sel = as_context(sel)
    xi = sel.xi
    rG1, rE1 = pair.y1.rho_G(part), pair.y1.rho_E(part)
    rG2, rE2 = pair.y2.rho_G(part), pair.y2.rho_E(part)
    one_minus_xh, _ = _denominators(part, rG1 + rE1, sel)
    _denominators(part, rG2 + rE2, sel)
    return (
        pair.varphi_G
        - xi * (rE1 * rG2 + rE2 * rG1 + rG1 * rG2)
        + xi * xi * part.h2_x * rE1 * rE2 / one_minus_xh
    )


def apparent_pair_gcor(part: ParticipationParams, pair: PairParams, sel) -> float:
    sel = as_context(sel)
    rho1, rho2 = pair.y1.rho(part), pair.y2.rho(part)
    _, d1 = _denominators(part, rho1, sel)
    _, d2 = _denominators(part, rho2, sel)
    h1 = apparent_h2(part, pair.y1, sel)
    h2 = apparent_h2(part, pair.y2, sel)
    if h1 <= 0.0 or h2 <= 0.0:
        raise DegenerateSelectionError("apparent heritability is zero for one phenotype")
    return apparent_pair_gcov(part, pair, sel) / (math.sqrt(d1 * d2) * math.sqrt(h1 * h2))


def apparent_participation_gcor(part: ParticipationParams, y: PhenotypeParams, sel) -> float:
    """Genetic correlation of participation and Y among participants."""
    sel = as_context(sel)
    xi = sel.xi
    rho = y.rho(part)
    one_minus_xh, one_minus_xr = _denominators(part, rho, sel)
    h_pb = apparent_h2(part, y, sel)
    if h_pb <= 0.0:
        raise DegenerateSelectionError("apparent heritability is zero")
    num = y.rho_G(part) - xi * part.h2_x * rho
    return num / (math.sqrt(one_minus_xr * one_minus_xh) * math.sqrt(part.h2_x * h_pb))


def mean_shift(y: PhenotypeParams, part: ParticipationParams, sel) -> float:
    """Participant-minus-population mean of Y, in participant-SD units."""
    sel = as_context(sel)
    rho = y.rho(part)
    _, one_minus_xr = _denominators(part, rho, sel)
    return rho * sel.mills / math.sqrt(one_minus_xr)


def reparam(part: ParticipationParams, y: PhenotypeParams, sel) -> ReparamCoeffs:
    """Coefficients of G_y = a G_x + G_w and eps_y = b eps_x + eps_w.

    ``a_prime`` is the coefficient on G_x of the best linear genetic
    predictor of Y among participants: selection induces
    Cov(G_x, eps_x | sel) = -xi h2_x (1 - h2_x), so part of ``b eps_x``
    is loaded onto G_x.
    """
    sel = as_context(sel)
    h2x, h2y = part.h2_x, y.h2_y
    if not (0.0 < h2x < 1.0):
        raise ValueError("h2_x must lie strictly inside (0, 1)")
    a = y.rho_g * math.sqrt(h2y / h2x)
    b = y.rho_e * math.sqrt((1.0 - h2y) / (1.0 - h2x))
    one_minus_xh, _ = _denominators(part, y.rho(part), sel)
    a_prime = a - sel.xi * b * (1.0 - h2x) / one_minus_xh
    return ReparamCoeffs(
        a=a,
        b=b,
        a_prime=a_prime,
        var_Gw=(1.0 - y.rho_g**2) * h2y,
        var_ew=(1.0 - y.rho_e**2) * (1.0 - h2y),
    )
