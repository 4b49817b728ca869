import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partbias import model, simgen
from partbias.model import PairParams, ParticipationParams, PhenotypeParams

PART = ParticipationParams(0.125)


def test_param_validation():
    with pytest.raises(ValueError):
        ParticipationParams(0.0)
    with pytest.raises(ValueError):
        ParticipationParams(1.0)
    with pytest.raises(ValueError):
        PhenotypeParams(1.2)
    with pytest.raises(ValueError):
        PhenotypeParams(0.5, rho_g=1.5)
    with pytest.raises(ValueError):
        PhenotypeParams(0.5, rho_e=math.nan)


def test_pair_psd_check():
    y1 = PhenotypeParams(0.5, 0.9, 0.0)
    y2 = PhenotypeParams(0.5, -0.9, 0.0)
    # corr(G1, G2) = 0.9 is impossible when both correlate 0.9 and -0.9 with G_x
    with pytest.raises(ValueError, match="genetic"):
        PairParams(y1, y2, varphi_g=0.9)
    assert not model.is_psd_pair(y1, y2, 0.9, 0.0)
    assert model.is_psd_pair(y1, y2, -0.8, 0.0)


def test_no_selection_is_identity():
    y = PhenotypeParams(0.4, 0.3, -0.2)
    pair = PairParams(y, PhenotypeParams(0.6, 0.1, 0.5), 0.25, 0.1)
    assert model.apparent_h2(PART, y, 1.0) == pytest.approx(0.4, abs=1e-15)
    assert model.apparent_participation_gcor(PART, y, 1.0) == pytest.approx(0.3, abs=1e-15)
    assert model.apparent_pair_gcor(PART, pair, 1.0) == pytest.approx(0.25, abs=1e-15)
    assert model.mean_shift(y, PART, 1.0) == 0.0


def test_independent_of_participation_is_unbiased():
    y = PhenotypeParams(0.5, 0.0, 0.0)
    for a in [0.01, 0.3]:
        assert model.apparent_h2(PART, y, a) == pytest.approx(0.5, abs=1e-15)
        assert model.mean_shift(y, PART, a) == 0.0


def test_reparam_decomposition():
    y = PhenotypeParams(0.5, 0.4, 0.3)
    c = model.reparam(PART, y, 0.1)
    assert c.a**2 * PART.h2_x + c.var_Gw == pytest.approx(y.h2_y)
    assert c.b**2 * (1 - PART.h2_x) + c.var_ew == pytest.approx(1 - y.h2_y)


def test_zero_heritability_gcor_undefined():
    y = PhenotypeParams(0.0, 0.0, 0.0)
    assert model.apparent_h2(PART, y, 0.1) == 0.0
    # with a non-genetic link, selection lends Y genetic variance through G_x
    assert model.apparent_h2(PART, PhenotypeParams(0.0, 0.0, 0.5), 0.1) > 0.0
    with pytest.raises(model.DegenerateSelectionError):
        model.apparent_participation_gcor(PART, y, 0.1)


@pytest.mark.parametrize(
    "y1,y2,vg,ve",
    [
        ((0.5, 0.3, 0.3), (0.5, 0.5, 0.1), 0.4, 0.2),
        ((0.3, -0.4, 0.6), (0.7, 0.2, -0.3), -0.2, 0.1),
    ],
)
def test_forward_formulas_against_monte_carlo(y1, y2, vg, ve):
    pair = PairParams(PhenotypeParams(*y1), PhenotypeParams(*y2), vg, ve)
    alpha = 0.2
    coh = simgen.simulate_mvn(PART, pair, alpha, 400_000, seed=11)
    q = simgen.empirical_sample_quantities(coh)
    t = simgen.truth(PART, pair, alpha)
    checks = {
        "h2_y1": t["h2_y1_pb"],
        "h2_y2": t["h2_y2_pb"],
        "rho_g1": t["rho_g1_pb"],
        "rho_g2": t["rho_g2_pb"],
        "delta1": t["delta1"],
        "delta2": t["delta2"],
        "varphi_g": t["varphi_g_pb"],
        "a_prime1": model.reparam(PART, pair.y1, alpha).a_prime,
    }
    for key, expected in checks.items():
        assert abs(q[key] - expected) < 4 * q.se[key], key


@settings(max_examples=150, deadline=None)
@given(
    h2y=st.floats(0.05, 0.95),
    rho_g=st.floats(-0.95, 0.95),
    rho_e=st.floats(-0.95, 0.95),
    alpha=st.floats(0.01, 0.99),
)
def test_sample_variance_positive(h2y, rho_g, rho_e, alpha):
    y = PhenotypeParams(h2y, rho_g, rho_e)
    g = model.apparent_gvar(PART, y, alpha)
    assert g >= -1e-12
    # genetic variance can never exceed the phenotype's sample variance
    assert model.apparent_h2(PART, y, alpha) <= 1 + 1e-12


@settings(max_examples=100, deadline=None)
@given(rho_e=st.floats(-0.95, 0.95), alpha=st.floats(0.01, 0.99))
def test_pure_nongenetic_link_inflates_h2(rho_e, alpha):
    y = PhenotypeParams(0.5, 0.0, rho_e)
    assert model.apparent_h2(PART, y, alpha) >= 0.5 - 1e-12


def test_mean_shift_sign_follows_rho():
    a = 0.1
    for rg, re_ in [(0.3, 0.2), (-0.3, -0.2), (0.5, -0.1)]:
        y = PhenotypeParams(0.5, rg, re_)
        assert np.sign(model.mean_shift(y, PART, a)) == np.sign(y.rho(PART))
