import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from partbias import truncnorm as tn


def bisect_quantile(p, lo=-40.0, hi=40.0):
    """Normal quantile by bisection on the CDF: independent of ndtri."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if tn.std_normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def quad_moments(t):
    """Mean and variance of N(0,1) truncated below at t, by quadrature."""
    phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    z = integrate.quad(phi, t, math.inf, epsabs=1e-14, epsrel=1e-13)[0]
    m1 = integrate.quad(lambda x: x * phi(x), t, math.inf, epsabs=1e-14, epsrel=1e-13)[0] / z
    m2 = integrate.quad(lambda x: (x - m1) ** 2 * phi(x), t, math.inf, epsabs=1e-14, epsrel=1e-13)[0] / z
    return m1, m2


@pytest.mark.parametrize("alpha", [1e-4, 0.01, 0.055, 0.3, 0.5, 0.9, 0.999])
def test_threshold_matches_bisection(alpha):
    ctx = tn.make_selection_context(alpha)
    assert ctx.t_alpha == pytest.approx(bisect_quantile(1 - alpha), abs=1e-9)


@pytest.mark.parametrize("alpha", [0.01, 0.1, 0.37, 0.8])
def test_moments_match_quadrature(alpha):
    ctx = tn.make_selection_context(alpha)
    m1, var = quad_moments(ctx.t_alpha)
    assert tn.truncated_mean(alpha) == pytest.approx(m1, abs=1e-9)
    assert tn.truncated_variance(alpha) == pytest.approx(var, abs=1e-9)


def test_monte_carlo_moments():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(2_000_000)
    ctx = tn.make_selection_context(0.2)
    kept = x[x > ctx.t_alpha]
    se_mean = kept.std() / math.sqrt(len(kept))
    assert abs(kept.mean() - ctx.mills) < 4 * se_mean
    assert abs(kept.var() - (1 - ctx.xi)) < 0.01


def test_half_normal():
    assert tn.xi(0.5) == pytest.approx(2 / math.pi, abs=1e-15)
    assert tn.truncated_mean(0.5) == pytest.approx(math.sqrt(2 / math.pi), abs=1e-15)


def test_no_selection_limit():
    ctx = tn.make_selection_context(1.0)
    assert ctx.no_selection
    assert ctx.t_alpha == -math.inf
    assert ctx.mills == 0.0 and ctx.xi == 0.0
    # continuity from below
    assert tn.xi(1 - 1e-9) < 1e-7


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.0000001, math.nan, math.inf, 1e-7, "x", None])
def test_alpha_domain(bad):
    with pytest.raises(ValueError):
        tn.make_selection_context(bad)


def test_small_alpha_is_accurate():
    # the factored form must stay inside (0, 1) where mills**2 and t*mills nearly cancel
    for a in [1e-6, 1e-5, 1e-4]:
        x = tn.xi(a)
        assert 0 < x < 1
        assert 1 - x == pytest.approx(quad_moments(tn.make_selection_context(a).t_alpha)[1], rel=1e-6)


def test_quantile_rejects_boundary():
    for p in [0.0, 1.0, -1.0, 2.0]:
        with pytest.raises(ValueError):
            tn.std_normal_quantile(p)


def test_as_context_passthrough():
    ctx = tn.make_selection_context(0.3)
    assert tn.as_context(ctx) is ctx
    assert tn.as_context(0.3) == ctx
    assert ctx.density == pytest.approx(tn.std_normal_pdf(ctx.t_alpha))


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1.0), st.floats(min_value=1e-6, max_value=1.0))
def test_xi_bounded_and_monotone(a, b):
    xa, xb = tn.xi(a), tn.xi(b)
    assert 0.0 <= xa < 1.0
    if a < b:
        assert xa >= xb
