import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpdice.dpnoise import (PrivacyBudget, Sensitivity, Statistic, calibrate_sigma, cdp_to_dp,
                            cdp_to_dp_tight, central_gaussian_sigma, discrete_gaussian_pmf,
                            discrete_gaussian_variance, epsilon_d, sample_discrete_gaussian,
                            sample_discrete_gaussian_exact)
from dpdice.errors import InvalidParameter

# Frozen from a 40-digit mpmath evaluation of the same closed forms / series.
CDP_TO_DP_0012 = 0.0892781325323961
CENTRAL_EPS_C = 0.0134398408498674
CENTRAL_SIGMA = 74.4056429812461
FM_CENTRAL_SIGMA = 4266717.19111658
DG_VAR_HALF = 0.215012675088138


def test_sensitivities():
    assert Sensitivity.of(Statistic.FMS_Z).value == 1
    assert Sensitivity.of("FM_ZSTAR", m=4096, w=14).value == 14 * 4096
    assert Sensitivity.of(Statistic.HLL_ZSHARP, m=4096, w=14).value == pytest.approx(13 / 4096)


def test_epsilon_d_gaussian_regime():
    # tau_d is negligible at sigma=50, leaving Delta / (sqrt(d) sigma)
    assert epsilon_d(50, 20) == pytest.approx(1 / (math.sqrt(20) * 50), rel=1e-9)
    assert epsilon_d(50, 20, sensitivity=2) == pytest.approx(2 / (math.sqrt(20) * 50), rel=1e-9)


def test_epsilon_d_rejects_small_sigma():
    with pytest.raises(InvalidParameter):
        epsilon_d(0.4, 20)
    with pytest.raises(InvalidParameter):
        epsilon_d(1.0, 0)


def test_epsilon_d_grows_when_tau_matters():
    # at sigma=0.5 the tau term is no longer negligible
    plain = 1 / (math.sqrt(3) * 0.5)
    assert epsilon_d(0.5, 3) > plain


def test_cdp_to_dp_closed_form():
    assert cdp_to_dp(0.012, 1e-12) == pytest.approx(CDP_TO_DP_0012, rel=1e-12)
    with pytest.raises(InvalidParameter):
        cdp_to_dp(0.0, 1e-12)
    with pytest.raises(InvalidParameter):
        cdp_to_dp(0.1, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=1e-3, max_value=2.0), st.floats(min_value=1e-15, max_value=1e-3))
def test_tight_conversion_never_exceeds_closed_form(eps, delta):
    assert cdp_to_dp_tight(eps, delta) <= cdp_to_dp(eps, delta) + 1e-12


def test_central_gaussian_sigma():
    assert central_gaussian_sigma(1, 0.1, 1e-12) == pytest.approx(CENTRAL_SIGMA, rel=1e-9)
    assert 1 / CENTRAL_SIGMA == pytest.approx(CENTRAL_EPS_C, rel=1e-9)
    fm = central_gaussian_sigma(Sensitivity.of("FM_ZSTAR", 4096, 14).value, 0.1, 1e-12)
    assert fm == pytest.approx(FM_CENTRAL_SIGMA, rel=1e-9)
    assert cdp_to_dp(CENTRAL_EPS_C, 1e-12) == pytest.approx(0.1, rel=1e-9)


def test_calibrate_defaults():
    b = calibrate_sigma(0.1, 1e-12, 20)
    assert isinstance(b, PrivacyBudget)
    assert b.sigma == pytest.approx(16.6376, rel=1e-4)
    assert b.eps_cdp == pytest.approx(0.013440, rel=1e-3)
    assert cdp_to_dp(b.eps_cdp, 1e-12) <= 0.1
    # minimal: a slightly smaller sigma overshoots the target
    assert cdp_to_dp(epsilon_d(b.sigma * (1 - 1e-5), 20), 1e-12) > 0.1


def test_calibrate_sqrt2_scaling():
    s20 = calibrate_sigma(0.1, 1e-12, 20).sigma
    s40 = calibrate_sigma(0.1, 1e-12, 40).sigma
    assert s40 / s20 == pytest.approx(1 / math.sqrt(2), rel=1e-4)


def test_calibrate_single_holder_matches_central():
    b = calibrate_sigma(0.1, 1e-12, 1)
    assert b.sigma == pytest.approx(CENTRAL_SIGMA, rel=1e-5)


def test_calibrate_unreachable():
    with pytest.raises(InvalidParameter):
        calibrate_sigma(1e-9, 1e-12, 1)


def test_pmf_and_variance_oracle():
    xs = np.arange(-200, 201)
    assert discrete_gaussian_pmf(10, xs).sum() == pytest.approx(1.0, abs=1e-12)
    assert discrete_gaussian_variance(0.5) == pytest.approx(DG_VAR_HALF, rel=1e-9)
    for sigma in (1.0, 5.0, 10.0):
        v = discrete_gaussian_variance(sigma)
        assert 0.97 * sigma ** 2 <= v <= sigma ** 2 * (1 + 1e-9)


def test_vectorized_sampler_moments():
    rng = np.random.default_rng(7)
    x = sample_discrete_gaussian(10, rng, size=1_000_000)
    assert x.dtype == np.int64
    assert abs(x.mean()) < 0.05
    assert 0.97 * 100 <= x.var() <= 1.01 * 100


def test_vectorized_sampler_matches_pmf():
    rng = np.random.default_rng(8)
    x = sample_discrete_gaussian(2.0, rng, size=400_000)
    support = np.arange(-6, 7)
    expected = discrete_gaussian_pmf(2.0, support) * len(x)
    observed = np.array([(x == k).sum() for k in support])
    chi2 = ((observed - expected) ** 2 / expected).sum()
    assert chi2 < 40  # 12 dof, p ~ 1e-4


def test_sampler_scalar_and_errors():
    rng = np.random.default_rng(0)
    assert isinstance(sample_discrete_gaussian(3.0, rng), int)
    with pytest.raises(InvalidParameter):
        sample_discrete_gaussian(0, rng)
    with pytest.raises(InvalidParameter):
        sample_discrete_gaussian_exact(Fraction(0), rng)


def test_exact_sampler_moments():
    rng = np.random.default_rng(9)
    x = np.array([sample_discrete_gaussian_exact(Fraction(9), rng) for _ in range(20_000)])
    assert abs(x.mean()) < 4 * 3 / math.sqrt(len(x))
    assert x.var() == pytest.approx(discrete_gaussian_variance(3.0), rel=0.05)


def test_exact_sampler_accepts_float_derived_variance():
    # Fraction(float) ** 2 has a denominator far beyond 64 bits
    rng = np.random.default_rng(10)
    var = Fraction(16.6376) ** 2
    assert var.denominator > 2 ** 64
    x = [sample_discrete_gaussian_exact(var, rng) for _ in range(2000)]
    assert np.var(x) == pytest.approx(16.6376 ** 2, rel=0.15)
