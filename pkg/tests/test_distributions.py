import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cppeak.distributions import (
    GpdTail,
    SemiParametricMarginal,
    fit_gpd,
    fit_marginal,
    fit_marginals,
    gaussianize_panel,
    gpd_excess_quantile,
    gpd_nll,
    gpd_survival,
)
from cppeak.errors import DegenerateDistributionError, DomainError, FitError


@pytest.mark.parametrize("xi", [-0.3, 0.0, 0.25, 1.2])
def test_gpd_survival_and_quantile_match_scipy(xi):
    y = np.linspace(0, 3, 50)
    ref = stats.genpareto(c=xi, scale=1.7)
    assert np.allclose(gpd_survival(y, xi, 1.7), ref.sf(y), atol=1e-14)
    q = np.array([0.9, 0.5, 0.01])
    assert np.allclose(gpd_excess_quantile(q, xi, 1.7), ref.isf(q), rtol=1e-12)


@pytest.mark.parametrize("xi", [-0.4, 1e-12, 0.3])
def test_gpd_nll_gradient_matches_finite_differences(xi):
    rng = np.random.default_rng(1)
    y = stats.genpareto(c=xi).rvs(200, random_state=rng)
    p = np.array([xi, math.log(1.3)])
    f, g = gpd_nll(p, y)
    ref = -stats.genpareto(c=xi, scale=1.3).logpdf(y).sum()
    assert f == pytest.approx(ref, rel=1e-10)
    h = 1e-6
    num = [(gpd_nll(p + h * e, y)[0] - gpd_nll(p - h * e, y)[0]) / (2 * h) for e in np.eye(2)]
    assert np.allclose(g, num, rtol=1e-4, atol=1e-4)


def test_gpd_nll_outside_support_is_penalized():
    f, _ = gpd_nll(np.array([-0.5, 0.0]), np.array([0.1, 5.0]))
    assert f >= 1e12


@pytest.mark.parametrize("xi", [-0.2, 0.0, 0.3])
def test_fit_gpd_recovers_parameters(xi):
    y = stats.genpareto(c=xi, scale=1.0).rvs(5000, random_state=np.random.default_rng(7))
    shape, scale, method, _ = fit_gpd(y)
    assert method == "mle"
    assert abs(shape - xi) < 0.05
    assert abs(scale - 1.0) < 0.05


def test_fit_gpd_agrees_with_scipy_mle():
    y = stats.genpareto(c=0.2, scale=2.0).rvs(800, random_state=np.random.default_rng(3))
    shape, scale, _, _ = fit_gpd(y)
    c, _, s = stats.genpareto.fit(y, floc=0)
    assert shape == pytest.approx(c, abs=2e-3)
    assert scale == pytest.approx(s, rel=2e-3)


def test_fit_gpd_guards():
    with pytest.raises(FitError):
        fit_gpd([1.0, 2.0])
    with pytest.raises(FitError):
        fit_gpd([1.0, -1.0, 2.0])
    with pytest.raises(DegenerateDistributionError):
        fit_gpd([0.0, 0.0, 0.0])


def test_tail_validation_and_endpoint():
    with pytest.raises(FitError):
        GpdTail("upper", 0.0, 0.1, 0.0, 0.1)
    t = GpdTail("upper", 1.0, -0.5, 2.0, 0.1)
    assert t.endpoint == pytest.approx(5.0)
    assert GpdTail("lower", 1.0, -0.5, 2.0, 0.1).endpoint == pytest.approx(-3.0)


@pytest.fixture(scope="module")
def normal_marginal():
    x = np.random.default_rng(11).normal(5.0, 2.0, 2000)
    return x, fit_marginal(x, 0.15, hour=13)


def test_stitch_points_carry_exact_tail_mass(normal_marginal):
    x, m = normal_marginal
    k = math.floor(0.15 * 2000)
    assert m.lower.n_exceed == m.upper.n_exceed == k
    assert m.cdf(m.lower.threshold) == pytest.approx(k / 2000, abs=1e-15)
    assert m.cdf(m.upper.threshold) == pytest.approx(1 - k / 2000, abs=1e-15)
    s = np.sort(x)
    assert m.upper.threshold == pytest.approx(0.5 * (s[-k - 1] + s[-k]))


def test_cdf_is_continuous_at_thresholds(normal_marginal):
    _, m = normal_marginal
    for u in (m.lower.threshold, m.upper.threshold):
        assert abs(m.cdf(u - 1e-9) - m.cdf(u + 1e-9)) < 1e-8


def test_tail_scale_close_to_normal_excess_theory(normal_marginal):
    _, m = normal_marginal
    assert m.upper.shape < 0.15 and m.lower.shape < 0.15
    assert m.median == pytest.approx(5.0, abs=0.15)


def test_round_trip_and_ks(normal_marginal):
    x, m = normal_marginal
    # invertible region: strictly inside the support, away from the cdf clamp
    lo = max(m.lower.endpoint, m.quantile(1e-9))
    hi = min(m.upper.endpoint, m.quantile(1 - 1e-9))
    pts = np.random.default_rng(0).uniform(lo, hi, 1000)
    back = m.degaussianize(m.gaussianize(pts))
    assert np.max(np.abs(back - pts) / np.abs(pts)) < 1e-6
    assert stats.kstest(m.gaussianize(x), "norm").pvalue > 0.01


def test_deep_upper_tail_keeps_precision(normal_marginal):
    _, m = normal_marginal
    x = m.quantile(1 - 1e-10)
    z = m.gaussianize(x)
    assert z == pytest.approx(stats.norm.isf(1e-10), rel=1e-6)
    assert m.degaussianize(z) == pytest.approx(x, rel=1e-9)


def test_quantile_domain(normal_marginal):
    _, m = normal_marginal
    for p in (0.0, 1.0, -0.1, float("nan")):
        with pytest.raises(DomainError):
            m.quantile(p)


def test_fit_marginal_guards():
    with pytest.raises(FitError, match="hour 4"):
        fit_marginal(np.arange(29.0), hour=4)
    with pytest.raises(DegenerateDistributionError):
        fit_marginal(np.full(50, 3.0))
    with pytest.raises(FitError):
        fit_marginal(np.arange(50.0), tail_fraction=0.7)


def test_small_sample_exceedance_floor():
    m = fit_marginal(np.random.default_rng(2).normal(size=30), tail_fraction=0.01)
    assert m.upper.n_exceed == 3


def test_serialization_round_trip(normal_marginal):
    _, m = normal_marginal
    m2 = SemiParametricMarginal.from_dict(m.to_dict())
    z = np.linspace(-6, 6, 41)
    assert np.array_equal(m.degaussianize(z), m2.degaussianize(z))


def test_panel_and_normality_report():
    rng = np.random.default_rng(5)
    x = rng.gamma(3.0, size=(1500, 3))
    ms = fit_marginals(x, hours=[12, 13, 14], workers=2)
    assert [m.hour for m in ms] == [12, 13, 14]
    panel = gaussianize_panel(x, ms)
    assert all(r["mean_ok"] and r["var_ok"] for r in panel.normality_report())
    bad = gaussianize_panel(x * 0 + rng.normal(3, 1, x.shape), ms)
    assert not all(r["mean_ok"] for r in bad.normality_report())


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    n=st.integers(30, 400),
    tf=st.floats(0.02, 0.3),
    df=st.floats(2.5, 30),
)
def test_marginal_properties(seed, n, tf, df):
    x = stats.t(df).rvs(n, random_state=np.random.default_rng(seed)) * 100 + 1000
    m = fit_marginal(x, tf)
    grid = np.linspace(x.min() - 50, x.max() + 50, 400)
    c = m.cdf(grid)
    assert np.all(np.diff(c) >= -1e-15)
    assert np.all((c >= 1e-12) & (c <= 1 - 1e-12))
    p = np.linspace(0.001, 0.999, 97)
    q = m.quantile(p)
    assert np.all(np.diff(q) >= -1e-9)
    assert np.allclose(m.cdf(q), p, atol=1e-9)
