"""Tests for GMM calibration on daily integrated-variance moments.

The closed-form moment maps are never trusted bare: each is compared to a
double-integration oracle of the variance autocovariance, and the simulated
panels act as the final arbiter.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from voldist.calib import (
    GmmError,
    IvMomentTargets,
    daily_iv_series,
    expou_iv_moments,
    gmm_fit,
    heston_iv_moments,
    tsou_iv_moments,
)
from voldist.sim import JumpSpec, NoiseSpec, SvModelSpec, assemble_panel, baseline_model
from voldist.ticks import ReturnSeries


def _gl(a, b, n=160):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def brute_var_iv(cov_fn):
    """var(int_0^1 V) by double quadrature of the autocovariance.

    The |u - s| kink is removed by doubling the triangle u > s and
    substituting s = u y, which leaves a smooth tensor integrand.
    """
    u, wu = _gl(0.0, 1.0)
    y, wy = _gl(0.0, 1.0)
    vals = cov_fn(u[:, None] * (1.0 - y[None, :]))
    return 2.0 * (wu * u) @ vals @ wy


def brute_acov_iv(cov_fn, lag):
    """cov(int_0^1 V, int_lag^{lag+1} V) by double quadrature."""
    u, wu = _gl(float(lag), lag + 1.0)
    s, ws = _gl(0.0, 1.0)
    return wu @ cov_fn(u[:, None] - s[None, :]) @ ws


def batch_se(x, n_batches):
    m = x.size // n_batches
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return means.std(ddof=1) / math.sqrt(n_batches)


def sample_moments(x):
    """Biased (1/n) mean, variance and first two autocovariances."""
    n = x.size
    m = x.mean()
    d = x - m
    return m, d @ d / n, d[:-1] @ d[1:] / n, d[:-2] @ d[2:] / n


# ------------------------------------------------------------- moment targets


def test_targets_from_series():
    x = np.array([1.0, 2.0, 0.5, 1.5, 1.2, 0.8, 1.1, 0.9, 1.3, 0.7, 1.0, 1.4])
    t = IvMomentTargets.from_series(x)
    m, v, a1, a2 = sample_moments(x)
    assert t.mean == pytest.approx(m)
    assert t.variance == pytest.approx(v)
    assert t.acov1 == pytest.approx(a1)
    assert t.acov2 == pytest.approx(a2)
    assert t.n_days == 12


def test_targets_need_ten_days():
    with pytest.raises(ValueError):
        IvMomentTargets.from_series(np.ones(9))


# -------------------------------------------------------- closed-form moments


def test_heston_moments_match_double_integral():
    for kappa, v0, xi in [(0.05, 1.0, 0.2), (0.8, 2.0, 0.6)]:
        m = heston_iv_moments(kappa, v0, xi)
        var_v = xi**2 * v0 / (2.0 * kappa)
        cov = lambda t: var_v * np.exp(-kappa * t)
        assert m.mean == pytest.approx(v0, rel=1e-12)
        assert m.variance == pytest.approx(brute_var_iv(cov), rel=1e-10)
        assert m.acov1 == pytest.approx(brute_acov_iv(cov, 1), rel=1e-10)
        assert m.acov2 == pytest.approx(brute_acov_iv(cov, 2), rel=1e-10)


def test_heston_moments_baseline_value():
    m = heston_iv_moments(0.05, 1.0, 0.2)
    assert m.variance == pytest.approx(0.3934, abs=5e-4)


def test_heston_moments_degenerate_xi():
    m = heston_iv_moments(0.3, 1.7, 0.0)
    assert (m.mean, m.variance, m.acov1, m.acov2) == (1.7, 0.0, 0.0, 0.0)


def test_tsou_moments_match_double_integral():
    for kappa, c, lam in [(0.5, 1.0, math.pi), (1.3, 0.4, 2.0)]:
        m = tsou_iv_moments(kappa, c, lam)
        var_v = c * math.sqrt(math.pi) / (2.0 * lam**1.5)
        cov = lambda t: var_v * np.exp(-kappa * t)
        assert m.mean == pytest.approx(c * math.sqrt(math.pi / lam), rel=1e-12)
        assert m.variance == pytest.approx(brute_var_iv(cov), rel=1e-10)
        assert m.acov1 == pytest.approx(brute_acov_iv(cov, 1), rel=1e-10)
        assert m.acov2 == pytest.approx(brute_acov_iv(cov, 2), rel=1e-10)


def test_tsou_moments_unit_mean():
    assert tsou_iv_moments(0.5, 1.0, math.pi).mean == pytest.approx(1.0)


def test_tsou_variance_decreasing_in_kappa():
    kappas = np.linspace(2.0, 50.0, 30)
    var = [tsou_iv_moments(k, 1.0, math.pi).variance for k in kappas]
    assert np.all(np.diff(var) < 0)
    # kappa * var approaches the c sqrt(pi) / lam^{3/2} asymptote
    k = 500.0
    assert k * tsou_iv_moments(k, 1.0, math.pi).variance == pytest.approx(
        math.sqrt(math.pi) / math.pi**1.5, rel=5e-3
    )


def test_expou_moments_match_double_integral():
    kappa, v0, xi = 0.08, -0.3, 0.45
    m = expou_iv_moments(kappa, v0, xi)
    ev = math.exp(v0 + xi**2 / (4.0 * kappa))
    q = xi**2 / (2.0 * kappa)
    cov = lambda t: ev * ev * np.expm1(q * np.exp(-kappa * t))
    assert m.mean == pytest.approx(ev, rel=1e-12)
    assert m.mean == pytest.approx(1.395, abs=5e-4)
    assert m.variance == pytest.approx(brute_var_iv(cov), rel=1e-8)
    assert m.acov1 == pytest.approx(brute_acov_iv(cov, 1), rel=1e-8)
    # the one-lag recursion is imposed on the map, so acov2 is exactly
    # e^{-kappa} acov1 rather than the integral of the true autocovariance
    assert m.acov2 == pytest.approx(math.exp(-kappa) * m.acov1, rel=1e-14)


def test_expou_moments_degenerate_xi():
    m = expou_iv_moments(0.08, -0.3, 0.0)
    assert m.mean == pytest.approx(math.exp(-0.3), rel=1e-12)
    assert m.variance == 0.0


@settings(max_examples=40, deadline=None)
@given(
    kappa=st.floats(0.01, 5.0),
    v0=st.floats(0.1, 3.0),
    ratio=st.floats(0.05, 0.95),
)
def test_heston_moment_map_properties(kappa, v0, ratio):
    xi = math.sqrt(2.0 * kappa * v0 * ratio)  # Feller holds by construction
    m = heston_iv_moments(kappa, v0, xi)
    assert m.variance >= 0.0
    assert 0.0 <= m.acov1 <= m.variance
    assert m.acov2 == pytest.approx(math.exp(-kappa) * m.acov1, rel=1e-12)


@pytest.mark.parametrize(
    "fn,args",
    [
        (heston_iv_moments, (0.05, 1.0, 0.2)),
        (tsou_iv_moments, (0.5, 1.0, math.pi)),
        (expou_iv_moments, (0.08, -0.3, 0.45)),
    ],
)
def test_moment_map_continuity(fn, args):
    base = np.array(fn(*args).as_array())
    for h in (1e-4, 1e-6):
        shifted = np.array(fn(args[0] * (1 + h), args[1] + h, args[2] * (1 + h)).as_array())
        assert np.max(np.abs(shifted - base)) < 50.0 * h * max(np.max(np.abs(base)), 1.0)


def test_moment_domain_errors():
    with pytest.raises(ValueError):
        heston_iv_moments(-0.1, 1.0, 0.2)
    with pytest.raises(ValueError):
        tsou_iv_moments(0.5, 1.0, -1.0)
    with pytest.raises(ValueError):
        expou_iv_moments(0.0, -0.3, 0.45)


# ------------------------------------------------------------- daily IV series


def test_daily_iv_zero_returns():
    rs = ReturnSeries(1.0 / 200, np.zeros(3 * 200), np.full(3, 200))
    iv = daily_iv_series(rs)
    assert iv.shape == (3,)
    np.testing.assert_array_equal(iv, 0.0)


def test_daily_iv_constant_variance():
    rng = np.random.default_rng(20240817)
    days, n = 40, 2340
    r = rng.standard_normal(days * n) * math.sqrt(1.0 / n)
    rs = ReturnSeries(1.0 / n, r, np.full(days, n))
    iv = daily_iv_series(rs)
    assert iv.size == days
    se = iv.std(ddof=1) / math.sqrt(days)
    assert abs(iv.mean() - 1.0) < 3.0 * se


def test_daily_iv_accepts_panel():
    panel = assemble_panel(
        baseline_model("heston"), None, NoiseSpec(0.5),
        T=12, fine_steps=2340, coarse_n=2340, seed=31,
    )
    iv = daily_iv_series(panel)
    assert iv.size == 12
    assert np.all(iv >= 0.0)


# --------------------------------------------------- simulation as the arbiter


def _panel_iv(family, seed, T=2000):
    panel = assemble_panel(
        baseline_model(family), None, NoiseSpec(0.5),
        T=T, fine_steps=2340, coarse_n=2340, seed=seed,
    )
    return daily_iv_series(panel)


def test_heston_iv_moments_match_simulation():
    iv = _panel_iv("heston", seed=32)
    m = heston_iv_moments(0.05, 1.0, 0.2)
    d = iv - iv.mean()

    assert abs(iv.mean() - m.mean) < 3.0 * batch_se(iv, 40)
    assert abs(d @ d / d.size - m.variance) < 3.0 * batch_se(d * d, 40)
    p1 = d[:-1] * d[1:]
    assert abs(p1.mean() - m.acov1) < 3.0 * batch_se(p1, 40)
    p2 = d[:-2] * d[2:]
    assert abs(p2.mean() - m.acov2) < 3.0 * batch_se(p2, 40)


def test_tsou_iv_moments_match_simulation():
    iv = _panel_iv("tsou", seed=33)
    m = tsou_iv_moments(0.5, 1.0, math.pi)
    d = iv - iv.mean()

    assert abs(iv.mean() - m.mean) < 3.0 * batch_se(iv, 40)
    assert abs(d @ d / d.size - m.variance) < 3.0 * batch_se(d * d, 40)
    p1 = d[:-1] * d[1:]
    assert abs(p1.mean() - m.acov1) < 3.0 * batch_se(p1, 40)
    p2 = d[:-2] * d[2:]
    assert abs(p2.mean() - m.acov2) < 3.0 * batch_se(p2, 40)


def test_expou_iv_moments_match_simulation():
    iv = _panel_iv("expou", seed=34)
    m = expou_iv_moments(0.08, -0.3, 0.45)
    d = iv - iv.mean()

    assert abs(iv.mean() - m.mean) < 3.0 * batch_se(iv, 40)
    assert abs(d @ d / d.size - m.variance) < 3.0 * batch_se(d * d, 40)
    p1 = d[:-1] * d[1:]
    assert abs(p1.mean() - m.acov1) < 3.0 * batch_se(p1, 40)


# ------------------------------------------------------------------- GMM fits


@pytest.mark.parametrize("family", ["heston", "expou", "tsou"])
def test_gmm_exact_moment_recovery(family):
    spec = baseline_model(family)
    if family == "heston":
        m = heston_iv_moments(spec.kappa, spec.v0, spec.xi)
        true = {"kappa": spec.kappa, "v0": spec.v0, "xi": spec.xi}
    elif family == "expou":
        m = expou_iv_moments(spec.kappa, spec.v0, spec.xi)
        true = {"kappa": spec.kappa, "v0": spec.v0, "xi": spec.xi}
    else:
        m = tsou_iv_moments(spec.kappa, spec.c, spec.lam)
        true = {"kappa": spec.kappa, "c": spec.c, "lam": spec.lam}
    targets = IvMomentTargets(m.mean, m.variance, m.acov1, m.acov2)

    fit = gmm_fit(targets, family)
    assert fit.objective <= fit.init_objective
    assert fit.objective < 1e-12
    for name, val in true.items():
        assert fit.params[name] == pytest.approx(val, rel=1e-6, abs=1e-8)


def test_gmm_fitted_point_keeps_lag_recursion():
    m = heston_iv_moments(0.05, 1.0, 0.2)
    targets = IvMomentTargets(m.mean, m.variance, m.acov1, m.acov2)
    fit = gmm_fit(targets, "heston")
    mm = heston_iv_moments(**fit.params)
    assert mm.acov2 == pytest.approx(math.exp(-fit.params["kappa"]) * mm.acov1, rel=1e-12)


def test_gmm_on_simulated_heston_panel():
    panel = assemble_panel(
        baseline_model("heston"), None, NoiseSpec(0.5),
        T=500, fine_steps=2340, coarse_n=2340, seed=35,
    )
    fit = gmm_fit(IvMomentTargets.from_series(daily_iv_series(panel)), "heston")
    assert 0.01 <= fit.params["kappa"] <= 0.2
    assert 0.7 <= fit.params["v0"] <= 1.3
    assert fit.objective <= fit.init_objective


def test_gmm_heston_respects_feller():
    # targets built far outside the admissible set still yield a feasible fit
    targets = IvMomentTargets(1.0, 5.0, 0.02, 0.001)
    fit = gmm_fit(targets, "heston")
    k, v0, xi = fit.params["kappa"], fit.params["v0"], fit.params["xi"]
    assert 2.0 * k * v0 >= xi**2


def test_gmm_projects_infeasible_variance():
    targets = IvMomentTargets(1.0, -0.5, 0.1, 0.05)
    fit = gmm_fit(targets, "heston")
    assert fit.projected
    assert np.isfinite(fit.objective)


def test_gmm_unknown_family():
    targets = IvMomentTargets(1.0, 0.4, 0.3, 0.28)
    with pytest.raises(ValueError):
        gmm_fit(targets, "garch")


def test_gmm_nonconvergence_raises_with_best():
    m = heston_iv_moments(0.05, 1.0, 0.2)
    targets = IvMomentTargets(m.mean, m.variance, m.acov1, m.acov2)
    with pytest.raises(GmmError) as exc:
        gmm_fit(targets, "heston", options={"maxfev": 4, "maxiter": 2})
    assert np.isfinite(exc.value.best.objective)


def test_gmm_fit_to_model_spec():
    m = tsou_iv_moments(0.5, 1.0, math.pi)
    targets = IvMomentTargets(m.mean, m.variance, m.acov1, m.acov2)
    fit = gmm_fit(targets, "tsou")
    spec = fit.model_spec()
    assert spec.family == "tsou"
    assert spec.kappa == pytest.approx(0.5, rel=1e-5)
