"""Tests for the synthetic data engines.

Closed-form moments are checked against independent quadrature oracles
before any sampler output is trusted; the exact-transition engines are
held to distributional tests (Laplace transforms, KS) rather than just
first moments.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from voldist.marginals import InverseGaussianMarginal
from voldist.sim import (
    JumpSpec,
    NoiseSpec,
    SvModelSpec,
    add_noise,
    assemble_panel,
    baseline_model,
    calibrate_jump_c,
    simulate_expou,
    simulate_heston,
    simulate_ts_jumps,
    simulate_tsou,
)
from voldist.sim import _ar1_path, _ig_ou_innovations, _stable_increment, _ts_increments


def quad_jump_qv_rate(c, lam, r):
    """Second moment of the two-sided jump measure by direct quadrature."""
    val, err = integrate.quad(lambda x: x ** (1.0 - r) * math.exp(-lam * x), 0.0, np.inf)
    assert err < 1e-8 * max(val, 1.0)
    return 2.0 * c * val


def batch_se(x, n_batches):
    """Standard error of the mean from non-overlapping batch means."""
    m = x.size // n_batches
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return means.std(ddof=1) / math.sqrt(n_batches)


# ---------------------------------------------------------------- model specs


def test_baseline_specs():
    hes = baseline_model("heston")
    assert hes.family == "heston"
    assert hes.feller_satisfied is True
    assert hes.rho == pytest.approx(-math.sqrt(0.5))

    exp_ou = baseline_model("expou")
    assert (exp_ou.kappa, exp_ou.v0, exp_ou.xi) == (0.08, -0.3, 0.45)
    assert exp_ou.feller_satisfied is None

    ts = baseline_model("tsou")
    # scale and tempering chosen so the stationary mean variance is one
    assert ts.c * math.sqrt(math.pi / ts.lam) == pytest.approx(1.0)

    with pytest.raises(ValueError):
        baseline_model("garch")


def test_model_spec_validation():
    with pytest.raises(ValueError):
        SvModelSpec.heston(-0.1, 1.0, 0.2)
    with pytest.raises(ValueError):
        SvModelSpec.heston(0.05, -1.0, 0.2)
    with pytest.raises(ValueError):
        SvModelSpec.heston(0.05, 1.0, 0.2, rho=-1.5)
    with pytest.raises(ValueError):
        SvModelSpec.tsou(0.5, 1.0, -3.0)
    with pytest.raises(ValueError):
        SvModelSpec.tsou(0.5, 1.0, 3.0, beta=1.2)
    # Feller violation is recorded, not rejected
    spec = SvModelSpec.heston(0.05, 1.0, 0.9)
    assert spec.feller_satisfied is False


def test_jump_spec_validation():
    with pytest.raises(ValueError):
        JumpSpec(c=-0.5, lam=3.0, r=0.5)
    with pytest.raises(ValueError):
        JumpSpec(c=0.5, lam=0.0, r=0.5)
    with pytest.raises(ValueError):
        JumpSpec(c=0.5, lam=3.0, r=2.0)
    assert JumpSpec(c=0.0, lam=3.0, r=0.5).qv_rate == 0.0


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(gamma=-0.1)
    assert NoiseSpec(gamma=0.0).gamma == 0.0


# ------------------------------------------------------------- jump calibration


def test_jump_qv_rate_closed_form_matches_quadrature():
    for c, lam, r in [(1.0, 3.0, 0.5), (0.7, 1.2, 0.3), (2.0, 5.0, 0.9), (1.0, 2.0, 0.0)]:
        spec = JumpSpec(c=c, lam=lam, r=r)
        assert spec.qv_rate == pytest.approx(quad_jump_qv_rate(c, lam, r), rel=1e-10)


def test_jump_share_calibration():
    c = calibrate_jump_c(3.0, 0.5, 0.2)
    # 20% of total QV with unit mean variance: rate must equal 0.2/0.8
    oracle = 0.25 / quad_jump_qv_rate(1.0, 3.0, 0.5)
    assert c == pytest.approx(oracle, rel=1e-10)
    assert abs(c - 0.7327) / 0.7327 < 0.01

    spec = JumpSpec.from_qv_share(3.0, 0.5, 0.2)
    assert spec.qv_rate / (spec.qv_rate + 1.0) == pytest.approx(0.2, rel=1e-12)
    assert JumpSpec.from_qv_share(3.0, 0.5, 0.0).c == 0.0
    with pytest.raises(ValueError):
        calibrate_jump_c(3.0, 0.5, 1.0)


# ------------------------------------------------------------- stable sampler


def test_stable_sampler_matches_levy_half():
    # alpha = 1/2 positive stable with E[exp(-t S)] = exp(-sqrt(t)) is the
    # Levy distribution with scale 1/2
    rng = np.random.default_rng(11)
    draws = _stable_increment(0.5, 20000, rng)
    ks = stats.kstest(draws, stats.levy(scale=0.5).cdf)
    assert ks.pvalue > 0.01


@pytest.mark.parametrize("alpha", [0.3, 0.75])
def test_stable_sampler_laplace_transform(alpha):
    rng = np.random.default_rng(12)
    draws = _stable_increment(alpha, 400000, rng)
    for theta in (0.5, 1.0, 2.0):
        vals = np.exp(-theta * draws)
        target = math.exp(-(theta**alpha))
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - target) < 4.0 * se + 1e-12


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.05, 0.95), seed=st.integers(0, 2**31 - 1))
def test_stable_sampler_positive_finite(alpha, seed):
    rng = np.random.default_rng(seed)
    draws = _stable_increment(alpha, 64, rng)
    assert np.all(draws > 0)
    assert np.all(np.isfinite(draws))


def test_tempered_increment_laplace_transform():
    # acceptance-rejection from the stable proposal is exact: the accepted
    # increment over dt has log-LT  -dt c Gamma(1-r)/r ((lam+t)^r - lam^r)
    c, lam, r, dt = 0.5, 1.0, 0.5, 1.0
    rng = np.random.default_rng(13)
    draws, proposals = _ts_increments(c, lam, r, dt, 200000, rng)
    assert proposals > draws.size  # tempering did reject something
    base = dt * c * special.gamma(1.0 - r) / r
    for theta in (0.4, 1.3):
        target = math.exp(-base * ((lam + theta) ** r - lam**r))
        vals = np.exp(-theta * draws)
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - target) < 4.0 * se


def test_ts_jumps_symmetry_and_qv():
    jump = JumpSpec.from_qv_share(3.0, 0.5, 0.2)
    T, fine = 200, 2340
    path = simulate_ts_jumps(jump, T, fine, seed=20240817)
    assert path.values[0] == 0.0
    assert path.values.size == T * fine + 1
    inc = np.diff(path.values)

    realized = float(np.sum(inc**2)) / T
    oracle = quad_jump_qv_rate(jump.c, jump.lam, jump.r)
    assert abs(realized - oracle) / oracle < 0.05

    # symmetric difference: drift-free within Monte Carlo error; sample
    # skewness is useless under these tails, so check sign balance and
    # mirrored tail quantiles instead
    sd_mean = inc.std(ddof=1) / math.sqrt(inc.size)
    assert abs(inc.mean()) < 4.0 * sd_mean
    assert abs(np.mean(inc > 0) - 0.5) < 2.0 / math.sqrt(inc.size)
    for p in (0.001, 0.01, 0.1):
        lo, hi = np.quantile(inc, [p, 1.0 - p])
        assert abs(lo + hi) < 0.2 * (hi - lo)
    assert path.rejected >= 0


def test_ts_jumps_zero_scale_gives_flat_path():
    jump = JumpSpec(c=0.0, lam=3.0, r=0.5)
    path = simulate_ts_jumps(jump, 2, 100, seed=1)
    assert np.all(path.values == 0.0)


def test_ts_jumps_gamma_case():
    # r = 0 degenerates to a difference of gamma processes, sampled exactly
    jump = JumpSpec(c=0.8, lam=2.0, r=0.0)
    path = simulate_ts_jumps(jump, 50, 500, seed=7)
    inc = np.diff(path.values)
    realized = float(np.sum(inc**2)) / 50
    assert abs(realized - jump.qv_rate) / jump.qv_rate < 0.1


def test_ts_jumps_infinite_variation_unsupported():
    jump = JumpSpec(c=0.5, lam=3.0, r=1.4)
    with pytest.raises(NotImplementedError):
        simulate_ts_jumps(jump, 1, 100, seed=0)


# ------------------------------------------------------------------ AR helper


def test_ar1_path_matches_bruteforce():
    rng = np.random.default_rng(3)
    innov = rng.standard_normal(200)
    a, x0 = 0.93, 1.7
    got = _ar1_path(a, x0, innov)
    ref = np.empty(201)
    ref[0] = x0
    for k in range(200):
        ref[k + 1] = a * ref[k] + innov[k]
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------- tsou


def test_tsou_innovation_laplace_transform():
    # one-step innovation of the IG-OU recursion: L(theta)/L(rho theta)
    c, lam = 1.0, math.pi
    delta, gam = c * math.sqrt(2.0 * math.pi), math.sqrt(2.0 * lam)
    rho = 0.6
    rng = np.random.default_rng(14)
    eta = _ig_ou_innovations(delta, gam, rho, 300000, rng)
    assert np.all(eta >= 0.0)
    g2 = gam * gam
    for theta in (0.7, 1.9):
        target = math.exp(
            delta * (math.sqrt(g2 + 2.0 * rho * theta) - math.sqrt(g2 + 2.0 * theta))
        )
        vals = np.exp(-theta * eta)
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - target) < 4.0 * se


def test_tsou_one_step_preserves_marginal():
    # exact transition: stationary in, stationary out after a single step
    spec = baseline_model("tsou")
    delta = spec.c * math.sqrt(2.0 * math.pi)
    gam = math.sqrt(2.0 * spec.lam)
    rho = math.exp(-0.7)
    rng = np.random.default_rng(15)
    v0 = rng.wald(delta / gam, delta * delta, size=50000)
    eta = _ig_ou_innovations(delta, gam, rho, v0.size, rng)
    v1 = rho * v0 + eta
    law = InverseGaussianMarginal.from_ts_ou(spec.c, spec.lam)
    ks = stats.kstest(v1, law.cdf)
    assert ks.pvalue > 0.01


def test_tsou_path_marginal_and_decay():
    spec = baseline_model("tsou")
    T, fine = 2000, 50
    v = simulate_tsou(spec, T, fine, seed=20240817)
    assert v.size == T * fine + 1
    assert np.all(v > 0.0)

    law = InverseGaussianMarginal.from_ts_ou(spec.c, spec.lam)
    sub = v[:: 8 * fine]  # every 8 units, autocorr e^{-4}
    ks = stats.kstest(sub, law.cdf)
    assert ks.pvalue > 0.01

    daily = v[::fine]
    a, b = daily[:-1], daily[1:]
    corr = np.corrcoef(a, b)[0, 1]
    target = math.exp(-spec.kappa)
    se = math.sqrt((1.0 - target**2) / daily.size)
    assert abs(corr - target) < 4.0 * se


def test_tsou_large_kappa_decorrelates():
    spec = SvModelSpec.tsou(8.0, 1.0, math.pi)
    v = simulate_tsou(spec, 2000, 10, seed=4)
    daily = v[::10]
    corr = np.corrcoef(daily[:-1], daily[1:])[0, 1]
    assert abs(corr) < 0.05


def test_tsou_rejects_other_tempering_index():
    spec = SvModelSpec.tsou(0.5, 1.0, math.pi, beta=0.7)
    with pytest.raises(ValueError):
        simulate_tsou(spec, 1, 100, seed=0)


def test_tsou_engine_rejects_wrong_family():
    with pytest.raises(ValueError):
        simulate_tsou(baseline_model("heston"), 1, 100, seed=0)


# -------------------------------------------------------------------- heston


def test_heston_ode_limit():
    spec = SvModelSpec.heston(0.05, 1.0, 0.0)
    T, fine = 1, 23400
    v, x = simulate_heston(spec, T, fine, seed=5, v_init=2.0)
    t = np.arange(v.size) / fine
    ode = 1.0 + (2.0 - 1.0) * np.exp(-0.05 * t)
    assert np.max(np.abs(v - ode)) < 1e-6
    assert np.all(np.isfinite(x))


def test_heston_marginal_gamma():
    spec = baseline_model("heston")
    T, fine = 2000, 2340
    v, _ = simulate_heston(spec, T, fine, seed=20240817)
    assert np.all(v >= 0.0)

    daily = v[::fine]
    assert 0.9 < daily.mean() < 1.1

    sub = v[:: 8 * fine]
    ks = stats.kstest(sub, stats.gamma(a=2.5, scale=1.0 / 2.5).cdf)
    assert ks.pvalue > 0.01


def test_heston_leverage_sign():
    spec = baseline_model("heston")
    v, x = simulate_heston(spec, 20, 23400, seed=6)
    dv, dx = np.diff(v), np.diff(x)
    corr = np.corrcoef(dx, dv)[0, 1]
    assert -0.75 < corr < -0.6


def test_heston_euler_mean_matches_ode():
    # mean reversion of the first moment from a fixed start
    spec = baseline_model("heston")
    finals = np.array(
        [simulate_heston(spec, 1, 2340, seed=100 + k, v_init=2.0)[0][-1] for k in range(300)]
    )
    target = 1.0 + (2.0 - 1.0) * math.exp(-0.05)
    se = finals.std(ddof=1) / math.sqrt(finals.size)
    assert abs(finals.mean() - target) < 3.0 * se


def test_heston_stationarity_halves():
    spec = baseline_model("heston")
    v, _ = simulate_heston(spec, 500, 2340, seed=8)
    daily = v[::2340][:-1]
    first, second = daily[:250], daily[250:]
    se = math.sqrt(batch_se(first, 10) ** 2 + batch_se(second, 10) ** 2)
    assert abs(first.mean() - second.mean()) < 3.0 * se


def test_heston_engine_rejects_wrong_family():
    with pytest.raises(ValueError):
        simulate_heston(baseline_model("expou"), 1, 100, seed=0)


# --------------------------------------------------------------------- expou


def test_expou_deterministic_limit():
    spec = SvModelSpec.expou(0.08, -0.3, 0.0)
    v, _ = simulate_expou(spec, 5, 1000, seed=9, v_init=2.0)
    t = np.arange(v.size) / 1000
    lnv = -0.3 + (math.log(2.0) + 0.3) * np.exp(-0.08 * t)
    np.testing.assert_allclose(np.log(v), lnv, rtol=0, atol=1e-9)


def test_expou_stationary_mean():
    spec = baseline_model("expou")
    v, _ = simulate_expou(spec, 2000, 2340, seed=20240817)
    assert np.all(v > 0.0)
    daily = v[::2340][:-1]
    target = math.exp(-0.3 + 0.45**2 / (4 * 0.08))
    assert target == pytest.approx(1.395, abs=5e-4)
    se = batch_se(daily, 40)
    assert abs(daily.mean() - target) < 3.0 * se


def test_expou_log_autocorrelation():
    spec = baseline_model("expou")
    v, _ = simulate_expou(spec, 2000, 2340, seed=10)
    lnv = np.log(v[::2340])
    corr = np.corrcoef(lnv[:-1], lnv[1:])[0, 1]
    target = math.exp(-0.08)
    assert abs(corr - target) < 0.03


def test_expou_leverage_sign():
    spec = baseline_model("expou")
    v, x = simulate_expou(spec, 20, 23400, seed=16)
    corr = np.corrcoef(np.diff(x), np.diff(np.log(v)))[0, 1]
    assert -0.75 < corr < -0.6


# --------------------------------------------------------------------- noise


def test_add_noise_identity_when_gamma_zero():
    x = np.linspace(0.0, 1.0, 101)
    v = np.ones(101)
    z = add_noise(x, v, NoiseSpec(0.0), 1.0 / 100, seed=0)
    np.testing.assert_array_equal(z, x)


def test_add_noise_variance_level():
    # gamma = 0.5, delta_n = 1/2340, V = 1: omega^2 = 0.25/2340
    n = 200001
    x = np.zeros(n)
    v = np.ones(n)
    z = add_noise(x, v, NoiseSpec(0.5), 1.0 / 2340, seed=17)
    u = z - x
    omega2 = 0.25 / 2340
    var = u.var(ddof=1)
    se = omega2 * math.sqrt(2.0 / (n - 1))
    assert abs(var - omega2) < 3.0 * se
    assert abs(u.mean()) < 3.0 * math.sqrt(omega2 / n)


def test_add_noise_shape_mismatch():
    with pytest.raises(ValueError):
        add_noise(np.zeros(5), np.ones(4), NoiseSpec(0.5), 0.1, seed=0)


# --------------------------------------------------------------------- panel


def test_panel_exact_subsampling():
    panel = assemble_panel(
        baseline_model("heston"),
        JumpSpec.from_qv_share(3.0, 0.5, 0.2),
        NoiseSpec(0.5),
        T=2,
        fine_steps=23400,
        coarse_n=2340,
        seed=21,
    )
    assert panel.stride == 10
    assert panel.v_fine.size == 2 * 23400 + 1
    assert panel.z.size == 2 * 2340 + 1
    np.testing.assert_array_equal(panel.v_coarse, panel.v_fine[::10])
    np.testing.assert_array_equal(
        panel.x_coarse, (panel.x_fine + panel.j_fine)[::10]
    )

    rs = panel.returns()
    assert rs.days == 2
    assert rs.delta_n == pytest.approx(1.0 / 2340)
    np.testing.assert_array_equal(rs.day_lengths, [2340, 2340])
    np.testing.assert_allclose(rs.values, np.diff(panel.z), rtol=0, atol=0)

    path = panel.true_path()
    assert path.days == 2
    np.testing.assert_array_equal(path.v_hat, panel.v_coarse[:-1])
    assert path.value(0.0) == panel.v_fine[0]

    frame = panel.frame()
    assert list(frame.columns) == ["day", "cell", "z", "x", "v"]
    assert len(frame) == panel.z.size


def test_panel_pure_diffusion_reduces_to_engine():
    panel = assemble_panel(
        baseline_model("heston"), None, NoiseSpec(0.0),
        T=1, fine_steps=23400, coarse_n=2340, seed=22,
    )
    assert panel.j_fine is None
    np.testing.assert_array_equal(panel.z, panel.x_fine[::10])


def test_panel_determinism():
    kwargs = dict(T=1, fine_steps=4680, coarse_n=2340, seed=23)
    a = assemble_panel(baseline_model("heston"), None, NoiseSpec(0.5), **kwargs)
    b = assemble_panel(baseline_model("heston"), None, NoiseSpec(0.5), **kwargs)
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.v_fine, b.v_fine)
    c = assemble_panel(
        baseline_model("heston"), None, NoiseSpec(0.5),
        T=1, fine_steps=4680, coarse_n=2340, seed=24,
    )
    assert not np.array_equal(a.z, c.z)


def test_panel_divisibility_error():
    with pytest.raises(ValueError):
        assemble_panel(
            baseline_model("heston"), None, NoiseSpec(0.5),
            T=1, fine_steps=23400, coarse_n=2341, seed=0,
        )


def test_panel_tsou_smoke():
    panel = assemble_panel(
        baseline_model("tsou"),
        JumpSpec.from_qv_share(3.0, 0.5, 0.2),
        NoiseSpec(0.5),
        T=2,
        fine_steps=23400,
        coarse_n=2340,
        seed=25,
    )
    assert np.all(panel.v_fine > 0.0)
    assert np.all(np.isfinite(panel.z))
    # no leverage wired for this family: price shocks are independent
    corr = np.corrcoef(np.diff(panel.x_fine), np.diff(panel.v_fine))[0, 1]
    assert abs(corr) < 0.05


def test_panel_expou_day_boundary_returns():
    panel = assemble_panel(
        baseline_model("expou"), None, NoiseSpec(0.5),
        T=3, fine_steps=2340, coarse_n=2340, seed=26,
    )
    rs = panel.returns()
    # first return of day 1 bridges the shared boundary point
    assert rs.day_values(1)[0] == pytest.approx(panel.z[2341] - panel.z[2340])
