"""Method-of-moments calibration of variance models to daily IV series.

The observable side is a per-day integrated variance estimate (pre-averaged
bipower, noise-debiased).  The model side maps parameters to the mean,
variance, and first two autocovariances of daily integrated variance.  A
diagonally weighted GMM criterion ties the two together.

For models whose spot variance is an OU-type process with exponential
autocovariance the four IV moments have closed forms.  Writing w(t) for the
stationary autocovariance of V, the daily integral over [0, 1] gives

    var(IV)   = 2 int_0^1 (1 - s) w(s) ds
    acov_j    = int_{j-1}^{j+1} (1 - |t - j|) w(t) dt        j >= 1

and with w(t) = var(V) e^{-kappa t} both reduce to rational-exponential
expressions.  The log-OU family has a non-exponential w, so its variance and
first autocovariance are integrated numerically; its second autocovariance is
imposed as e^{-kappa} times the first so that every family satisfies the same
one-lag decay recursion by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .preavg import PreavgConfig, preaverage, preavg_bipower
from .sim import SvModelSpec
from .spotvol import day_noise_variance

__all__ = [
    "IvMomentTargets",
    "ModelIvMoments",
    "GmmFit",
    "GmmError",
    "daily_iv_series",
    "heston_iv_moments",
    "tsou_iv_moments",
    "expou_iv_moments",
    "gmm_fit",
]


@dataclass(frozen=True)
class IvMomentTargets:
    """Sample moments of a daily integrated-variance series.

    All moments use the biased 1/n convention so that short series stay
    internally consistent (the same n divides every term).
    """

    mean: float
    variance: float
    acov1: float
    acov2: float
    n_days: int | None = None

    @classmethod
    def from_series(cls, iv) -> "IvMomentTargets":
        x = np.asarray(iv, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("daily IV series must be one-dimensional")
        if x.size < 10:
            raise ValueError(f"need at least 10 daily values, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise ValueError("daily IV series contains non-finite values")
        n = x.size
        m = float(x.mean())
        d = x - m
        return cls(
            mean=m,
            variance=float(d @ d) / n,
            acov1=float(d[:-1] @ d[1:]) / n,
            acov2=float(d[:-2] @ d[2:]) / n,
            n_days=n,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.mean, self.variance, self.acov1, self.acov2])


@dataclass(frozen=True)
class ModelIvMoments:
    """Model-implied daily IV moments for one parameter point."""

    family: str
    mean: float
    variance: float
    acov1: float
    acov2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mean, self.variance, self.acov1, self.acov2])


def daily_iv_series(data, theta: float | None = None) -> np.ndarray:
    """Per-day integrated variance estimates from noisy returns.

    ``data`` is either a return series or any object exposing ``returns()``
    (a simulated panel does).  Each day gets the pre-averaged bipower
    estimate debiased by that day's own noise-variance estimate.
    """
    rs = data.returns() if hasattr(data, "returns") else data
    cfg = (
        PreavgConfig.from_delta(rs.delta_n)
        if theta is None
        else PreavgConfig.from_delta(rs.delta_n, theta=theta)
    )
    pre = preaverage(rs, cfg)
    omega2 = np.maximum(day_noise_variance(rs), 0.0)
    if pre.skipped_days:
        keep = np.setdiff1d(np.arange(rs.days), np.asarray(pre.skipped_days))
        omega2 = omega2[keep]
    return preavg_bipower(pre, cfg, omega2).values


def _ou_iv_moments(family: str, ev: float, var_v: float, kappa: float) -> ModelIvMoments:
    # exact integrals of var_v * e^{-kappa t} against the Bartlett kernel
    em = math.exp(-kappa)
    variance = 2.0 * var_v * (em + kappa - 1.0) / kappa**2
    acov1 = var_v * (1.0 - em) ** 2 / kappa**2
    return ModelIvMoments(family, ev, variance, acov1, em * acov1)


def heston_iv_moments(kappa: float, v0: float, xi: float) -> ModelIvMoments:
    """Daily IV moments of the square-root diffusion.

    Stationary mean v0 and variance xi^2 v0 / (2 kappa), exponential
    autocovariance at rate kappa.
    """
    if kappa <= 0.0 or v0 <= 0.0 or xi < 0.0:
        raise ValueError("require kappa > 0, v0 > 0, xi >= 0")
    return _ou_iv_moments("heston", v0, xi**2 * v0 / (2.0 * kappa), kappa)


def tsou_iv_moments(kappa: float, c: float, lam: float) -> ModelIvMoments:
    """Daily IV moments of the tempered-stable OU variance process.

    The stationary law is inverse Gaussian with mean c sqrt(pi / lam) and
    variance c sqrt(pi) / (2 lam^{3/2}); the autocovariance is exponential
    at the mean-reversion rate.
    """
    if kappa <= 0.0 or c <= 0.0 or lam <= 0.0:
        raise ValueError("require kappa > 0, c > 0, lam > 0")
    ev = c * math.sqrt(math.pi / lam)
    var_v = c * math.sqrt(math.pi) / (2.0 * lam**1.5)
    return _ou_iv_moments("tsou", ev, var_v, kappa)


def expou_iv_moments(kappa: float, v0: float, xi: float) -> ModelIvMoments:
    """Daily IV moments of the exponential-OU variance process.

    V = exp(Y) with Y an OU process of stationary mean v0 and variance
    xi^2 / (2 kappa).  The autocovariance of V is not exponential, so the
    variance and lag-1 terms are integrated numerically; lag 2 is imposed
    as e^{-kappa} times lag 1 to keep the decay recursion shared with the
    other families.
    """
    if kappa <= 0.0 or xi < 0.0:
        raise ValueError("require kappa > 0, xi >= 0")
    q = xi**2 / (2.0 * kappa)
    ev = math.exp(v0 + q / 2.0)
    if xi == 0.0:
        return ModelIvMoments("expou", ev, 0.0, 0.0, 0.0)

    ev2 = ev * ev

    def cov_v(t):
        return ev2 * math.expm1(q * math.exp(-kappa * t))

    variance = 2.0 * integrate.quad(lambda s: (1.0 - s) * cov_v(s), 0.0, 1.0)[0]
    acov1 = integrate.quad(
        lambda t: (1.0 - abs(t - 1.0)) * cov_v(t), 0.0, 2.0, points=[1.0]
    )[0]
    return ModelIvMoments("expou", ev, variance, acov1, math.exp(-kappa) * acov1)


_PARAM_NAMES = {
    "heston": ("kappa", "v0", "xi"),
    "expou": ("kappa", "v0", "xi"),
    "tsou": ("kappa", "c", "lam"),
}


def _moments_at(family: str, p: np.ndarray) -> ModelIvMoments:
    if family == "heston":
        return heston_iv_moments(p[0], p[1], p[2])
    if family == "expou":
        return expou_iv_moments(p[0], p[1], p[2])
    return tsou_iv_moments(p[0], p[1], p[2])


def _to_natural(family: str, theta: np.ndarray) -> np.ndarray:
    t = np.clip(theta, -40.0, 40.0)
    if family == "heston":
        kappa = math.exp(t[0])
        v0 = math.exp(t[1])
        # logistic ratio keeps xi^2 < 2 kappa v0, so Feller always holds
        xi = math.sqrt(2.0 * kappa * v0 * special.expit(t[2]))
        return np.array([kappa, v0, xi])
    if family == "expou":
        return np.array([math.exp(t[0]), theta[1], math.exp(t[2])])
    return np.array([math.exp(t[0]), math.exp(t[1]), math.exp(t[2])])


def _to_theta(family: str, p: np.ndarray) -> np.ndarray:
    if family == "heston":
        kappa, v0, xi = p
        ratio = np.clip(xi**2 / (2.0 * kappa * v0), 1e-10, 1.0 - 1e-10)
        return np.array([math.log(kappa), math.log(v0), special.logit(ratio)])
    if family == "expou":
        return np.array([math.log(p[0]), p[1], math.log(max(p[2], 1e-8))])
    return np.log(p)


def _default_init(family: str, t: np.ndarray) -> np.ndarray:
    """Closed-form inversion of the moment map, clipped to the domain."""
    mean = max(t[0], 1e-8)
    var_iv = max(t[1], 1e-10 * mean**2)
    kappa = 0.1
    if t[2] > 0.0 and 0.0 < t[3] < t[2]:
        kappa = -math.log(t[3] / t[2])
    kappa = float(np.clip(kappa, 1e-3, 50.0))
    # invert var(IV) = 2 var(V) (e^{-k} + k - 1)/k^2 for the latent variance
    var_v = var_iv * kappa**2 / (2.0 * (math.exp(-kappa) + kappa - 1.0))

    if family == "heston":
        v0 = mean
        xi2 = min(2.0 * kappa * var_v / v0, 0.98 * 2.0 * kappa * v0)
        return np.array([kappa, v0, math.sqrt(max(xi2, 1e-10))])
    if family == "tsou":
        lam = mean / (2.0 * var_v)
        c = mean * math.sqrt(lam / math.pi)
        return np.array([kappa, max(c, 1e-8), max(lam, 1e-8)])
    q = math.log1p(var_v / mean**2)
    xi = math.sqrt(max(2.0 * kappa * q, 1e-10))
    return np.array([kappa, math.log(mean) - q / 2.0, xi])


class GmmError(RuntimeError):
    """Raised when no restart converges; carries the best iterate found."""

    def __init__(self, message: str, best: "GmmFit"):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class GmmFit:
    """Result of a moment fit: parameter point, criterion value, diagnostics."""

    family: str
    params: dict[str, float]
    objective: float
    init_objective: float
    converged: bool
    projected: bool
    diagnostics: dict = field(default_factory=dict)

    def model_spec(self) -> SvModelSpec:
        if self.family == "heston":
            return SvModelSpec.heston(self.params["kappa"], self.params["v0"], self.params["xi"])
        if self.family == "expou":
            return SvModelSpec.expou(self.params["kappa"], self.params["v0"], self.params["xi"])
        return SvModelSpec.tsou(self.params["kappa"], self.params["c"], self.params["lam"])

    def moments(self) -> ModelIvMoments:
        names = _PARAM_NAMES[self.family]
        return _moments_at(self.family, np.array([self.params[k] for k in names]))


def gmm_fit(
    targets: IvMomentTargets,
    family: str,
    init: dict[str, float] | None = None,
    *,
    restarts: int = 5,
    seed: int = 0,
    options: dict | None = None,
) -> GmmFit:
    """Fit a variance-model family to daily IV moment targets.

    Minimizes the diagonally weighted quadratic form with weights
    1 / target_i^2 (floored to guard near-zero targets) over a smooth
    reparameterization of the family's domain, using Nelder-Mead from the
    closed-form initial point plus random restarts.  The returned objective
    never exceeds the objective at the initial point.

    A non-positive variance target cannot be matched by any parameter point;
    it is projected to a small positive value and the fit flagged.  If no
    restart converges a :class:`GmmError` is raised with the best iterate
    attached.
    """
    if family not in _PARAM_NAMES:
        raise ValueError(f"unknown family {family!r}")
    t = targets.as_array()
    if not np.all(np.isfinite(t)):
        raise ValueError("moment targets must be finite")

    projected = False
    if t[1] <= 0.0:
        t = t.copy()
        t[1] = 1e-8 * max(t[0] ** 2, 1e-8)
        projected = True

    scale = max(float(np.max(np.abs(t))), 1e-12)
    w = 1.0 / np.maximum(t * t, (1e-8 * scale) ** 2)

    def objective(theta):
        try:
            m = _moments_at(family, _to_natural(family, theta)).as_array()
        except (ValueError, OverflowError):
            return 1e50
        r = m - t
        val = float(r @ (w * r))
        return val if np.isfinite(val) else 1e50

    if init is not None:
        names = _PARAM_NAMES[family]
        p0 = np.array([float(init[k]) for k in names])
    else:
        p0 = _default_init(family, t)
    theta0 = _to_theta(family, p0)
    init_objective = objective(theta0)

    opts = {"xatol": 1e-11, "fatol": 1e-16, "maxfev": 20000, "maxiter": 20000}
    opts.update(options or {})

    rng = np.random.default_rng(seed)
    starts = [theta0] + [
        theta0 + rng.normal(0.0, 0.5, size=theta0.size) for _ in range(max(restarts, 1) - 1)
    ]

    best_theta, best_val = theta0, init_objective
    any_converged = False
    nfev = 0
    for start in starts:
        res = optimize.minimize(objective, start, method="Nelder-Mead", options=opts)
        nfev += res.nfev
        any_converged = any_converged or bool(res.success)
        if res.fun < best_val:
            best_theta, best_val = res.x, float(res.fun)
    # one polishing pass from the winner tightens the simplex further
    res = optimize.minimize(objective, best_theta, method="Nelder-Mead", options=opts)
    nfev += res.nfev
    any_converged = any_converged or bool(res.success)
    if res.fun < best_val:
        best_theta, best_val = res.x, float(res.fun)

    p_hat = _to_natural(family, best_theta)
    fit = GmmFit(
        family=family,
        params=dict(zip(_PARAM_NAMES[family], (float(v) for v in p_hat))),
        objective=best_val,
        init_objective=init_objective,
        converged=any_converged,
        projected=projected,
        diagnostics={"restarts": len(starts), "nfev": nfev},
    )
    if not any_converged:
        raise GmmError("no Nelder-Mead restart converged", fit)
    return fit
