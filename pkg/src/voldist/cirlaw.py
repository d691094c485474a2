"""Closed-form distribution theory for the square-root variance process.

For dV = kappa (v0 - V) dt + xi sqrt(V) dB the conditional law of V_t given
V_s is noncentral chi-square up to scale, and the stationary law is gamma.
These give quadrature access to the lagged joint distribution of (V_t, V_0)
under stationarity and hence to the population long-run variance of the
occupation indicator, the quantity the path-based estimator targets.  All of
it serves as an independent oracle for Monte Carlo work; nothing here touches
sample paths except the exact sampler at the bottom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

__all__ = [
    "CirParams",
    "stationary_law",
    "transition_cdf",
    "joint_cdf",
    "indicator_autocov",
    "longrun_variance_analytic",
    "exact_chain",
]


@dataclass(frozen=True)
class CirParams:
    kappa: float
    v0: float
    xi: float

    def __post_init__(self) -> None:
        if self.kappa <= 0 or self.v0 <= 0 or self.xi <= 0:
            raise ValueError("kappa, v0 and xi must be positive")

    @property
    def feller_ok(self) -> bool:
        return 2.0 * self.kappa * self.v0 >= self.xi**2

    @property
    def stationary_shape(self) -> float:
        return 2.0 * self.kappa * self.v0 / self.xi**2

    @property
    def stationary_rate(self) -> float:
        return 2.0 * self.kappa / self.xi**2

    @property
    def df(self) -> float:
        """Degrees of freedom of the scaled noncentral chi-square transition."""
        return 4.0 * self.kappa * self.v0 / self.xi**2


BASELINE_CIR = CirParams(kappa=0.05, v0=1.0, xi=0.2)


def stationary_law(params: CirParams):
    """Frozen gamma distribution of V under stationarity."""
    return stats.gamma(a=params.stationary_shape, scale=1.0 / params.stationary_rate)


def _transition_scale(params: CirParams, t: float) -> tuple[float, float]:
    em = math.exp(-params.kappa * t)
    c = 2.0 * params.kappa / (params.xi**2 * (1.0 - em))
    return c, em


def transition_cdf(x, v_s, t: float, params: CirParams):
    """P(V_t <= x | V_0 = v_s): scaled noncentral chi-square. Vectorized."""
    if t <= 0:
        raise ValueError("t must be positive")
    c, em = _transition_scale(params, t)
    x_arr = np.asarray(x, dtype=float)
    lam = 2.0 * c * em * np.asarray(v_s, dtype=float)
    out = special.chndtr(2.0 * c * x_arr, params.df, lam)
    return float(out) if out.ndim == 0 else out


def joint_cdf(x: float, y: float, t: float, params: CirParams, v_nodes: int = 256) -> float:
    """Stationary lagged joint CDF P(V_t <= x, V_0 <= y).

    Gauss-Legendre quadrature of the transition CDF against the stationary
    gamma density over V_0 in (0, y).  t = 0 degenerates to the stationary
    CDF at min(x, y).
    """
    if x <= 0.0 or y <= 0.0:
        return 0.0
    law = stationary_law(params)
    if t == 0.0:
        return float(law.cdf(min(x, y)))
    nodes, weights = np.polynomial.legendre.leggauss(v_nodes)
    v = 0.5 * y * (nodes + 1.0)
    w = 0.5 * y * weights
    return float(np.sum(w * transition_cdf(x, v, t, params) * law.pdf(v)))


def indicator_autocov(x: float, t: float, params: CirParams, v_nodes: int = 256) -> float:
    """cov(1{V_t <= x}, 1{V_0 <= x}) under stationarity."""
    f = float(stationary_law(params).cdf(x))
    return joint_cdf(x, x, t, params, v_nodes) - f * f


def longrun_variance_analytic(
    x: float,
    params: CirParams,
    horizon: float,
    taper: bool = True,
    t_nodes: int = 200,
    v_nodes: int = 256,
) -> float:
    """Population counterpart of the tapered occupation long-run variance.

        2 * int_0^H w(t) (P(V_t <= x, V_0 <= x) - F(x)^2) dt

    with w(t) = 1 - t/H when ``taper`` is on and w = 1 otherwise.  Horizon H
    equal to the sample span gives the exact finite-span variance of the
    scaled occupation frequency; H equal to an estimator's bandwidth gives
    the quantity that estimator actually approximates.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    nodes, weights = np.polynomial.legendre.leggauss(t_nodes)
    t = 0.5 * horizon * (nodes + 1.0)
    w = 0.5 * horizon * weights
    cov = np.array([indicator_autocov(x, ti, params, v_nodes) for ti in t])
    win = (1.0 - t / horizon) if taper else np.ones_like(t)
    return float(2.0 * np.sum(w * win * cov))


def exact_chain(params: CirParams, n_steps: int, dt: float, rng) -> np.ndarray:
    """Sample the process at spacing dt through the exact transition.

    Starts from a stationary draw; every marginal is exactly gamma and every
    pair exactly follows the noncentral chi-square transition, which makes
    the chain a distributional oracle rather than a discretization.
    """
    if n_steps < 1 or dt <= 0:
        raise ValueError("need n_steps >= 1 and dt > 0")
    c, em = _transition_scale(params, dt)
    shape, rate = params.stationary_shape, params.stationary_rate
    out = np.empty(n_steps)
    out[0] = rng.gamma(shape) / rate
    for j in range(1, n_steps):
        lam = 2.0 * c * em * out[j - 1]
        out[j] = rng.noncentral_chisquare(params.df, lam) / (2.0 * c)
    return out
