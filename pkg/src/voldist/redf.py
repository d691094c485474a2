"""Realized empirical distribution of a spot-variance path.

The occupation-time distribution F(x) = (1/T) * time{t in [0,T]: V_t <= x}
is estimated by the fraction of grid cells at or below x.  Because the path
is piecewise constant on cells of width delta_n, the estimator is an exact
integral, not a quadrature.  Quantiles follow the generalized-inverse
convention, and the long-run variance of the indicator process is built from
lagged joint occupation frequencies with a Bartlett taper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, signal

__all__ = [
    "Redf",
    "LongRunVarianceConfig",
    "LongRunResult",
    "build_redf",
    "quantile",
    "joint_redf",
    "longrun_variance",
    "longrun_covariance",
    "clt_pivot",
]


@dataclass
class Redf:
    """Step-function CDF over the distinct path values.

    ``support`` holds the distinct cell values ascending and ``cum_counts``
    the number of cells at or below each; every cell carries the same time
    weight delta_n.
    """

    support: np.ndarray
    cum_counts: np.ndarray
    delta_n: float

    def __post_init__(self) -> None:
        if self.support.size == 0:
            raise ValueError("empty distribution")

    @property
    def n_cells(self) -> int:
        return int(self.cum_counts[-1])

    @property
    def total_time(self) -> float:
        return self.n_cells * self.delta_n

    def cdf(self, x):
        """F(x): fraction of occupation time at or below x. Vectorized."""
        idx = np.searchsorted(self.support, np.asarray(x, dtype=float), side="right")
        counts = np.concatenate(([0], self.cum_counts))
        out = counts[idx] / self.n_cells
        return float(out) if np.ndim(x) == 0 else out

    def quantile(self, alpha):
        """Q(alpha) = inf{x: F(x) >= alpha}: the ceil(alpha*N)-th order statistic."""
        a = np.asarray(alpha, dtype=float)
        if np.any((a <= 0.0) | (a >= 1.0)):
            raise ValueError("alpha must lie strictly inside (0, 1)")
        # tolerate alpha*N landing a hair above an exact integer
        m = np.ceil(a * self.n_cells - 1e-9)
        idx = np.searchsorted(self.cum_counts, m, side="left")
        out = self.support[idx]
        return float(out) if a.ndim == 0 else out

    def frame(self, x_grid):
        """(x, F(x)) table on a user grid."""
        import pandas as pd

        x = np.asarray(x_grid, dtype=float)
        return pd.DataFrame({"x": x, "F": self.cdf(x)})

    def quantile_frame(self, alphas):
        import pandas as pd

        a = np.asarray(alphas, dtype=float)
        return pd.DataFrame({"alpha": a, "quantile": self.quantile(a)})


def _cells(path) -> tuple[np.ndarray, float]:
    """Cell values and spacing from a path object or a plain array."""
    if hasattr(path, "v_hat"):
        return np.asarray(path.v_hat, dtype=float), float(path.delta_n)
    raise TypeError("expected an object with v_hat and delta_n")


def build_redf(path, delta_n: float | None = None) -> Redf:
    """Occupation-time CDF of a piecewise-constant path.

    Accepts a spot-variance path or a plain array of cell values with an
    explicit ``delta_n``.
    """
    if delta_n is None:
        values, delta_n = _cells(path)
    else:
        values = np.asarray(path, dtype=float)
    if values.size == 0:
        raise ValueError("empty path")
    support, counts = np.unique(values, return_counts=True)
    return Redf(support, np.cumsum(counts), delta_n)


def quantile(F: Redf, alpha):
    """Generalized inverse of the step CDF (inf convention)."""
    return F.quantile(alpha)


@dataclass(frozen=True)
class LongRunVarianceConfig:
    """Bandwidth T^xi for lagged occupation integrals, xi in (0, 1/3)."""

    xi: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 < self.xi < 1.0 / 3.0:
            raise ValueError("xi must lie in (0, 1/3)")

    def bandwidth_cells(self, total_time: float, delta_n: float) -> int:
        """T^xi rounded up to a whole number of delta_n cells."""
        return int(math.ceil(total_time**self.xi / delta_n - 1e-9))


@dataclass(frozen=True)
class LongRunResult:
    value: float
    floored: bool
    bandwidth: float


def _lag_window(path, cfg: LongRunVarianceConfig):
    values, delta_n = _cells(path)
    total_time = values.size * delta_n
    lags = cfg.bandwidth_cells(total_time, delta_n)
    m = values.size - lags
    if m < 1:
        raise ValueError(
            f"series of {values.size} cells too short for bandwidth {lags} cells")
    return values, delta_n, lags, m


def joint_redf(path, x: float, y: float, t_lag: float,
               cfg: LongRunVarianceConfig | None = None) -> float:
    """Lagged joint occupation frequency F_t(x, y).

    The fraction of window starts s in [0, T - T^xi] with V_{s+t} <= x and
    V_s <= y, on the delta_n cell grid.  The window is cut by the bandwidth,
    not by the queried lag, so different lags share the same denominator.
    """
    values, delta_n, lags, m = _lag_window(path, cfg or LongRunVarianceConfig())
    ell = int(round(t_lag / delta_n))
    if not 0 <= ell <= lags:
        raise ValueError(f"t_lag must lie in [0, {lags * delta_n}]")
    a = values[ell:ell + m] <= x
    b = values[:m] <= y
    return float(np.count_nonzero(a & b)) / m


def _lagged_counts(ind_lead: np.ndarray, ind_base: np.ndarray, lags: int) -> np.ndarray:
    """S(l) = sum_s lead[s+l]*base[s] for l = 0..lags via FFT correlation."""
    m = ind_base.size
    out = signal.fftconvolve(ind_lead, ind_base[::-1], mode="valid")
    # counts are integers; strip FFT round-off
    return np.rint(out[:lags + 1])


def longrun_variance(path, x: float,
                     cfg: LongRunVarianceConfig | None = None) -> LongRunResult:
    """Bartlett-tapered long-run variance of the occupation indicator at x.

        Sigma(x) = 2 * int_0^B (1 - t/B) (F_t(x) - F(x)^2) dt

    with B = T^xi rounded up to whole cells, F_t the lagged joint frequency
    at (x, x), and F the full-sample occupation fraction.  Trapezoid rule on
    the cell grid; a negative result is floored at zero and flagged.
    """
    cfg = cfg or LongRunVarianceConfig()
    values, delta_n, lags, m = _lag_window(path, cfg)
    ind = (values <= x).astype(float)
    s = _lagged_counts(ind, ind[:m], lags)
    f_full = ind.mean()
    bandwidth = lags * delta_n
    t = np.arange(lags + 1) * delta_n
    integrand = (1.0 - t / bandwidth) * (s / m - f_full**2)
    value = 2.0 * integrate.trapezoid(integrand, dx=delta_n)
    floored = value < 0.0
    return LongRunResult(max(value, 0.0), bool(floored), bandwidth)


def longrun_covariance(path, x: float, y: float,
                       cfg: LongRunVarianceConfig | None = None) -> LongRunResult:
    """Untapered long-run covariance of the occupation indicators at x and y.

        Sigma(x, y) = int_0^B (F_t(x,y) + F_t(y,x) - 2 F(x) F(y)) dt

    Symmetric in (x, y) by construction; floored at zero with a flag, like
    the variance.
    """
    cfg = cfg or LongRunVarianceConfig()
    values, delta_n, lags, m = _lag_window(path, cfg)
    ind_x = (values <= x).astype(float)
    ind_y = (values <= y).astype(float)
    s_xy = _lagged_counts(ind_x, ind_y[:m], lags)
    s_yx = _lagged_counts(ind_y, ind_x[:m], lags)
    integrand = s_xy / m + s_yx / m - 2.0 * ind_x.mean() * ind_y.mean()
    value = integrate.trapezoid(integrand, dx=delta_n)
    floored = value < 0.0
    return LongRunResult(max(value, 0.0), bool(floored), lags * delta_n)


def clt_pivot(f_nt_x: float, f_x: float, sigma_x: float, total_time: float) -> float:
    """Standardized occupation-frequency error sqrt(T)(F_nT - F)/sqrt(Sigma)."""
    if sigma_x <= 0.0:
        raise ValueError("sigma_x must be positive")
    return math.sqrt(total_time) * (f_nt_x - f_x) / math.sqrt(sigma_x)
