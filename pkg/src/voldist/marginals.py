"""Candidate marginal laws of spot variance.

Goodness-of-fit tests compare the occupation-time distribution against a
parametric null: gamma (square-root diffusion), lognormal (exponential OU),
inverse Gaussian (tempered-stable-driven OU with activity 1/2), and the
generalized inverse Gaussian which nests all three directions.  Each class
exposes cdf, pdf, quantile and sample with a common call shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special, stats

__all__ = [
    "GammaMarginal",
    "LognormalMarginal",
    "InverseGaussianMarginal",
    "GigMarginal",
    "ig_from_ts",
    "gig_pdf",
    "stationary_marginal",
    "make_marginal",
]


@dataclass(frozen=True)
class GammaMarginal:
    """Gamma(shape, rate), the stationary law of a square-root diffusion."""

    shape: float
    rate: float
    family = "gamma"

    def __post_init__(self) -> None:
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("shape and rate must be positive")

    def _dist(self):
        return stats.gamma(a=self.shape, scale=1.0 / self.rate)

    def cdf(self, x):
        return self._dist().cdf(x)

    def pdf(self, x):
        return self._dist().pdf(x)

    def quantile(self, u):
        return self._dist().ppf(u)

    def sample(self, rng, size):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    @classmethod
    def from_sqrt_diffusion(cls, kappa: float, v0: float, xi: float) -> "GammaMarginal":
        return cls(2.0 * kappa * v0 / xi**2, 2.0 * kappa / xi**2)


@dataclass(frozen=True)
class LognormalMarginal:
    """exp(N(mean_log, sd_log^2)), the stationary law of a log OU process."""

    mean_log: float
    sd_log: float
    family = "lognormal"

    def __post_init__(self) -> None:
        if self.sd_log <= 0:
            raise ValueError("sd_log must be positive")

    def _dist(self):
        return stats.lognorm(s=self.sd_log, scale=math.exp(self.mean_log))

    def cdf(self, x):
        return self._dist().cdf(x)

    def pdf(self, x):
        return self._dist().pdf(x)

    def quantile(self, u):
        return self._dist().ppf(u)

    def sample(self, rng, size):
        return rng.lognormal(self.mean_log, self.sd_log, size)

    @classmethod
    def from_log_ou(cls, kappa: float, v0: float, xi: float) -> "LognormalMarginal":
        # stationary ln V ~ N(v0, xi^2/(2 kappa))
        return cls(v0, xi / math.sqrt(2.0 * kappa))


def ig_from_ts(c: float, lam: float) -> tuple[float, float]:
    """(mu, nu) of the inverse Gaussian implied by tempered-stable OU (c, lambda)."""
    if c <= 0 or lam <= 0:
        raise ValueError("c and lambda must be positive")
    return c * math.sqrt(math.pi / lam), 2.0 * math.pi * c**2


@dataclass(frozen=True)
class InverseGaussianMarginal:
    """IG(mu, nu) parameterized by mean mu and shape nu."""

    mu: float
    nu: float
    family = "inverse_gaussian"

    def __post_init__(self) -> None:
        if self.mu <= 0 or self.nu <= 0:
            raise ValueError("mu and nu must be positive")

    def _dist(self):
        return stats.invgauss(mu=self.mu / self.nu, scale=self.nu)

    def cdf(self, x):
        return self._dist().cdf(x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        xp = x[pos]
        out[pos] = np.sqrt(self.nu / (2.0 * math.pi * xp**3)) * np.exp(
            -self.nu * (xp - self.mu) ** 2 / (2.0 * self.mu**2 * xp))
        return float(out) if out.ndim == 0 else out

    def quantile(self, u):
        return self._dist().ppf(u)

    def sample(self, rng, size):
        return rng.wald(self.mu, self.nu, size)

    @classmethod
    def from_ts_ou(cls, c: float, lam: float) -> "InverseGaussianMarginal":
        return cls(*ig_from_ts(c, lam))


def gig_pdf(x, a: float, b: float, p: float):
    """Density (a/b)^{p/2} x^{p-1} e^{-(ax + b/x)/2} / (2 K_p(sqrt(ab)))."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    pos = x_arr > 0
    xp = x_arr[pos]
    norm = (a / b) ** (p / 2.0) / (2.0 * special.kv(p, math.sqrt(a * b)))
    out[pos] = norm * xp ** (p - 1.0) * np.exp(-(a * xp + b / xp) / 2.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GigMarginal:
    """Generalized inverse Gaussian with density parameters (a, b, p).

    The CDF is adaptive quadrature of the density (piecewise Gauss-Legendre
    accumulation for vector queries); the quantile inverts it by bracketing;
    sampling is ratio-of-uniforms on the unnormalized density.  p = -1/2
    coincides with IG(sqrt(b/a), b).
    """

    a: float
    b: float
    p: float
    family = "gig"

    def __post_init__(self) -> None:
        if self.a <= 0 or self.b <= 0:
            raise ValueError("a and b must be positive")

    def pdf(self, x):
        return gig_pdf(x, self.a, self.b, self.p)

    def _log_kernel(self, x):
        return (self.p - 1.0) * np.log(x) - (self.a * x + self.b / x) / 2.0

    def _mode(self, shift: float = 0.0) -> float:
        # stationary point of x^{p-1+shift} e^{-(ax+b/x)/2}
        q = self.p - 1.0 + shift
        return (q + math.sqrt(q * q + self.a * self.b)) / self.a

    def cdf(self, x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros(x_arr.shape)
        pos = x_arr > 0
        xs = x_arr[pos]
        if xs.size == 0:
            return float(out[0]) if np.ndim(x) == 0 else out
        if xs.size <= 8:
            vals = np.array([integrate.quad(self.pdf, 0.0, xi, limit=200)[0] for xi in xs])
        else:
            vals = self._cdf_batch(xs)
        out[pos] = np.clip(vals, 0.0, 1.0)
        return float(out[0]) if np.ndim(x) == 0 else out

    def _cdf_batch(self, xs: np.ndarray) -> np.ndarray:
        # one exact quadrature to the smallest query, then Gauss-Legendre
        # accumulation over a refined grid covering the queried range
        order = np.argsort(xs, kind="stable")
        s = xs[order]
        grid = np.unique(np.concatenate([
            s, np.geomspace(s[0], s[-1], 2048) if s[-1] > s[0] else s[:1]]))
        base = integrate.quad(self.pdf, 0.0, grid[0], limit=200)[0]
        nodes, weights = np.polynomial.legendre.leggauss(8)
        lo, hi = grid[:-1], grid[1:]
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        pts = mid[:, None] + half[:, None] * nodes[None, :]
        seg = (self.pdf(pts.ravel()).reshape(pts.shape) @ weights) * half
        cum = base + np.concatenate(([0.0], np.cumsum(seg)))
        vals = cum[np.searchsorted(grid, s)]
        out = np.empty_like(vals)
        out[order] = vals
        return out

    def quantile(self, u):
        u_arr = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any((u_arr <= 0.0) | (u_arr >= 1.0)):
            raise ValueError("u must lie strictly inside (0, 1)")
        mode = self._mode()
        out = np.empty(u_arr.shape)
        for i, ui in enumerate(u_arr):
            lo, hi = mode, mode
            while self.cdf(lo) > ui and lo > 1e-300:
                lo /= 8.0
            while self.cdf(hi) < ui:
                hi *= 8.0
            out[i] = optimize.brentq(lambda t: self.cdf(t) - ui, lo, hi, xtol=1e-12)
        return float(out[0]) if np.ndim(u) == 0 else out

    def sample(self, rng, size):
        """Ratio-of-uniforms draws; bounds from the kernel mode, log-safe."""
        peak = self._log_kernel(self._mode())
        x_plus = self._mode(shift=2.0)  # maximizer of x^2 * kernel
        v_max = x_plus * math.exp(0.5 * (self._log_kernel(x_plus) - peak))
        out = np.empty(size)
        filled = 0
        while filled < size:
            m = max(int((size - filled) * 1.5) + 16, 32)
            u = rng.uniform(0.0, 1.0, m)
            v = rng.uniform(0.0, v_max, m)
            x = v / u
            keep = 2.0 * np.log(u) <= self._log_kernel(x) - peak
            take = x[keep][: size - filled]
            out[filled:filled + take.size] = take
            filled += take.size
        return out


def stationary_marginal(family: str, params) -> object:
    """Marginal law implied by a volatility model family.

    ``params`` is (kappa, v0, xi) for heston/expou and (kappa, c, lambda)
    for tsou; the mean-reversion rate drops out of the marginal in every
    case except through stationarity itself.
    """
    if family == "heston":
        return GammaMarginal.from_sqrt_diffusion(params[0], params[1], params[2])
    if family == "expou":
        return LognormalMarginal.from_log_ou(params[0], params[1], params[2])
    if family == "tsou":
        return InverseGaussianMarginal.from_ts_ou(params[1], params[2])
    raise ValueError(f"unknown model family {family!r}")


def make_marginal(name: str, **kw) -> object:
    """Construct a marginal by distribution name with explicit parameters."""
    table = {
        "gamma": GammaMarginal,
        "lognormal": LognormalMarginal,
        "ig": InverseGaussianMarginal,
        "inverse_gaussian": InverseGaussianMarginal,
        "gig": GigMarginal,
    }
    if name not in table:
        raise ValueError(f"unknown marginal {name!r}")
    return table[name](**kw)
