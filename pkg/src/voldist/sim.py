"""Synthetic market generators on a two-scale grid.

Three stationary volatility engines (square-root diffusion, log OU,
tempered-stable OU), a symmetric tempered-stable jump component for the
price, and heteroscedastic observation noise.  Paths live on a fine grid
(the "continuous" world); the observed series is an exact subsample on a
coarse grid with noise added per observation.

The log-OU and TS-OU engines use exact transitions, so any step size is
distributionally correct.  The square-root engine is an Euler scheme with
full truncation: negative excursions of the state are floored at zero
inside both the drift and the diffusion coefficient, and the reported
path is floored as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from numba import njit
from scipy import signal, special

from .spotvol import SpotVariancePath
from .ticks import ReturnSeries

__all__ = [
    "SvModelSpec",
    "JumpSpec",
    "NoiseSpec",
    "JumpPath",
    "SimulatedPanel",
    "baseline_model",
    "calibrate_jump_c",
    "simulate_heston",
    "simulate_expou",
    "simulate_tsou",
    "simulate_ts_jumps",
    "add_noise",
    "assemble_panel",
]

RHO_DEFAULT = -math.sqrt(0.5)

_FAMILIES = ("heston", "expou", "tsou")


@dataclass(frozen=True)
class SvModelSpec:
    """Parameter set for one volatility family.

    heston: dV = kappa (v0 - V) dt + xi sqrt(V) dB, price-vol correlation rho.
    expou:  d ln V = kappa (v0 - ln V) dt + xi dB, same leverage convention
            (v0 is the mean of ln V, so it may be negative).
    tsou:   dV = -kappa V dt + dL with a tempered-stable driver chosen so the
            stationary marginal is inverse Gaussian; (c, lam) are the scale
            and tempering rate of the marginal Levy density, beta its index.
            No leverage: the price Brownian motion is independent.
    """

    family: str
    kappa: float
    v0: float | None = None
    xi: float | None = None
    rho: float | None = None
    c: float | None = None
    lam: float | None = None
    beta: float | None = None

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.family in ("heston", "expou"):
            if self.v0 is None or self.xi is None or self.rho is None:
                raise ValueError(f"{self.family} needs v0, xi and rho")
            if self.c is not None or self.lam is not None or self.beta is not None:
                raise ValueError(f"{self.family} takes no jump-driver parameters")
            if self.family == "heston" and not self.v0 > 0:
                raise ValueError("heston v0 must be positive")
            if self.xi < 0:
                raise ValueError("xi must be nonnegative")
            if not -1.0 <= self.rho <= 1.0:
                raise ValueError("rho must lie in [-1, 1]")
            if not np.isfinite(self.v0):
                raise ValueError("v0 must be finite")
        else:
            if self.c is None or self.lam is None:
                raise ValueError("tsou needs c and lam")
            if self.v0 is not None or self.xi is not None or self.rho is not None:
                raise ValueError("tsou takes no diffusion parameters")
            if not self.c > 0:
                raise ValueError("c must be positive")
            if not self.lam > 0:
                raise ValueError("lam must be positive")
            if self.beta is None or not 0.0 < self.beta < 1.0:
                raise ValueError("beta must lie in (0, 1)")

    @classmethod
    def heston(cls, kappa: float, v0: float, xi: float, rho: float = RHO_DEFAULT) -> "SvModelSpec":
        return cls("heston", kappa, v0=v0, xi=xi, rho=rho)

    @classmethod
    def expou(cls, kappa: float, v0: float, xi: float, rho: float = RHO_DEFAULT) -> "SvModelSpec":
        return cls("expou", kappa, v0=v0, xi=xi, rho=rho)

    @classmethod
    def tsou(cls, kappa: float, c: float, lam: float, beta: float = 0.5) -> "SvModelSpec":
        return cls("tsou", kappa, c=c, lam=lam, beta=beta)

    @property
    def feller_satisfied(self) -> bool | None:
        """2 kappa v0 >= xi^2 for the square-root family, None otherwise.

        Recorded, never enforced: the Euler scheme tolerates violations.
        """
        if self.family != "heston":
            return None
        return 2.0 * self.kappa * self.v0 >= self.xi**2

    def describe(self) -> dict:
        out = {"family": self.family, "kappa": self.kappa}
        for name in ("v0", "xi", "rho", "c", "lam", "beta"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        if self.family == "heston":
            out["feller_satisfied"] = self.feller_satisfied
        return out


def baseline_model(family: str) -> SvModelSpec:
    """Reference parameter sets used throughout the experiments.

    heston: slow mean reversion with a comfortable Feller margin and
    leverage -sqrt(0.5).  expou: the same leverage on a log-variance OU.
    tsou: unit-mean inverse Gaussian marginal, half-unit mean reversion.
    """
    if family == "heston":
        return SvModelSpec.heston(0.05, 1.0, 0.2)
    if family == "expou":
        return SvModelSpec.expou(0.08, -0.3, 0.45)
    if family == "tsou":
        return SvModelSpec.tsou(0.5, 1.0, math.pi)
    raise ValueError(f"unknown model family {family!r}")


@dataclass(frozen=True)
class JumpSpec:
    """Two-sided tempered-stable price jumps.

    Each side has Levy density c exp(-lam x) x^{-1-r} on x > 0; the jump
    process is the difference of two independent copies.  c = 0 encodes the
    jump-free degenerate case.
    """

    c: float
    lam: float
    r: float

    def __post_init__(self) -> None:
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0.0 <= self.r < 2.0:
            raise ValueError("r must lie in [0, 2)")

    @property
    def qv_rate(self) -> float:
        """Quadratic variation per unit time, both sides: 2 c Gamma(2-r) lam^{r-2}."""
        if self.c == 0.0:
            return 0.0
        return 2.0 * self.c * special.gamma(2.0 - self.r) * self.lam ** (self.r - 2.0)

    @classmethod
    def from_qv_share(
        cls, lam: float, r: float, share: float, mean_variance: float = 1.0
    ) -> "JumpSpec":
        return cls(calibrate_jump_c(lam, r, share, mean_variance), lam, r)


def calibrate_jump_c(lam: float, r: float, share: float, mean_variance: float = 1.0) -> float:
    """Scale making jumps a given share of total quadratic variation.

    Total QV per unit time is mean_variance + jump rate, so a share s needs
    the rate at s/(1-s) times the diffusive part.
    """
    if not 0.0 <= share < 1.0:
        raise ValueError("share must lie in [0, 1)")
    if not lam > 0:
        raise ValueError("lam must be positive")
    if not 0.0 <= r < 2.0:
        raise ValueError("r must lie in [0, 2)")
    rate_unit_c = 2.0 * special.gamma(2.0 - r) * lam ** (r - 2.0)
    return share / (1.0 - share) * mean_variance / rate_unit_c


@dataclass(frozen=True)
class NoiseSpec:
    """Noise-to-signal ratio gamma; observation i gets variance gamma^2 delta_n V_i."""

    gamma: float

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


@dataclass
class JumpPath:
    """Jump component at the grid points, starting at zero.

    ``proposals`` counts stable draws consumed by the tempering rejection;
    ``rejected`` is how many were thrown away (0 for the exact r = 0 case).
    """

    values: np.ndarray
    proposals: int
    rejected: int


def _grid_size(T: float, fine_steps: int) -> int:
    if fine_steps < 1:
        raise ValueError("fine_steps must be a positive integer")
    n = int(round(T * fine_steps))
    if n < 1:
        raise ValueError("T * fine_steps must be at least one step")
    return n


def _require_family(spec: SvModelSpec, family: str) -> None:
    if spec.family != family:
        raise ValueError(f"expected a {family} spec, got {spec.family}")


@njit(cache=True)
def _euler_heston(zb, zw, kappa, v0, xi, rho, dt, v_start):  # pragma: no cover
    n = zb.shape[0]
    v = np.empty(n + 1)
    x = np.empty(n + 1)
    state = v_start
    v[0] = state if state > 0.0 else 0.0
    x[0] = 0.0
    sdt = np.sqrt(dt)
    orth = np.sqrt(1.0 - rho * rho)
    for i in range(n):
        vp = state if state > 0.0 else 0.0
        sv = np.sqrt(vp)
        x[i + 1] = x[i] + sv * sdt * (rho * zb[i] + orth * zw[i])
        state = state + kappa * (v0 - vp) * dt + xi * sv * sdt * zb[i]
        v[i + 1] = state if state > 0.0 else 0.0
    return v, x


def simulate_heston(
    spec: SvModelSpec,
    T: float,
    fine_steps: int,
    seed,
    *,
    v_init: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Square-root variance with leverage, Euler full-truncation scheme.

    Returns (V, X): variance and the continuous log-price part, both on the
    fine grid including t = 0.  The start value is drawn from the stationary
    gamma law unless ``v_init`` pins it (xi = 0 degenerates to v0).
    """
    _require_family(spec, "heston")
    n = _grid_size(T, fine_steps)
    rng = np.random.default_rng(seed)
    if v_init is not None:
        if v_init < 0:
            raise ValueError("v_init must be nonnegative")
        v_start = float(v_init)
    elif spec.xi == 0.0:
        v_start = spec.v0
    else:
        shape = 2.0 * spec.kappa * spec.v0 / spec.xi**2
        v_start = rng.gamma(shape, spec.xi**2 / (2.0 * spec.kappa))
    zb = rng.standard_normal(n)
    zw = rng.standard_normal(n)
    return _euler_heston(zb, zw, spec.kappa, spec.v0, spec.xi, spec.rho, 1.0 / fine_steps, v_start)


def _ar1_path(a: float, x0: float, innov: np.ndarray) -> np.ndarray:
    """x[k+1] = a x[k] + innov[k], returned with the start value prepended."""
    out = np.empty(innov.size + 1)
    out[0] = x0
    out[1:] = signal.lfilter([1.0], [1.0, -a], innov, zi=np.array([a * x0]))[0]
    return out


def simulate_expou(
    spec: SvModelSpec,
    T: float,
    fine_steps: int,
    seed,
    *,
    v_init: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Log-variance OU with exact Gaussian transitions.

    The price increment over a step reuses the step's standardized variance
    innovation, so the leverage correlation holds exactly at the innovation
    level.  ``v_init`` is a variance start value (its log seeds the chain);
    the default is a stationary draw ln V0 ~ N(v0, xi^2 / (2 kappa)).
    """
    _require_family(spec, "expou")
    n = _grid_size(T, fine_steps)
    dt = 1.0 / fine_steps
    rng = np.random.default_rng(seed)
    if v_init is not None:
        if not v_init > 0:
            raise ValueError("v_init must be positive")
        ln0 = math.log(v_init)
    else:
        ln0 = rng.normal(spec.v0, spec.xi / math.sqrt(2.0 * spec.kappa))
    a = math.exp(-spec.kappa * dt)
    sd = spec.xi * math.sqrt((1.0 - a * a) / (2.0 * spec.kappa))
    zb = rng.standard_normal(n)
    zw = rng.standard_normal(n)
    lnv = _ar1_path(a, ln0, spec.v0 * (1.0 - a) + sd * zb)
    v = np.exp(lnv)
    orth = math.sqrt(1.0 - spec.rho**2)
    dx = np.sqrt(v[:-1] * dt) * (spec.rho * zb + orth * zw)
    x = np.empty(n + 1)
    x[0] = 0.0
    np.cumsum(dx, out=x[1:])
    return v, x


def _ig_ou_innovations(delta: float, gam: float, rho: float, n: int, rng) -> np.ndarray:
    """One-step innovations keeping an IG(delta, gam) marginal under x -> rho x.

    Exact decomposition: an inverse Gaussian piece with reduced shape
    delta (1 - sqrt(rho)) plus a Poisson(delta gam (1 - sqrt(rho))) number of
    scaled squared normals.  Verified against the transition's Laplace
    transform L(theta) / L(rho theta).
    """
    sr = math.sqrt(rho)
    dp = delta * (1.0 - sr)
    out = rng.wald(dp / gam, dp * dp, size=n)
    counts = rng.poisson(delta * gam * (1.0 - sr), size=n)
    total = int(counts.sum())
    if total:
        u = rng.random(total)
        z = rng.standard_normal(total)
        b = 1.0 / sr + u * (1.0 - 1.0 / sr)
        jumps = (z * z) / (b * b * gam * gam)
        idx = np.repeat(np.arange(n), counts)
        out += np.bincount(idx, weights=jumps, minlength=n)
    return out


def simulate_tsou(
    spec: SvModelSpec,
    T: float,
    fine_steps: int,
    seed,
    *,
    v_init: float | None = None,
) -> np.ndarray:
    """Tempered-stable OU variance with an inverse Gaussian marginal, exact.

    Supports the square-root tempering index beta = 1/2 only; the marginal
    is IG with mean c sqrt(pi / lam) and shape 2 pi c^2.  Strictly positive
    pathwise.
    """
    _require_family(spec, "tsou")
    if not math.isclose(spec.beta, 0.5):
        raise ValueError("only the beta = 0.5 tempering index is supported")
    n = _grid_size(T, fine_steps)
    rng = np.random.default_rng(seed)
    delta = spec.c * math.sqrt(2.0 * math.pi)
    gam = math.sqrt(2.0 * spec.lam)
    rho = math.exp(-spec.kappa / fine_steps)
    if v_init is not None:
        if not v_init > 0:
            raise ValueError("v_init must be positive")
        v0 = float(v_init)
    else:
        v0 = rng.wald(delta / gam, delta * delta)
    eta = _ig_ou_innovations(delta, gam, rho, n, rng)
    return _ar1_path(rho, v0, eta)


def _stable_increment(alpha: float, size: int, rng) -> np.ndarray:
    """Positive alpha-stable draws with Laplace transform exp(-theta^alpha)."""
    u = np.maximum(rng.uniform(0.0, np.pi, size), 1e-12)
    e = rng.standard_exponential(size)
    a = (
        np.sin(alpha * u) ** alpha
        * np.sin((1.0 - alpha) * u) ** (1.0 - alpha)
        / np.sin(u)
    ) ** (1.0 / (1.0 - alpha))
    return (a / e) ** ((1.0 - alpha) / alpha)


def _ts_increments(
    c: float, lam: float, r: float, dt: float, n: int, rng
) -> tuple[np.ndarray, int]:
    """n iid increments of the one-sided tempered-stable subordinator over dt.

    r = 0 is the gamma process, sampled directly.  For r in (0, 1) the draw
    is a stable proposal thinned by the tempering factor exp(-lam x), which
    reproduces the tempered law exactly.  Returns (increments, proposals).
    """
    if r == 0.0:
        return rng.gamma(c * dt, 1.0 / lam, size=n), n
    if not 0.0 < r < 1.0:
        raise NotImplementedError(
            "jump index r >= 1 is outside the subordinator-difference sampler"
        )
    scale = (dt * c * special.gamma(1.0 - r) / r) ** (1.0 / r)
    out = np.empty(n)
    todo = np.arange(n)
    proposals = 0
    while todo.size:
        s = scale * _stable_increment(r, todo.size, rng)
        proposals += todo.size
        keep = rng.random(todo.size) < np.exp(-lam * s)
        out[todo[keep]] = s[keep]
        todo = todo[~keep]
    return out, proposals


def simulate_ts_jumps(jump: JumpSpec, T: float, fine_steps: int, seed) -> JumpPath:
    """Symmetric jump path: difference of two one-sided tempered-stable legs."""
    n = _grid_size(T, fine_steps)
    if jump.c == 0.0:
        return JumpPath(np.zeros(n + 1), 0, 0)
    dt = 1.0 / fine_steps
    rng = np.random.default_rng(seed)
    up, prop_up = _ts_increments(jump.c, jump.lam, jump.r, dt, n, rng)
    down, prop_down = _ts_increments(jump.c, jump.lam, jump.r, dt, n, rng)
    path = np.empty(n + 1)
    path[0] = 0.0
    np.cumsum(up - down, out=path[1:])
    proposals = prop_up + prop_down
    return JumpPath(path, proposals, proposals - 2 * n)


def add_noise(x, v, noise: NoiseSpec, delta_n: float, seed) -> np.ndarray:
    """Observed series Z = X + U with U_i ~ N(0, gamma^2 delta_n V_i), independent."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape:
        raise ValueError("price and variance grids must align")
    if noise.gamma == 0.0:
        return x.copy()
    rng = np.random.default_rng(seed)
    omega2 = noise.gamma**2 * delta_n * np.maximum(v, 0.0)
    return x + np.sqrt(omega2) * rng.standard_normal(x.size)


def _brownian_price(v: np.ndarray, dt: float, rng) -> np.ndarray:
    """Driftless price with integrand sqrt(V), independent of the variance path."""
    z = rng.standard_normal(v.size - 1)
    x = np.empty(v.size)
    x[0] = 0.0
    np.cumsum(np.sqrt(np.maximum(v[:-1], 0.0) * dt) * z, out=x[1:])
    return x


@dataclass
class SimulatedPanel:
    """Fine-grid truth plus the coarse noisy observations derived from it.

    One unit of time is one day; day d owns coarse grid points
    [d * coarse_n, (d + 1) * coarse_n], so consecutive days share their
    boundary point and each day contributes coarse_n returns.
    """

    model: SvModelSpec
    jump: JumpSpec | None
    noise: NoiseSpec
    days: int
    fine_steps: int
    coarse_n: int
    seed: int
    v_fine: np.ndarray
    x_fine: np.ndarray
    j_fine: np.ndarray | None
    z: np.ndarray

    def __post_init__(self) -> None:
        n_fine = self.days * self.fine_steps + 1
        if self.v_fine.size != n_fine or self.x_fine.size != n_fine:
            raise ValueError("fine grid arrays inconsistent with days * fine_steps")
        if self.j_fine is not None and self.j_fine.size != n_fine:
            raise ValueError("jump path inconsistent with the fine grid")
        if self.z.size != self.days * self.coarse_n + 1:
            raise ValueError("observed series inconsistent with days * coarse_n")
        if self.fine_steps % self.coarse_n:
            raise ValueError("coarse grid must subsample the fine grid evenly")

    @property
    def delta_n(self) -> float:
        return 1.0 / self.coarse_n

    @property
    def stride(self) -> int:
        return self.fine_steps // self.coarse_n

    @property
    def v_coarse(self) -> np.ndarray:
        return self.v_fine[:: self.stride]

    @property
    def x_coarse(self) -> np.ndarray:
        """True log price (continuous part plus jumps) on the coarse grid."""
        x = self.x_fine if self.j_fine is None else self.x_fine + self.j_fine
        return x[:: self.stride]

    def returns(self) -> ReturnSeries:
        day_lengths = np.full(self.days, self.coarse_n, dtype=np.int64)
        return ReturnSeries(self.delta_n, np.diff(self.z), day_lengths)

    def true_path(self) -> SpotVariancePath:
        """Left-endpoint piecewise-constant view of the true variance."""
        day_lengths = np.full(self.days, self.coarse_n, dtype=np.int64)
        return SpotVariancePath(self.delta_n, self.v_coarse[:-1].copy(), day_lengths)

    def frame(self) -> pd.DataFrame:
        idx = np.arange(self.z.size)
        return pd.DataFrame(
            {
                "day": np.minimum(idx // self.coarse_n, self.days - 1),
                "cell": idx - np.minimum(idx // self.coarse_n, self.days - 1) * self.coarse_n,
                "z": self.z,
                "x": self.x_coarse,
                "v": self.v_coarse,
            }
        )


def assemble_panel(
    model: SvModelSpec,
    jump: JumpSpec | None,
    noise: NoiseSpec,
    T: int,
    fine_steps: int,
    coarse_n: int,
    seed: int,
) -> SimulatedPanel:
    """End-to-end panel: volatility, price, jumps, subsampling, noise.

    Component draws come from independent substreams spawned off the seed,
    so turning one component off never shifts the others.
    """
    if coarse_n < 1:
        raise ValueError("coarse_n must be a positive integer")
    if fine_steps % coarse_n:
        raise ValueError("coarse grid must subsample the fine grid evenly")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_vol, s_price, s_jump, s_noise = root.spawn(4)
    if model.family == "heston":
        v, x = simulate_heston(model, T, fine_steps, s_vol)
    elif model.family == "expou":
        v, x = simulate_expou(model, T, fine_steps, s_vol)
    else:
        v = simulate_tsou(model, T, fine_steps, s_vol)
        x = _brownian_price(v, 1.0 / fine_steps, np.random.default_rng(s_price))
    j_fine = None
    if jump is not None and jump.c > 0.0:
        j_fine = simulate_ts_jumps(jump, T, fine_steps, s_jump).values
    stride = fine_steps // coarse_n
    x_true = x if j_fine is None else x + j_fine
    z = add_noise(x_true[::stride], v[::stride], noise, 1.0 / coarse_n, s_noise)
    return SimulatedPanel(
        model=model,
        jump=jump,
        noise=noise,
        days=T,
        fine_steps=fine_steps,
        coarse_n=coarse_n,
        seed=seed,
        v_fine=v,
        x_fine=x,
        j_fine=j_fine,
        z=z,
    )
